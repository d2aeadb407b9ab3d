"""Exception hierarchy shared across the package.

Two broad classes matter for the command line: configuration/input
problems (exit status 2) and analysis failures on valid inputs (exit
status 1).
"""


class ContamhazError(Exception):
    """Base class for all package errors."""


class ConfigError(ContamhazError):
    """Bad configuration or unreadable/missing input files."""


class AnalysisError(ContamhazError):
    """A computation failed on structurally valid inputs."""


class DateParseError(ConfigError, ValueError):
    """A date string matched none of the accepted formats."""


class MissingDataError(AnalysisError):
    """Required survey fields are unresolved; imputation must run first."""


class DesignDegenerateError(AnalysisError):
    """The at-risk design matrix is singular at some event time.

    Happens when all at-risk individuals carry (nearly) the same
    exposure value, e.g. every cluster splitting its contacts 50/50
    across arms, so the covariate no longer distinguishes clusters.
    """

    def __init__(self, time: float, detail: str):
        self.time = time
        super().__init__(f"design degenerate at time {time:g}: {detail}")


class TiedEventTimesError(AnalysisError):
    """Duplicate event times reached the fitter; jitter ties first."""
