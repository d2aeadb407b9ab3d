"""Contamination-adjusted overall-effect estimation for
cluster-randomized infection trials.

The package covers the full path from raw trial files to effect
estimates: residence cleaning and time-to-event derivation, multiple
imputation of the contact survey, treatment-exposure estimation with
the visitor adjustment, additive-hazards fits with cluster-robust
variance, and a multi-cluster SIR simulator that serves as the
verification oracle for both estimators.
"""

__version__ = "0.1.0"

from .contacts import (ContactEntry, ContactReport, ClusterExposure,
                       ExposureTable, VisitorLedger, accumulate_sums,
                       binary_exposure, estimate_exposure, filter_entries)
from .errors import (AnalysisError, ConfigError, ContamhazError,
                     DesignDegenerateError, MissingDataError, TiedEventTimesError)
from .hazards import (CoefficientCurve, EffectSummary, HazardModelSpec,
                      aalen_fit, effect_summary, jitter_ties)
from .imputation import (ImputationModelSpec, PooledEstimate, rubin_combine,
                         run_imputation)
from .residence import (FollowUpWindow, ResidenceRecord, SurvivalObservation,
                        clean_residence, derive_time_to_event, summarize_cohort)
from .simulate import (SimParams, TrialSimulation, build_mixing_matrix,
                       oracle_study, simulate, true_estimand)

__all__ = [
    "AnalysisError", "CoefficientCurve", "ConfigError", "ContactEntry",
    "ContactReport", "ContamhazError", "ClusterExposure", "DesignDegenerateError",
    "EffectSummary", "ExposureTable", "FollowUpWindow", "HazardModelSpec",
    "ImputationModelSpec", "MissingDataError", "PooledEstimate",
    "ResidenceRecord", "SimParams", "SurvivalObservation", "TiedEventTimesError",
    "TrialSimulation", "VisitorLedger", "aalen_fit", "accumulate_sums",
    "binary_exposure", "build_mixing_matrix", "clean_residence",
    "derive_time_to_event", "effect_summary", "estimate_exposure",
    "filter_entries", "jitter_ties", "oracle_study", "rubin_combine",
    "run_imputation", "simulate", "summarize_cohort", "true_estimand",
]
