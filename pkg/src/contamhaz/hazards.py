"""Additive-hazards fit with time-varying coefficients and
cluster-robust variance.

The hazard of a participant in cluster c is modelled as
``intercept(t) + effect(t) * x_c`` where x_c is either the binary arm
indicator (no-contamination analysis) or the cluster's treatment
exposure in [0, 1] (contamination-adjusted analysis).  The cumulative
coefficients are estimated nonparametrically: at each ordered event
time the increment is the least-squares solve
``(X'X)^{-1} X' dN`` over the at-risk design, and the running sums form
step functions starting at zero.

The variance stacks per-individual influence increments
``(X'X)^{-1} x_i (dN_i - x_i' dB)`` for everyone still at risk, sums
them within cluster, and takes the outer-product sum across clusters at
every step, which is valid under arbitrary within-cluster dependence.

The design has exactly an intercept and one covariate, so the solve is
a closed-form 2x2; a determinant below 1e-12 relative to the matrix
scale raises a degeneracy error instead of silently pseudo-inverting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .contacts import ExposureTable, TREATED
from .errors import AnalysisError, ConfigError, DesignDegenerateError, TiedEventTimesError
from .residence import SurvivalObservation

_DET_RTOL = 1e-12
_Z95 = 1.96


@dataclass(frozen=True)
class HazardModelSpec:
    covariate_kind: Literal["binary_Z", "exposure_M"]
    cluster_exposures: ExposureTable
    max_time: float | None = None
    jitter_seed: int = 0

    def covariate_of(self, cluster: str) -> float:
        try:
            ce = self.cluster_exposures[cluster]
        except KeyError:
            raise AnalysisError(f"no exposure value for cluster {cluster!r}") from None
        if self.covariate_kind == "binary_Z":
            return 1.0 if ce.arm == TREATED else 0.0
        return float(ce.exposure)


@dataclass
class CoefficientCurve:
    """Step functions of the cumulative coefficients.

    ``cum_coeff[k]`` is (intercept, effect) just after the k-th event
    time; ``robust_var[k]`` is the 2x2 cluster-aggregated covariance at
    that step.  Both start implicitly at zero at t=0.
    """

    event_times: np.ndarray     # (K,)
    cum_coeff: np.ndarray       # (K, 2)
    robust_var: np.ndarray      # (K, 2, 2)

    def __len__(self) -> int:
        return len(self.event_times)


@dataclass(frozen=True)
class EffectSummary:
    horizon: float
    estimate: float             # percentage points
    ci_low: float
    ci_high: float

    def row(self) -> str:
        return (f"{self.estimate:.2f} [{self.ci_low:.2f}, {self.ci_high:.2f}]"
                f" at day {self.horizon:g}")


def jitter_ties(
    observations: Sequence[SurvivalObservation],
    seed: int,
) -> list[SurvivalObservation]:
    """Resolve tied times by adding a Uniform(0,1) day to every event
    time, leaving censoring times alone.  All-distinct inputs come back
    unchanged; a fixed seed reproduces the same jitter."""
    included = [o for o in observations if o.included]
    times = [o.time for o in included]
    if len(set(times)) == len(times):
        return list(observations)
    rng = np.random.default_rng(seed)
    out = []
    for obs in observations:
        if obs.included and obs.event:
            out.append(SurvivalObservation(
                obs.participant_id, obs.cluster,
                obs.time + float(rng.random()), True))
        else:
            out.append(obs)
    return out


def aalen_fit(
    observations: Sequence[SurvivalObservation],
    spec: HazardModelSpec,
) -> CoefficientCurve:
    included = [o for o in observations if o.included]
    if not included:
        raise AnalysisError("no retained observations to fit on")
    time = np.array([o.time for o in included], dtype=float)
    event = np.array([bool(o.event) for o in included])
    covariate = np.array([spec.covariate_of(o.cluster) for o in included])
    clusters = sorted({o.cluster for o in included})
    cluster_idx = np.array([clusters.index(o.cluster) for o in included])
    return _fit_arrays(time, event, covariate, cluster_idx, len(clusters),
                       spec.max_time)


def _fit_arrays(
    time: np.ndarray,
    event: np.ndarray,
    covariate: np.ndarray,
    cluster_idx: np.ndarray,
    n_clusters: int,
    max_time: float | None,
) -> CoefficientCurve:
    order = np.argsort(time, kind="stable")
    t = time[order]
    ev = event[order]
    x = covariate[order]
    cl = cluster_idx[order]
    n = len(t)

    event_pos = np.flatnonzero(ev)
    if max_time is not None:
        event_pos = event_pos[t[event_pos] <= max_time]
    if len(event_pos) == 0:
        return CoefficientCurve(np.empty(0), np.empty((0, 2)), np.empty((0, 2, 2)))
    event_times = t[event_pos]
    if len(np.unique(event_times)) < len(event_times):
        raise TiedEventTimesError("tied event times; apply jitter_ties first")

    # suffix sums over the time-ordered sample: position p holds the
    # at-risk totals for everyone with time >= t[p]
    def suffix(v: np.ndarray) -> np.ndarray:
        out = np.zeros(len(v) + 1)
        out[:-1] = np.cumsum(v[::-1])[::-1]
        return out

    s0 = suffix(np.ones(n))
    s1 = suffix(x)
    s2 = suffix(x * x)
    cs0 = np.zeros((n_clusters, n + 1))
    cs1 = np.zeros((n_clusters, n + 1))
    cs2 = np.zeros((n_clusters, n + 1))
    for c in range(n_clusters):
        mask = (cl == c).astype(float)
        cs0[c] = suffix(mask)
        cs1[c] = suffix(mask * x)
        cs2[c] = suffix(mask * x * x)

    K = len(event_pos)
    cum = np.zeros((K, 2))
    var = np.zeros((K, 2, 2))
    B = np.zeros(2)
    U = np.zeros((n_clusters, 2))

    for k, pos in enumerate(event_pos):
        tk = t[pos]
        p = int(np.searchsorted(t, tk, side="left"))
        S0, S1, S2 = s0[p], s1[p], s2[p]
        det = S0 * S2 - S1 * S1
        scale = S0 * S2 + S1 * S1
        if det <= _DET_RTOL * max(scale, 1.0):
            raise DesignDegenerateError(
                tk, "all at-risk exposure values are (nearly) identical")
        A = np.array([[S2, -S1], [-S1, S0]]) / det
        xe = np.array([1.0, x[pos]])
        dB = A @ xe
        B = B + dB
        cum[k] = B

        # cluster sums of the influence increments; A is symmetric
        Mc = np.empty((n_clusters, 2, 2))
        Mc[:, 0, 0] = cs0[:, p]
        Mc[:, 0, 1] = Mc[:, 1, 0] = cs1[:, p]
        Mc[:, 1, 1] = cs2[:, p]
        dU = -(Mc @ dB)
        dU[cl[pos]] += xe
        U = U + dU @ A
        var[k] = np.einsum("ci,cj->ij", U, U)

    return CoefficientCurve(event_times, cum, var)


def effect_summary(curve: CoefficientCurve, horizon: float) -> EffectSummary:
    """Cumulative effect at the last step on or before the horizon, in
    percentage points, with a normal 95% interval from the robust
    variance.  An empty curve (no events at all) is a zero effect."""
    if len(curve) == 0:
        return EffectSummary(horizon, 0.0, 0.0, 0.0)
    idx = int(np.searchsorted(curve.event_times, horizon, side="right")) - 1
    if idx < 0:
        raise AnalysisError(f"no coefficient steps on or before day {horizon:g}")
    estimate = 100.0 * curve.cum_coeff[idx, 1]
    sd = 100.0 * float(np.sqrt(max(curve.robust_var[idx, 1, 1], 0.0)))
    return EffectSummary(horizon, estimate, estimate - _Z95 * sd, estimate + _Z95 * sd)


# ---------------------------------------------------------------------------
# Curve export: step-function rows (time_days, cum_b0, cum_bM, robvar_bM)

CURVE_COLUMNS = ["time_days", "cum_b0", "cum_bM", "robvar_bM"]


def curve_rows(curve: CoefficientCurve) -> list[tuple[float, float, float, float]]:
    rows = [(0.0, 0.0, 0.0, 0.0)]
    for k in range(len(curve)):
        rows.append((float(curve.event_times[k]),
                     float(curve.cum_coeff[k, 0]),
                     float(curve.cum_coeff[k, 1]),
                     float(curve.robust_var[k, 1, 1])))
    return rows


def write_curve_csv(curve: CoefficientCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for row in curve_rows(curve):
            writer.writerow([repr(v) for v in row])


def read_curve_csv(path) -> CoefficientCurve:
    """Re-parse an exported curve.  Only the effect-component variance
    is stored on disk, so the off-diagonal and intercept variance come
    back as zero."""
    times, cum0, cum1, var1 = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_COLUMNS:
            raise ConfigError(f"curve file {path}: unexpected header")
        for row in reader:
            tt = float(row["time_days"])
            if tt == 0.0 and not times:
                continue
            times.append(tt)
            cum0.append(float(row["cum_b0"]))
            cum1.append(float(row["cum_bM"]))
            var1.append(float(row["robvar_bM"]))
    K = len(times)
    var = np.zeros((K, 2, 2))
    var[:, 1, 1] = var1
    return CoefficientCurve(np.array(times), np.column_stack([cum0, cum1])
                            if K else np.empty((0, 2)), var)
