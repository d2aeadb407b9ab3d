"""Multi-cluster SIR simulation used as the estimator's verification
oracle.

Transmission follows the compartmental correspondence of the hazard
model: the force of infection on a susceptible in cluster j is
``sum_k kappa * mixing[j,k] * eta[k] * Y_k / N_k``, the product of the
overall contact rate, the fraction of j's contacts made with cluster k,
and the per-contact transmission probability of k's infectives.  The
target quantity is ``beta(t)``, the difference between the arm-averaged
per-contact hazards ``nu_j = kappa * eta_j * Y_j / N_j``; its integral
over follow-up is what the hazard fits estimate.

Two engines share the parameterisation: a deterministic ODE integration
recorded on the output grid and a discrete-time chain-binomial process
(per-susceptible infection probability ``1 - exp(-hazard * dt)`` each
step) that also records individual infection times for survival
analysis.  Infection times get a uniform sub-step offset so day-level
ties are rare by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .contacts import CONTROL, TREATED
from .errors import AnalysisError, ConfigError
from .hazards import EffectSummary, _fit_arrays, effect_summary
from .residence import SurvivalObservation

_ROW_SUM_TOL = 1e-12

DEFAULT_SCENARIO = {
    "n_clusters": 20,
    "cluster_size": 500,
    "contamination": 0.15,
    "kappa": 10.0,
    "eta_treated": 0.01,
    "eta_control": 0.02,
    "gamma": 0.2,
    "initial_infected": 5,
    "horizon_days": 180.0,
    "dt": 0.25,
    "mode": "stochastic",
    "seed": 0,
}


@dataclass(frozen=True)
class SimParams:
    clusters: tuple[tuple[int, str], ...]   # (population size, arm)
    kappa: float
    eta_trt: float
    eta_ctr: float
    mixing: np.ndarray                      # row-stochastic (C, C)
    gamma: float
    initial_infected: tuple[int, ...]
    horizon: float
    mode: str = "stochastic"                # or "deterministic"
    dt: float = 0.25
    seed: int = 0
    population_weighted_truth: bool = False

    def __post_init__(self):
        C = len(self.clusters)
        if C == 0:
            raise ConfigError("at least one cluster is required")
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigError("dt and horizon must be positive")
        if self.mode not in ("stochastic", "deterministic"):
            raise ConfigError(f"unknown simulation mode {self.mode!r}")
        if not (0.0 <= self.eta_trt <= 1.0 and 0.0 <= self.eta_ctr <= 1.0):
            raise ConfigError("per-contact transmission probabilities must be in [0, 1]")
        mixing = np.asarray(self.mixing, dtype=float)
        if mixing.shape != (C, C):
            raise ConfigError("mixing matrix shape must match the cluster count")
        if np.any(np.abs(mixing.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
            raise ConfigError("mixing matrix rows must sum to 1")
        if len(self.initial_infected) != C:
            raise ConfigError("one initial-infected count per cluster is required")
        for (n, arm), i0 in zip(self.clusters, self.initial_infected):
            if n < 1:
                raise ConfigError("cluster sizes must be at least 1")
            if arm not in (TREATED, CONTROL):
                raise ConfigError(f"unknown arm {arm!r}")
            if not 0 <= i0 <= n:
                raise ConfigError("initial infected must fit in the cluster")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([n for n, _ in self.clusters], dtype=float)

    @property
    def arms(self) -> tuple[str, ...]:
        return tuple(arm for _, arm in self.clusters)

    @property
    def treated_mask(self) -> np.ndarray:
        return np.array([arm == TREATED for arm in self.arms])

    @property
    def eta(self) -> np.ndarray:
        return np.where(self.treated_mask, self.eta_trt, self.eta_ctr)

    def true_exposures(self) -> dict[str, float]:
        """Exposure implied by the mixing matrix: each cluster's total
        contact fraction allocated to treated clusters."""
        m = np.asarray(self.mixing)[:, self.treated_mask].sum(axis=1)
        return {cluster_label(j): float(m[j]) for j in range(len(self.clusters))}


def cluster_label(index: int) -> str:
    return f"c{index:02d}"


def build_mixing_matrix(arms: Sequence[str], contamination: float) -> np.ndarray:
    """Uniform two-block mixing: each cluster spreads ``contamination``
    of its contacts evenly over opposite-arm clusters and the rest
    evenly over its own arm (itself included)."""
    if not 0.0 <= contamination <= 1.0:
        raise ConfigError("contamination fraction must be in [0, 1]")
    arms = list(arms)
    C = len(arms)
    mixing = np.zeros((C, C))
    for j, arm in enumerate(arms):
        own = [k for k, a in enumerate(arms) if a == arm]
        opp = [k for k, a in enumerate(arms) if a != arm]
        if contamination > 0.0 and not opp:
            raise ConfigError("contamination requires at least one opposite-arm cluster")
        if opp:
            mixing[j, opp] = contamination / len(opp)
        mixing[j, own] = (1.0 - contamination) / len(own)
    return mixing


@dataclass
class TrialSimulation:
    params: SimParams
    times: np.ndarray            # output grid, starts at 0
    S: np.ndarray                # (T, C)
    Y: np.ndarray
    R: np.ndarray
    beta: np.ndarray             # (T,) arm-averaged hazard difference
    obs_time: np.ndarray         # per initially-susceptible individual
    obs_event: np.ndarray
    obs_cluster: np.ndarray      # cluster index

    def to_observations(self) -> list[SurvivalObservation]:
        return [
            SurvivalObservation(f"{cluster_label(c)}-{i:05d}", cluster_label(c),
                                float(t), bool(e))
            for i, (t, e, c) in enumerate(
                zip(self.obs_time, self.obs_event, self.obs_cluster))
        ]


def _grid(horizon: float, dt: float) -> np.ndarray:
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    grid = np.minimum(np.arange(n_steps + 1) * dt, horizon)
    grid[-1] = horizon
    return grid


def _beta_curve(params: SimParams, Y: np.ndarray) -> np.ndarray:
    nu = params.kappa * params.eta * (Y / params.sizes)
    treated = params.treated_mask
    if not treated.any() or treated.all():
        # single-arm configurations have no between-arm contrast
        return np.full(Y.shape[0], np.nan)
    if params.population_weighted_truth:
        w = params.sizes
        mean_trt = (nu[:, treated] * w[treated]).sum(axis=1) / w[treated].sum()
        mean_ctr = (nu[:, ~treated] * w[~treated]).sum(axis=1) / w[~treated].sum()
    else:
        mean_trt = nu[:, treated].mean(axis=1)
        mean_ctr = nu[:, ~treated].mean(axis=1)
    return mean_trt - mean_ctr


def simulate(params: SimParams) -> TrialSimulation:
    grid = _grid(params.horizon, params.dt)
    N = params.sizes
    alpha = params.kappa * np.asarray(params.mixing) * params.eta[None, :]
    I0 = np.array(params.initial_infected, dtype=float)

    if params.mode == "deterministic":
        S, Y, R = _run_ode(params, grid, N, alpha, I0)
        obs_time = np.empty(0)
        obs_event = np.empty(0, dtype=bool)
        obs_cluster = np.empty(0, dtype=int)
    else:
        S, Y, R, obs_time, obs_event, obs_cluster = _run_chain_binomial(
            params, grid, N, alpha, I0)

    return TrialSimulation(params, grid, S, Y, R, _beta_curve(params, Y),
                           obs_time, obs_event, obs_cluster)


def _run_ode(params, grid, N, alpha, I0):
    C = len(N)
    gamma = params.gamma

    def rhs(_t, state):
        S = state[:C]
        Y = state[C:2 * C]
        foi = alpha @ (Y / N)
        infections = foi * S
        return np.concatenate([-infections, infections - gamma * Y, gamma * Y])

    y0 = np.concatenate([N - I0, I0, np.zeros(C)])
    sol = solve_ivp(rhs, (0.0, grid[-1]), y0, t_eval=grid,
                    method="DOP853", rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise AnalysisError(f"ODE integration failed: {sol.message}")
    states = sol.y.T
    return states[:, :C], states[:, C:2 * C], states[:, 2 * C:]


def _run_chain_binomial(params, grid, N, alpha, I0):
    C = len(N)
    rng = np.random.default_rng(params.seed)
    S = (N - I0).astype(np.int64)
    Y = I0.astype(np.int64)
    R = np.zeros(C, dtype=np.int64)
    S_path = [S.copy()]
    Y_path = [Y.copy()]
    R_path = [R.copy()]
    inf_times: list[list[float]] = [[] for _ in range(C)]

    for t0, t1 in zip(grid[:-1], grid[1:]):
        dt = t1 - t0
        foi = alpha @ (Y / N)
        p_inf = -np.expm1(-foi * dt)
        p_rec = -math.expm1(-params.gamma * dt)
        new_inf = rng.binomial(S, p_inf)
        new_rec = rng.binomial(Y, p_rec)
        for j in range(C):
            if new_inf[j]:
                inf_times[j].extend(t0 + dt * rng.random(new_inf[j]))
        S -= new_inf
        Y += new_inf - new_rec
        R += new_rec
        S_path.append(S.copy())
        Y_path.append(Y.copy())
        R_path.append(R.copy())

    obs_time, obs_event, obs_cluster = [], [], []
    for j in range(C):
        n_susc = int(N[j] - I0[j])
        infected = sorted(inf_times[j])
        obs_time.extend(infected)
        obs_event.extend([True] * len(infected))
        obs_time.extend([params.horizon] * (n_susc - len(infected)))
        obs_event.extend([False] * (n_susc - len(infected)))
        obs_cluster.extend([j] * n_susc)
    return (np.array(S_path, dtype=float), np.array(Y_path, dtype=float),
            np.array(R_path, dtype=float), np.array(obs_time),
            np.array(obs_event, dtype=bool), np.array(obs_cluster, dtype=int))


def true_estimand(sim: TrialSimulation, horizon: float) -> float:
    """Trapezoidal integral of the hazard-difference curve over
    [0, horizon]."""
    grid = sim.times
    if horizon > grid[-1] + 1e-9:
        raise AnalysisError(
            f"horizon {horizon:g} extends beyond the simulated {grid[-1]:g} days")
    if not np.all(np.isfinite(sim.beta)):
        raise AnalysisError("hazard-difference curve needs both arms present")
    idx = int(np.searchsorted(grid, horizon, side="right"))
    ts = grid[:idx].tolist()
    bs = sim.beta[:idx].tolist()
    if not ts or ts[-1] < horizon:
        ts.append(horizon)
        bs.append(float(np.interp(horizon, grid, sim.beta)))
    total = 0.0
    for i in range(len(ts) - 1):
        total += 0.5 * (bs[i] + bs[i + 1]) * (ts[i + 1] - ts[i])
    return total


# ---------------------------------------------------------------------------
# Replicated oracle experiment

@dataclass(frozen=True)
class ReplicateRow:
    replicate: int
    truth: float                 # 100 * integrated hazard difference
    adjusted: EffectSummary
    naive: EffectSummary

    @property
    def covered(self) -> bool:
        return self.adjusted.ci_low <= self.truth <= self.adjusted.ci_high


@dataclass
class OracleReport:
    rows: list[ReplicateRow] = field(default_factory=list)

    @property
    def n_replicates(self) -> int:
        return len(self.rows)

    @property
    def truth_mean(self) -> float:
        return float(np.mean([r.truth for r in self.rows]))

    @property
    def adjusted_mean(self) -> float:
        return float(np.mean([r.adjusted.estimate for r in self.rows]))

    @property
    def adjusted_sd(self) -> float:
        return float(np.std([r.adjusted.estimate for r in self.rows], ddof=1))

    @property
    def naive_mean(self) -> float:
        return float(np.mean([r.naive.estimate for r in self.rows]))

    @property
    def naive_sd(self) -> float:
        return float(np.std([r.naive.estimate for r in self.rows], ddof=1))

    @property
    def coverage(self) -> float:
        return float(np.mean([r.covered for r in self.rows]))

    @property
    def attenuation_ratio(self) -> float:
        return float(np.mean([abs(r.naive.estimate) for r in self.rows])
                     / np.mean([abs(r.adjusted.estimate) for r in self.rows]))

    def summary_text(self) -> str:
        return "\n".join([
            f"replicates:          {self.n_replicates}",
            f"true effect (pp):    {self.truth_mean:+.4f}",
            f"adjusted estimate:   {self.adjusted_mean:+.4f} (sd {self.adjusted_sd:.4f})",
            f"naive estimate:      {self.naive_mean:+.4f} (sd {self.naive_sd:.4f})",
            f"attenuation ratio:   {self.attenuation_ratio:.4f}",
            f"95% CI coverage:     {self.coverage:.3f}",
        ])


def fit_replicate(sim: TrialSimulation) -> tuple[EffectSummary, EffectSummary]:
    """Fit the contamination-adjusted and the binary-arm models on one
    simulated trial, using the mixing-derived exposures as the adjusted
    covariate."""
    params = sim.params
    if len(sim.obs_time) == 0:
        raise AnalysisError("no individual outcomes; run in stochastic mode")
    exposures = params.true_exposures()
    m = np.array([exposures[cluster_label(j)] for j in range(len(params.clusters))])
    z = params.treated_mask.astype(float)
    time = sim.obs_time
    if len(np.unique(time[sim.obs_event])) < int(sim.obs_event.sum()):
        # sub-step offsets make exact ties measure-zero; guard anyway
        rng = np.random.default_rng(params.seed + 1)
        time = time.copy()
        time[sim.obs_event] += rng.random(int(sim.obs_event.sum()))
    n_clusters = len(params.clusters)
    adjusted_curve = _fit_arrays(time, sim.obs_event, m[sim.obs_cluster],
                                 sim.obs_cluster, n_clusters, None)
    naive_curve = _fit_arrays(time, sim.obs_event, z[sim.obs_cluster],
                              sim.obs_cluster, n_clusters, None)
    return (effect_summary(adjusted_curve, params.horizon),
            effect_summary(naive_curve, params.horizon))


def _run_replicate(params: SimParams, master_seed: int, r: int) -> ReplicateRow:
    seed = int(np.random.SeedSequence([master_seed, r]).generate_state(1)[0])
    sim = simulate(replace(params, mode="stochastic", seed=seed))
    truth = 100.0 * true_estimand(sim, params.horizon)
    adjusted, naive = fit_replicate(sim)
    return ReplicateRow(r, truth, adjusted, naive)


def oracle_study(params: SimParams, replicates: int, master_seed: int,
                 jobs: int = 1) -> OracleReport:
    """Simulate, refit and compare against the known target over many
    replicates.  Each replicate gets its own seed derived from the
    master seed, so results are independent of worker count and
    completion order; failures (such as the 50/50-mixing degeneracy)
    propagate."""
    if replicates < 2:
        raise ConfigError("at least two replicates are required")
    report = OracleReport()
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_replicate,
                                 [params] * replicates,
                                 [master_seed] * replicates,
                                 range(replicates),
                                 chunksize=max(1, replicates // (4 * jobs))))
        report.rows.extend(sorted(rows, key=lambda row: row.replicate))
    else:
        for r in range(replicates):
            report.rows.append(_run_replicate(params, master_seed, r))
    return report


# ---------------------------------------------------------------------------
# Scenario files: flat JSON of generator settings

def scenario_params(config: dict) -> SimParams:
    merged = {**DEFAULT_SCENARIO, **config}
    unknown = set(merged) - set(DEFAULT_SCENARIO) - {"clusters", "mixing",
                                                     "population_weighted_truth"}
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    if "clusters" in merged:
        clusters = tuple((int(n), str(arm)) for n, arm in merged["clusters"])
    else:
        n = int(merged["n_clusters"])
        size = int(merged["cluster_size"])
        clusters = tuple((size, TREATED if j < n // 2 else CONTROL) for j in range(n))
    arms = [arm for _, arm in clusters]
    if "mixing" in merged:
        mixing = np.asarray(merged["mixing"], dtype=float)
    else:
        mixing = build_mixing_matrix(arms, float(merged["contamination"]))
    initial = merged["initial_infected"]
    if isinstance(initial, (int, float)):
        initial = [int(initial)] * len(clusters)
    return SimParams(
        clusters=clusters,
        kappa=float(merged["kappa"]),
        eta_trt=float(merged["eta_treated"]),
        eta_ctr=float(merged["eta_control"]),
        mixing=mixing,
        gamma=float(merged["gamma"]),
        initial_infected=tuple(int(i) for i in initial),
        horizon=float(merged["horizon_days"]),
        mode=str(merged["mode"]),
        dt=float(merged["dt"]),
        seed=int(merged["seed"]),
        population_weighted_truth=bool(merged.get("population_weighted_truth", False)),
    )


def load_scenario(path) -> SimParams:
    import json

    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"scenario file {path} must hold a JSON object")
    return scenario_params(config)
