"""Regression fitters backing the survey imputation models.

Two small GLM-style fitters, each tailored to how it is used here:

* a binomial model with log link, maximised under the constraint that
  every fitted probability stays at or below 1 - 1e-8; when the
  constrained optimiser fails the model degrades to a logit link and
  the fallback is recorded in the fit metadata;
* an NB2 count model with log link, fitted by alternating weighted
  least-squares updates of the mean coefficients with one-dimensional
  updates of the dispersion, to 1e-8 on the log-likelihood within 200
  iterations.  When the dispersion runs out to the equidispersion
  boundary the model degrades to Poisson draws, again recorded.

Categorical predictors are dummy coded against the lexicographically
first observed level; unseen levels at prediction time fall back to the
reference level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import expit, gammaln

from .errors import AnalysisError

_MAX_LOG_PROB = np.log1p(-1e-8)
_POISSON_THETA = 1e7
_ETA_CLIP = 30.0


@dataclass(frozen=True)
class CategoricalDesign:
    """Dummy coding fixed at fit time so prediction rows map onto the
    same columns."""

    predictors: tuple[str, ...]
    levels: dict[str, tuple[str, ...]]

    @classmethod
    def from_rows(cls, rows: Sequence[Mapping[str, object]],
                  predictors: Sequence[str]) -> "CategoricalDesign":
        levels = {}
        for name in predictors:
            observed = sorted({str(row[name]) for row in rows})
            if not observed:
                raise AnalysisError(f"no observed levels for predictor {name!r}")
            levels[name] = tuple(observed)
        return cls(tuple(predictors), levels)

    @property
    def n_columns(self) -> int:
        return 1 + sum(len(lv) - 1 for lv in self.levels.values())

    def matrix(self, rows: Sequence[Mapping[str, object]]) -> np.ndarray:
        X = np.zeros((len(rows), self.n_columns))
        X[:, 0] = 1.0
        col = 1
        for name in self.predictors:
            lookup = {level: j for j, level in enumerate(self.levels[name])}
            for i, row in enumerate(rows):
                j = lookup.get(str(row[name]), 0)
                if j > 0:
                    X[i, col + j - 1] = 1.0
            col += len(self.levels[name]) - 1
        return X


@dataclass
class BinaryFit:
    """Fitted binary-outcome model; ``link`` records which path won."""

    link: str                      # "log", "logit", or "constant"
    coef: np.ndarray | None
    constant: float | None = None
    converged: bool = True
    iterations: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.link == "constant":
            return np.full(X.shape[0], self.constant)
        eta = X @ self.coef
        if self.link == "log":
            return np.exp(np.minimum(eta, _MAX_LOG_PROB))
        return expit(eta)

    def metadata(self) -> dict:
        return {"link": self.link, "converged": bool(self.converged),
                "iterations": int(self.iterations)}


def _logit_irls(X: np.ndarray, y: np.ndarray,
                max_iter: int = 100, tol: float = 1e-10) -> BinaryFit:
    beta = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        p = expit(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP))
        w = np.maximum(p * (1.0 - p), 1e-10)
        z = X @ beta + (y - p) / w
        sw = np.sqrt(w)
        beta_new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if np.max(np.abs(beta_new - beta)) < tol:
            return BinaryFit("logit", beta_new, converged=True, iterations=it)
        beta = beta_new
    return BinaryFit("logit", beta, converged=False, iterations=max_iter)


def fit_log_binomial(X: np.ndarray, y: np.ndarray) -> BinaryFit:
    """Constrained maximum likelihood for the log-link binomial model.

    Constant outcomes short-circuit to a constant predictor so that
    degenerate strata (everyone visited, or nobody did) impute
    deterministically.
    """
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        return BinaryFit("constant", None, constant=float(y[0]))

    def nll(beta):
        eta = X @ beta
        # outside the feasible region the likelihood is undefined;
        # penalise smoothly so SLSQP can recover
        over = np.maximum(eta - _MAX_LOG_PROB, 0.0)
        eta = np.minimum(eta, _MAX_LOG_PROB)
        log1m = np.log(-np.expm1(eta))
        return -(y * eta + (1.0 - y) * log1m).sum() + 1e6 * (over ** 2).sum()

    def grad(beta):
        eta = np.minimum(X @ beta, _MAX_LOG_PROB)
        p = np.exp(eta)
        g = y - (1.0 - y) * p / (1.0 - p)
        over = np.maximum(X @ beta - _MAX_LOG_PROB, 0.0)
        return -X.T @ g + 2e6 * X.T @ over

    p_bar = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
    x0 = np.zeros(X.shape[1])
    x0[0] = np.log(p_bar)
    res = minimize(
        nll, x0, jac=grad, method="SLSQP",
        constraints=[{"type": "ineq",
                      "fun": lambda b: _MAX_LOG_PROB - X @ b,
                      "jac": lambda b: -X}],
        options={"maxiter": 300, "ftol": 1e-12},
    )
    eta = X @ res.x
    if res.success and np.all(eta <= _MAX_LOG_PROB + 1e-9) and np.all(np.isfinite(res.x)):
        return BinaryFit("log", res.x, converged=True, iterations=int(res.nit))
    return _logit_irls(X, y)


@dataclass
class CountFit:
    """Fitted NB2 count model with log link.

    ``family`` is "nb" or, when the dispersion collapsed to the
    equidispersion boundary, "poisson".  ``theta`` is the NB size
    parameter (variance = mu + mu^2 / theta).
    """

    family: str
    coef: np.ndarray | None
    theta: float
    converged: bool = True
    iterations: int = 0
    loglik: float = float("nan")
    mean_const: float | None = None

    def predict_mean(self, X: np.ndarray) -> np.ndarray:
        if self.coef is None:
            return np.full(X.shape[0], self.mean_const)
        return np.exp(np.clip(X @ self.coef, -_ETA_CLIP, _ETA_CLIP))

    def sample(self, rng: np.random.Generator, X: np.ndarray) -> np.ndarray:
        mu = np.maximum(self.predict_mean(X), 1e-12)
        if self.family == "poisson":
            return rng.poisson(mu)
        return rng.negative_binomial(self.theta, self.theta / (self.theta + mu))

    def metadata(self) -> dict:
        return {"family": self.family, "theta": float(self.theta),
                "converged": bool(self.converged), "iterations": int(self.iterations)}


def _nb_loglik(y: np.ndarray, mu: np.ndarray, theta: float) -> float:
    mu = np.maximum(mu, 1e-12)
    return float(np.sum(
        gammaln(y + theta) - gammaln(theta) - gammaln(y + 1.0)
        + theta * np.log(theta / (theta + mu)) + y * np.log(mu / (theta + mu))
    ))


def _poisson_irls(X: np.ndarray, y: np.ndarray, iters: int = 25) -> np.ndarray:
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(max(y.mean(), 1e-3))
    for _ in range(iters):
        mu = np.exp(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP))
        z = X @ beta + (y - mu) / mu
        sw = np.sqrt(mu)
        beta_new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if np.max(np.abs(beta_new - beta)) < 1e-12:
            beta = beta_new
            break
        beta = beta_new
    return beta


def fit_negative_binomial(
    X: np.ndarray, y: np.ndarray,
    tol: float = 1e-8, max_iter: int = 200,
) -> CountFit:
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        # all observed counts equal: zero variance, draw Poisson around
        # the common value
        return CountFit("poisson", None, theta=np.inf, mean_const=float(y[0]))

    beta = _poisson_irls(X, y)
    theta = _moment_theta(y, np.exp(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP)))
    last = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # weighted least-squares sweep for the mean coefficients
        mu = np.exp(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP))
        w = mu * theta / (theta + mu)
        z = X @ beta + (y - mu) / mu
        sw = np.sqrt(np.maximum(w, 1e-12))
        beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        mu = np.exp(np.clip(X @ beta, -_ETA_CLIP, _ETA_CLIP))

        # one-dimensional dispersion update on the log scale
        res = minimize_scalar(
            lambda lt: -_nb_loglik(y, mu, float(np.exp(lt))),
            bounds=(-10.0, np.log(_POISSON_THETA)), method="bounded",
            options={"xatol": 1e-10},
        )
        theta = float(np.exp(res.x))
        ll = _nb_loglik(y, mu, theta)
        if abs(ll - last) < tol:
            converged = True
            break
        last = ll

    family = "nb"
    if theta >= _POISSON_THETA * (1.0 - 1e-6):
        family = "poisson"
        theta = np.inf
    return CountFit(family, beta, theta=theta, converged=converged,
                    iterations=it, loglik=ll)


def _moment_theta(y: np.ndarray, mu: np.ndarray) -> float:
    resid = ((y - mu) ** 2 - mu) / np.maximum(mu ** 2, 1e-12)
    alpha = float(np.mean(resid))
    if alpha <= 1e-8:
        return _POISSON_THETA
    return float(np.clip(1.0 / alpha, 1e-4, _POISSON_THETA))
