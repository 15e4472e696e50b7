"""Conditional cost models fit with IPCW weights.

Only records with a positive weight (fully observed cost) enter a fit.
The two-part model uses the same weights in both stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import TIME, TREATMENT, Dataset
from .design import Formula, check_full_rank
from .errors import ConvergenceError, DegenerateModelError, FitError, SeparationError
from .survival import GRAD_TOL, IpcwWeights, _rng


@dataclass(frozen=True)
class LogNormalCostFit:
    """Weighted regression of log cost.

    ``covariance`` is the heteroskedasticity-robust (sandwich) covariance
    of ``mean_coefficients``, which stays valid under estimated weights.
    """

    mean_coefficients: np.ndarray
    sigma2: float
    formula: Formula
    covariance: np.ndarray
    n_used: int
    weight_sum: float

    @property
    def names(self) -> list[str]:
        return self.formula.column_names

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def mean_log(self, columns: Mapping[str, object]) -> np.ndarray:
        return self.formula.matrix(columns) @ self.mean_coefficients

    def sample(self, columns: Mapping[str, object], rng=None) -> np.ndarray:
        rng = _rng(rng)
        mu = self.mean_log(columns)
        return np.exp(mu + np.sqrt(self.sigma2) * rng.standard_normal(mu.shape[0]))

    def to_dict(self) -> dict:
        return {"mean_coefficients": self.mean_coefficients.tolist(), "sigma2": self.sigma2,
                "formula": self.formula.to_dict(), "covariance": self.covariance.tolist(),
                "n_used": self.n_used, "weight_sum": self.weight_sum, "names": self.names}

    @classmethod
    def from_dict(cls, d) -> "LogNormalCostFit":
        return cls(np.asarray(d["mean_coefficients"], float), float(d["sigma2"]),
                   Formula.from_dict(d["formula"]), np.asarray(d["covariance"], float),
                   int(d["n_used"]), float(d["weight_sum"]))


@dataclass(frozen=True)
class ZeroInflatedCostFit:
    """Logistic model for ``P(Y = 0)`` and a log-normal model for ``Y > 0``."""

    zero_logit_coefficients: np.ndarray
    zero_formula: Formula
    zero_covariance: np.ndarray
    positive_part: LogNormalCostFit

    def zero_probability(self, columns: Mapping[str, object]) -> np.ndarray:
        return expit(self.zero_formula.matrix(columns) @ self.zero_logit_coefficients)

    def sample(self, columns: Mapping[str, object], rng=None) -> np.ndarray:
        rng = _rng(rng)
        p0 = self.zero_probability(columns)
        pos = self.positive_part.sample(columns, rng)
        pos = np.broadcast_to(pos, p0.shape)
        return np.where(rng.random(p0.shape[0]) < p0, 0.0, pos)

    def to_dict(self) -> dict:
        return {"zero_logit_coefficients": self.zero_logit_coefficients.tolist(),
                "zero_formula": self.zero_formula.to_dict(),
                "zero_covariance": self.zero_covariance.tolist(),
                "positive_part": self.positive_part.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "ZeroInflatedCostFit":
        return cls(np.asarray(d["zero_logit_coefficients"], float), Formula.from_dict(d["zero_formula"]),
                   np.asarray(d["zero_covariance"], float), LogNormalCostFit.from_dict(d["positive_part"]))


def _weights(dataset, weights):
    w = weights.weights if isinstance(weights, IpcwWeights) else np.asarray(weights, float)
    if w.shape != (dataset.n,):
        raise ValueError("one weight per record is required")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w


def weighted_lognormal(X, logy, w, names) -> tuple:
    """Weighted least squares of ``logy`` on ``X``.

    Returns ``(beta, sigma2, sandwich_cov)``; ``sigma2`` uses the
    ``sum(w) - p`` denominator.
    """
    n, p = X.shape
    if n < p + 2:
        raise FitError(f"log-normal cost fit needs at least {p + 2} records, has {n}")
    check_full_rank(X * np.sqrt(w)[:, None], names)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], logy * sw, rcond=None)
    resid = logy - X @ beta
    denom = w.sum() - p
    if denom <= 0:
        raise FitError("weights too small for a residual variance estimate")
    sigma2 = float(np.sum(w * resid ** 2) / denom)
    if not sigma2 > 0:
        raise DegenerateModelError("log-cost residual variance is zero")
    bread = np.linalg.inv((X * w[:, None]).T @ X)
    meat = (X * (w * resid)[:, None]).T @ (X * (w * resid)[:, None])
    cov = bread @ meat @ bread * (n / (n - p))
    return beta, sigma2, (cov + cov.T) / 2


def fit_lognormal_cost(dataset: Dataset, weights, terms: Sequence[str]) -> LogNormalCostFit:
    """Weighted log-normal regression on records with positive weight.

    ``terms`` may include ``"A"`` and ``"Z"`` (observed time).
    """
    formula = Formula(terms, dataset.levels)
    w = _weights(dataset, weights)
    use = w > 0
    if not use.any():
        raise FitError("all weights are zero: no fully observed costs")
    y = dataset.cost[use]
    if np.any(np.isnan(y)):
        raise FitError("positive weight on a record with missing cost")
    if np.any(y <= 0):
        raise FitError("zero or negative costs present; use fit_zero_inflated_cost")
    X = formula.matrix(dataset.columns())[use]
    beta, s2, cov = weighted_lognormal(X, np.log(y), w[use], formula.column_names)
    return LogNormalCostFit(beta, s2, formula, cov, int(use.sum()), float(w[use].sum()))


def weighted_logistic(X, y, w, names, max_iter: int = 50):
    """Weighted logistic regression by IRLS.

    Returns ``(beta, covariance, n_iter)``.  Diverging coefficients raise
    :class:`SeparationError`.
    """
    check_full_rank(X, names)
    beta = np.zeros(X.shape[1])
    trace = []
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = expit(eta)
        g = X.T @ (w * (y - mu))
        gn = float(np.linalg.norm(g))
        trace.append((it, gn))
        if gn < GRAD_TOL:
            break
        v = w * mu * (1 - mu)
        info = (X * v[:, None]).T @ X
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError as exc:
            raise SeparationError("logistic information matrix singular: perfect separation") from exc
        beta = beta + step
        if np.abs(beta).max() > 30:
            raise SeparationError("logistic zero-cost model: perfect separation (coefficients diverge)")
        if np.linalg.norm(step) < 1e-13 * (1 + np.linalg.norm(beta)) and gn < 1e-6:
            break
    else:
        raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations", trace)
    mu = expit(X @ beta)
    info = (X * (w * mu * (1 - mu))[:, None]).T @ X
    return beta, np.linalg.inv(info), len(trace)


def fit_zero_inflated_cost(dataset: Dataset, weights, terms: Sequence[str],
                           zero_terms: Sequence[str] | None = None) -> ZeroInflatedCostFit:
    """Two-part cost model: weighted logistic for ``Y == 0``, weighted
    log-normal for ``Y > 0``.  ``zero_terms`` defaults to ``terms``."""
    w = _weights(dataset, weights)
    use = w > 0
    if not use.any():
        raise FitError("all weights are zero: no fully observed costs")
    y = dataset.cost[use]
    zero = y == 0
    if zero.all():
        raise DegenerateModelError("all observed costs are zero: the positive-cost stage collapsed")
    if not zero.any():
        raise DegenerateModelError("no observed costs are zero: the zero-cost stage collapsed")
    zf = Formula(terms if zero_terms is None else zero_terms, dataset.levels)
    cols = dataset.columns()
    Xz = zf.matrix(cols)[use]
    gamma, gcov, _ = weighted_logistic(Xz, zero.astype(float), w[use], zf.column_names)
    p0 = expit(Xz @ gamma)
    if np.any(p0 <= 0) or np.any(p0 >= 1):
        raise SeparationError("fitted zero-cost probability reached 0 or 1")
    pf = Formula(terms, dataset.levels)
    pos = np.flatnonzero(use)[~zero]
    Xp = pf.matrix(cols)[pos]
    beta, s2, cov = weighted_lognormal(Xp, np.log(dataset.cost[pos]), w[pos], pf.column_names)
    positive = LogNormalCostFit(beta, s2, pf, cov, len(pos), float(w[pos].sum()))
    return ZeroInflatedCostFit(gamma, zf, gcov, positive)


def sample_cost(fit, a, x=None, l=None, z=None, rng=None):
    """Draw costs given treatment ``a``, covariates and effectiveness ``z``.

    Scalars in, scalar out.
    """
    cols = {TREATMENT: a, **dict(x or {}), **dict(l or {})}
    if z is not None:
        cols[TIME] = z
    scalar = all(np.ndim(v) == 0 for v in cols.values())
    draw = fit.sample(cols, rng)
    return float(draw[0]) if scalar else draw
