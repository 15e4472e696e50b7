"""Nonparametric bootstrap of the whole estimation pipeline."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import chi2, norm

from .data import Dataset
from .errors import BootstrapError, NbsError
from .pipeline import PipelineResult, PipelineSpec, run_pipeline

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.02


@dataclass(frozen=True)
class BootstrapConfig:
    n_replicates: int = 200
    seed: int = 0
    alpha: float = 0.05
    ci_method: str = "symmetric"
    n_jobs: int = 1

    def __post_init__(self):
        if int(self.n_replicates) != self.n_replicates or self.n_replicates < 2:
            raise ValueError("n_replicates must be an integer >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.ci_method not in ("symmetric", "normal"):
            raise ValueError(f"unknown ci_method {self.ci_method!r}")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be positive")


@dataclass(frozen=True)
class TestResult:
    names: tuple
    lam: float
    statistic: float
    p_value: float
    reject: bool
    method: str


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate arrays and the summaries derived from them.

    ``replicate_coefficients`` is ``(B, n_lambda, p)`` and
    ``replicate_thetas`` is ``(B, n_lambda, n_profiles)``; both exclude
    failed replicates.
    """

    point: PipelineResult
    config: BootstrapConfig
    replicate_coefficients: np.ndarray
    replicate_thetas: np.ndarray
    failures: tuple = field(default=())

    @property
    def n_ok(self) -> int:
        return self.replicate_thetas.shape[0]

    @property
    def theta_se(self) -> np.ndarray:
        return self.replicate_thetas.std(axis=0, ddof=1)

    @property
    def coefficient_se(self) -> np.ndarray:
        return self.replicate_coefficients.std(axis=0, ddof=1)

    def theta_ci(self, alpha: float | None = None, method: str | None = None) -> np.ndarray:
        """``(n_lambda, n_profiles, 2)`` intervals."""
        return _interval(self.point.thetas, self.replicate_thetas, alpha or self.config.alpha,
                         method or self.config.ci_method)

    def coefficient_ci(self, alpha: float | None = None, method: str | None = None) -> np.ndarray:
        return _interval(self.point.coefficients, self.replicate_coefficients, alpha or self.config.alpha,
                         method or self.config.ci_method)

    @property
    def se(self) -> dict:
        return {"theta": self.theta_se, "coefficients": self.coefficient_se}

    @property
    def cis(self) -> dict:
        return {"theta": self.theta_ci(), "coefficients": self.coefficient_ci()}


def _interval(est, reps, alpha, method):
    est = np.asarray(est, float)
    if method == "normal":
        half = norm.ppf(1 - alpha / 2) * reps.std(axis=0, ddof=1)
    else:
        # symmetric percentile: est +/- the (1 - alpha) quantile of |rep - est|
        half = np.quantile(np.abs(reps - est), 1 - alpha, axis=0, method="inverted_cdf")
    return np.stack([est - half, est + half], axis=-1)


def replicate_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _replicate(dataset: Dataset, spec: PipelineSpec, ss: np.random.SeedSequence):
    rng = np.random.default_rng(ss)
    idx = rng.integers(0, dataset.n, size=dataset.n)
    res = run_pipeline(dataset.take(idx), spec, rng=rng)
    return res.coefficients, res.thetas


def _replicate_safe(args):
    dataset, spec, ss, i = args
    try:
        return i, _replicate(dataset, spec, ss), None
    except (NbsError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return i, None, f"{type(exc).__name__}: {exc}"


def bootstrap_pipeline(dataset: Dataset, spec: PipelineSpec, config: BootstrapConfig,
                       point: PipelineResult | None = None) -> BootstrapResult:
    """Resample subjects with replacement and rerun every estimation step.

    Replicate ``i`` draws its resample and its Monte Carlo standardization
    from the ``i``-th child of ``SeedSequence(config.seed)``, so results do
    not depend on ``n_jobs``.  Up to 2% of replicates may fail; they are
    logged and dropped.
    """
    spec = spec.resolve(dataset)
    if point is None:
        point = run_pipeline(dataset, spec)
    tasks = [(dataset, spec, ss, i) for i, ss in enumerate(replicate_seeds(config.seed, config.n_replicates))]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(config.n_jobs) as pool:
            out = list(pool.map(_replicate_safe, tasks, chunksize=max(1, len(tasks) // (4 * config.n_jobs))))
    else:
        out = [_replicate_safe(t) for t in tasks]
    failures = tuple((i, msg) for i, _, msg in out if msg is not None)
    for i, msg in failures:
        log.warning("bootstrap replicate %d failed: %s", i, msg)
    if len(failures) > MAX_FAILURE_RATE * config.n_replicates:
        sample = "; ".join(f"#{i}: {m}" for i, m in failures[:5])
        raise BootstrapError(f"{len(failures)} of {config.n_replicates} bootstrap replicates failed "
                             f"(limit {MAX_FAILURE_RATE:.0%}): {sample}")
    ok = [r for _, r, msg in out if msg is None]
    coefs = np.array([c for c, _ in ok])
    thetas = np.array([t for _, t in ok])
    return BootstrapResult(point, config, coefs, thetas, failures)


def coefficient_test(result: BootstrapResult, names: Sequence[str], lam_index: int = 0,
                     method: str = "symmetric", alpha: float | None = None) -> TestResult:
    """Test that the named NBS regression coefficients are all zero.

    One coefficient: ``method="symmetric"`` inverts the symmetric bootstrap
    interval, so ``p`` is the share of ``|rep - est|`` at least ``|est|``
    and the test rejects exactly when the ``1 - alpha`` interval excludes 0;
    ``method="normal"`` uses ``est / se`` against N(0, 1).  Several
    coefficients: Wald statistic with the bootstrap covariance, referred to
    chi-square.
    """
    alpha = result.config.alpha if alpha is None else alpha
    all_names = list(result.point.coefficient_names)
    missing = [n for n in names if n not in all_names]
    if missing:
        raise KeyError(f"coefficients {missing} not in model; available: {all_names}")
    idx = [all_names.index(n) for n in names]
    est = result.point.coefficients[lam_index, idx]
    reps = result.replicate_coefficients[:, lam_index, idx]
    lam = result.point.spec.lambdas[lam_index]
    if len(idx) == 1:
        e, r = float(est[0]), reps[:, 0]
        if method == "normal":
            se = r.std(ddof=1)
            if se == 0:
                p = 1.0 if e == 0 else 0.0
                return TestResult(tuple(names), lam, float("inf") if e else 0.0, p, p <= alpha, method)
            z = e / se
            p = float(2 * norm.sf(abs(z)))
            return TestResult(tuple(names), lam, z, p, p <= alpha, method)
        p = float(np.mean(np.abs(r - e) >= abs(e)))
        return TestResult(tuple(names), lam, abs(e), p, p <= alpha, "symmetric")
    cov = np.atleast_2d(np.cov(reps, rowvar=False))
    if np.linalg.matrix_rank(cov) < len(idx):
        raise BootstrapError("bootstrap covariance is singular; increase the number of replicates")
    stat = float(est @ np.linalg.solve(cov, est))
    p = float(chi2.sf(stat, len(idx)))
    return TestResult(tuple(names), lam, stat, p, p <= alpha, "wald")
