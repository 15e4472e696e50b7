"""End-to-end estimation: outcome models, IPCW, standardization, NBS regression."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .costs import fit_lognormal_cost, fit_zero_inflated_cost
from .data import TIME, TREATMENT, Dataset
from .regression import (CedRow, NbsRegressionFit, OmegaGrid, integrate_nbs, regress_nbs)
from .standardize import DEFAULT_M, StandardizationConfig, standardize
from .survival import POSITIVITY_FLOOR, compute_ipcw, fit_censoring_cox, fit_censoring_km, fit_weibull


@dataclass(frozen=True)
class PipelineSpec:
    """Everything needed to turn a :class:`Dataset` into NBS estimates.

    ``None`` term lists are filled from the dataset by :meth:`resolve`:
    survival on ``A``, every covariate and ``A`` times each effect
    modifier; cost on ``A``, every covariate and ``Z``; censoring stratified
    by ``A`` with every covariate as a Cox term; NBS regression on every
    effect modifier.  ``profiles`` are x-profiles as label mappings.
    """

    lambdas: tuple = (1.0,)
    profiles: tuple = ()
    survival_terms: tuple | None = None
    cost_terms: tuple | None = None
    zero_terms: tuple | None = None
    cost_model: str = "lognormal"
    censoring_model: str = "cox"
    censoring_strata: tuple = (TREATMENT,)
    censoring_covariates: tuple | None = None
    nbs_terms: tuple | None = None
    quantile_mode: str = "auto"
    m_draws: int = DEFAULT_M
    n_omega: int = 30
    positivity_floor: float = POSITIVITY_FLOOR
    seed: int = 0

    def __post_init__(self):
        lams = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "profiles", tuple(dict(p) for p in self.profiles))
        for name in ("survival_terms", "cost_terms", "zero_terms", "censoring_covariates", "nbs_terms"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))
        object.__setattr__(self, "censoring_strata", tuple(self.censoring_strata))
        if self.cost_model not in ("lognormal", "zero_inflated"):
            raise ValueError(f"unknown cost model {self.cost_model!r}")
        if self.censoring_model not in ("cox", "km"):
            raise ValueError(f"unknown censoring model {self.censoring_model!r}")
        StandardizationConfig(self.m_draws, lams, self.seed)   # validates M and lambdas
        OmegaGrid(self.n_omega)

    def resolve(self, dataset: Dataset) -> "PipelineSpec":
        cov = dataset.covariate_names
        x = dataset.x_names
        spec = self
        if spec.survival_terms is None:
            spec = replace(spec, survival_terms=(TREATMENT, *cov, *(f"{TREATMENT}:{k}" for k in x)))
        if spec.cost_terms is None:
            spec = replace(spec, cost_terms=(TREATMENT, *cov, TIME))
        if spec.censoring_covariates is None:
            spec = replace(spec, censoring_covariates=cov)
        if spec.nbs_terms is None:
            spec = replace(spec, nbs_terms=x)
        if not spec.profiles:
            spec = replace(spec, profiles=tuple(default_profiles(dataset)))
        return spec

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineSpec":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def default_profiles(dataset: Dataset) -> list[dict]:
    """Every level combination when all effect modifiers are discrete
    (categorical or at most 10 values), otherwise the covariate means."""
    from itertools import product
    choices = []
    for j, k in enumerate(dataset.x_names):
        col = dataset.covariates[:, dataset.covariate_names.index(k)]
        if k in dataset.levels:
            choices.append(list(dataset.levels[k]))
        else:
            u = np.unique(col)
            choices.append([_num(v) for v in u] if u.size <= 10 else [_num(col.mean())])
    return [dict(zip(dataset.x_names, combo)) for combo in product(*choices)]


def _num(v):
    v = float(v)
    return int(v) if v.is_integer() else v


@dataclass(frozen=True)
class PipelineResult:
    """Point estimates for one dataset.

    ``coefficients[i]`` is the NBS regression coefficient vector at
    ``spec.lambdas[i]`` and ``thetas[i, j]`` the NBS at that lambda and
    ``spec.profiles[j]``.
    """

    spec: PipelineSpec
    coefficient_names: tuple
    coefficients: np.ndarray
    thetas: np.ndarray
    survival_fit: object = field(repr=False)
    censoring_model: object = field(repr=False)
    weights: object = field(repr=False)
    cost_fit: object = field(repr=False)
    nbs_fits: tuple = field(repr=False)
    populations: tuple | None = field(default=None, repr=False)

    def theta(self, lam: float, profile: Mapping) -> float:
        i = self.spec.lambdas.index(float(lam))
        j = [dict(p) for p in self.spec.profiles].index(dict(profile))
        return float(self.thetas[i, j])

    def ced_rows(self, primary_range=None) -> list[CedRow]:
        return [CedRow(lam, dict(p), float(self.thetas[i, j]), None, None,
                       primary_range is None or primary_range[0] <= lam <= primary_range[1])
                for i, lam in enumerate(self.spec.lambdas) for j, p in enumerate(self.spec.profiles)]


def fit_outcome_models(dataset: Dataset, spec: PipelineSpec):
    """``(survival_fit, censoring_model, weights, cost_fit)`` for a resolved spec."""
    surv = fit_weibull(dataset, spec.survival_terms)
    if spec.censoring_model == "km":
        cens = fit_censoring_km(dataset)
    else:
        cens = fit_censoring_cox(dataset, spec.censoring_strata, spec.censoring_covariates)
    w = compute_ipcw(dataset, cens, spec.positivity_floor)
    if spec.cost_model == "zero_inflated":
        cost = fit_zero_inflated_cost(dataset, w, spec.cost_terms, spec.zero_terms)
    else:
        cost = fit_lognormal_cost(dataset, w, spec.cost_terms)
    return surv, cens, w, cost


def estimate_from_populations(control, treated, spec: PipelineSpec):
    """Regression fits per lambda and the theta table, sharing the draws."""
    grid = OmegaGrid(spec.n_omega)
    fits, coefs = [], []
    thetas = np.empty((len(spec.lambdas), len(spec.profiles)))
    for i, lam in enumerate(spec.lambdas):
        try:
            fit = regress_nbs(control, treated, lam, grid, spec.nbs_terms, spec.quantile_mode)
        except Exception as exc:
            exc.args = (f"at lambda={lam:g}: {exc.args[0] if exc.args else exc}", *exc.args[1:])
            raise
        fits.append(fit)
        coefs.append(fit.coefficients)
        for j, prof in enumerate(spec.profiles):
            thetas[i, j] = integrate_nbs(fit, prof, lam).theta
    return tuple(fits), np.array(coefs), thetas


def run_pipeline(dataset: Dataset, spec: PipelineSpec, keep_populations: bool = False,
                 rng=None) -> PipelineResult:
    """Fit outcome models, standardize, and regress NBS at every lambda.

    The pseudo-populations are drawn once and reused for every lambda.
    Without ``rng`` the draws are fixed by ``spec.seed``.
    """
    spec = spec.resolve(dataset)
    surv, cens, w, cost = fit_outcome_models(dataset, spec)
    config = StandardizationConfig(spec.m_draws, spec.lambdas, spec.seed)
    control, treated = standardize(dataset, surv, cost, config, rng)
    fits, coefs, thetas = estimate_from_populations(control, treated, spec)
    return PipelineResult(spec, fits[0].names, coefs, thetas, surv, cens, w, cost, fits,
                          (control, treated) if keep_populations else None)


def run_with_models(dataset: Dataset, survival_fit, cost_fit, spec: PipelineSpec,
                    rng=None) -> PipelineResult:
    """Standardization and regression with outcome models supplied by the
    caller (for instance the true data-generating models)."""
    spec = spec.resolve(dataset)
    config = StandardizationConfig(spec.m_draws, spec.lambdas, spec.seed)
    control, treated = standardize(dataset, survival_fit, cost_fit, config, rng)
    fits, coefs, thetas = estimate_from_populations(control, treated, spec)
    return PipelineResult(spec, fits[0].names, coefs, thetas, survival_fit, None, None, cost_fit,
                          fits, (control, treated))
