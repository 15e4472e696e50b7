"""Monte Carlo standardization over the empirical covariate distribution.

For each arm, covariate rows (L and X jointly) are resampled with
replacement from the data, survival is drawn from the fitted survival
model at that arm, and cost is drawn from the fitted cost model given the
drawn survival.  Arms get independent baseline draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import TIME, TREATMENT, Dataset, compute_inb

DEFAULT_M = 10_000


@dataclass(frozen=True)
class StandardizationConfig:
    m_draws: int = DEFAULT_M
    lambdas: tuple = (1.0,)
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.m_draws) != self.m_draws or self.m_draws < 1:
            raise ValueError(f"m_draws must be a positive integer, got {self.m_draws!r}")
        lams = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        if not lams or any(not (v > 0 and np.isfinite(v)) for v in lams):
            raise ValueError("willingness-to-pay values must be positive and finite")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "m_draws", int(self.m_draws))

    def arm_rng(self, arm: int) -> np.random.Generator:
        """Stream for one arm; fixed by ``(rng_seed, arm)`` alone."""
        return np.random.default_rng(np.random.SeedSequence(self.rng_seed, spawn_key=(int(arm),)))


@dataclass(frozen=True)
class BaselineDraw:
    rows: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple

    def columns(self) -> dict:
        return {k: self.covariates[:, j] for j, k in enumerate(self.covariate_names)}


def draw_baseline(dataset: Dataset, m: int, rng=None) -> BaselineDraw:
    """``m`` covariate rows drawn with replacement; rows are kept whole so
    the joint (L, X) structure is preserved."""
    if dataset.n == 0:
        raise ValueError("cannot draw from an empty dataset")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    rows = rng.integers(0, dataset.n, size=int(m))
    return BaselineDraw(rows, dataset.covariates[rows], dataset.covariate_names)


@dataclass(frozen=True)
class PseudoPopulation:
    """Simulated outcomes for one arm over a resampled covariate population.

    INBs are computed on demand, so one population serves every
    willingness-to-pay value.
    """

    arm: int
    effectiveness: np.ndarray
    cost: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple
    x_names: tuple
    levels: Mapping[str, tuple] = field(default_factory=dict)
    source_rows: np.ndarray | None = None

    def __len__(self):
        return len(self.effectiveness)

    def inb(self, lam: float) -> np.ndarray:
        return compute_inb(lam, self.effectiveness, self.cost)

    @property
    def x(self) -> np.ndarray:
        return self.covariates[:, [self.covariate_names.index(k) for k in self.x_names]]

    def x_columns(self) -> dict:
        return {k: self.covariates[:, self.covariate_names.index(k)] for k in self.x_names}

    def draws(self, lam: float):
        """``(inb, x)`` pairs."""
        return list(zip(self.inb(lam).tolist(), map(tuple, self.x.tolist())))


def generate_pseudo_population(dataset: Dataset, survival_fit, cost_fit, arm: int,
                               config: StandardizationConfig, rng=None) -> PseudoPopulation:
    """Standardized pseudo-population of ``config.m_draws`` units under
    treatment ``arm``.

    Without ``rng`` the stream is derived from ``(config.rng_seed, arm)``.
    """
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    rng = config.arm_rng(arm) if rng is None else rng
    base = draw_baseline(dataset, config.m_draws, rng)
    cols = base.columns()
    cols[TREATMENT] = np.full(config.m_draws, float(arm))
    z = survival_fit.sample(cols, rng)
    cols[TIME] = z
    y = cost_fit.sample(cols, rng)
    return PseudoPopulation(arm, z, y, base.covariates, dataset.covariate_names, dataset.x_names,
                            dataset.levels, base.rows)


def standardize(dataset: Dataset, survival_fit, cost_fit, config: StandardizationConfig,
                rng=None) -> tuple[PseudoPopulation, PseudoPopulation]:
    """Control and treated pseudo-populations, in that order."""
    if rng is None:
        return tuple(generate_pseudo_population(dataset, survival_fit, cost_fit, a, config)
                     for a in (0, 1))
    return tuple(generate_pseudo_population(dataset, survival_fit, cost_fit, a, config, rng)
                 for a in (0, 1))


def write_pseudo_populations(path, populations: Sequence[PseudoPopulation], lam: float) -> None:
    """CSV with columns ``arm, inb, <x names...>``."""
    x_names = populations[0].x_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "inb", *x_names])
        for pop in populations:
            for v, xrow in zip(pop.inb(lam), pop.x):
                w.writerow([pop.arm, "%.15g" % v, *("%.15g" % u for u in xrow)])
