"""Net benefit separation: rank-sum and placement-value regression estimators.

Conventions
-----------
* Quantiles of the control INB distribution are *survivor* quantiles: the
  ``omega`` survivor quantile is the ``1 - omega`` quantile of the CDF.
  :func:`survivor_to_cdf_level` is the only place that conversion happens.
* Empirical quantiles use the lower inverse of the empirical CDF,
  ``F^-1(p) = inf{b : F_n(b) >= p}``.
* A placement value is ``1(treated INB > control survivor quantile)``,
  strict, so equality counts as 0.
* The regression is binomial with a probit link on
  ``[1, x-terms..., probit(omega)]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import rankdata

from .data import profile_columns
from .design import Formula, check_full_rank
from .errors import ConvergenceError, DegenerateModelError, FitError, SeparationError
from .standardize import PseudoPopulation

log = logging.getLogger(__name__)

DEFAULT_N_OMEGA = 30
OMEGA_COLUMN = "probit(omega)"


# -- grid -----------------------------------------------------------------

@dataclass(frozen=True)
class OmegaGrid:
    """``n_omega`` equally spaced points ``j / (n_omega + 1)``."""

    n_omega: int = DEFAULT_N_OMEGA

    def __post_init__(self):
        if int(self.n_omega) != self.n_omega or self.n_omega < 1:
            raise ValueError("n_omega must be a positive integer")

    @property
    def points(self) -> np.ndarray:
        return np.arange(1, self.n_omega + 1) / (self.n_omega + 1)

    @property
    def probit(self) -> np.ndarray:
        return ndtri(self.points)


def survivor_to_cdf_level(omega):
    return 1.0 - np.asarray(omega, dtype=float)


# -- unconditional NBS ----------------------------------------------------

def wilcoxon_nbs(treated_inbs, control_inbs) -> float:
    """Scaled Wilcoxon rank-sum estimate of ``P(B1 > B0)``, ties counted 1/2.

    Computed from pooled mid-ranks as ``(2 R1 - N1 (N1 + 1)) / (2 N0 N1)``,
    where ``R1`` is the treated rank sum.
    """
    b1 = np.asarray(treated_inbs, dtype=float).ravel()
    b0 = np.asarray(control_inbs, dtype=float).ravel()
    if b1.size == 0 or b0.size == 0:
        raise ValueError("wilcoxon_nbs needs at least one unit in each arm")
    n1, n0 = b1.size, b0.size
    ranks = rankdata(np.concatenate([b1, b0]))
    r1 = ranks[:n1].sum()
    return float((2.0 * r1 - n1 * (n1 + 1)) / (2.0 * n0 * n1))


# -- quantiles ------------------------------------------------------------

def _unique_rows(x):
    """Distinct rows (lexicographic order) and the inverse index."""
    x = np.asarray(x, dtype=float)
    if x.shape[1] == 1:
        u, inv = np.unique(x[:, 0], return_inverse=True)
        return u[:, None], inv.reshape(-1)
    # mixed-radix code per row is far cheaper than np.unique(axis=0)
    code = np.zeros(x.shape[0], dtype=np.int64)
    for j in range(x.shape[1]):
        _, cj = np.unique(x[:, j], return_inverse=True)
        code = code * (int(cj.max()) + 1) + cj.reshape(-1)
    _, first, inv = np.unique(code, return_index=True, return_inverse=True)
    return x[first], inv.reshape(-1)


def empirical_survivor_quantiles(values, omegas) -> np.ndarray:
    """Lower-inverse empirical survivor quantiles of ``values`` at ``omegas``."""
    b = np.sort(np.asarray(values, dtype=float))
    n = b.size
    p = survivor_to_cdf_level(omegas)
    # guard against n * p landing a hair above an integer
    k = np.ceil(n * p * (1 - 1e-12)).astype(int)
    return b[np.clip(k, 1, n) - 1]


def quantile_regression(X, y, tau: float) -> np.ndarray:
    """Linear quantile regression at CDF level ``tau``: minimises the check
    loss as a linear program solved by dual simplex."""
    n, p = X.shape
    c = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise FitError(f"quantile regression LP failed at level {tau:g}: {res.message}")
    return res.x[:p]


@dataclass(frozen=True)
class QuantileEstimator:
    """Control-arm survivor quantiles as a function of ``x``.

    ``empirical_by_level``: ``keys`` are the distinct x rows and ``table``
    the per-level quantiles.  ``linear_quantile_regression``: one
    coefficient row per omega in ``coefficients``.  Either way quantiles are
    non-increasing in omega for fixed x.
    """

    kind: str
    grid: OmegaGrid
    x_names: tuple
    keys: np.ndarray | None = None
    table: np.ndarray | None = None
    formula: Formula | None = None
    coefficients: np.ndarray | None = None

    def survivor_quantiles(self, x) -> np.ndarray:
        """``(n, n_omega)`` survivor quantiles at the rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "empirical_by_level":
            uniq, inv = _unique_rows(x)
            out = np.empty((x.shape[0], self.grid.n_omega))
            for i, row in enumerate(uniq):
                hit = np.flatnonzero(np.all(self.keys == row, axis=1))
                if hit.size == 0:
                    raise FitError(f"no control quantiles for x profile {dict(zip(self.x_names, row))}")
                out[inv == i] = self.table[hit[0]]
            return out
        X = self.formula.matrix({k: x[:, j] for j, k in enumerate(self.x_names)})
        q = X @ self.coefficients.T
        # rearrangement: survivor quantiles must not increase with omega
        return -np.sort(-q, axis=1)


def estimate_quantiles(control: PseudoPopulation, grid: OmegaGrid, lam: float,
                       mode: str = "auto", terms: Sequence[str] | None = None) -> QuantileEstimator:
    """Estimate control survivor quantiles ``S0|X^-1(omega)`` on ``grid``.

    ``mode`` is ``"empirical"`` (per distinct x row), ``"regression"``
    (linear quantile regression on ``terms``, default all x) or ``"auto"``
    (empirical when every x column is categorical or has at most 10 distinct
    values).
    """
    b0 = control.inb(lam)
    x = control.x
    if mode == "auto":
        discrete = all(k in control.levels or np.unique(x[:, j]).size <= 10
                       for j, k in enumerate(control.x_names))
        mode = "empirical" if discrete else "regression"
    if mode == "empirical":
        if x.shape[1] == 0:
            keys, inv = np.zeros((1, 0)), np.zeros(len(b0), dtype=int)
        else:
            keys, inv = _unique_rows(x)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(keys.shape[0] + 1))
        table = np.empty((keys.shape[0], grid.n_omega))
        for i in range(keys.shape[0]):
            vals = b0[order[bounds[i]:bounds[i + 1]]]
            if vals.size == 0:
                raise FitError(f"empty control level {dict(zip(control.x_names, keys[i]))}")
            table[i] = empirical_survivor_quantiles(vals, grid.points)
        return QuantileEstimator("empirical_by_level", grid, control.x_names, keys, table)
    if mode != "regression":
        raise ValueError(f"unknown quantile mode {mode!r}")
    formula = Formula(control.x_names if terms is None else terms, control.levels)
    X = formula.matrix(control.x_columns())
    check_full_rank(X, formula.column_names)
    coefs = np.array([quantile_regression(X, b0, float(t)) for t in survivor_to_cdf_level(grid.points)])
    return QuantileEstimator("linear_quantile_regression", grid, control.x_names,
                             formula=formula, coefficients=coefs)


# -- placement values -------------------------------------------------------

@dataclass(frozen=True)
class PlacementValueTable:
    """Placement indicators for every (treated unit, omega) pair.

    Stored wide: ``u[m, j]`` is the indicator for unit ``m`` at
    ``grid.points[j]``.
    """

    u: np.ndarray
    x: np.ndarray
    x_names: tuple
    grid: OmegaGrid
    levels: Mapping[str, tuple] = field(default_factory=dict)

    def __len__(self):
        return self.u.size

    def long(self) -> dict:
        """Long format: one entry per (unit, omega) row."""
        m, k = self.u.shape
        return {
            "unit": np.repeat(np.arange(m), k),
            "omega": np.tile(self.grid.points, m),
            "u": self.u.ravel().astype(int),
            "x": np.repeat(self.x, k, axis=0),
            "probit_omega": np.tile(self.grid.probit, m),
        }


def build_placement_values(treated: PseudoPopulation, quantiles: QuantileEstimator,
                           grid: OmegaGrid, lam: float) -> PlacementValueTable:
    """``u[m, j] = 1(B1_m > S0^-1(omega_j | x_m))``."""
    b1 = treated.inb(lam)
    q = quantiles.survivor_quantiles(treated.x) if treated.x.shape[1] else \
        np.broadcast_to(quantiles.table[0], (len(b1), grid.n_omega))
    u = b1[:, None] > q
    return PlacementValueTable(u, treated.x, treated.x_names, grid, treated.levels)


# -- probit regression ------------------------------------------------------

@dataclass(frozen=True)
class NbsRegressionFit:
    """Probit model ``E[U | x, omega] = Phi(b0 + bx' x + b_omega probit(omega))``."""

    coefficients: np.ndarray
    names: tuple
    x_formula: Formula
    omega_grid: OmegaGrid
    link: str = "probit"
    loglik: float = float("nan")
    n_iter: int = 0

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def omega_coefficient(self) -> float:
        return float(self.coefficients[-1])

    def linear_predictor(self, x_profile) -> np.ndarray:
        """``b0 + bx' x`` for each profile (a mapping or a list of mappings)."""
        profiles = [x_profile] if isinstance(x_profile, Mapping) else list(x_profile)
        out = []
        for prof in profiles:
            cols = profile_columns(self.x_formula.levels, prof, self.x_formula.variables)
            row = self.x_formula.matrix(cols)[0]
            out.append(float(row @ self.coefficients[:-1]))
        return np.array(out)

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "names": list(self.names),
                "x_formula": self.x_formula.to_dict(), "n_omega": self.omega_grid.n_omega,
                "link": self.link, "loglik": self.loglik}

    @classmethod
    def from_dict(cls, d) -> "NbsRegressionFit":
        return cls(np.asarray(d["coefficients"], float), tuple(d["names"]),
                   Formula.from_dict(d["x_formula"]), OmegaGrid(int(d["n_omega"])),
                   d.get("link", "probit"), float(d.get("loglik", float("nan"))))


def _probit_loglik(eta, s, m):
    return float(np.sum(s * log_ndtr(eta) + (m - s) * log_ndtr(-eta)))


def fit_binomial_probit(X, successes, trials, names=None, max_iter: int = 100, tol: float = 1e-8):
    """Binomial probit MLE by Fisher scoring (IRLS).

    Returns ``(beta, loglik, n_iter)``.  Mills ratios are evaluated in log
    space so extreme linear predictors stay finite.
    """
    X = np.asarray(X, float)
    s = np.asarray(successes, float)
    m = np.asarray(trials, float)
    if names is not None:
        check_full_rank(X, names)
    beta = np.zeros(X.shape[1])
    # start from a least-squares fit on the probit of smoothed proportions
    z0 = ndtri((s + 0.5) / (m + 1.0))
    beta, *_ = np.linalg.lstsq(X * np.sqrt(m)[:, None], z0 * np.sqrt(m), rcond=None)
    ll = _probit_loglik(X @ beta, s, m)
    trace = []
    for it in range(1, max_iter + 1):
        eta = X @ beta
        logphi = -0.5 * eta ** 2 - 0.5 * np.log(2 * np.pi)
        r_hi = np.exp(logphi - log_ndtr(eta))     # phi / Phi
        r_lo = np.exp(logphi - log_ndtr(-eta))    # phi / (1 - Phi)
        score = s * r_hi - (m - s) * r_lo
        g = X.T @ score
        gn = float(np.linalg.norm(g))
        trace.append((it, ll, gn))
        if gn < tol:
            break
        info = (X * (m * r_hi * r_lo)[:, None]).T @ X
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError as exc:
            raise SeparationError("probit information matrix singular") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            new_ll = _probit_loglik(X @ cand, s, m)
            if new_ll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                raise ConvergenceError("probit fit: step halving failed", trace)
        beta, ll = cand, new_ll
        if np.abs(beta).max() > 30:
            raise SeparationError("probit coefficients diverge: placement values are separated")
        if np.linalg.norm(t * step) < 1e-13 * (1 + np.linalg.norm(beta)) and gn < 1e-6:
            break
    else:
        raise ConvergenceError(f"probit fit did not converge in {max_iter} iterations", trace)
    return beta, ll, len(trace)


def fit_probit(table: PlacementValueTable, terms: Sequence[str] | None = None) -> NbsRegressionFit:
    """Fit the probit NBS regression to a placement-value table.

    Rows sharing a design vector are pooled into binomial counts, which
    leaves the likelihood unchanged.  ``terms`` selects x terms (default:
    every x column; ``[]`` fits the intercept and omega terms only).
    """
    if table.u.size == 0:
        raise DegenerateModelError("empty placement-value table")
    total = table.u.sum()
    if total == 0 or total == table.u.size:
        raise DegenerateModelError("placement values are constant; the regression is degenerate")
    formula = Formula(table.x_names if terms is None else terms, table.levels)
    xcols = {k: table.x[:, j] for j, k in enumerate(table.x_names)}
    used = formula.variables
    if used:
        keys, inv = _unique_rows(np.column_stack([xcols[k] for k in used]))
    else:
        keys, inv = np.zeros((1, 0)), np.zeros(table.u.shape[0], dtype=int)
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(keys.shape[0]))
    succ = np.add.reduceat(table.u[order].astype(np.int64), starts, axis=0)   # (K, n_omega)
    counts = np.diff(np.append(starts, len(inv)))                             # (K,)
    Xk = formula.matrix({k: keys[:, j] for j, k in enumerate(used)}) if used else np.ones((1, 1))
    if Xk.shape[0] != keys.shape[0]:
        Xk = np.broadcast_to(Xk, (keys.shape[0], Xk.shape[1]))
    n_om = table.grid.n_omega
    design = np.column_stack([np.repeat(Xk, n_om, axis=0), np.tile(table.grid.probit, keys.shape[0])])
    names = tuple(formula.column_names) + (OMEGA_COLUMN,)
    beta, ll, it = fit_binomial_probit(design, succ.ravel(), np.repeat(counts, n_om), names)
    return NbsRegressionFit(beta, names, formula, table.grid, "probit", ll, it)


# -- integration ------------------------------------------------------------

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)
_S_MAX = 8.0
# omega = Phi(s): two 64-point Gauss-Legendre panels on [-8, 0] and [0, 8]
_S = np.concatenate([(_NODES - 1) * _S_MAX / 2, (_NODES + 1) * _S_MAX / 2])
_W = np.concatenate([_WEIGHTS, _WEIGHTS]) * _S_MAX / 2 * np.exp(-0.5 * np.concatenate(
    [(_NODES - 1) * _S_MAX / 2, (_NODES + 1) * _S_MAX / 2]) ** 2) / np.sqrt(2 * np.pi)


def binormal_nbs(intercept, slope) -> np.ndarray:
    """``integral_0^1 Phi(intercept + slope * Phi^-1(w)) dw`` by quadrature.

    Substituting ``w = Phi(s)`` gives a smooth integrand on the real line;
    the truncation at ``|s| = 8`` drops mass below 1e-15.
    """
    a = np.asarray(intercept, dtype=float)
    b = np.asarray(slope, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    vals = ndtr(a[..., None] + b[..., None] * _S) @ _W
    return vals if vals.ndim else float(vals)


@dataclass(frozen=True)
class NbsEstimate:
    theta: float
    lam: float | None
    x_profile: Mapping
    ci: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            # quadrature can overshoot [0, 1] by rounding only
            object.__setattr__(self, "theta", float(np.clip(self.theta, 0.0, 1.0)))


def integrate_nbs(fit: NbsRegressionFit, x_profile: Mapping, lam: float | None = None) -> NbsEstimate:
    """Conditional NBS at ``x_profile`` under the fitted probit model."""
    eta = fit.linear_predictor(x_profile)[0]
    return NbsEstimate(float(binormal_nbs(eta, fit.omega_coefficient)), lam, dict(x_profile))


def regress_nbs(control: PseudoPopulation, treated: PseudoPopulation, lam: float,
                grid: OmegaGrid | None = None, terms: Sequence[str] | None = None,
                quantile_mode: str = "auto") -> NbsRegressionFit:
    """Quantiles, placement values and probit fit for one ``lam``."""
    grid = grid or OmegaGrid()
    q = estimate_quantiles(control, grid, lam, quantile_mode, terms)
    table = build_placement_values(treated, q, grid, lam)
    return fit_probit(table, terms)


# -- CED curves ---------------------------------------------------------------

@dataclass(frozen=True)
class CedRow:
    lam: float
    x_profile: Mapping
    theta: float
    ci_lower: float | None = None
    ci_upper: float | None = None
    in_primary_range: bool = True


def ced_curve(control: PseudoPopulation, treated: PseudoPopulation, lambda_grid: Sequence[float],
              x_profiles: Sequence[Mapping], grid: OmegaGrid | None = None,
              terms: Sequence[str] | None = None, quantile_mode: str = "auto",
              primary_range: tuple | None = None) -> list[CedRow]:
    """NBS over a willingness-to-pay grid for each profile.

    The regression is refit at every ``lam`` on the same pseudo-populations.
    Rows are ordered by ``lam`` then profile.
    """
    lams = [float(v) for v in lambda_grid]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    rows = []
    for lam in lams:
        try:
            fit = regress_nbs(control, treated, lam, grid, terms, quantile_mode)
        except Exception as exc:
            raise type(exc)(f"at lambda={lam:g}: {exc}") from exc
        inside = primary_range is None or primary_range[0] <= lam <= primary_range[1]
        for prof in x_profiles:
            rows.append(CedRow(lam, dict(prof), integrate_nbs(fit, prof, lam).theta, None, None, inside))
    return rows


def profile_label(profile: Mapping) -> str:
    return ", ".join(f"{k}={v}" for k, v in profile.items()) or "(all)"


def write_ced_csv(rows: Sequence[CedRow], path) -> None:
    names = list(dict.fromkeys(k for r in rows for k in r.x_profile))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", *names, "theta", "ci_lower", "ci_upper", "in_primary_range"])
        for r in rows:
            w.writerow(["%.10g" % r.lam, *(r.x_profile.get(k, "") for k in names), "%.6f" % r.theta,
                        "" if r.ci_lower is None else "%.6f" % r.ci_lower,
                        "" if r.ci_upper is None else "%.6f" % r.ci_upper,
                        int(r.in_primary_range)])


def ced_svg(rows: Sequence[CedRow], width: int = 360, height: int = 260, title: str = "") -> str:
    """One panel per profile; the primary range is drawn solid black and the
    rest in gray."""
    profiles = []
    for r in rows:
        if r.x_profile not in profiles:
            profiles.append(r.x_profile)
    lams = sorted({r.lam for r in rows})
    lo_l, hi_l = lams[0], lams[-1]
    if hi_l == lo_l:
        hi_l = lo_l + 1.0
    pad = 42
    panel_w, panel_h = width - pad - 10, height - pad - 30
    total_w = width * len(profiles)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{height}" '
             f'font-family="sans-serif" font-size="11">']
    if title:
        parts.append(f'<title>{title}</title>')
    for p_i, prof in enumerate(profiles):
        ox = p_i * width + pad
        oy = 25
        pr = sorted((r for r in rows if r.x_profile == prof), key=lambda r: r.lam)

        def px(lam):
            return ox + (lam - lo_l) / (hi_l - lo_l) * panel_w

        def py(th):
            return oy + (1.0 - th) * panel_h

        parts.append(f'<text x="{ox}" y="15">{profile_label(prof)}</text>')
        parts.append(f'<rect x="{ox}" y="{oy}" width="{panel_w}" height="{panel_h}" fill="none" stroke="#444"/>')
        for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
            parts.append(f'<text x="{ox - 30}" y="{py(tick) + 4:.1f}">{tick:.2f}</text>')
        parts.append(f'<line x1="{ox}" y1="{py(0.5):.1f}" x2="{ox + panel_w}" y2="{py(0.5):.1f}" '
                     f'stroke="#bbb" stroke-dasharray="3,3"/>')
        parts.append(f'<text x="{ox}" y="{oy + panel_h + 14}">{lo_l:g}</text>')
        parts.append(f'<text x="{ox + panel_w - 20}" y="{oy + panel_h + 14}">{hi_l:g}</text>')
        for a, b in zip(pr, pr[1:]):
            colour = "black" if (a.in_primary_range and b.in_primary_range) else "#999"
            sw = 2 if colour == "black" else 1.5
            parts.append(f'<line x1="{px(a.lam):.1f}" y1="{py(a.theta):.1f}" x2="{px(b.lam):.1f}" '
                         f'y2="{py(b.theta):.1f}" stroke="{colour}" stroke-width="{sw}"/>')
        if len(pr) == 1:
            r = pr[0]
            parts.append(f'<circle cx="{px(r.lam):.1f}" cy="{py(r.theta):.1f}" r="2.5" fill="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_ced_svg(rows: Sequence[CedRow], path, **kw) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ced_svg(rows, **kw))
