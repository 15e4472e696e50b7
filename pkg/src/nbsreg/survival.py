"""Survival-time and censoring-time models, and IPCW weights.

Weibull regression uses the scale parameterisation

    S(t | x) = exp(-(t / sigma(x)) ** k),   sigma(x) = exp(x @ beta),

and is fit by Newton's method on ``(beta, log k)``.  Censoring-time
survivor functions ``G(t) = P(C >= t)`` come either from a per-arm
product-limit estimator or from a stratified Cox model with a Breslow
baseline; both are left-continuous, so a censoring at time ``t`` does not
lower ``G(t)`` itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import TREATMENT, Dataset
from .design import Formula, check_full_rank
from .errors import (ConvergenceError, DegenerateModelError, FitError, PositivityError,
                     SeparationError)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-8
POSITIVITY_FLOOR = 1e-4


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# -- Weibull regression ---------------------------------------------------

def weibull_loglik(params, X, t, event):
    """Log-likelihood, gradient and Hessian of right-censored Weibull data.

    ``params`` is ``(beta..., log_k)``.
    """
    beta, rho = params[:-1], params[-1]
    k = np.exp(rho)
    xb = X @ beta
    logt = np.log(t)
    w = logt - xb
    r = np.exp(k * w)
    d = event.astype(float)
    ll = np.sum(d * (rho + (k - 1) * logt - k * xb) - r)
    g_beta = X.T @ (k * (r - d))
    g_rho = np.sum(d * (1 + k * w) - k * w * r)
    h_bb = -(X * (k * k * r)[:, None]).T @ X
    h_br = X.T @ (k * (r - d) + k * k * w * r)
    h_rr = np.sum(k * w * (d - r) - k * k * w * w * r)
    p = len(params)
    H = np.empty((p, p))
    H[:-1, :-1] = h_bb
    H[:-1, -1] = H[-1, :-1] = h_br
    H[-1, -1] = h_rr
    return ll, np.append(g_beta, g_rho), H


@dataclass(frozen=True)
class WeibullFit:
    """Fitted Weibull regression.

    ``coefficients`` act on the log scale; ``covariance`` is the inverse
    observed information for ``(coefficients..., log shape_k)``.
    """

    shape_k: float
    coefficients: np.ndarray
    covariance: np.ndarray
    loglik: float
    formula: Formula
    n_iter: int = 0
    grad_norm: float = 0.0

    @property
    def names(self) -> list[str]:
        return self.formula.column_names

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance)[:-1])

    @property
    def shape_se(self) -> float:
        # delta method from log k
        return float(self.shape_k * np.sqrt(self.covariance[-1, -1]))

    def scale(self, columns: Mapping[str, object]) -> np.ndarray:
        return np.exp(self.formula.matrix(columns) @ self.coefficients)

    def survival(self, t, columns: Mapping[str, object]) -> np.ndarray:
        return np.exp(-(np.asarray(t, dtype=float) / self.scale(columns)) ** self.shape_k)

    def sample(self, columns: Mapping[str, object], rng=None) -> np.ndarray:
        """One draw per design row of ``columns``."""
        rng = _rng(rng)
        sigma = self.scale(columns)
        return sigma * rng.weibull(self.shape_k, size=sigma.shape[0])

    def to_dict(self) -> dict:
        return {"shape_k": self.shape_k, "coefficients": self.coefficients.tolist(),
                "covariance": self.covariance.tolist(), "loglik": self.loglik,
                "formula": self.formula.to_dict(), "names": self.names}

    @classmethod
    def from_dict(cls, d) -> "WeibullFit":
        return cls(float(d["shape_k"]), np.asarray(d["coefficients"], float),
                   np.asarray(d["covariance"], float), float(d["loglik"]),
                   Formula.from_dict(d["formula"]))


def fit_weibull(dataset: Dataset, terms: Sequence[str], max_iter: int = 100) -> WeibullFit:
    """Maximum-likelihood Weibull regression of observed time on ``terms``.

    Censored records with zero follow-up carry no information and are
    dropped; a zero event time is an error.
    """
    formula = Formula(terms, dataset.levels)
    t = dataset.observed_time
    event = dataset.event
    keep = t > 0
    if np.any(~keep & event):
        raise FitError("Weibull fit needs positive event times")
    X = formula.matrix(dataset.columns())[keep]
    t, event = t[keep], event[keep]
    if event.sum() < 2:
        raise FitError("Weibull fit needs at least 2 observed events")
    check_full_rank(X, formula.column_names)
    return _newton_weibull(X, t, event, formula, max_iter)


def _newton_weibull(X, t, event, formula, max_iter):
    p = X.shape[1]
    params = np.zeros(p + 1)
    if formula.intercept:
        # exponential-model intercept as the starting point
        params[0] = np.log(t.sum() / max(event.sum(), 1))
    ll, g, H = weibull_loglik(params, X, t, event)
    trace = []
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            step = g * 1e-3
        if g @ step <= 0:
            # Hessian not negative definite here; fall back to gradient ascent
            step = g / max(1.0, np.abs(H).max())
        s = 1.0
        while True:
            cand = params + s * step
            # a long trial step can overflow exp(); it is simply rejected
            with np.errstate(over="ignore", invalid="ignore"):
                new = weibull_loglik(cand, X, t, event)
            if np.isfinite(new[0]) and new[0] >= ll - 1e-12 * abs(ll):
                break
            s *= 0.5
            if s < 1e-10:
                raise ConvergenceError("Weibull fit: step halving failed", trace)
        params = cand
        ll, g, H = new
        gn = float(np.linalg.norm(g))
        trace.append((it, ll, gn, s))
        if gn < GRAD_TOL:
            break
        if np.linalg.norm(s * step) < 1e-13 * (1 + np.linalg.norm(params)) and gn < 1e-6:
            # machine precision reached before the absolute tolerance
            break
    else:
        raise ConvergenceError(f"Weibull fit did not converge in {max_iter} iterations", trace)
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError as exc:
        raise FitError("Weibull information matrix is singular") from exc
    cov = (cov + cov.T) / 2
    return WeibullFit(float(np.exp(params[-1])), params[:-1].copy(), cov, float(ll), formula,
                      len(trace), gn)


def sample_survival(fit: WeibullFit, a, x=None, l=None, rng=None):
    """Draw survival times at treatment ``a`` and covariates ``x``, ``l``.

    ``x`` and ``l`` are ``{name: value or array}`` mappings.  Scalars in,
    scalar out.
    """
    cols = {TREATMENT: a, **dict(x or {}), **dict(l or {})}
    scalar = all(np.ndim(v) == 0 for v in cols.values())
    draw = fit.sample(cols, rng)
    return float(draw[0]) if scalar else draw


# -- censoring distribution ------------------------------------------------

@dataclass(frozen=True)
class _Stratum:
    times: np.ndarray      # distinct censoring-event times
    cumhaz: np.ndarray     # baseline cumulative hazard just after each time
    km: np.ndarray | None  # product-limit G just after each time (KM only)


def _group_rows(columns, names, n):
    if not names:
        return np.zeros(n, dtype=int), [()]
    mat = np.column_stack([np.broadcast_to(np.asarray(columns[v], dtype=float), (n,)) for v in names])
    uniq, inv = np.unique(mat, axis=0, return_inverse=True)
    return inv.reshape(-1), [tuple(map(float, u)) for u in uniq]


@dataclass(frozen=True)
class CensoringModel:
    """Estimated survivor function ``G(t) = P(C >= t)`` of censoring times.

    ``kind`` is ``"kaplan_meier_by_arm"`` or ``"stratified_cox"``.  Strata
    are keyed by the tuple of values of ``strata_variables``.
    """

    kind: str
    strata_variables: tuple
    formula: Formula | None
    eta: np.ndarray
    strata: Mapping[tuple, _Stratum]
    degenerate_strata: tuple = ()
    covariance: np.ndarray | None = None
    loglik: float | None = None

    def survival(self, t, columns: Mapping[str, object] | None = None, side: str = "left") -> np.ndarray:
        """Evaluate ``G`` at times ``t``.

        ``side="left"`` gives ``P(C >= t)`` (jumps at ``t`` excluded),
        ``side="right"`` gives ``P(C > t)``.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        columns = dict(columns or {})
        n = t.shape[0]
        for v in columns.values():
            if np.ndim(v) > 0:
                n = max(n, len(v))
        t = np.broadcast_to(t, (n,))
        if self.formula is not None and self.formula.terms:
            lp = np.broadcast_to(self.formula.matrix(columns) @ self.eta, (n,))
        else:
            lp = np.zeros(n)
        groups, keys = _group_rows(columns, self.strata_variables, n)
        out = np.empty(n)
        for gi, key in enumerate(keys):
            if key not in self.strata:
                raise KeyError(f"stratum {dict(zip(self.strata_variables, key))} was not seen in fitting")
            idx = np.flatnonzero(groups == gi)
            st = self.strata[key]
            pos = np.searchsorted(st.times, t[idx], side=side)
            if st.km is not None:
                out[idx] = np.concatenate([[1.0], st.km])[pos]
            else:
                H = np.concatenate([[0.0], st.cumhaz])[pos]
                out[idx] = np.exp(-H * np.exp(lp[idx]))
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "strata_variables": list(self.strata_variables),
            "formula": self.formula.to_dict() if self.formula is not None else None,
            "eta": self.eta.tolist(),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "loglik": self.loglik,
            "degenerate_strata": [list(k) for k in self.degenerate_strata],
            "strata": [{"key": list(k), "times": s.times.tolist(), "cumhaz": s.cumhaz.tolist(),
                        "km": None if s.km is None else s.km.tolist()}
                       for k, s in self.strata.items()],
        }

    @classmethod
    def from_dict(cls, d) -> "CensoringModel":
        strata = {tuple(s["key"]): _Stratum(np.asarray(s["times"], float), np.asarray(s["cumhaz"], float),
                                            None if s["km"] is None else np.asarray(s["km"], float))
                  for s in d["strata"]}
        return cls(d["kind"], tuple(d["strata_variables"]),
                   None if d["formula"] is None else Formula.from_dict(d["formula"]),
                   np.asarray(d["eta"], float), strata,
                   tuple(tuple(k) for k in d.get("degenerate_strata", [])),
                   None if d.get("covariance") is None else np.asarray(d["covariance"], float),
                   d.get("loglik"))


def _censoring_data(dataset):
    # the censoring process is observed on the cost time scale
    return dataset.capped_time, dataset.cost_censored


def product_limit(times, events):
    """Distinct event times and the product-limit survivor just after each."""
    times = np.asarray(times, float)
    events = np.asarray(events, bool)
    ut = np.unique(times[events])
    if ut.size == 0:
        return ut, ut.copy()
    at_risk = times.size - np.searchsorted(np.sort(times), ut, side="left")
    d = np.bincount(np.searchsorted(ut, times[events]), minlength=ut.size)
    return ut, np.cumprod(1.0 - d / at_risk)


def fit_censoring_km(dataset: Dataset) -> CensoringModel:
    """Per-arm product-limit estimate of the censoring survivor function,
    with cost censoring as the event."""
    t, c = _censoring_data(dataset)
    strata, degenerate = {}, []
    for a in (0, 1):
        m = dataset.treatment == a
        if not m.any():
            raise FitError(f"arm A={a} has no records")
        ut, km = product_limit(t[m], c[m])
        with np.errstate(divide="ignore"):
            H = -np.log(km)
        strata[(float(a),)] = _Stratum(ut, H, km)
        if ut.size == 0:
            degenerate.append((float(a),))
    return CensoringModel("kaplan_meier_by_arm", (TREATMENT,), None, np.zeros(0), strata,
                          tuple(degenerate))


def _cox_pieces(t, d, W, groups, n_groups):
    """Per-stratum sort orders and tie boundaries reused across iterations."""
    pieces = []
    for g in range(n_groups):
        idx = np.flatnonzero(groups == g)
        order = idx[np.argsort(-t[idx], kind="stable")]  # descending time
        ts = t[order]
        # last position sharing each time: the risk set is everything up to it
        last = np.searchsorted(-ts, -ts, side="right") - 1
        pieces.append((ts, d[order], W[order], last))
    return pieces


def _cox_loglik(eta, pieces):
    p = eta.shape[0]
    ll = 0.0
    g = np.zeros(p)
    H = np.zeros((p, p))
    for ts, dd, Ws, last in pieces:
        if not dd.any():
            continue
        lp = Ws @ eta
        shift = lp.max()
        r = np.exp(lp - shift)
        S0 = np.cumsum(r)[last]
        S1 = np.cumsum(r[:, None] * Ws, axis=0)[last]
        S2 = np.cumsum(r[:, None, None] * (Ws[:, :, None] * Ws[:, None, :]), axis=0)[last]
        ll += np.sum(lp[dd] - shift - np.log(S0[dd]))
        mu = S1[dd] / S0[dd, None]
        g += np.sum(Ws[dd] - mu, axis=0)
        H -= np.sum(S2[dd] / S0[dd, None, None] - mu[:, :, None] * mu[:, None, :], axis=0)
    return ll, g, H


def fit_censoring_cox(dataset: Dataset, strata: Sequence[str] = (TREATMENT,),
                      covariates: Sequence[str] = (), max_iter: int = 50) -> CensoringModel:
    """Stratified Cox model for the censoring hazard, Breslow ties.

    ``strata`` names discrete stratifying columns (``"A"`` for treatment);
    ``covariates`` are the regression terms ``W`` (no intercept).  A stratum
    without censoring events gets ``G = 1`` and is listed in
    ``degenerate_strata``.
    """
    t, c = _censoring_data(dataset)
    strata = tuple(strata)
    cols = dataset.columns()
    groups, keys = _group_rows(cols, strata, dataset.n)
    formula = Formula(covariates, dataset.levels, intercept=False) if covariates else None
    if formula is not None:
        W = formula.matrix(cols)
        check_full_rank(W, formula.column_names)
    else:
        W = np.zeros((dataset.n, 0))
    p = W.shape[1]
    eta = np.zeros(p)
    ll, cov = None, None
    if p:
        if not c.any():
            raise DegenerateModelError("no censoring events: Cox coefficients are not identified")
        pieces = _cox_pieces(t, c, W, groups, len(keys))
        ll, g, H = _cox_loglik(eta, pieces)
        trace = []
        for it in range(1, max_iter + 1):
            try:
                step = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError as exc:
                raise SeparationError("Cox information matrix singular; consider removing covariates") from exc
            s = 1.0
            while True:
                cand = eta + s * step
                new = _cox_loglik(cand, pieces)
                if np.isfinite(new[0]) and new[0] >= ll - 1e-12 * abs(ll):
                    break
                s *= 0.5
                if s < 1e-10:
                    raise ConvergenceError("Cox fit: step halving failed", trace)
            eta = cand
            ll, g, H = new
            gn = float(np.linalg.norm(g))
            trace.append((it, ll, gn, s))
            if np.abs(eta).max() > 30:
                raise SeparationError(
                    "Cox partial likelihood is monotone (coefficients diverge); "
                    "consider removing covariates " + ", ".join(formula.column_names))
            if gn < GRAD_TOL or (np.linalg.norm(s * step) < 1e-12 and gn < 1e-6):
                break
        else:
            raise ConvergenceError(f"Cox fit did not converge in {max_iter} iterations", trace)
        try:
            cov = np.linalg.inv(-H)
        except np.linalg.LinAlgError as exc:
            raise SeparationError("Cox information matrix singular; consider removing covariates") from exc
    # Breslow baseline per stratum
    risk = np.exp(W @ eta) if p else np.ones(dataset.n)
    out, degenerate = {}, []
    for gi, key in enumerate(keys):
        m = groups == gi
        tg, cg, rg = t[m], c[m], risk[m]
        ut = np.unique(tg[cg])
        if ut.size == 0:
            degenerate.append(key)
            out[key] = _Stratum(ut, ut.copy(), None)
            continue
        order = np.argsort(tg)
        ts, rs = tg[order], rg[order]
        tail = np.cumsum(rs[::-1])[::-1]  # risk summed over time >= ts[i]
        denom = tail[np.searchsorted(ts, ut, side="left")]
        d = np.bincount(np.searchsorted(ut, tg[cg]), minlength=ut.size)
        out[key] = _Stratum(ut, np.cumsum(d / denom), None)
    return CensoringModel("stratified_cox", strata, formula, eta, out, tuple(degenerate), cov, ll)


# -- weights ----------------------------------------------------------------

@dataclass(frozen=True)
class IpcwWeights:
    weights: np.ndarray
    horizon_tau: float
    g_values: np.ndarray = field(default=None, repr=False)


def compute_ipcw(dataset: Dataset, model: CensoringModel, floor: float = POSITIVITY_FLOOR) -> IpcwWeights:
    """``w_i = 1(cost observed) / G(min(Z_i, tau))``; zero for censored costs.

    Raises :class:`PositivityError` if ``G`` falls below ``floor`` at any
    record whose cost is observed.
    """
    obs = dataset.cost_observed
    g = np.ones(dataset.n)
    if obs.any():
        idx = np.flatnonzero(obs)
        g[idx] = model.survival(dataset.capped_time[idx], {k: v[idx] for k, v in dataset.columns().items()})
    bad = np.flatnonzero(obs & (g < floor))
    if bad.size:
        raise PositivityError(f"estimated P(uncensored) below {floor:g}", bad.tolist())
    w = np.where(obs, 1.0 / g, 0.0)
    return IpcwWeights(w, dataset.horizon_tau, g)
