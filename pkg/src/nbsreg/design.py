"""Design matrices from simple term lists.

Terms are column names or ``:``-joined products of column names, e.g.
``["A", "x", "l", "A:x"]``. Columns listed in ``levels`` are categorical:
their values are integer codes into the level tuple and they expand to
indicator columns for every level except the first (the reference).
"""

from __future__ import annotations

from itertools import product
from typing import Mapping, Sequence

import numpy as np

from .errors import RankDeficientError

INTERCEPT = "(Intercept)"


class Formula:
    """An ordered list of terms, with an optional intercept.

    Parameters
    ----------
    terms : sequence of str
        Column names or ``a:b`` interactions.
    levels : mapping, optional
        ``{column: (label0, label1, ...)}`` for categorical columns.
    intercept : bool
        Prepend a column of ones.
    """

    def __init__(self, terms: Sequence[str], levels: Mapping[str, Sequence[str]] | None = None,
                 intercept: bool = True):
        self.terms = tuple(t.strip() for t in terms)
        for t in self.terms:
            if not t or any(not f for f in t.split(":")):
                raise ValueError(f"malformed term {t!r}")
        self.levels = {k: tuple(str(v) for v in vals) for k, vals in (levels or {}).items()}
        self.intercept = bool(intercept)

    @property
    def variables(self) -> tuple[str, ...]:
        """Column names the formula reads, in first-use order."""
        seen: dict[str, None] = {}
        for t in self.terms:
            for f in t.split(":"):
                seen.setdefault(f, None)
        return tuple(seen)

    def _expand(self, name, columns, n):
        if name not in columns:
            raise KeyError(f"column {name!r} required by formula is not available")
        v = np.asarray(columns[name], dtype=float)
        if v.ndim == 0:
            v = np.full(n, float(v))
        if name in self.levels:
            labels = self.levels[name]
            return [(f"{name}[{lab}]", (v == j).astype(float)) for j, lab in enumerate(labels) if j > 0]
        return [(name, v)]

    def _columns(self, columns: Mapping[str, object]):
        # row count comes from every supplied column, so an intercept-only
        # formula still yields one row per record
        n = 1
        for arr in columns.values():
            if np.ndim(arr) > 0:
                n = max(n, len(arr))
        out = []
        if self.intercept:
            out.append((INTERCEPT, np.ones(n)))
        for t in self.terms:
            parts = [self._expand(f, columns, n) for f in t.split(":")]
            for combo in product(*parts):
                label = ":".join(c[0] for c in combo)
                val = np.ones(n)
                for c in combo:
                    val = val * c[1]
                out.append((label, val))
        return out

    @property
    def column_names(self) -> list[str]:
        # names do not depend on the data, only on terms and levels
        dummy = {v: np.zeros(1) for v in self.variables}
        return [name for name, _ in self._columns(dummy)]

    def matrix(self, columns: Mapping[str, object]) -> np.ndarray:
        """Evaluate the design on ``columns`` (name -> 1-d array or scalar)."""
        cols = self._columns(columns)
        return np.column_stack([c for _, c in cols]) if cols else np.empty((1, 0))

    def to_dict(self) -> dict:
        return {"terms": list(self.terms), "levels": {k: list(v) for k, v in self.levels.items()},
                "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Formula":
        return cls(d["terms"], d.get("levels"), d.get("intercept", True))

    def __repr__(self):
        rhs = " + ".join(self.terms) if self.terms else "1"
        return f"Formula(~ {rhs}{'' if self.intercept else ' - 1'})"


def check_full_rank(X: np.ndarray, names: Sequence[str]) -> None:
    """Raise :class:`RankDeficientError` naming every column that is a linear
    combination of the columns before it."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if p == 0:
        return
    scale = np.sqrt((X ** 2).sum(axis=0))
    Xs = X / np.where(scale > 0, scale, 1.0)
    tol = max(X.shape) * np.finfo(float).eps * 1e4
    if np.linalg.matrix_rank(Xs, tol=tol) == p:
        return
    bad, kept = [], []
    for j in range(p):
        trial = Xs[:, kept + [j]]
        if scale[j] == 0 or np.linalg.matrix_rank(trial, tol=tol) <= len(kept):
            bad.append(names[j])
        else:
            kept.append(j)
    raise RankDeficientError(bad)
