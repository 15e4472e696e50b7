"""Subject-level data model, individual net benefit, CSV ingestion.

A :class:`Dataset` is stored column-wise as read-only numpy arrays.  Effect
modifiers ``X`` and confounders ``L`` are named subsets of one covariate
table, so a variable may be both (cancer stage, say).

Censoring flags are stored in the "1 = censored" orientation:

* ``survival_censored``  1(C < T)
* ``cost_censored``      1(C < min(T, tau))

``event`` (the complement of ``survival_censored``) is what the survival-time
likelihood consumes; the censoring-distribution estimators consume
``cost_censored`` directly as their event indicator.  A tie C == T counts as
an observed death.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import SchemaError

TREATMENT = "A"
TIME = "Z"
COST = "Y"
RESERVED = (TREATMENT, TIME, COST)


def compute_inb(lam, effectiveness, cost):
    """Individual net benefit ``lam * effectiveness - cost``.

    Works elementwise on arrays.  ``lam`` must be positive and every input
    finite.
    """
    lam_a = np.asarray(lam, dtype=float)
    z = np.asarray(effectiveness, dtype=float)
    y = np.asarray(cost, dtype=float)
    if not (np.all(np.isfinite(lam_a)) and np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise ValueError("compute_inb: inputs must be finite")
    if np.any(lam_a <= 0):
        raise ValueError("compute_inb: willingness to pay must be positive")
    out = lam_a * z - y
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CostEffectivenessRecord:
    treatment: int
    covariate_x: tuple
    confounders_l: tuple
    observed_time: float
    cost: float | None
    survival_censored: bool
    cost_censored: bool

    @property
    def event(self) -> bool:
        return not self.survival_censored


@dataclass(frozen=True)
class InbSample:
    value: float
    treatment: int
    covariate_x: tuple


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of :class:`CostEffectivenessRecord` rows.

    ``covariates`` has one column per name in ``covariate_names``;
    categorical columns hold integer codes into ``levels[name]``.
    Missing costs are NaN.
    """

    treatment: np.ndarray
    observed_time: np.ndarray
    cost: np.ndarray
    survival_censored: np.ndarray
    cost_censored: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple
    x_names: tuple
    l_names: tuple
    horizon_tau: float = math.inf
    levels: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.treatment)
        set_ = object.__setattr__
        set_(self, "treatment", _readonly(self.treatment, np.int64))
        set_(self, "observed_time", _readonly(self.observed_time, float))
        set_(self, "cost", _readonly(self.cost, float))
        set_(self, "survival_censored", _readonly(self.survival_censored, bool))
        set_(self, "cost_censored", _readonly(self.cost_censored, bool))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(n, -1)
        set_(self, "covariates", _readonly(cov.reshape(n, len(self.covariate_names)), float))
        set_(self, "covariate_names", tuple(self.covariate_names))
        set_(self, "x_names", tuple(self.x_names))
        set_(self, "l_names", tuple(self.l_names))
        set_(self, "levels", {k: tuple(v) for k, v in dict(self.levels).items()})
        for arr in (self.observed_time, self.cost, self.survival_censored, self.cost_censored):
            if len(arr) != n:
                raise ValueError("all Dataset columns must have the same length")
        unknown = (set(self.x_names) | set(self.l_names)) - set(self.covariate_names)
        if unknown:
            raise ValueError(f"x/l names not among covariates: {sorted(unknown)}")
        clash = set(self.covariate_names) & set(RESERVED)
        if clash:
            raise ValueError(f"covariate names {sorted(clash)} are reserved")
        if not self.horizon_tau > 0:
            raise ValueError("horizon_tau must be positive")

    @classmethod
    def from_arrays(cls, treatment, observed_time, cost, cost_censored, x=None, l=None,
                    survival_censored=None, horizon_tau=math.inf, levels=None) -> "Dataset":
        """Build from 1-d arrays; ``x`` and ``l`` are ``{name: column}`` dicts
        (a name in both is stored once)."""
        x = dict(x or {})
        l = dict(l or {})
        cols = dict(x)
        for k, v in l.items():
            if k in cols and not np.array_equal(np.asarray(cols[k]), np.asarray(v)):
                raise ValueError(f"covariate {k!r} given twice with different values")
            cols[k] = v
        n = len(treatment)
        names = tuple(cols)
        cov = np.column_stack([np.asarray(cols[k], dtype=float) for k in names]) if names else np.empty((n, 0))
        cost_censored = np.asarray(cost_censored, dtype=bool)
        if survival_censored is None:
            survival_censored = cost_censored
        return cls(treatment, observed_time, cost, survival_censored, cost_censored, cov,
                   names, tuple(x), tuple(l), horizon_tau, levels or {})

    # -- access -------------------------------------------------------
    def __len__(self):
        return len(self.treatment)

    @property
    def n(self) -> int:
        return len(self.treatment)

    def n_arm(self, a: int) -> int:
        return int(np.sum(self.treatment == a))

    @property
    def event(self) -> np.ndarray:
        return ~self.survival_censored

    @property
    def cost_observed(self) -> np.ndarray:
        return ~self.cost_censored

    @property
    def capped_time(self) -> np.ndarray:
        """``min(Z, tau)``: the time scale of cost censoring."""
        return np.minimum(self.observed_time, self.horizon_tau)

    def column(self, name: str) -> np.ndarray:
        if name == TREATMENT:
            return self.treatment.astype(float)
        if name == TIME:
            return self.observed_time
        if name == COST:
            return self.cost
        return self.covariates[:, self.covariate_names.index(name)]

    def columns(self) -> dict:
        """``{name: array}`` for treatment (``A``), time (``Z``), cost (``Y``)
        and every covariate."""
        out = {TREATMENT: self.treatment.astype(float), TIME: self.observed_time, COST: self.cost}
        for j, name in enumerate(self.covariate_names):
            out[name] = self.covariates[:, j]
        return out

    def x_matrix(self) -> np.ndarray:
        return self.covariates[:, [self.covariate_names.index(k) for k in self.x_names]]

    def take(self, idx) -> "Dataset":
        """Rows ``idx`` (with repetition allowed) as a new dataset."""
        idx = np.asarray(idx)
        return Dataset(self.treatment[idx], self.observed_time[idx], self.cost[idx],
                       self.survival_censored[idx], self.cost_censored[idx], self.covariates[idx],
                       self.covariate_names, self.x_names, self.l_names, self.horizon_tau, self.levels)

    def record(self, i: int) -> CostEffectivenessRecord:
        cov = dict(zip(self.covariate_names, self.covariates[i]))
        c = self.cost[i]
        return CostEffectivenessRecord(
            int(self.treatment[i]),
            tuple(cov[k] for k in self.x_names),
            tuple(cov[k] for k in self.l_names),
            float(self.observed_time[i]),
            None if np.isnan(c) else float(c),
            bool(self.survival_censored[i]),
            bool(self.cost_censored[i]),
        )

    @property
    def records(self) -> Iterator[CostEffectivenessRecord]:
        return (self.record(i) for i in range(self.n))


def validate(dataset: Dataset) -> list[str]:
    """List every violated record invariant; empty when the data are usable."""
    out = []
    d = dataset
    tau = d.horizon_tau
    for i in range(d.n):
        t = d.observed_time[i]
        c = d.cost[i]
        if d.treatment[i] not in (0, 1):
            out.append(f"record {i}: treatment={d.treatment[i]} is not binary")
        if not np.isfinite(t):
            out.append(f"record {i}: observed_time is not finite")
        elif t < 0:
            out.append(f"record {i}: observed_time={t:g} is negative")
        if np.isnan(c):
            if not d.cost_censored[i]:
                out.append(f"record {i}: cost missing but cost is not censored")
        elif not np.isfinite(c):
            out.append(f"record {i}: cost is not finite")
        elif c < 0:
            out.append(f"record {i}: cost={c:g} is negative")
        if np.isfinite(t) and t >= tau and d.cost_censored[i]:
            out.append(f"record {i}: observed_time >= horizon {tau:g} but cost marked censored")
        if d.cost_censored[i] and not d.survival_censored[i] and t < tau:
            out.append(f"record {i}: cost censored before the horizon but survival not censored")
        if d.covariates.shape[1] and not np.all(np.isfinite(d.covariates[i])):
            out.append(f"record {i}: missing covariate value")
    if d.n_arm(0) == 0:
        out.append("control arm empty")
    if d.n_arm(1) == 0:
        out.append("treated arm empty")
    return out


# -- CSV ----------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """Mapping from CSV headers to dataset roles.

    ``survival_censored`` may be omitted, in which case the survival
    censoring flag is taken equal to the cost censoring flag.
    """

    treatment: str
    time: str
    cost: str
    cost_censored: str
    x: tuple = ()
    l: tuple = ()
    survival_censored: str | None = None
    categorical: Mapping[str, tuple | None] = field(default_factory=dict)
    horizon_tau: float = math.inf

    @classmethod
    def from_dict(cls, d: Mapping) -> "CsvSchema":
        cat = d.get("categorical", {})
        if isinstance(cat, (list, tuple)):
            cat = {k: None for k in cat}
        tau = d.get("horizon_tau")
        return cls(d["treatment"], d["time"], d["cost"], d["cost_censored"],
                   tuple(d.get("x", ())), tuple(d.get("l", ())), d.get("survival_censored"),
                   {k: (tuple(v) if v is not None else None) for k, v in cat.items()},
                   math.inf if tau is None else float(tau))

    @classmethod
    def load(cls, path) -> "CsvSchema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = {"treatment": self.treatment, "time": self.time, "cost": self.cost,
             "cost_censored": self.cost_censored, "x": list(self.x), "l": list(self.l)}
        if self.survival_censored:
            d["survival_censored"] = self.survival_censored
        if self.categorical:
            d["categorical"] = {k: (list(v) if v is not None else None) for k, v in self.categorical.items()}
        if math.isfinite(self.horizon_tau):
            d["horizon_tau"] = self.horizon_tau
        return d


_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}


def _flag(s):
    s = s.strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ValueError(f"expected a 0/1 flag, got {s!r}")


def ingest_csv(path, schema: CsvSchema | Mapping) -> Dataset:
    """Read and validate a UTF-8 CSV file.

    Data rows are numbered from 1 (the header is not counted).  Every
    offending row is reported in a single :class:`SchemaError`.
    """
    if not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_dict(schema)
    covs = list(dict.fromkeys(list(schema.x) + list(schema.l)))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.treatment, schema.time, schema.cost, schema.cost_censored] + covs
        if schema.survival_censored:
            needed.append(schema.survival_censored)
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"missing column(s) {missing} in {path}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path} has no data rows")

    levels: dict[str, list] = {}
    for name in covs:
        if name in schema.categorical:
            given = schema.categorical[name]
            levels[name] = list(given) if given else []
    errors = []
    a, z, y, dc, ds, cov = [], [], [], [], [], []
    tau = schema.horizon_tau
    for r, row in enumerate(rows, start=1):
        try:
            ai = row[schema.treatment].strip()
            if ai not in ("0", "1"):
                raise ValueError(f"treatment must be 0 or 1, got {ai!r}")
            zi = float(row[schema.time])
            if not math.isfinite(zi) or zi < 0:
                raise ValueError(f"time must be a nonnegative number, got {row[schema.time]!r}")
            cens = _flag(row[schema.cost_censored])
            raw = row[schema.cost].strip()
            if raw == "":
                if not cens:
                    raise ValueError("cost is empty but cost is not censored")
                yi = math.nan
            else:
                yi = float(raw)
                if not math.isfinite(yi) or yi < 0:
                    raise ValueError(f"cost must be a nonnegative number, got {raw!r}")
            if zi >= tau and cens:
                raise ValueError(f"time {zi:g} reaches the horizon but cost is marked censored")
            si = _flag(row[schema.survival_censored]) if schema.survival_censored else cens
            vals = []
            for name in covs:
                v = row[name].strip()
                if name in levels:
                    if v == "":
                        raise ValueError(f"{name} is empty")
                    if v not in levels[name]:
                        if schema.categorical[name]:
                            raise ValueError(f"{name}={v!r} is not a declared level")
                        levels[name].append(v)
                    vals.append(float(levels[name].index(v)))
                else:
                    f = float(v)
                    if not math.isfinite(f):
                        raise ValueError(f"{name} is not finite")
                    vals.append(f)
        except (ValueError, KeyError) as exc:
            errors.append((r, str(exc)))
            continue
        a.append(int(ai)); z.append(zi); y.append(yi); dc.append(cens); ds.append(si); cov.append(vals)
    if errors:
        raise SchemaError(f"invalid rows in {path}", errors)
    n = len(a)
    ds_ = Dataset(np.array(a), np.array(z), np.array(y), np.array(ds), np.array(dc),
                  np.array(cov, dtype=float).reshape(n, len(covs)), tuple(covs),
                  tuple(schema.x), tuple(schema.l), tau, {k: tuple(v) for k, v in levels.items()})
    return ds_


def _fmt(v: float) -> str:
    # shortest representation that reads back to the same double
    return repr(float(v))


def write_csv(dataset: Dataset, path, schema: CsvSchema | Mapping | None = None) -> None:
    """Write ``dataset`` so that :func:`ingest_csv` with ``schema`` reads it back.

    Numbers are written so they read back bit-for-bit; missing costs as
    empty fields.
    """
    if schema is None:
        schema = default_schema(dataset)
    elif not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_dict(schema)
    covs = list(dict.fromkeys(list(schema.x) + list(schema.l)))
    header = [schema.treatment, schema.time, schema.cost, schema.cost_censored]
    if schema.survival_censored:
        header.append(schema.survival_censored)
    header += covs
    d = dataset
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            row = [str(int(d.treatment[i])), _fmt(d.observed_time[i]),
                   "" if np.isnan(d.cost[i]) else _fmt(d.cost[i]), str(int(d.cost_censored[i]))]
            if schema.survival_censored:
                row.append(str(int(d.survival_censored[i])))
            for name in covs:
                v = d.covariates[i, d.covariate_names.index(name)]
                row.append(d.levels[name][int(v)] if name in d.levels else _fmt(v))
            w.writerow(row)


def default_schema(dataset: Dataset) -> CsvSchema:
    """Schema writing the dataset under its own column names."""
    return CsvSchema(TREATMENT, TIME, COST, "delta_star", tuple(dataset.x_names),
                     tuple(dataset.l_names), "delta",
                     {k: tuple(v) for k, v in dataset.levels.items()}, dataset.horizon_tau)


def profile_columns(dataset_or_levels, profile: Mapping[str, object],
                    names: Sequence[str] | None = None) -> dict:
    """Encode an ``{x_name: value}`` profile to length-1 numeric columns."""
    levels = dataset_or_levels.levels if isinstance(dataset_or_levels, Dataset) else dict(dataset_or_levels)
    out = {}
    for k, v in profile.items():
        if k in levels:
            labels = tuple(levels[k])
            if str(v) in labels:
                out[k] = np.array([float(labels.index(str(v)))])
                continue
            raise ValueError(f"unknown level {v!r} for {k!r}; levels are {labels}")
        out[k] = np.array([float(v)])
    if names is not None:
        absent = [k for k in names if k not in out]
        if absent:
            raise ValueError(f"profile is missing value(s) for {absent}")
    return out
