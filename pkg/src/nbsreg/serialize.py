"""JSON envelopes for fitted models."""

from __future__ import annotations

import json
import math

import numpy as np

from .costs import LogNormalCostFit, ZeroInflatedCostFit
from .regression import NbsRegressionFit
from .survival import CensoringModel, WeibullFit

FORMAT_VERSION = 1
_TYPES = {cls.__name__: cls for cls in
          (WeibullFit, CensoringModel, LogNormalCostFit, ZeroInflatedCostFit, NbsRegressionFit)}


def model_to_dict(model) -> dict:
    name = type(model).__name__
    if name not in _TYPES:
        raise TypeError(f"cannot serialize {name}")
    return {"type": name, "format_version": FORMAT_VERSION, "model": model.to_dict()}


def model_from_dict(d: dict):
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    try:
        cls = _TYPES[d["type"]]
    except KeyError:
        raise ValueError(f"unknown model type {d.get('type')!r}") from None
    return cls.from_dict(d["model"])


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def _clean(o):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else "-inf" if o < 0 else "nan"
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    return o


def dumps(obj, **kw) -> str:
    return json.dumps(_clean(obj), default=_default, allow_nan=False, **kw)
