"""Covariate-adjusted net benefit separation (NBS) regression.

Typical use::

    from nbsreg import PipelineSpec, run_pipeline
    result = run_pipeline(dataset, PipelineSpec(lambdas=(2, 12)))
"""

from .data import CsvSchema, Dataset, compute_inb, ingest_csv, validate, write_csv
from .errors import (BootstrapError, ConvergenceError, DegenerateModelError, FitError, NbsError,
                     PositivityError, RankDeficientError, SchemaError, SeparationError)
from .inference import BootstrapConfig, BootstrapResult, bootstrap_pipeline, coefficient_test
from .pipeline import PipelineResult, PipelineSpec, run_pipeline
from .regression import (OmegaGrid, binormal_nbs, ced_curve, fit_probit, integrate_nbs,
                         wilcoxon_nbs)

__version__ = "0.1.0"
