"""Exception hierarchy shared by every estimation stage."""


class NbsError(Exception):
    """Base class for all package errors."""


class SchemaError(NbsError, ValueError):
    """Input data does not conform to the declared schema.

    ``locations`` holds ``(row_number, message)`` pairs; row numbers count
    the header as row 0, so the first data row is row 1.
    """

    def __init__(self, message, locations=()):
        self.locations = list(locations)
        if self.locations:
            detail = "; ".join(f"row {r}: {m}" for r, m in self.locations[:20])
            if len(self.locations) > 20:
                detail += f"; ... ({len(self.locations) - 20} more)"
            message = f"{message}: {detail}"
        super().__init__(message)


class FitError(NbsError):
    """A model could not be fit."""


class ConvergenceError(FitError):
    """Iterative fit did not converge; ``trace`` holds per-iteration diagnostics."""

    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(message)


class RankDeficientError(FitError):
    """Design matrix is rank deficient; ``columns`` names the collinear columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "design matrix is rank deficient; collinear column(s): "
            + ", ".join(self.columns)
        )


class SeparationError(FitError):
    """Likelihood is monotone (coefficients diverge)."""


class DegenerateModelError(FitError):
    """A model stage has no variation to fit."""


class PositivityError(NbsError):
    """Estimated probability of remaining uncensored is too small."""

    def __init__(self, message, records=()):
        self.records = list(records)
        if self.records:
            shown = ", ".join(str(r) for r in self.records[:20])
            message = f"{message} (records: {shown}{', ...' if len(self.records) > 20 else ''})"
        super().__init__(message)


class BootstrapError(NbsError):
    """Too many bootstrap replicates failed."""
