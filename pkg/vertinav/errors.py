"""Exception hierarchy shared by all vertinav modules."""


class VertinavError(Exception):
    """Base class for every error raised by vertinav."""


class DomainError(VertinavError, ValueError):
    """Argument outside the mathematical or physical domain of an operation."""


class UnsupportedLayerError(DomainError):
    """Pressure outside the ISA troposphere layer."""


class ContractViolation(VertinavError, ValueError):
    """Caller broke a documented precondition."""


class ConfigError(VertinavError):
    """Configuration document failed to parse or validate."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self) -> str:
        if not self.diagnostics:
            return super().__str__()
        return super().__str__() + "\n" + "\n".join(f"  - {d}" for d in self.diagnostics)


class InfeasibleError(VertinavError):
    """Requested design cannot be met."""


class InfeasibleGeometryError(InfeasibleError):
    """Vertiport geometry leaves no margin (e.g. FATO smaller than the vehicle)."""


class InfeasibleBudgetError(InfeasibleError):
    """Error budget exhausted (e.g. flight technical error exceeds total system error)."""


class InfeasibleScenarioError(InfeasibleError):
    """Scenario layout cannot be flown."""


class InsufficientDataError(VertinavError):
    """Not enough samples to run the operation."""


class InsufficientGeometryError(InsufficientDataError):
    """Fewer satellites than unknowns."""


class InsufficientObservationsError(InsufficientDataError):
    """Fewer image points than a pose solution needs."""


class DegenerateGeometryError(VertinavError):
    """Normal matrix too ill-conditioned to invert."""


class DivergenceError(VertinavError):
    """Iterative least squares did not converge."""


class ConvergenceFailureError(VertinavError):
    """Nonlinear pose optimisation failed to converge."""


class UnobservableParameterError(VertinavError):
    """Sensitivity matrix is rank deficient."""


class BehindCameraError(DomainError):
    """Point has non-positive depth in the camera frame."""


class StaleCorrectionError(VertinavError):
    """Ground correction sample is older than the configured maximum age."""


class NoDetectionError(VertinavError):
    """No usable marker detection in a frame."""


class LogFormatError(VertinavError):
    """Sensor log file is missing, lacks columns or holds a malformed row."""

    def __init__(self, message: str, path: str | None = None, row: int | None = None):
        location = path or "<log>"
        if row is not None:
            location = f"{location}, row {row}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.row = row
