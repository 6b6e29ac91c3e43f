"""Exception types shared across the toolkit."""


class FairvoiceError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(FairvoiceError, ValueError):
    """A caller-supplied value violates a precondition."""


class GenerationError(FairvoiceError):
    """Synthetic corpus generation failed (usually I/O)."""


class InfeasibleResamplingError(FairvoiceError):
    """Oversampling target cannot be met (e.g. no young PD samples)."""


class UndefinedMetricError(FairvoiceError):
    """A metric has no defined value on the given predictions (e.g. no positives)."""


class CheckpointError(FairvoiceError):
    """A checkpoint file is missing, corrupt, or of the wrong kind/version."""


class ModelInitError(FairvoiceError):
    """Model initialization failed (e.g. pretrained weights unavailable)."""


class TrainingError(FairvoiceError):
    """Training aborted (non-finite loss or a failed ensemble member)."""


class InfeasiblePrecisionError(FairvoiceError):
    """No decision threshold reaches the requested precision target."""


class InfeasibleRecallError(FairvoiceError):
    """No decision threshold reaches the requested recall target."""


class SchemaError(FairvoiceError):
    """A persisted report/manifest file does not match the expected schema."""


class ConfigError(FairvoiceError):
    """A run configuration file is missing keys or has invalid values."""
