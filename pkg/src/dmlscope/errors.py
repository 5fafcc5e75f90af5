class ToolkitError(Exception):
    """Base class for all errors raised by dmlscope on bad input."""


class CorruptTensorError(ToolkitError):
    """Tensor file pair is malformed (bad sidecar, byte-count mismatch, bad shape)."""


class NonFiniteDataError(ToolkitError):
    """A tensor payload contains NaN or Inf."""


class DegenerateMapError(ToolkitError):
    """A saliency map has zero variance or zero sum and cannot be compared."""


class IdMismatchError(ToolkitError):
    """Two collections that must share the same id set do not."""
