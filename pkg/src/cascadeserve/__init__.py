"""Confidence-based model cascades: calibration, threshold search, pruning,
GPU placement and discrete-event simulation."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("cascadeserve")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .errors import (
    CascadeError,
    InfeasibleError,
    InvariantError,
    MissingModelError,
    ShapeError,
    TraceFormatError,
)

__all__ = [
    "__version__",
    "CascadeError",
    "InfeasibleError",
    "InvariantError",
    "MissingModelError",
    "ShapeError",
    "TraceFormatError",
]
