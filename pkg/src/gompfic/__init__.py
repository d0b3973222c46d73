"""Gompertz versus gamma-Gompertz model selection under left truncation."""

__version__ = "0.1.0"

from .model import ModelParams, AgeScale  # noqa: E402
from .inference import Sample, fit_full, fit_null, info_quantities  # noqa: E402
from .selection import FocusSpec  # noqa: E402

__all__ = [
    "__version__",
    "ModelParams",
    "AgeScale",
    "Sample",
    "fit_null",
    "fit_full",
    "info_quantities",
    "FocusSpec",
]
