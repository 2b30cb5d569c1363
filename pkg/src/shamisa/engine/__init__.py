"""Compositional distortion engine."""

from .functions import (
    CATEGORIES,
    REGISTRY,
    DistortionFunction,
    apply_distortion,
    calibrate_severity,
    functions_in,
    register,
    severity_from_native,
)
from .batch import (
    BatchMeta,
    CompositionSpec,
    EngineConfig,
    RowMeta,
    apply_composition,
    build_batch,
    sample_composition,
    sample_levels,
    sample_severity,
)

__all__ = [
    "CATEGORIES",
    "REGISTRY",
    "DistortionFunction",
    "apply_distortion",
    "calibrate_severity",
    "functions_in",
    "register",
    "severity_from_native",
    "BatchMeta",
    "CompositionSpec",
    "EngineConfig",
    "RowMeta",
    "apply_composition",
    "build_batch",
    "sample_composition",
    "sample_levels",
    "sample_severity",
]
