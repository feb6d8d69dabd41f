"""Boundary/volume integral solver and asymptotics toolkit for acoustic
scattering by a single high-contrast (Minnaert) micro-bubble."""

from . import asymptotics, geometry, layer_ops, oracle, resonances, scattering, spectral
from .errors import (
    BubbleBemError,
    ConfigurationError,
    DiagnosticFailure,
    MultiplicityAnomalyError,
    NearResonanceError,
    NearSingularEvaluationError,
    NumericalFailure,
    UnsupportedGeometryError,
    UsageError,
)

__version__ = "0.1.0"
