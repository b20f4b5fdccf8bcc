"""Risk-based scan-parameter optimization for a powder-bed laser melting model.

Subpackages cover sampling-based risk estimators, a reduced-order thermal
model with a residual-stress proxy, feature extraction and polynomial
surrogates on active variables, and a constrained design optimizer tied
together by a reproducible pipeline.
"""

from . import risk, thermal, stress, reduction, surrogate, optimize, pipeline

__all__ = [
    "risk",
    "thermal",
    "stress",
    "reduction",
    "surrogate",
    "optimize",
    "pipeline",
]

__version__ = "0.1.0"
