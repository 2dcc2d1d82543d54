"""Almost Anosov torus maps: construction, certification and thermodynamic experiments."""

from .maps import (
    AlmostAnosovMap,
    InvalidSpec,
    MapSpec,
    TorusPoint,
    distance_to_singularity,
    hyperbolicity_certificate,
    validate_spec,
)

__version__ = "0.1.0"

__all__ = [
    "AlmostAnosovMap",
    "InvalidSpec",
    "MapSpec",
    "TorusPoint",
    "distance_to_singularity",
    "hyperbolicity_certificate",
    "validate_spec",
    "__version__",
]
