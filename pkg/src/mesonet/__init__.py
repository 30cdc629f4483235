"""From-scratch Meso-family CNNs for face manipulation detection."""

from .architectures import (
    ArchitectureSpec,
    ConvBlockSpec,
    Model,
    build,
    forward,
    spec_by_name,
    spec_meso4,
    spec_meso_plus6,
)
from .persistence import load, save

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "ConvBlockSpec",
    "Model",
    "build",
    "forward",
    "load",
    "save",
    "spec_by_name",
    "spec_meso4",
    "spec_meso_plus6",
]
