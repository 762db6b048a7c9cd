"""sctlab: a sparse-view spectral CT reconstruction laboratory.

Subpackages cover the full pipeline: synthetic multi-energy phantoms and
fan-beam simulation, filtered backprojection with a configurable filter
family, total-nuclear-variation regularized iterative reconstruction, an
unsupervised Low2High denoiser trained with spectral TNV coupling, and an
image-quality evaluation kit.
"""

from .core import (
    SinogramStack,
    SpectralStack,
    StackFormatError,
    default_energies,
    normalize_stack,
    read_stack,
    write_stack,
)
from .geometry import FanGeometry, music_geometry, uniform_angles

__all__ = [
    "FanGeometry",
    "SinogramStack",
    "SpectralStack",
    "StackFormatError",
    "default_energies",
    "music_geometry",
    "normalize_stack",
    "read_stack",
    "uniform_angles",
    "write_stack",
]

__version__ = "0.1.0"
