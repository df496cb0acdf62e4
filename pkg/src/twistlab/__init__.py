"""Numerical weak KAM and Aubry-Mather theory for exact twist maps and their suspensions."""

__version__ = "0.1.0"

from .errors import TwistLabError  # noqa: E402
from .systems import SystemSpec, fourier_family, reversed_system, standard_map_family  # noqa: E402

__all__ = ["SystemSpec", "TwistLabError", "fourier_family", "reversed_system",
           "standard_map_family", "__version__"]
