"""Simulation, enumeration and certification tools for the threshold frog model on d-ary trees."""

__version__ = "0.1.0"

from .prob import ParameterError, RngStream, ThresholdSpec, parse_threshold  # noqa: E402
from .tree import ModelParams  # noqa: E402

__all__ = ["ModelParams", "ParameterError", "RngStream", "ThresholdSpec", "parse_threshold", "__version__"]
