"""Suppress a target script in a language model by downscaling its output-head rows."""

__version__ = "0.1.0"

from .risk import RiskTable, SamplingConfig, build_risk_table  # noqa: E402
from .smoothing import SmoothingParams, scale_factor  # noqa: E402
from .unicode_ranges import UnicodeRangeSet, parse_range_spec  # noqa: E402
from .vocab import TokenClass, load_vocabulary, scan  # noqa: E402

__all__ = [
    "RiskTable",
    "SamplingConfig",
    "SmoothingParams",
    "TokenClass",
    "UnicodeRangeSet",
    "build_risk_table",
    "load_vocabulary",
    "parse_range_spec",
    "scale_factor",
    "scan",
]
