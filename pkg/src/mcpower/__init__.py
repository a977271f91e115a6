"""Confidence intervals for the power of Monte Carlo tests, with guaranteed coverage."""

from .config import RunConfig
from .engine import FinalReport, naive_estimate, run
from .interval import Interval, clopper_pearson, interval_union
from .precision import Band, Custom, Fixed, LeftTail, SqrtProfile, parse_rule
from .samplers import SamplerSpec, parse_sampler

__all__ = [
    "Band", "Custom", "FinalReport", "Fixed", "Interval", "LeftTail", "RunConfig", "SamplerSpec",
    "SqrtProfile", "clopper_pearson", "interval_union", "naive_estimate", "parse_rule", "parse_sampler", "run",
]
__version__ = "0.1.0"
