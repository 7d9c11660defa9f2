"""Structural time-series models for counterfactual event studies."""
__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
from .series import MonthIndex, TimeSeries  # noqa: E402
from .model_spec import ModelSpec, ParamVector, SeasonalSpec, CycleSpec, TrendKind, assemble  # noqa: E402
from .estimation import fit  # noqa: E402
