"""Sum-rate optimal time and energy allocation for half- and full-duplex OFDM links."""

from .model import (
    ChannelRealization,
    DegenerateAllocationError,
    FdNupaAllocation,
    FdUpaAllocation,
    HdNupaAllocation,
    HdUpaAllocation,
    RateBreakdown,
    SystemParams,
)
from .solvers import STRATEGIES, SolverConfig, StrategyResult, check_typical_conditions, solve

__all__ = [
    "ChannelRealization",
    "DegenerateAllocationError",
    "FdNupaAllocation",
    "FdUpaAllocation",
    "HdNupaAllocation",
    "HdUpaAllocation",
    "RateBreakdown",
    "SystemParams",
    "STRATEGIES",
    "SolverConfig",
    "StrategyResult",
    "check_typical_conditions",
    "solve",
]
