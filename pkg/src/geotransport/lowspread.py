"""Low-spread fast path and the bipartite matching mode.

Thin entry points over the shared pipeline: the low-spread variant swaps
the warped tree for a uniform one (no moats, no contractions, every vertex
its own blob, all shifts legal); matching mode additionally requires unit
supplies and returns a 0/1 map.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import TransportInstance
from .pipeline import (
    SPREAD_MODE_THRESHOLD_POWER,
    SolveResult,
    select_mode,
    solve_transport,
)


@dataclass(frozen=True)
class ModeSelector:
    """Auto policy: the uniform pipeline covers spreads up to n^4."""

    spread: float
    n: int

    @property
    def threshold(self) -> float:
        return float(self.n) ** SPREAD_MODE_THRESHOLD_POWER

    @property
    def mode(self) -> str:
        return "low-spread" if self.spread <= self.threshold else "warped"

    @classmethod
    def for_instance(cls, instance: TransportInstance) -> "ModeSelector":
        return cls(spread=instance.spread() if instance.n >= 2 else 1.0,
                   n=instance.n)


def solve_low_spread(instance: TransportInstance, eps: float, **kwargs) -> SolveResult:
    return solve_transport(instance, eps, mode="low-spread", **kwargs)


def solve_matching(instance: TransportInstance, eps: float, **kwargs) -> SolveResult:
    """(1+eps)-approximate bipartite matching for unit supply instances."""
    return solve_transport(instance, eps, mode="matching", **kwargs)


__all__ = ["ModeSelector", "select_mode", "solve_low_spread", "solve_matching"]
