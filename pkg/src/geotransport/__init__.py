"""Deterministic (1+eps)-approximation engine for geometric transportation."""

from .core import (
    FlowVector,
    GeoTransportError,
    InvalidMapError,
    OracleLimitError,
    ParseError,
    SolverDiagnosticError,
    TransportInstance,
    TransportMap,
    UnsupportedInstanceError,
    flow_cost,
    flow_divergence,
    make_instance,
    total_cost,
    validate_map,
)
from .pipeline import solve_transport

__all__ = [
    "FlowVector",
    "GeoTransportError",
    "InvalidMapError",
    "OracleLimitError",
    "ParseError",
    "SolverDiagnosticError",
    "TransportInstance",
    "TransportMap",
    "UnsupportedInstanceError",
    "flow_cost",
    "flow_divergence",
    "make_instance",
    "solve_transport",
    "total_cost",
    "validate_map",
]

__version__ = "0.1.0"
