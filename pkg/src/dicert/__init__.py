"""Simulation and verification lab for device-independent multipartite self-testing."""

from dicert.qcore import (
    DensityOperator,
    HermitianOperator,
    PureState,
    bell_state,
    bsm_projectors,
    depolarize,
    eigh,
    fidelity,
    haar_random_state,
    measure,
    partial_trace,
    partial_transpose,
    trace_distance,
    unitarize,
)

__all__ = [
    "DensityOperator",
    "HermitianOperator",
    "PureState",
    "bell_state",
    "bsm_projectors",
    "depolarize",
    "eigh",
    "fidelity",
    "haar_random_state",
    "measure",
    "partial_trace",
    "partial_transpose",
    "trace_distance",
    "unitarize",
]
