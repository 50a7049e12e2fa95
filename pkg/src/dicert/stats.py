"""Sample-size planners and concentration tails for the protocols.

All planners expose the asymptotic formulas with their hidden constants
surfaced as an explicit multiplier `c` (default 1); acceptance experiments
calibrate `c` empirically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PlanInputs:
    W: float
    n: int
    epsilon: float
    delta: float
    p: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.W <= 0 or self.n <= 0 or self.epsilon <= 0 or self.c <= 0:
            raise ValueError("plan inputs must be positive")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")


def chernoff_rounds(p: float, target_count: float, delta: float, c: float = 1.0) -> int:
    """Rounds needed so a rate-p event occurs target_count times w.p. 1-delta."""
    if not 0 < p <= 1 or target_count < 0 or not 0 < delta <= 1 or c <= 0:
        raise ValueError("invalid planner inputs")
    return math.ceil(c * (target_count + math.log(1.0 / delta)) / p)


def hoeffding_samples(sigma: float, epsilon: float, delta: float, c: float = 1.0) -> int:
    """Samples of |X| <= sigma variables for additive error epsilon w.p. 1-delta."""
    if sigma <= 0 or epsilon <= 0 or not 0 < delta <= 1 or c <= 0:
        raise ValueError("invalid planner inputs")
    return math.ceil(c * (sigma**2 / epsilon**2) * math.log(1.0 / delta))


def plan_N(variant: str, inputs: PlanInputs) -> int:
    """Total protocol rounds: c W^4 n^5 log(n/delta)/eps^4 with local
    randomness; one factor of n less with shared randomness."""
    if variant == "local":
        power = 5
    elif variant == "shared":
        power = 4
    else:
        raise ValueError(f"unknown variant {variant!r}")
    i = inputs
    return math.ceil(
        i.c * i.W**4 * i.n**power * math.log(i.n / i.delta) / i.epsilon**4
    )


def hoeffding_tail(sigma: float, epsilon: float, samples: int) -> float:
    """Two-sided tail bound 2 exp(-T eps^2 / (2 sigma^2))."""
    return 2.0 * math.exp(-samples * epsilon**2 / (2.0 * sigma**2))


def mixed_chernoff_tail(p: float, N: int, epsilon: float) -> float:
    """One-sided tail for rate-p subsampled, adaptively drifting means:
    exp(-eps^2 p N / (2 + eps)).  Valid without the i.i.d. assumption."""
    if epsilon <= 0 or not 0 < p <= 1 or N < 1:
        raise ValueError("invalid tail inputs")
    return math.exp(-(epsilon**2) * p * N / (2.0 + epsilon))
