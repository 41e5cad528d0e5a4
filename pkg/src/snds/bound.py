"""VC-style generalisation-gap diagnostic as a function of capacity and sample size."""

from __future__ import annotations

import math
from dataclasses import dataclass

from snds.errors import DomainError


@dataclass(frozen=True)
class BoundValue:
    gap_term: float  # (d_vc * ln(N / d_vc) - ln(delta)) / N
    bound: float  # sqrt(gap_term)


def bound_diagnostic(n_t: float, d_vc: float, delta: float) -> BoundValue:
    if n_t <= 0:
        raise DomainError(f"N_t must be positive, got {n_t}")
    if d_vc <= 0:
        raise DomainError(f"d_vc must be positive, got {d_vc}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    g = (d_vc * math.log(n_t / d_vc) - math.log(delta)) / n_t
    # g can dip below zero once d_vc far exceeds N_t; the square root is then undefined.
    return BoundValue(g, math.sqrt(g) if g >= 0 else math.nan)


def optimal_dvc(n_t: float) -> float:
    """Stationary point of ``gap_term`` in ``d_vc``: ``ln(N_t / d_vc) = 1``.

    ``gap_term`` is concave in ``d_vc``, so this is where it peaks.
    """
    if n_t <= 0:
        raise DomainError(f"N_t must be positive, got {n_t}")
    return n_t / math.e
