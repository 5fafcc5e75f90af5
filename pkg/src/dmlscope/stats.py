"""Rank statistics for group comparisons.

The two-sided Mann-Whitney U test is evaluated exactly, by counting rank
configurations, whenever both groups are small (n1 + n2 <= 16) and the pooled
sample has no ties. Larger or tied samples fall back to the normal
approximation with midranks, tie-corrected variance and a continuity
correction of 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EXACT_LIMIT = 16


def population_std(values) -> float:
    """Standard deviation with the 1/n convention (population, not sample)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("population_std of empty sequence")
    return float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))


def normal_sf(z: float) -> float:
    """Survival function of the standard normal, P(Z > z)."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@lru_cache(maxsize=None)
def _count_configs(n1: int, n2: int, u: int) -> int:
    """Number of rank configurations of n1 'a' items among n1+n2 with U_a == u."""
    if u < 0:
        return 0
    if n1 == 0 or n2 == 0:
        return 1 if u == 0 else 0
    return _count_configs(n1 - 1, n2, u - n2) + _count_configs(n1, n2 - 1, u)


def _exact_two_sided_p(n1: int, n2: int, u_min: int) -> float:
    total = math.comb(n1 + n2, n1)
    le = sum(_count_configs(n1, n2, u) for u in range(u_min + 1))
    u_max = n1 * n2
    # two-sided: count both tails at distance >= |u_min - mu| from the mean,
    # which for the discrete symmetric U distribution is P(U <= u_min) + P(U >= U_max - u_min)
    ge = sum(_count_configs(n1, n2, u) for u in range(u_max - u_min, u_max + 1))
    p = (le + ge) / total
    return min(1.0, p)


def _midranks(pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Midranks of a pooled sample plus the tie-group sizes."""
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size, dtype=np.float64)
    sorted_vals = pooled[order]
    tie_sizes = []
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # ranks are 1-based; a tie block spanning ranks i+1..j+1 gets their mean
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(tie_sizes, dtype=np.float64)


@dataclass(frozen=True)
class MwuResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" or "normal_approximation"
    n1: int
    n2: int

    def significant(self, alpha: float = 0.01) -> bool:
        return self.p_value < alpha


def mann_whitney_u(group_a, group_b) -> MwuResult:
    """Two-sided Mann-Whitney U test. Reports U = min(U_a, U_b).

    With n1 + n2 <= 16 and no ties in the pooled sample the p-value is exact;
    otherwise it uses a tie-corrected normal approximation with continuity
    correction.
    """
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("mann_whitney_u: both groups must be non-empty")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("mann_whitney_u: non-finite values in input")
    n1, n2 = int(a.size), int(b.size)
    pooled = np.concatenate([a, b])
    ranks, tie_sizes = _midranks(pooled)
    rank_sum_a = float(ranks[:n1].sum())
    u_a = rank_sum_a - n1 * (n1 + 1) / 2.0
    u_b = n1 * n2 - u_a
    u_min = min(u_a, u_b)

    has_ties = bool((tie_sizes > 1).any())
    if n1 + n2 <= EXACT_LIMIT and not has_ties:
        p = _exact_two_sided_p(n1, n2, int(round(u_min)))
        return MwuResult(u_statistic=u_min, p_value=p, method="exact", n1=n1, n2=n2)

    n = n1 + n2
    mu = n1 * n2 / 2.0
    tie_term = float(((tie_sizes**3 - tie_sizes)).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = (n1 * n2 / 12.0) * ((n + 1) - tie_term)
    if var <= 0.0:
        # all pooled values identical: no evidence of a shift in either direction
        return MwuResult(u_statistic=u_min, p_value=1.0, method="normal_approximation", n1=n1, n2=n2)
    z = max(0.0, abs(u_min - mu) - 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * normal_sf(z))
    return MwuResult(u_statistic=u_min, p_value=p, method="normal_approximation", n1=n1, n2=n2)
