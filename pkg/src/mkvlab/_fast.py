"""Compiled inner loops for pairwise interaction forces."""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def polynomial_pair_sum_sorted(x_sorted, lo, hi, coeffs_desc, out):
    """Windowed pairwise sums sum_j q(x_i - x_j) over sorted neighbours.

    ``lo``/``hi`` delimit, per particle, the contiguous index window of
    neighbours within the interaction radius; q is a polynomial given by
    descending coefficients (Horner order). Each particle accumulates its own
    window sequentially, so results do not depend on the thread count.
    """
    n = x_sorted.shape[0]
    m = coeffs_desc.shape[0]
    for i in prange(n):
        xi = x_sorted[i]
        acc = 0.0
        for j in range(lo[i], hi[i]):
            u = xi - x_sorted[j]
            p = 0.0
            for c in range(m):
                p = p * u + coeffs_desc[c]
            acc += p
        out[i] = acc
