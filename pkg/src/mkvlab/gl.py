"""Goldenshluger-Lepski bandwidth selection over finite partially ordered grids.

The comparison statistic for a grid entry h is

    A(h) = max over h' <= h of { |est(h) - est(h')|^2 - (V(h) + V(h')) }_+

with the componentwise partial order on bandwidth tuples and the squared
Euclidean norm for vector-valued estimates; the selected entry minimizes
A(h) + V(h), ties broken toward the lexicographically smallest tuple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BandwidthGrid:
    """Finite set of bandwidth tuples, partially ordered componentwise."""

    entries: tuple[tuple[float, ...], ...]
    dims: int

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ValueError("grids have 1 or 2 bandwidth dimensions")
        if len(self.entries) == 0:
            raise ValueError("empty bandwidth grid")
        for e in self.entries:
            if len(e) != self.dims:
                raise ValueError(f"entry {e} does not have {self.dims} components")
            if any(h <= 0 or not math.isfinite(h) for h in e):
                raise ValueError(f"entry {e} has nonpositive bandwidths")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("duplicate grid entries")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class GLDiagnostics:
    """Per-entry A and V terms plus the selected index."""

    entries: tuple[tuple[float, ...], ...]
    estimates: np.ndarray
    a_terms: np.ndarray
    v_terms: np.ndarray
    chosen_index: int

    @property
    def chosen_entry(self) -> tuple[float, ...]:
        return self.entries[self.chosen_index]

    @property
    def chosen_estimate(self) -> np.ndarray:
        return self.estimates[self.chosen_index]


def gl_select(grid: BandwidthGrid, estimates, variances) -> GLDiagnostics:
    """Run the selection rule; ``estimates`` may be scalars or vectors per entry."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    var = np.asarray(variances, dtype=float)
    n = len(grid)
    if est.shape[0] != n or var.shape != (n,):
        raise ValueError("estimates and variances must be given on the full grid")
    if np.any(var <= 0):
        raise ValueError("variance terms must be positive")

    ent = np.asarray(grid.entries, dtype=float)  # (n, dims)
    dominated = np.all(ent[None, :, :] <= ent[:, None, :], axis=2)  # [i, j] = (h_j <= h_i)
    sq_diff = ((est[:, None, :] - est[None, :, :]) ** 2).sum(axis=2)
    penalized = sq_diff - (var[:, None] + var[None, :])
    penalized = np.where(dominated, penalized, -np.inf)
    a_terms = np.maximum(penalized.max(axis=1), 0.0)

    crit = a_terms + var
    best = crit.min()
    tied = [i for i in range(n) if crit[i] == best]
    chosen = min(tied, key=lambda i: grid.entries[i])
    return GLDiagnostics(
        entries=grid.entries,
        estimates=est if np.asarray(estimates).ndim > 1 else est[:, 0],
        a_terms=a_terms,
        v_terms=var,
        chosen_index=chosen,
    )


# ---------------------------------------------------------------------------
# Grid builders and admissibility checks
# ---------------------------------------------------------------------------


def _geometric(h_max: float, h_min: float, ratio: float) -> list[float]:
    if not (h_min <= h_max):
        return []
    out = []
    h = h_max
    while h >= h_min * (1 - 1e-12):
        out.append(h)
        h /= ratio
    return out


def density_grid_bounds(n: int, d: int) -> tuple[float, float]:
    """Admissible single-bandwidth range [ (log n)^{2/d} n^{-1/d}, 1 ]."""
    if n < 3:
        raise ValueError("need n >= 3 for a meaningful grid")
    low = (math.log(n) ** 2 / n) ** (1.0 / d)
    return low, 1.0


def drift_grid_bounds(n: int, d: int) -> tuple[float, float, float]:
    """Returns (low, h1_cap, h2_high) for the two-bandwidth box constraints.

    Both bandwidths share the lower bound ((log n)^2 / n)^{1/(d+1)}; the time
    bandwidth additionally carries the cap (log n)^{-2}, which is empty of
    admissible values until n is astronomically large and can therefore be
    lifted by callers that opt in.
    """
    if n < 3:
        raise ValueError("need n >= 3 for a meaningful grid")
    low = (math.log(n) ** 2 / n) ** (1.0 / (d + 1))
    return low, math.log(n) ** (-2.0), 1.0


def geometric_grid_1d(
    n: int, d: int, ratio: float = math.e, h_max: float | None = None
) -> BandwidthGrid:
    """Geometric bandwidth grid h_max, h_max/ratio, ... down to the admissible floor."""
    if ratio <= 1.0:
        raise ValueError("ratio must be > 1")
    low, high = density_grid_bounds(n, d)
    if h_max is None:
        h_max = math.exp(-1.0)
    h_max = min(h_max, high)
    hs = _geometric(h_max, low, ratio)
    if not hs:
        raise ValueError(f"admissible bandwidth range [{low:.4g}, {h_max:.4g}] is empty")
    if len(hs) > n:
        raise ValueError("grid cardinality exceeds n")
    return BandwidthGrid(entries=tuple((h,) for h in hs), dims=1)


def geometric_grid_2d(
    n: int,
    d: int,
    ratio: float = math.e,
    h1_max: float | None = None,
    h2_max: float | None = None,
    enforce_h1_cap: bool = True,
) -> BandwidthGrid:
    """Product of geometric grids for the time-space bandwidth pair.

    With ``enforce_h1_cap`` the time bandwidth respects its admissibility cap,
    which is empty at practical n; pass ``enforce_h1_cap=False`` to benchmark
    with time bandwidths up to ``h1_max``.
    """
    if ratio <= 1.0:
        raise ValueError("ratio must be > 1")
    low, cap, high = drift_grid_bounds(n, d)
    top1 = cap if enforce_h1_cap else (h1_max if h1_max is not None else math.exp(-1.0))
    if enforce_h1_cap and h1_max is not None:
        top1 = min(top1, h1_max)
    if top1 < low:
        raise ValueError(
            f"admissible time-bandwidth range [{low:.4g}, {top1:.4g}] is empty at n={n}; "
            "lift the cap with enforce_h1_cap=False to experiment"
        )
    top2 = min(h2_max if h2_max is not None else math.exp(-1.0), high)
    h1s = _geometric(top1, low, ratio)
    h2s = _geometric(top2, low, ratio)
    if not h1s or not h2s:
        raise ValueError("empty bandwidth grid after applying box constraints")
    entries = tuple((h1, h2) for h1 in h1s for h2 in h2s)
    if len(entries) > n:
        raise ValueError("grid cardinality exceeds n")
    return BandwidthGrid(entries=entries, dims=2)


def validate_density_grid(grid: BandwidthGrid, n: int, d: int) -> None:
    """Check single-bandwidth admissibility for data size n in dimension d."""
    if grid.dims != 1:
        raise ValueError("density estimation uses a one-dimensional bandwidth grid")
    low, high = density_grid_bounds(n, d)
    for (h,) in grid.entries:
        if not (low * (1 - 1e-12) <= h <= high * (1 + 1e-12)):
            raise ValueError(f"bandwidth {h:.4g} outside admissible range [{low:.4g}, {high:.4g}]")
    if len(grid) > n:
        raise ValueError("grid cardinality exceeds n")


def validate_drift_grid(grid: BandwidthGrid, n: int, d: int, enforce_h1_cap: bool = True) -> None:
    """Check the two-bandwidth box constraints; the h1 cap only when enforced."""
    if grid.dims != 2:
        raise ValueError("drift estimation uses a two-dimensional bandwidth grid")
    low, cap, high = drift_grid_bounds(n, d)
    for h1, h2 in grid.entries:
        if not (low * (1 - 1e-12) <= h1):
            raise ValueError(f"time bandwidth {h1:.4g} below admissible floor {low:.4g}")
        if enforce_h1_cap and h1 > cap * (1 + 1e-12):
            raise ValueError(
                f"time bandwidth {h1:.4g} exceeds the cap {cap:.4g}; "
                "pass allow_wide_h1=True to lift it"
            )
        if not (low * (1 - 1e-12) <= h2 <= high * (1 + 1e-12)):
            raise ValueError(f"space bandwidth {h2:.4g} outside [{low:.4g}, {high:.4g}]")
    if len(grid) > n:
        raise ValueError("grid cardinality exceeds n")
