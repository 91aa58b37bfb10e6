"""Fourier-quotient estimation of the pairwise interaction force.

Collapsing the time axis with a centered linear form turns the convolution
identity for the pairwise drift into a ratio of Fourier transforms: the
transform of the collapsed drift field over the transform of the collapsed
empirical measure (a bandwidth-free periodogram). Frequencies whose
denominator falls below a threshold are zeroed before transforming back.

Spatial fields live on centered regular grids with an odd number of points
per axis, and the frequency lattice is the conjugate grid (spacing
1/(M*dx)), which makes the discrete forward/inverse transform pair exact.
The transform convention is exp(-2*pi*i*xi.x) with no loose 2*pi factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.signal import convolve as _convolve

from .models import TrajectoryEnsemble

# ---------------------------------------------------------------------------
# Linear forms over observation times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearForm:
    """Signed weights over observation times with total mass exactly centered to 0."""

    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.weights.shape or self.times.ndim != 1:
            raise ValueError("times and weights must be matching 1-d arrays")

    @property
    def support(self) -> np.ndarray:
        return np.nonzero(self.weights != 0.0)[0]


def make_linear_form(
    times: np.ndarray,
    weight: Union[Callable[[np.ndarray], np.ndarray], np.ndarray],
    rho: np.ndarray | None = None,
    t_end: float | None = None,
) -> LinearForm:
    """Build w(t_i)*rho_i weights, centered on the support of w.

    ``rho`` defaults to the uniform distribution over the observation times.
    Centering subtracts the rho-mean of w on its own support, so compactness
    of the support is preserved and the weights sum to zero exactly.
    """
    times = np.asarray(times, dtype=float)
    w = np.asarray(weight(times) if callable(weight) else weight, dtype=float)
    if w.shape != times.shape:
        raise ValueError("weight array must align with the observation times")
    if rho is None:
        rho = np.full(times.shape, 1.0 / times.size)
    else:
        rho = np.asarray(rho, dtype=float)
        if rho.shape != times.shape or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
            raise ValueError("rho must be a probability vector over the observation times")
    if t_end is not None:
        boundary = (times <= 0.0) | (times >= t_end)
        if np.any(w[boundary] != 0.0):
            raise ValueError("weight support must lie strictly inside (0, T)")
    support = w != 0.0
    rho_mass = rho[support].sum()
    if rho_mass <= 0:
        raise ValueError("degenerate linear form")
    center = float((w * rho)[support].sum() / rho_mass)
    weights = np.where(support, (w - center) * rho, 0.0)
    scale = np.max(np.abs(w * rho))
    if np.max(np.abs(weights)) <= 1e-12 * scale:
        raise ValueError("degenerate linear form")
    return LinearForm(times=times, weights=weights)


def bump_weight(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth weight (1 - u^2)^2 on (lo, hi), vanishing outside."""
    if not lo < hi:
        raise ValueError("need lo < hi")

    def w(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = (2.0 * t - (lo + hi)) / (hi - lo)
        inside = np.abs(u) < 1.0
        return np.where(inside, (1.0 - u**2) ** 2, 0.0)

    return w


def contrast_weight(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    """Antisymmetric early-minus-late contrast on (lo, hi).

    A symmetric weight is orthogonal to trends that are monotone over the
    window, which is exactly how a relaxing population evolves; the signed
    contrast keeps that first-order signal in the collapsed measure.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    mid = 0.5 * (lo + hi)
    early = bump_weight(lo, mid)
    late = bump_weight(mid, hi)

    def w(t: np.ndarray) -> np.ndarray:
        return early(t) - late(t)

    return w


@dataclass(frozen=True)
class WeightedCloud:
    """Signed atomic measure: weighted particle positions collapsed over time."""

    points: np.ndarray
    weights: np.ndarray


def apply_linear_form(target, form: LinearForm):
    """Collapse the time axis of an ensemble or a times-first value array.

    An ensemble becomes a signed atomic measure over space (each particle
    position at each supported time carries weight w_k rho_k / N); an array
    with leading time axis becomes its weighted sum over that axis.
    """
    if isinstance(target, TrajectoryEnsemble):
        grid_times = target.grid.times()
        if form.times.shape != grid_times.shape or not np.allclose(form.times, grid_times):
            raise ValueError("linear form must be built on the ensemble observation times")
        idx = form.support
        pts = target.data[:, idx, :].reshape(-1, target.d)
        wts = np.repeat(form.weights[idx][None, :], target.n_particles, axis=0).reshape(-1)
        return WeightedCloud(points=pts, weights=wts / target.n_particles)
    values = np.asarray(target, dtype=float)
    if values.shape[0] != form.times.size:
        raise ValueError("leading axis of the values must align with the observation times")
    return np.tensordot(form.weights, values, axes=(0, 0))


# ---------------------------------------------------------------------------
# Grids and transforms
# ---------------------------------------------------------------------------


def _centered_axis(n_points: int, spacing: float) -> np.ndarray:
    return (np.arange(n_points) - n_points // 2) * spacing


@dataclass(frozen=True)
class SpatialGrid:
    """Centered regular grid, odd point count per axis so 0 is a node."""

    n_points: int
    spacing: float
    dim: int = 1

    def __post_init__(self):
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 3")
        if self.spacing <= 0 or self.dim < 1:
            raise ValueError("spacing must be positive and dim >= 1")

    def axis(self) -> np.ndarray:
        return _centered_axis(self.n_points, self.spacing)

    def points(self) -> np.ndarray:
        axes = [self.axis()] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim


@dataclass(frozen=True)
class FrequencyLattice:
    """Centered regular frequency lattice, mirror of :class:`SpatialGrid`."""

    n_points: int
    spacing: float
    dim: int = 1

    def __post_init__(self):
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 3")
        if self.spacing <= 0 or self.dim < 1:
            raise ValueError("spacing must be positive and dim >= 1")

    def axis(self) -> np.ndarray:
        return _centered_axis(self.n_points, self.spacing)

    def points(self) -> np.ndarray:
        axes = [self.axis()] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim


def centered_grid(half_width: float, n_points: int, dim: int = 1) -> SpatialGrid:
    """Grid covering [-half_width, half_width] with an odd number of points."""
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    if n_points % 2 == 0:
        n_points += 1
    return SpatialGrid(n_points=n_points, spacing=2.0 * half_width / n_points, dim=dim)


def conjugate_lattice(grid: SpatialGrid) -> FrequencyLattice:
    """Frequency lattice making the grid transforms an exact inverse pair."""
    return FrequencyLattice(
        n_points=grid.n_points, spacing=1.0 / (grid.n_points * grid.spacing), dim=grid.dim
    )


def _check_conjugate(grid: SpatialGrid, lattice: FrequencyLattice) -> None:
    if grid.n_points != lattice.n_points or grid.dim != lattice.dim:
        raise ValueError("lattice/box mismatch: point counts or dimensions differ")
    if abs(grid.spacing * lattice.spacing * grid.n_points - 1.0) > 1e-9:
        raise ValueError("lattice/box mismatch: spacings are not conjugate")


def _apply_axis(mat: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, 0)
    res = np.tensordot(mat, moved, axes=(1, 0))
    return np.moveaxis(res, 0, axis)


def grid_fourier(values: np.ndarray, grid: SpatialGrid, lattice: FrequencyLattice) -> np.ndarray:
    """Riemann-sum transform sum_j exp(-2*pi*i xi.x_j) f(x_j) dx^dim of a gridded field.

    Trailing axes beyond the spatial ones (vector components) pass through.
    """
    _check_conjugate(grid, lattice)
    values = np.asarray(values)
    if values.shape[: grid.dim] != grid.shape:
        raise ValueError(f"field shape {values.shape} does not start with grid shape {grid.shape}")
    phase = np.exp(-2j * math.pi * np.outer(lattice.axis(), grid.axis()))
    out = values.astype(complex)
    for axis in range(grid.dim):
        out = _apply_axis(phase, out, axis)
    return out * grid.cell_volume


def grid_inverse_fourier(
    values: np.ndarray, grid: SpatialGrid, lattice: FrequencyLattice
) -> np.ndarray:
    """Inverse of :func:`grid_fourier`; exact on the conjugate grid pair."""
    _check_conjugate(grid, lattice)
    values = np.asarray(values, dtype=complex)
    if values.shape[: lattice.dim] != lattice.shape:
        raise ValueError(
            f"field shape {values.shape} does not start with lattice shape {lattice.shape}"
        )
    phase = np.exp(2j * math.pi * np.outer(grid.axis(), lattice.axis()))
    out = values
    for axis in range(lattice.dim):
        out = _apply_axis(phase, out, axis)
    return out * lattice.cell_volume


def periodogram(
    ens: TrajectoryEnsemble, form: LinearForm, lattice: FrequencyLattice
) -> np.ndarray:
    """Empirical transform of the collapsed measure: exact particle sums, no gridding."""
    if lattice.dim != ens.d:
        raise ValueError(f"lattice dimension {lattice.dim} does not match state dimension {ens.d}")
    grid_times = ens.grid.times()
    if form.times.shape != grid_times.shape or not np.allclose(form.times, grid_times):
        raise ValueError("linear form must be built on the ensemble observation times")
    freq_pts = lattice.points()
    out = np.zeros(freq_pts.shape[0], dtype=complex)
    for k in form.support:
        positions = ens.data[:, k, :]
        phases = np.exp(-2j * math.pi * (positions @ freq_pts.T))
        out += form.weights[k] * phases.mean(axis=0)
    return out.reshape(lattice.shape)


def fourier_quotient(
    f_lb: np.ndarray, f_lmu: np.ndarray, varpi: float
) -> tuple[np.ndarray, np.ndarray]:
    """Thresholded deconvolution ratio -F(Lb) conj(F(Lmu)) / |F(Lmu)|^2.

    Returns the transform of the recovered interaction force and the boolean
    mask of retained frequencies (denominator >= varpi); dropped frequencies
    are exactly zero.
    """
    if varpi <= 0:
        raise ValueError("varpi must be positive")
    f_lb = np.asarray(f_lb, dtype=complex)
    f_lmu = np.asarray(f_lmu, dtype=complex)
    if f_lb.shape[:-1] != f_lmu.shape:
        raise ValueError("drift and measure transforms live on different lattices")
    denom = np.abs(f_lmu) ** 2
    kept = denom >= varpi
    safe = np.where(kept, denom, 1.0)
    quotient = -f_lb * np.conj(f_lmu)[..., None] / safe[..., None]
    return np.where(kept[..., None], quotient, 0.0), kept


@dataclass(frozen=True)
class DriftFieldSeries:
    """Drift estimates on (times x spatial grid) with the metadata the quotient needs."""

    times: np.ndarray
    grid: SpatialGrid
    values: np.ndarray  # (n_t,) + grid.shape + (d,)
    varpi_prime: float
    truncation_radius: float

    def __post_init__(self):
        expected = (self.times.size,) + self.grid.shape + (self.grid.dim,)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape}, expected {expected}")
        if not np.isfinite(self.values).all():
            raise ValueError("drift field contains non-finite values")


@dataclass(frozen=True)
class InteractionEstimateReport:
    """Recovered interaction force field plus its spectral diagnostics."""

    grad_w_hat: np.ndarray  # grid.shape + (d,)
    grid: SpatialGrid
    lattice: FrequencyLattice
    fourier_grad_w: np.ndarray
    kept_mask: np.ndarray
    kept_fraction: float
    varpi: float
    truncation_radius: float
    l2_norm_sq: float
    grad_v_hat: np.ndarray | None = None


def estimate_grad_w(
    ens: TrajectoryEnsemble,
    b_field: DriftFieldSeries,
    form: LinearForm,
    varpi: float,
    lattice: FrequencyLattice | None = None,
) -> InteractionEstimateReport:
    """Full spectral pipeline from a drift field series and the raw ensemble."""
    grid = b_field.grid
    if lattice is None:
        lattice = conjugate_lattice(grid)
    _check_conjugate(grid, lattice)

    weight_lookup = dict(zip(np.round(form.times, 12), form.weights))
    field_w = np.array([weight_lookup.get(round(float(t), 12)) for t in b_field.times], dtype=object)
    if any(w is None for w in field_w):
        raise ValueError("drift field times must be observation times of the linear form")
    field_w = field_w.astype(float)
    covered = np.isin(np.round(form.times[form.support], 12), np.round(b_field.times, 12))
    if not covered.all():
        raise ValueError("drift field does not cover the support of the linear form")

    lb = np.tensordot(field_w, b_field.values, axes=(0, 0))  # grid.shape + (d,)
    radii = np.linalg.norm(grid.points(), axis=-1).reshape(grid.shape)
    lb = np.where((radii <= b_field.truncation_radius)[..., None], lb, 0.0)

    f_lb = grid_fourier(lb, grid, lattice)
    f_lmu = periodogram(ens, form, lattice)
    f_gw, kept = fourier_quotient(f_lb, f_lmu, varpi)
    grad_w = grid_inverse_fourier(f_gw, grid, lattice).real
    l2 = float((grad_w**2).sum() * grid.cell_volume)
    return InteractionEstimateReport(
        grad_w_hat=grad_w,
        grid=grid,
        lattice=lattice,
        fourier_grad_w=f_gw,
        kept_mask=kept,
        kept_fraction=float(kept.mean()),
        varpi=varpi,
        truncation_radius=b_field.truncation_radius,
        l2_norm_sq=l2,
    )


def estimate_grad_v(
    b_slice: np.ndarray,
    grad_w_hat: np.ndarray,
    density: np.ndarray,
    grid: SpatialGrid,
) -> np.ndarray:
    """Plug-in confinement force -b_hat - (grad_W_hat * density) on the grid.

    The convolution is the discrete Riemann sum on the shared grid (cell
    volume included); fields must share the grid shape.
    """
    b_slice = np.asarray(b_slice, dtype=float)
    grad_w_hat = np.asarray(grad_w_hat, dtype=float)
    density = np.asarray(density, dtype=float)
    expected = grid.shape + (grid.dim,)
    if b_slice.shape != expected or grad_w_hat.shape != expected or density.shape != grid.shape:
        raise ValueError("grid mismatch between drift, interaction and density fields")
    conv = np.empty_like(grad_w_hat)
    for c in range(grid.dim):
        conv[..., c] = _convolve(grad_w_hat[..., c], density, mode="same", method="direct")
    return -b_slice - conv * grid.cell_volume
