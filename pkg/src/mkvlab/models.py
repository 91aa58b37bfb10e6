"""Model specifications, trajectory containers, and closed-form test oracles.

State points are plain float arrays of shape ``(d,)``; particle clouds are
arrays of shape ``(N, d)``. Vector fields passed into the model types
(``grad_V``, ``grad_W``, drift callables) must be vectorized over leading
axes, i.e. map ``(..., d) -> (..., d)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.stats import norm

_MKV1_MAGIC = b"MKV1"
_MKV1_HEADER = struct.Struct("<IIIdQ")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform observation grid on [0, T] with ``n_steps`` intervals."""

    t_end: float
    n_steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if self.t_start != 0.0:
            raise ValueError("time grids start at t=0")
        if not (np.isfinite(self.t_end) and self.t_end > 0.0):
            raise ValueError(f"horizon must be a positive finite number, got {self.t_end}")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def nearest_index(self, t: float) -> int:
        """Index of the grid point nearest to ``t``, ties resolved toward the earlier point."""
        tol = 1e-9 * max(self.t_end, 1.0)
        if not (-tol <= t <= self.t_end + tol):
            raise ValueError(f"t={t} outside [0, {self.t_end}]")
        idx = math.ceil(t / self.dt - 0.5)
        return min(max(idx, 0), self.n_steps)


@dataclass(frozen=True)
class VlasovPairDrift:
    """Pairwise drift -grad_V(x) - mean_j grad_W(x - x_j).

    ``support_radius`` declares the radius outside which ``grad_W`` vanishes
    (``inf`` for globally supported interactions such as the quadratic one).
    Optional Lipschitz constants feed the sanity audits only.
    """

    grad_V: Callable[[np.ndarray], np.ndarray]
    grad_W: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    lip_grad_V: float | None = None
    lip_grad_W: float | None = None

    def __post_init__(self):
        if self.support_radius < 0:
            raise ValueError("support_radius must be >= 0")


@dataclass(frozen=True)
class GeneralLipschitzDrift:
    """Drift given directly as a callable ``(t, x_batch, cloud) -> (m, d)`` values."""

    func: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    lip_const: float | None = None


DriftModel = Union[VlasovPairDrift, GeneralLipschitzDrift]


@dataclass(frozen=True)
class ConstantScalarDiffusion:
    """Diffusion sigma * Id with a single positive scalar sigma."""

    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValueError("sigma must be finite and >= 0")

    @property
    def sigma_minus(self) -> float:
        return self.sigma

    @property
    def sigma_plus(self) -> float:
        return self.sigma


@dataclass(frozen=True)
class StateDependentDiffusion:
    """Matrix diffusion ``(t, x_batch) -> (m, d, d)`` with declared ellipticity bounds."""

    func: Callable[[float, np.ndarray], np.ndarray]
    sigma_minus: float
    sigma_plus: float

    def __post_init__(self):
        if not (0.0 < self.sigma_minus <= self.sigma_plus):
            raise ValueError("ellipticity bounds must satisfy 0 < sigma_minus <= sigma_plus")


DiffusionModel = Union[ConstantScalarDiffusion, StateDependentDiffusion]


@dataclass(frozen=True)
class GaussianInitialLaw:
    """Product Gaussian initial law with diagonal covariance."""

    mean: tuple[float, ...]
    cov_diag: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(self.cov_diag) or len(self.mean) < 1:
            raise ValueError("mean and cov_diag must have matching length >= 1")
        if any(c <= 0 or not np.isfinite(c) for c in self.cov_diag):
            raise ValueError("Gaussian covariance entries must be positive")

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class PointMassInitialLaw:
    """All particles start at the same point."""

    x0: tuple[float, ...]

    def __post_init__(self):
        if len(self.x0) < 1 or not all(np.isfinite(v) for v in self.x0):
            raise ValueError("x0 must be a finite point")

    @property
    def dim(self) -> int:
        return len(self.x0)


@dataclass(frozen=True)
class EmpiricalFileInitialLaw:
    """Initial positions drawn i.i.d. (with replacement) from a .npy sample file."""

    path: str

    @property
    def dim(self) -> int:
        return self._load().shape[1]

    def _load(self) -> np.ndarray:
        arr = np.load(self.path)
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"{self.path}: expected a (n, d) sample array")
        return arr


InitialLaw = Union[GaussianInitialLaw, PointMassInitialLaw, EmpiricalFileInitialLaw]


def sample_initial(law: InitialLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. initial positions, shape (n, d)."""
    if n < 1:
        raise ValueError("need at least one particle")
    if isinstance(law, GaussianInitialLaw):
        mean = np.asarray(law.mean, dtype=float)
        std = np.sqrt(np.asarray(law.cov_diag, dtype=float))
        return mean[None, :] + std[None, :] * rng.standard_normal((n, len(mean)))
    if isinstance(law, PointMassInitialLaw):
        return np.tile(np.asarray(law.x0, dtype=float), (n, 1))
    if isinstance(law, EmpiricalFileInitialLaw):
        samples = law._load()
        idx = rng.integers(0, samples.shape[0], size=n)
        return samples[idx]
    raise TypeError(f"unknown initial law {type(law)!r}")


@dataclass
class TrajectoryEnsemble:
    """N particle paths on a uniform time grid; ``data`` has shape (N, n_steps+1, d)."""

    grid: TimeGrid
    data: np.ndarray
    rng_seed: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise ValueError("data must have shape (N, n_steps+1, d)")
        if self.data.shape[1] != self.grid.n_steps + 1:
            raise ValueError(
                f"data has {self.data.shape[1]} time slices, grid expects {self.grid.n_steps + 1}"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("trajectory data contains non-finite entries")

    @property
    def n_particles(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def increments(self) -> np.ndarray:
        """Per-step increments, shape (N, n_steps, d)."""
        return self.data[:, 1:, :] - self.data[:, :-1, :]


def write_mkv1(ens: TrajectoryEnsemble, path: str) -> None:
    """Write the binary trajectory format (magic MKV1, little-endian header, f64 payload)."""
    header = _MKV1_MAGIC + _MKV1_HEADER.pack(
        ens.d, ens.n_particles, ens.grid.n_steps, ens.grid.t_end, ens.rng_seed & 0xFFFFFFFFFFFFFFFF
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ens.data, dtype="<f8").tobytes())


def read_mkv1(path: str) -> TrajectoryEnsemble:
    """Read a trajectory file written by :func:`write_mkv1`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MKV1_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MKV1_MAGIC!r}")
        d, n, n_steps, t_end, seed = _MKV1_HEADER.unpack(fh.read(_MKV1_HEADER.size))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    expected = n * (n_steps + 1) * d
    if payload.size != expected:
        raise ValueError(f"{path}: payload has {payload.size} values, expected {expected}")
    data = payload.reshape(n, n_steps + 1, d).astype(float)
    return TrajectoryEnsemble(grid=TimeGrid(t_end=t_end, n_steps=n_steps), data=data, rng_seed=seed)


def evaluate_drift(model: DriftModel, t: float, x: np.ndarray, cloud: np.ndarray) -> np.ndarray:
    """Drift b(t, x, empirical measure of ``cloud``), returned as a (d,) vector.

    For the pairwise variant this is -grad_V(x) - mean_j grad_W(x - x_j); the
    general variant delegates to its callable.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.shape[0] == 0:
        raise ValueError("empty empirical measure")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != cloud.shape[1]:
        raise ValueError(f"point has dimension {x.shape[0]}, cloud has {cloud.shape[1]}")
    if isinstance(model, VlasovPairDrift):
        pair = np.asarray(model.grad_W(x[None, :] - cloud), dtype=float)
        out = -np.asarray(model.grad_V(x[None, :]), dtype=float)[0] - pair.mean(axis=0)
    elif isinstance(model, GeneralLipschitzDrift):
        out = np.asarray(model.func(t, x[None, :], cloud), dtype=float)[0]
    else:
        raise TypeError(f"unknown drift model {type(model)!r}")
    if not np.isfinite(out).all():
        raise RuntimeError("drift overflow")
    return out


@dataclass(frozen=True)
class PolynomialBump:
    """Compactly supported polynomial force profile on [-radius, radius].

    Evaluates ``polyval(coeffs, x)`` inside the support and 0 outside; used
    for interaction gradients where a closed polynomial form keeps the
    pairwise force loop compilable.
    """

    coeffs: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.radius
        vals = np.polynomial.polynomial.polyval(x, np.asarray(self.coeffs))
        return np.where(inside, vals, 0.0)


def quartic_bump_force(amplitude: float, radius: float) -> PolynomialBump:
    """Odd profile a*x*(1 - (x/r)^2)^2 on [-r, r]: gradient of a smooth well of width r."""
    r2 = radius * radius
    a = amplitude
    # a*x*(1 - x^2/r^2)^2 = a*x - 2a/r^2 * x^3 + a/r^4 * x^5
    coeffs = (0.0, a, 0.0, -2.0 * a / r2, 0.0, a / (r2 * r2))
    return PolynomialBump(coeffs=coeffs, radius=radius)


# ---------------------------------------------------------------------------
# Mean-field Ornstein-Uhlenbeck oracle (d=1, quadratic potentials)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanFieldOUParams:
    """Linear d=1 model with V(x) = theta x^2/2 and W(x) = lam x^2/2.

    The limit law stays Gaussian, so moments, density, drift and CDF are all
    closed form; used as ground truth in tests and benchmarks. The quadratic
    W is not compactly supported, so this model is rejected by the
    interaction estimator.
    """

    theta: float
    lam: float
    sigma: float
    m0: float
    v0: float

    def __post_init__(self):
        if self.theta < 0 or self.lam < 0:
            raise ValueError("rates theta, lam must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.v0 < 0:
            raise ValueError("initial variance must be >= 0")


def mfou_moments(params: MeanFieldOUParams, t: float) -> tuple[float, float]:
    """Mean and variance of the limit law at time t.

    Solves m' = -theta m and v' = -2(theta+lam) v + sigma^2 in closed form.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    m = params.m0 * math.exp(-params.theta * t)
    rate = params.theta + params.lam
    if rate == 0.0:
        v = params.v0 + params.sigma**2 * t
    else:
        decay = math.exp(-2.0 * rate * t)
        v = params.v0 * decay + params.sigma**2 * (1.0 - decay) / (2.0 * rate)
    return m, v


def mfou_drift_at(params: MeanFieldOUParams, t: float, x: float) -> float:
    """Ground-truth pointwise drift -theta x - lam (x - m_t)."""
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    m, _ = mfou_moments(params, t)
    return -params.theta * x - params.lam * (x - m)


def mfou_density_at(params: MeanFieldOUParams, t: float, x: float) -> float:
    """Limit density at (t, x); requires positive variance at time t."""
    m, v = mfou_moments(params, t)
    if v <= 0:
        raise ValueError("limit law is degenerate at this time")
    return float(norm.pdf(x, loc=m, scale=math.sqrt(v)))


def mfou_cdf(params: MeanFieldOUParams, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of the limit law at time t, for Wasserstein diagnostics."""
    m, v = mfou_moments(params, t)
    if v <= 0:
        raise ValueError("limit law is degenerate at this time")
    return norm(loc=m, scale=math.sqrt(v)).cdf


def mfou_drift_model(params: MeanFieldOUParams) -> GeneralLipschitzDrift:
    """Finite-N drift -theta x - lam (x - cloud mean), evaluated in O(N)."""

    def func(t, x, cloud):
        mean = cloud.mean(axis=0)
        return -params.theta * x - params.lam * (x - mean[None, :])

    return GeneralLipschitzDrift(func=func, lip_const=params.theta + 2.0 * params.lam)


def mfou_vlasov_model(params: MeanFieldOUParams) -> VlasovPairDrift:
    """Same dynamics written in pairwise form; grad_W is globally supported."""
    return VlasovPairDrift(
        grad_V=lambda x: params.theta * x,
        grad_W=lambda x: params.lam * x,
        support_radius=math.inf,
        lip_grad_V=params.theta,
        lip_grad_W=params.lam,
    )


def mfou_initial_law(params: MeanFieldOUParams) -> InitialLaw:
    if params.v0 == 0.0:
        return PointMassInitialLaw(x0=(params.m0,))
    return GaussianInitialLaw(mean=(params.m0,), cov_diag=(params.v0,))


# ---------------------------------------------------------------------------
# Sanity gates
# ---------------------------------------------------------------------------


def drift_lipschitz_quotient(
    model: DriftModel,
    rng: np.random.Generator,
    d: int,
    n_pairs: int = 200,
    cloud_size: int = 64,
    scale: float = 2.0,
    t: float = 0.0,
) -> float:
    """Largest sampled quotient |b(t,x,cloud)-b(t,x',cloud)| / |x-x'|."""
    cloud = scale * rng.standard_normal((cloud_size, d))
    worst = 0.0
    for _ in range(n_pairs):
        x = scale * rng.standard_normal(d)
        xp = scale * rng.standard_normal(d)
        gap = float(np.linalg.norm(x - xp))
        if gap < 1e-12:
            continue
        bx = evaluate_drift(model, t, x, cloud)
        bxp = evaluate_drift(model, t, xp, cloud)
        worst = max(worst, float(np.linalg.norm(bx - bxp)) / gap)
    return worst


def check_diffusion_ellipticity(
    diff: DiffusionModel,
    rng: np.random.Generator,
    d: int,
    n_points: int = 64,
    t_end: float = 1.0,
    scale: float = 2.0,
) -> None:
    """Raise if sampled eigenvalues of sigma sigma^T leave the declared band."""
    if isinstance(diff, ConstantScalarDiffusion):
        return
    xs = scale * rng.standard_normal((n_points, d))
    for t in np.linspace(0.0, t_end, 5):
        mats = np.asarray(diff.func(float(t), xs), dtype=float)
        if mats.shape != (n_points, d, d):
            raise ValueError(f"diffusion callable returned shape {mats.shape}, expected (m, d, d)")
        c = np.einsum("nij,nkj->nik", mats, mats)
        eigs = np.linalg.eigvalsh(c)
        if eigs.min() < diff.sigma_minus**2 * (1 - 1e-9) or eigs.max() > diff.sigma_plus**2 * (1 + 1e-9):
            raise ValueError(
                "diffusion violates declared ellipticity band "
                f"[{diff.sigma_minus**2}, {diff.sigma_plus**2}]: eigenvalues in "
                f"[{eigs.min()}, {eigs.max()}]"
            )
