"""Experiment orchestration: replication over seeds and N, benchmarks, persistence.

Replicate seeds derive from the base seed through a documented 64-bit mix
(splitmix64 applied to base, then xor-folded with N and the replicate
index), so extending an N schedule never reshuffles existing replicates.
Runs are deterministic for a fixed config and seed, including under the
process-pool parallelism selected by the MKVLAB_WORKERS environment
variable, because replicates are independent and results are collected in
submission order. Reports carry no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .config import ConfigValue
from .density import density_at, density_gl, density_variance_term
from .diagnostics import TailEnvelope, fit_tail_envelope, rate_slope, w1_exact_1d
from .drift import drift_field, drift_gl, pi_hat_grid, pi_variance_term
from .gl import geometric_grid_1d, geometric_grid_2d, gl_select
from .interaction import (
    DriftFieldSeries,
    InteractionEstimateReport,
    SpatialGrid,
    bump_weight,
    centered_grid,
    contrast_weight,
    estimate_grad_v,
    estimate_grad_w,
    make_linear_form,
)
from .kernels import kernel_from_id, product_kernel
from .models import (
    ConstantScalarDiffusion,
    GaussianInitialLaw,
    MeanFieldOUParams,
    PointMassInitialLaw,
    TimeGrid,
    TrajectoryEnsemble,
    VlasovPairDrift,
    mfou_cdf,
    mfou_density_at,
    mfou_drift_at,
    mfou_drift_model,
    mfou_initial_law,
    quartic_bump_force,
    write_mkv1,
)
from .simulate import SimConfig, empirical_cloud, simulate_ensemble

_M64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer (public-domain constants)."""
    z = (x + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def replicate_seed(base_seed: int, n_particles: int, replicate: int) -> int:
    """64-bit replicate seed: chained splitmix64 over (base, N, replicate)."""
    s = splitmix64(base_seed & _M64)
    s = splitmix64(s ^ (n_particles & _M64))
    s = splitmix64(s ^ (replicate & _M64))
    return s


def worker_count() -> int:
    return max(1, int(os.environ.get("MKVLAB_WORKERS", "1")))


def _map_replicates(fn: Callable, payloads: list, workers: int | None = None) -> list:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads, chunksize=max(1, len(payloads) // (4 * workers))))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Registry entry for the simulated model; mfou carries closed-form oracles."""

    kind: str = "mfou"  # mfou | vlasov_bump
    theta: float = 1.0
    lam: float = 1.0
    sigma: float = 1.0
    m0: float = 1.0
    v0: float = 0.5
    bump_amplitude: float = 2.0
    bump_radius: float = 0.5


@dataclass(frozen=True)
class SimSpec:
    t_end: float = 1.5
    n_steps: int = 300
    force_eval: str = "naive_pairwise"
    cell_radius: float | None = None


@dataclass(frozen=True)
class EstimatorSpec:
    t0: float = 1.0
    x0: float = 0.0
    time_kernel: str = "epa:2"
    space_kernel: str = "epa:2"
    grid: str = "geometric"
    grid_ratio: float = 1.3
    h_max: float | None = None  # top of the density bandwidth grid
    h1_max: float = 0.45
    h2_max: float | None = None  # top of the space bandwidth grid
    allow_wide_h1: bool = True
    varpi1: float = 1.0
    varpi2: float = 1.0
    varpi3: float | None = None


@dataclass(frozen=True)
class InteractionSpec:
    weight_kind: str = "bump"  # bump | contrast
    weight_lo_frac: float = 0.2
    weight_hi_frac: float = 0.8
    box_half_width: float = 3.0
    n_grid_points: int = 65
    varpi_scale: float = 0.02  # threshold = varpi_scale * N^{-1/4}
    trunc_radius: float | None = None  # None: 2*support(grad W) + law spread
    h_mu: float | None = 0.25
    h1: float | None = 0.12
    h2: float | None = 0.2
    varpi_prime: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    n_schedule: tuple[int, ...] = (512, 1024, 2048)
    n_replicates: int = 20
    base_seed: int = 20_240_901
    out_dir: str | None = None


_SECTIONS = {
    "model": ModelSpec,
    "sim": SimSpec,
    "estimator": EstimatorSpec,
    "interaction": InteractionSpec,
}


def config_from_mapping(mapping: dict[str, ConfigValue]) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from dotted config keys."""
    sections = {name: {} for name in _SECTIONS}
    top: dict[str, ConfigValue] = {}
    known_fields = {
        name: {f.name for f in fields(cls)} for name, cls in _SECTIONS.items()
    }
    for key, value in mapping.items():
        if "." in key:
            section, _, name = key.partition(".")
            if section not in _SECTIONS:
                raise ValueError(f"unknown config section {section!r} in key {key!r}")
            if name not in known_fields[section]:
                raise ValueError(f"unknown config key {key!r}")
            sections[section][name] = value
        else:
            top[key] = value
    schedule = top.pop("n_schedule", None)
    kwargs = {}
    if schedule is not None:
        entries = schedule if isinstance(schedule, list) else [schedule]
        kwargs["n_schedule"] = tuple(int(v) for v in entries)
    for name in ("n_replicates", "base_seed"):
        if name in top:
            kwargs[name] = int(top.pop(name))
    if "out_dir" in top:
        kwargs["out_dir"] = str(top.pop("out_dir"))
    if top:
        raise ValueError(f"unknown config keys {sorted(top)}")
    cfg = ExperimentConfig(
        model=ModelSpec(**sections["model"]),
        sim=SimSpec(**sections["sim"]),
        estimator=EstimatorSpec(**sections["estimator"]),
        interaction=InteractionSpec(**sections["interaction"]),
        **kwargs,
    )
    validate_config(cfg)
    return cfg


def config_to_mapping(cfg: ExperimentConfig) -> dict[str, ConfigValue]:
    """Inverse of :func:`config_from_mapping`; drops keys whose value is None."""
    out: dict[str, ConfigValue] = {}
    for section, obj in (
        ("model", cfg.model),
        ("sim", cfg.sim),
        ("estimator", cfg.estimator),
        ("interaction", cfg.interaction),
    ):
        for key, value in asdict(obj).items():
            if value is not None:
                out[f"{section}.{key}"] = value
    out["n_schedule"] = list(cfg.n_schedule)
    out["n_replicates"] = cfg.n_replicates
    out["base_seed"] = cfg.base_seed
    if cfg.out_dir is not None:
        out["out_dir"] = cfg.out_dir
    return out


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.model.kind not in ("mfou", "vlasov_bump"):
        raise ValueError(f"unknown model kind {cfg.model.kind!r}")
    kernel_from_id(cfg.estimator.time_kernel)
    kernel_from_id(cfg.estimator.space_kernel)
    if cfg.estimator.grid != "geometric":
        raise ValueError(f"unknown grid builder {cfg.estimator.grid!r}")
    if not cfg.n_schedule or any(n < 2 for n in cfg.n_schedule):
        raise ValueError("n_schedule must list particle counts >= 2")
    if cfg.n_replicates < 1:
        raise ValueError("need at least one replicate")
    if not (0.0 < cfg.interaction.weight_lo_frac < cfg.interaction.weight_hi_frac < 1.0):
        raise ValueError("weight window must lie strictly inside (0, T)")
    if not (0.0 < cfg.estimator.t0 < cfg.sim.t_end):
        raise ValueError("t0 must be interior to the observation window")
    if cfg.sim.force_eval == "cell_list" and cfg.model.kind == "vlasov_bump":
        radius = cfg.sim.cell_radius
        if radius is not None and radius < cfg.model.bump_radius:
            raise ValueError("cell radius must cover the interaction support")


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelBundle:
    """Everything a replicate needs: dynamics plus whatever oracles exist."""

    drift: object
    diffusion: ConstantScalarDiffusion
    init: object
    mfou: MeanFieldOUParams | None
    grad_w_true: Callable | None
    grad_v_true: Callable | None
    interaction_support: float


def build_model(spec: ModelSpec) -> ModelBundle:
    if spec.kind == "mfou":
        params = MeanFieldOUParams(
            theta=spec.theta, lam=spec.lam, sigma=spec.sigma, m0=spec.m0, v0=spec.v0
        )
        return ModelBundle(
            drift=mfou_drift_model(params),
            diffusion=ConstantScalarDiffusion(spec.sigma),
            init=mfou_initial_law(params),
            mfou=params,
            grad_w_true=None,
            grad_v_true=None,
            interaction_support=math.inf,
        )
    if spec.kind == "vlasov_bump":
        bump = quartic_bump_force(amplitude=spec.bump_amplitude, radius=spec.bump_radius)
        slope = spec.theta

        def grad_v(x):
            return slope * np.asarray(x, dtype=float)

        drift = VlasovPairDrift(
            grad_V=grad_v, grad_W=bump, support_radius=spec.bump_radius,
            lip_grad_V=abs(slope),
        )
        init = (
            GaussianInitialLaw(mean=(spec.m0,), cov_diag=(spec.v0,))
            if spec.v0 > 0
            else PointMassInitialLaw(x0=(spec.m0,))
        )
        return ModelBundle(
            drift=drift,
            diffusion=ConstantScalarDiffusion(spec.sigma),
            init=init,
            mfou=None,
            grad_w_true=bump,
            grad_v_true=grad_v,
            interaction_support=spec.bump_radius,
        )
    raise ValueError(f"unknown model kind {spec.kind!r}")


def simulate_replicate(cfg: ExperimentConfig, n: int, rep: int) -> TrajectoryEnsemble:
    bundle = build_model(cfg.model)
    cell_radius = cfg.sim.cell_radius
    if cfg.sim.force_eval == "cell_list" and cell_radius is None:
        cell_radius = bundle.interaction_support
    sim = SimConfig(
        n_particles=n,
        grid=TimeGrid(t_end=cfg.sim.t_end, n_steps=cfg.sim.n_steps),
        seed=replicate_seed(cfg.base_seed, n, rep),
        force_eval=cfg.sim.force_eval,
        cell_radius=cell_radius,
    )
    return simulate_ensemble(bundle.drift, bundle.diffusion, bundle.init, sim)


def _estimation_grids(cfg: ExperimentConfig, n: int, d: int):
    est = cfg.estimator
    grid1 = geometric_grid_1d(n, d, ratio=est.grid_ratio, h_max=est.h_max)
    grid2 = geometric_grid_2d(
        n, d, ratio=est.grid_ratio, h1_max=est.h1_max, h2_max=est.h2_max,
        enforce_h1_cap=not est.allow_wide_h1,
    )
    return grid1, grid2


# ---------------------------------------------------------------------------
# Rate benchmark
# ---------------------------------------------------------------------------


def density_rate_exponent(order: int, d: int) -> float:
    """Minimax density exponent with smoothness capped by the kernel order."""
    return order / (2.0 * order + d)


def drift_rate_exponent(order: int, d: int) -> float:
    """Minimax drift exponent: effective smoothness capped at order/d."""
    ld = order / d
    return ld / (2.0 * ld + 1.0)


def _bench_one(payload) -> dict:
    mapping, n, rep = payload
    cfg = config_from_mapping(mapping)
    est = cfg.estimator
    ens = simulate_replicate(cfg, n, rep)
    seed = replicate_seed(cfg.base_seed, n, rep)
    try:
        params = build_model(cfg.model).mfou
        grid1, grid2 = _estimation_grids(cfg, n, ens.d)
        time_k = kernel_from_id(est.time_kernel)
        space_k = kernel_from_id(est.space_kernel)
        x0 = np.array([est.x0])
        mu_report = density_gl(
            empirical_cloud(ens, est.t0), x0, grid1, space_k, est.varpi1, t0=est.t0
        )
        b_report = drift_gl(
            ens, est.t0, x0, grid2, grid1, time_k, space_k,
            est.varpi1, est.varpi2, est.varpi3, allow_wide_h1=est.allow_wide_h1,
        )
        mu_true = mfou_density_at(params, est.t0, est.x0)
        b_true = mfou_drift_at(params, est.t0, est.x0)
        final = np.sort(ens.data[:, -1, 0])
        w1 = w1_exact_1d(final, mfou_cdf(params, ens.grid.t_end))
    except Exception as exc:
        raise RuntimeError(f"replicate {rep} failed for N={n} (seed {seed}): {exc}") from exc
    return {
        "kind": "bench",
        "n": n,
        "replicate": rep,
        "seed": seed,
        "mu_hat": mu_report.value,
        "mu_true": mu_true,
        "mu_chosen_h": mu_report.chosen_h,
        "b_hat": b_report.b_hat[0],
        "b_true": b_true,
        "b_chosen_h1": b_report.chosen_h1,
        "b_chosen_h2": b_report.chosen_h2,
        "w1_final": w1,
    }


@dataclass(frozen=True)
class BenchRatesResult:
    records: list[dict]
    ns: tuple[int, ...]
    rmse_mu: np.ndarray
    rmse_b: np.ndarray
    w1_median: np.ndarray
    slope_mu: float
    stderr_mu: float
    slope_b: float
    stderr_b: float
    slope_w1: float
    stderr_w1: float
    target_mu: float
    target_b: float


def run_bench_rates(cfg: ExperimentConfig, workers: int | None = None) -> BenchRatesResult:
    """Pointwise error decay of both adaptive estimators over the N schedule."""
    if cfg.model.kind != "mfou":
        raise ValueError("rate benchmarks need the closed-form oracle model 'mfou'")
    if len(set(cfg.n_schedule)) < 3:
        raise ValueError("need >=3 distinct N")
    mapping = config_to_mapping(cfg)
    payloads = [(mapping, n, rep) for n in cfg.n_schedule for rep in range(cfg.n_replicates)]
    records = _map_replicates(_bench_one, payloads, workers)
    ns = tuple(cfg.n_schedule)
    rmse_mu, rmse_b, w1_med = [], [], []
    for n in ns:
        rows = [r for r in records if r["n"] == n]
        rmse_mu.append(math.sqrt(np.mean([(r["mu_hat"] - r["mu_true"]) ** 2 for r in rows])))
        rmse_b.append(math.sqrt(np.mean([(r["b_hat"] - r["b_true"]) ** 2 for r in rows])))
        w1_med.append(float(np.median([r["w1_final"] for r in rows])))
    slope_mu, stderr_mu = rate_slope(np.array(ns), np.array(rmse_mu))
    slope_b, stderr_b = rate_slope(np.array(ns), np.array(rmse_b))
    slope_w1, stderr_w1 = rate_slope(np.array(ns), np.array(w1_med))
    order = kernel_from_id(cfg.estimator.space_kernel).order
    result = BenchRatesResult(
        records=records,
        ns=ns,
        rmse_mu=np.array(rmse_mu),
        rmse_b=np.array(rmse_b),
        w1_median=np.array(w1_med),
        slope_mu=slope_mu,
        stderr_mu=stderr_mu,
        slope_b=slope_b,
        stderr_b=stderr_b,
        slope_w1=slope_w1,
        stderr_w1=stderr_w1,
        target_mu=density_rate_exponent(order, 1),
        target_b=drift_rate_exponent(order, 1),
    )
    if cfg.out_dir:
        write_ndjson(os.path.join(cfg.out_dir, "bench_rates.ndjson"), records)
        rows = [
            (n, rmse_mu[i], rmse_b[i], w1_med[i]) for i, n in enumerate(ns)
        ]
        write_csv(
            os.path.join(cfg.out_dir, "bench_rates.csv"),
            ("n", "rmse_mu", "rmse_b", "w1_median"),
            rows,
        )
    return result


# ---------------------------------------------------------------------------
# Oracle-ratio benchmark
# ---------------------------------------------------------------------------


def _oracle_ratio_one(payload) -> dict:
    mapping, n, rep = payload
    cfg = config_from_mapping(mapping)
    est = cfg.estimator
    seed = replicate_seed(cfg.base_seed, n, rep)
    try:
        params = build_model(cfg.model).mfou
        ens = simulate_replicate(cfg, n, rep)
        grid1, grid2 = _estimation_grids(cfg, n, ens.d)
        time_k = kernel_from_id(est.time_kernel)
        space_k = kernel_from_id(est.space_kernel)
        hk = product_kernel(time_k, space_k)
        x0 = np.array([est.x0])
        cloud = empirical_cloud(ens, est.t0)

        mu_true = mfou_density_at(params, est.t0, est.x0)
        b_true = mfou_drift_at(params, est.t0, est.x0)
        mu_ests = np.array([density_at(cloud, x0, h, space_k) for (h,) in grid1.entries])
        mu_vars = np.array(
            [density_variance_term(n, h, space_k, est.varpi1) for (h,) in grid1.entries]
        )
        mu_diag = gl_select(grid1, mu_ests, mu_vars)
        mu_gl_err = (float(mu_diag.chosen_estimate) - mu_true) ** 2

        pi_ests = pi_hat_grid(ens, est.t0, x0, grid2.entries, time_k, space_k)[:, 0]
        pi_vars = np.array(
            [pi_variance_term(n, h1, h2, hk, est.varpi2) for h1, h2 in grid2.entries]
        )
        pi_diag = gl_select(grid2, pi_ests, pi_vars)
        varpi3 = est.varpi3
        if varpi3 is None:
            h_pilot = max(h for (h,) in grid1.entries)
            varpi3 = 0.25 * max(density_at(cloud, x0, h_pilot, space_k), 0.0)
        b_gl = float(pi_diag.chosen_estimate) / max(float(mu_diag.chosen_estimate), varpi3)
        b_gl_err = (b_gl - b_true) ** 2
        quotients = pi_ests[None, :] / np.maximum(mu_ests[:, None], varpi3)
        b_errs_sq = (quotients - b_true) ** 2
    except Exception as exc:
        raise RuntimeError(f"replicate {rep} failed for N={n} (seed {seed}): {exc}") from exc
    return {
        "kind": "oracle_ratio",
        "n": n,
        "replicate": rep,
        "seed": seed,
        "mu_gl_err": mu_gl_err,
        "b_gl_err": b_gl_err,
        "mu_errs_sq": [float(v) for v in (mu_ests - mu_true) ** 2],
        "b_errs_sq": [float(v) for v in b_errs_sq.reshape(-1)],
    }


@dataclass(frozen=True)
class OracleRatioResult:
    """Selected-estimator squared errors against the best fixed-bandwidth risk.

    The denominator is the smallest per-bandwidth empirical risk (squared
    error averaged over replicates, bandwidths held fixed); the per-replicate
    realized minimum is degenerate, since with many bandwidths some estimate
    crosses the truth in almost every replicate.
    """

    records: list[dict]
    best_risk_mu: float
    best_risk_b: float
    median_ratio_mu: float
    median_ratio_b: float


def run_oracle_ratio(
    cfg: ExperimentConfig, n: int, workers: int | None = None
) -> OracleRatioResult:
    """Median GL squared error over the best fixed-bandwidth risk in the grid."""
    if cfg.model.kind != "mfou":
        raise ValueError("oracle ratios need the closed-form oracle model 'mfou'")
    mapping = config_to_mapping(cfg)
    payloads = [(mapping, n, rep) for rep in range(cfg.n_replicates)]
    records = _map_replicates(_oracle_ratio_one, payloads, workers)
    best_risk_mu = float(np.mean([r["mu_errs_sq"] for r in records], axis=0).min())
    best_risk_b = float(np.mean([r["b_errs_sq"] for r in records], axis=0).min())
    result = OracleRatioResult(
        records=records,
        best_risk_mu=best_risk_mu,
        best_risk_b=best_risk_b,
        median_ratio_mu=float(np.median([r["mu_gl_err"] for r in records]) / best_risk_mu),
        median_ratio_b=float(np.median([r["b_gl_err"] for r in records]) / best_risk_b),
    )
    if cfg.out_dir:
        write_ndjson(os.path.join(cfg.out_dir, "oracle_ratio.ndjson"), records)
    return result


# ---------------------------------------------------------------------------
# Concentration checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiSpec:
    """Bounded test function of space with known sup norm."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    sup_norm: float


def _smooth_bump(center: float, width: float) -> Callable[[np.ndarray], np.ndarray]:
    def phi(x):
        u = (np.asarray(x, dtype=float) - center) / width
        return np.where(np.abs(u) < 1.0, (1.0 - u**2) ** 2, 0.0)

    return phi


PHI_REGISTRY = {
    "bump": PhiSpec("bump", _smooth_bump(0.0, 2.0), 1.0),
    "bump_shifted": PhiSpec("bump_shifted", _smooth_bump(0.5, 1.5), 1.0),
    "tanh_window": PhiSpec(
        "tanh_window", lambda x: np.tanh(np.asarray(x, dtype=float)), 1.0
    ),
}

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)


def _oracle_phi_moments(params: MeanFieldOUParams, t: float, phi: PhiSpec) -> tuple[float, float]:
    """E[phi(X_t)] and E[phi(X_t)^2] under the limit law, by Gauss-Hermite."""
    from .models import mfou_moments

    m, v = mfou_moments(params, t)
    xs = m + math.sqrt(v) * _GH_NODES
    vals = phi.func(xs)
    w = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)
    return float(np.dot(w, vals)), float(np.dot(w, vals**2))


def _concentration_one(payload) -> dict:
    mapping, n, rep, phi_names, rho = payload
    cfg = config_from_mapping(mapping)
    seed = replicate_seed(cfg.base_seed, n, rep)
    try:
        ens = simulate_replicate(cfg, n, rep)
        out = {"kind": "concentration", "n": n, "replicate": rep, "seed": seed}
        for name in phi_names:
            phi = PHI_REGISTRY[name]
            if rho == "delta":
                samples = empirical_cloud(ens, cfg.estimator.t0)[:, 0]
                out[f"emp_{name}"] = float(np.mean(phi.func(samples)))
            else:  # uniform over the observation grid
                out[f"emp_{name}"] = float(np.mean(phi.func(ens.data[:, :, 0])))
    except Exception as exc:
        raise RuntimeError(f"replicate {rep} failed for N={n} (seed {seed}): {exc}") from exc
    return out


@dataclass(frozen=True)
class ConcentrationResult:
    records: list[dict]
    envelopes: dict  # (phi_name, n) -> TailEnvelope
    variances: dict  # (phi_name, n) -> float
    deviations: dict  # (phi_name, n) -> np.ndarray


def run_check_concentration(
    cfg: ExperimentConfig,
    phi_names: tuple[str, ...] = ("bump", "bump_shifted", "tanh_window"),
    rho: str = "delta",
    workers: int | None = None,
) -> ConcentrationResult:
    """Replicate deviations of (time-weighted) empirical integrals with envelopes.

    ``rho='delta'`` evaluates at the single time t0; ``rho='uniform'``
    averages uniformly over the observation grid. Both the target integral
    and the squared-norm proxy are quadratures under the closed-form law.
    """
    if cfg.model.kind != "mfou":
        raise ValueError("concentration checks need the closed-form oracle model 'mfou'")
    if rho not in ("delta", "uniform"):
        raise ValueError("rho must be 'delta' or 'uniform'")
    for name in phi_names:
        if name not in PHI_REGISTRY:
            raise ValueError(f"unknown test function {name!r}; pick from {sorted(PHI_REGISTRY)}")
    mapping = config_to_mapping(cfg)
    records = []
    for n in cfg.n_schedule:
        payloads = [(mapping, n, rep, tuple(phi_names), rho) for rep in range(cfg.n_replicates)]
        records.extend(_map_replicates(_concentration_one, payloads, workers))
    params = build_model(cfg.model).mfou
    if rho == "delta":
        rho_times = [cfg.estimator.t0]
    else:
        rho_times = list(TimeGrid(t_end=cfg.sim.t_end, n_steps=cfg.sim.n_steps).times())
    envelopes, variances, deviations = {}, {}, {}
    for name in phi_names:
        phi = PHI_REGISTRY[name]
        moments = [_oracle_phi_moments(params, t, phi) for t in rho_times]
        mean_true = float(np.mean([m for m, _ in moments]))
        v = float(np.mean([s for _, s in moments]))  # |phi|^2 under the weighted law
        for n in cfg.n_schedule:
            devs = np.array([r[f"emp_{name}"] - mean_true for r in records if r["n"] == n])
            envelopes[(name, n)] = fit_tail_envelope(devs, v=v, m=phi.sup_norm, n=n)
            variances[(name, n)] = float(devs.var())
            deviations[(name, n)] = devs
    result = ConcentrationResult(
        records=records, envelopes=envelopes, variances=variances, deviations=deviations
    )
    if cfg.out_dir:
        write_ndjson(os.path.join(cfg.out_dir, "concentration.ndjson"), records)
        rows = [
            (name, n, variances[(name, n)], env.kappa1, env.kappa2, env.envelope_valid)
            for (name, n), env in sorted(envelopes.items())
        ]
        write_csv(
            os.path.join(cfg.out_dir, "concentration.csv"),
            ("phi", "n", "variance", "kappa1", "kappa2", "envelope_valid"),
            rows,
        )
    return result


# ---------------------------------------------------------------------------
# Interaction pipeline
# ---------------------------------------------------------------------------


def default_trunc_radius(spec: ModelSpec) -> float:
    """Twice the interaction support plus a crude spread of the population law."""
    spread = abs(spec.m0) + 2.0 * math.sqrt(
        spec.v0 + spec.sigma**2 / (2.0 * max(spec.theta, 1e-6))
    )
    return 2.0 * spec.bump_radius + spread


@dataclass(frozen=True)
class InteractionRunResult:
    report: InteractionEstimateReport
    grad_v_hat: np.ndarray
    grid: SpatialGrid
    b_series: DriftFieldSeries
    mu_field: np.ndarray
    varpi: float


def run_interaction_estimate(
    ens: TrajectoryEnsemble, cfg: ExperimentConfig
) -> InteractionRunResult:
    """Drift-field construction, spectral quotient and confinement plug-in."""
    if cfg.model.kind != "vlasov_bump":
        raise ValueError(
            "interaction estimation requires a compactly supported pairwise model "
            "(model.kind = vlasov_bump)"
        )
    icfg = cfg.interaction
    est = cfg.estimator
    t_end = ens.grid.t_end
    times = ens.grid.times()
    builder = {"bump": bump_weight, "contrast": contrast_weight}[icfg.weight_kind]
    form = make_linear_form(
        times, builder(icfg.weight_lo_frac * t_end, icfg.weight_hi_frac * t_end),
        t_end=t_end,
    )
    grid = centered_grid(icfg.box_half_width, icfg.n_grid_points, dim=ens.d)
    time_k = kernel_from_id(est.time_kernel)
    space_k = kernel_from_id(est.space_kernel)

    h_mu, h1, h2 = icfg.h_mu, icfg.h1, icfg.h2
    if h_mu is None or h1 is None or h2 is None:
        t_center = 0.5 * (icfg.weight_lo_frac + icfg.weight_hi_frac) * t_end
        grid1, grid2 = _estimation_grids(cfg, ens.n_particles, ens.d)
        pilot = drift_gl(
            ens, t_center, np.zeros(ens.d), grid2, grid1, time_k, space_k,
            est.varpi1, est.varpi2, est.varpi3, allow_wide_h1=est.allow_wide_h1,
        )
        h_mu = pilot.chosen_density_h if h_mu is None else h_mu
        h1 = pilot.chosen_h1 if h1 is None else h1
        h2 = pilot.chosen_h2 if h2 is None else h2

    field_times = times[form.weights != 0.0]
    b, _pi, mu = drift_field(
        ens, field_times, grid.points(), h_mu, h1, h2, time_k, space_k, icfg.varpi_prime
    )
    shape = (field_times.size,) + grid.shape + (ens.d,)
    trunc = icfg.trunc_radius
    if trunc is None:
        trunc = default_trunc_radius(cfg.model)
    series = DriftFieldSeries(
        times=field_times, grid=grid, values=b.reshape(shape),
        varpi_prime=icfg.varpi_prime, truncation_radius=trunc,
    )
    varpi = icfg.varpi_scale * ens.n_particles ** (-0.25)
    report = estimate_grad_w(ens, series, form, varpi)
    mid = field_times.size // 2
    grad_v_hat = estimate_grad_v(
        series.values[mid], report.grad_w_hat, mu[mid].reshape(grid.shape), grid
    )
    return InteractionRunResult(
        report=report, grad_v_hat=grad_v_hat, grid=grid, b_series=series,
        mu_field=mu, varpi=varpi,
    )


def _interaction_error_one(payload) -> dict:
    mapping, n, rep = payload
    cfg = config_from_mapping(mapping)
    seed = replicate_seed(cfg.base_seed, n, rep)
    try:
        ens = simulate_replicate(cfg, n, rep)
        run = run_interaction_estimate(ens, cfg)
        bundle = build_model(cfg.model)
        truth = bundle.grad_w_true(run.grid.axis())
        err = run.report.grad_w_hat[:, 0] - truth
        err_sq = float((err**2).sum() * run.grid.cell_volume)
        truth_sq = float((truth**2).sum() * run.grid.cell_volume)
    except Exception as exc:
        raise RuntimeError(f"replicate {rep} failed for N={n} (seed {seed}): {exc}") from exc
    return {
        "kind": "interaction",
        "n": n,
        "replicate": rep,
        "seed": seed,
        "err_l2_sq": err_sq,
        "recovered_l2_sq": run.report.l2_norm_sq,
        "truth_l2_sq": truth_sq,
        "kept_fraction": run.report.kept_fraction,
        "varpi": run.varpi,
    }


@dataclass(frozen=True)
class InteractionConsistencyResult:
    records: list[dict]
    ns: tuple[int, ...]
    mean_err: np.ndarray
    stderr_err: np.ndarray
    mean_recovered: np.ndarray


def run_interaction_consistency(
    cfg: ExperimentConfig, workers: int | None = None
) -> InteractionConsistencyResult:
    """Replicated squared-L2 interaction error across the N schedule."""
    mapping = config_to_mapping(cfg)
    payloads = [(mapping, n, rep) for n in cfg.n_schedule for rep in range(cfg.n_replicates)]
    records = _map_replicates(_interaction_error_one, payloads, workers)
    ns = tuple(cfg.n_schedule)
    mean_err, stderr_err, mean_rec = [], [], []
    for n in ns:
        errs = np.array([r["err_l2_sq"] for r in records if r["n"] == n])
        mean_err.append(errs.mean())
        stderr_err.append(errs.std(ddof=1) / math.sqrt(errs.size) if errs.size > 1 else 0.0)
        mean_rec.append(np.mean([r["recovered_l2_sq"] for r in records if r["n"] == n]))
    result = InteractionConsistencyResult(
        records=records,
        ns=ns,
        mean_err=np.array(mean_err),
        stderr_err=np.array(stderr_err),
        mean_recovered=np.array(mean_rec),
    )
    if cfg.out_dir:
        write_ndjson(os.path.join(cfg.out_dir, "interaction.ndjson"), records)
        write_csv(
            os.path.join(cfg.out_dir, "interaction.csv"),
            ("n", "mean_err_l2_sq", "stderr", "mean_recovered_l2_sq"),
            [(n, mean_err[i], stderr_err[i], mean_rec[i]) for i, n in enumerate(ns)],
        )
    return result


# ---------------------------------------------------------------------------
# Full pipeline and persistence
# ---------------------------------------------------------------------------


def run_full_pipeline(cfg: ExperimentConfig, out_dir: str | None = None) -> dict:
    """Simulate, estimate density and drift, and (for pairwise models) the interaction."""
    out_dir = out_dir or cfg.out_dir
    n = cfg.n_schedule[0]
    est = cfg.estimator
    ens = simulate_replicate(cfg, n, 0)
    records = []
    grid1, grid2 = _estimation_grids(cfg, n, ens.d)
    time_k = kernel_from_id(est.time_kernel)
    space_k = kernel_from_id(est.space_kernel)
    x0 = np.array([est.x0])
    mu_report = density_gl(
        empirical_cloud(ens, est.t0), x0, grid1, space_k, est.varpi1, t0=est.t0
    )
    records.append(density_report_record(mu_report, n))
    b_report = drift_gl(
        ens, est.t0, x0, grid2, grid1, time_k, space_k,
        est.varpi1, est.varpi2, est.varpi3, allow_wide_h1=est.allow_wide_h1,
    )
    records.append(drift_report_record(b_report, n))
    interaction_run = None
    if cfg.model.kind == "vlasov_bump":
        interaction_run = run_interaction_estimate(ens, cfg)
        records.append(interaction_report_record(interaction_run, n))
    outputs = {"records": records, "ensemble": ens, "interaction": interaction_run}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_mkv1(ens, os.path.join(out_dir, "trajectory.mkv"))
        write_ndjson(os.path.join(out_dir, "reports.ndjson"), records)
        if interaction_run is not None:
            rows = [
                (x, interaction_run.report.grad_w_hat[i, 0], interaction_run.grad_v_hat[i, 0])
                for i, x in enumerate(interaction_run.grid.axis())
            ]
            write_csv(
                os.path.join(out_dir, "interaction_fields.csv"),
                ("x", "grad_w_hat", "grad_v_hat"),
                rows,
            )
        outputs["out_dir"] = out_dir
    return outputs


def density_report_record(report, n: int) -> dict:
    return {
        "kind": "density",
        "n": n,
        "t0": report.t0,
        "x0": list(report.x0),
        "value": report.value,
        "chosen_h": report.chosen_h,
        "varpi1": report.varpi1,
        "grid": [list(e) for e in report.diagnostics.entries],
        "a_terms": [float(a) for a in report.diagnostics.a_terms],
        "v_terms": [float(v) for v in report.diagnostics.v_terms],
    }


def drift_report_record(report, n: int) -> dict:
    return {
        "kind": "drift",
        "n": n,
        "t0": report.t0,
        "x0": list(report.x0),
        "b_hat": list(report.b_hat),
        "pi_hat": list(report.pi_hat),
        "mu_hat": report.mu_hat,
        "chosen_h1": report.chosen_h1,
        "chosen_h2": report.chosen_h2,
        "chosen_density_h": report.chosen_density_h,
        "varpi2": report.varpi2,
        "varpi3": report.varpi3,
    }


def interaction_report_record(run: InteractionRunResult, n: int) -> dict:
    return {
        "kind": "interaction",
        "n": n,
        "varpi": run.varpi,
        "truncation_radius": run.report.truncation_radius,
        "kept_fraction": run.report.kept_fraction,
        "recovered_l2_sq": run.report.l2_norm_sq,
        "n_grid_points": run.grid.n_points,
        "grid_spacing": run.grid.spacing,
    }


def write_ndjson(path: str, records: list[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_csv(path: str, header: tuple, rows: list) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
