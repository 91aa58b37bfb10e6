"""Command-line entry points: simulation, estimation and benchmark harness."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import load_config, serialize_config
from .density import density_gl
from .drift import drift_gl
from .experiments import (
    ExperimentConfig,
    config_from_mapping,
    config_to_mapping,
    density_report_record,
    drift_report_record,
    interaction_report_record,
    replicate_seed,
    run_bench_rates,
    run_check_concentration,
    run_full_pipeline,
    run_interaction_estimate,
    simulate_replicate,
    write_csv,
    write_ndjson,
)
from .gl import geometric_grid_1d, geometric_grid_2d
from .kernels import kernel_from_id
from .models import read_mkv1, write_mkv1
from .simulate import empirical_cloud


def _load_experiment(path: str) -> ExperimentConfig:
    return config_from_mapping(load_config(path))


def _emit(records: list[dict], out: str | None) -> None:
    if out:
        write_ndjson(out, records)
    else:
        for record in records:
            sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")


def _cmd_simulate(args) -> int:
    cfg = _load_experiment(args.config)
    n = args.n or cfg.n_schedule[0]
    ens = simulate_replicate(cfg, n, args.replicate)
    write_mkv1(ens, args.out)
    sys.stdout.write(
        json.dumps(
            {
                "kind": "simulate",
                "n": n,
                "replicate": args.replicate,
                "seed": replicate_seed(cfg.base_seed, n, args.replicate),
                "out": args.out,
            },
            sort_keys=True,
        )
        + "\n"
    )
    return 0


def _cmd_estimate_density(args) -> int:
    ens = read_mkv1(args.traj)
    kernel = kernel_from_id(args.kernel)
    grid = geometric_grid_1d(ens.n_particles, ens.d, ratio=args.grid_ratio)
    cloud = empirical_cloud(ens, args.t0)
    report = density_gl(
        cloud, np.array([args.x0] * ens.d), grid, kernel, args.varpi1, t0=args.t0
    )
    _emit([density_report_record(report, ens.n_particles)], args.out)
    return 0


def _cmd_estimate_drift(args) -> int:
    ens = read_mkv1(args.traj)
    time_id, space_id = (args.kernels.split(",") + [args.kernels])[:2]
    time_k = kernel_from_id(time_id)
    space_k = kernel_from_id(space_id)
    grid1 = geometric_grid_1d(ens.n_particles, ens.d, ratio=args.grid_ratio)
    grid2 = geometric_grid_2d(
        ens.n_particles, ens.d, ratio=args.grid_ratio, h1_max=args.h1_max,
        enforce_h1_cap=not args.allow_wide_h1,
    )
    report = drift_gl(
        ens, args.t0, np.array([args.x0] * ens.d), grid2, grid1, time_k, space_k,
        args.varpi1, args.varpi2, args.varpi3, allow_wide_h1=args.allow_wide_h1,
    )
    _emit([drift_report_record(report, ens.n_particles)], args.out)
    return 0


def _cmd_estimate_interaction(args) -> int:
    ens = read_mkv1(args.traj)
    if not args.weight.startswith("bump:"):
        raise SystemExit(f"unsupported weight spec {args.weight!r}; expected bump:LO,HI")
    lo, hi = (float(v) for v in args.weight[len("bump:"):].split(","))
    mapping = {
        "model.kind": "vlasov_bump",
        "sim.t_end": ens.grid.t_end,
        "sim.n_steps": ens.grid.n_steps,
        "n_schedule": [ens.n_particles],
        "interaction.weight_lo_frac": lo,
        "interaction.weight_hi_frac": hi,
        "interaction.box_half_width": args.box,
        "interaction.n_grid_points": args.grid,
        "interaction.varpi_scale": args.varpi_scale,
        "interaction.trunc_radius": args.trunc if args.trunc else args.box,
        "estimator.t0": 0.5 * (lo + hi) * ens.grid.t_end,
    }
    for name, value in (("h_mu", args.h_mu), ("h1", args.h1), ("h2", args.h2)):
        if value is not None:
            mapping[f"interaction.{name}"] = value
    cfg = config_from_mapping(mapping)
    run = run_interaction_estimate(ens, cfg)
    _emit([interaction_report_record(run, ens.n_particles)], args.out)
    if args.fields_csv:
        rows = [
            (x, run.report.grad_w_hat[i, 0], run.grad_v_hat[i, 0])
            for i, x in enumerate(run.grid.axis())
        ]
        write_csv(args.fields_csv, ("x", "grad_w_hat", "grad_v_hat"), rows)
    return 0


def _cmd_bench_rates(args) -> int:
    cfg = _load_experiment(args.config)
    if args.out_dir:
        cfg = config_from_mapping({**config_to_mapping(cfg), "out_dir": args.out_dir})
    result = run_bench_rates(cfg)
    summary = {
        "kind": "bench_summary",
        "ns": list(result.ns),
        "rmse_mu": [float(v) for v in result.rmse_mu],
        "rmse_b": [float(v) for v in result.rmse_b],
        "slope_mu": result.slope_mu,
        "slope_b": result.slope_b,
        "slope_w1": result.slope_w1,
        "target_mu": -result.target_mu,
        "target_b": -result.target_b,
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


def _cmd_check_concentration(args) -> int:
    cfg = _load_experiment(args.config)
    if args.out_dir:
        cfg = config_from_mapping({**config_to_mapping(cfg), "out_dir": args.out_dir})
    phis = tuple(args.phis.split(",")) if args.phis else ("bump", "bump_shifted", "tanh_window")
    result = run_check_concentration(cfg, phi_names=phis, rho=args.rho)
    for (name, n), env in sorted(result.envelopes.items()):
        sys.stdout.write(
            json.dumps(
                {
                    "kind": "concentration_summary",
                    "phi": name,
                    "n": n,
                    "kappa1": env.kappa1,
                    "kappa2": env.kappa2,
                    "envelope_valid": env.envelope_valid,
                    "variance": result.variances[(name, n)],
                },
                sort_keys=True,
            )
            + "\n"
        )
    return 0


def _cmd_full_pipeline(args) -> int:
    cfg = _load_experiment(args.config)
    outputs = run_full_pipeline(cfg, out_dir=args.out_dir)
    for record in outputs["records"]:
        sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    return 0


def _cmd_show_config(args) -> int:
    cfg = _load_experiment(args.config)
    sys.stdout.write(serialize_config(config_to_mapping(cfg)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mkvlab",
        description="Interacting-particle simulation and adaptive nonparametric estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an ensemble and write the MKV1 file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="particle count (default: first of schedule)")
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate-density", help="pointwise adaptive density estimate")
    p.add_argument("--traj", required=True)
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--grid", default="geometric", choices=["geometric"])
    p.add_argument("--grid-ratio", type=float, default=1.3)
    p.add_argument("--kernel", default="epa:2")
    p.add_argument("--varpi1", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_estimate_density)

    p = sub.add_parser("estimate-drift", help="pointwise adaptive drift estimate")
    p.add_argument("--traj", required=True)
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--grid2", default="geometric", choices=["geometric"])
    p.add_argument("--grid-ratio", type=float, default=1.3)
    p.add_argument("--kernels", default="epa:2,epa:2")
    p.add_argument("--h1-max", type=float, default=0.45)
    p.add_argument("--allow-wide-h1", action="store_true", default=True)
    p.add_argument("--varpi1", type=float, default=1.0)
    p.add_argument("--varpi2", type=float, default=1.0)
    p.add_argument("--varpi3", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_estimate_drift)

    p = sub.add_parser("estimate-interaction", help="spectral interaction-force estimate")
    p.add_argument("--traj", required=True)
    p.add_argument("--weight", default="bump:0.2,0.8")
    p.add_argument("--box", type=float, default=3.0)
    p.add_argument("--grid", type=int, default=65)
    p.add_argument("--varpi-scale", type=float, default=0.02)
    p.add_argument("--trunc", type=float, default=None)
    p.add_argument("--h-mu", type=float, default=None)
    p.add_argument("--h1", type=float, default=None)
    p.add_argument("--h2", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--fields-csv", default=None)
    p.set_defaults(func=_cmd_estimate_interaction)

    p = sub.add_parser("bench-rates", help="error-decay benchmark over the N schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_bench_rates)

    p = sub.add_parser("check-concentration", help="deviation envelope check")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--rho", default="delta", choices=["delta", "uniform"])
    p.add_argument("--phis", default=None)
    p.set_defaults(func=_cmd_check_concentration)

    p = sub.add_parser("full-pipeline", help="simulate then run every estimator")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_full_pipeline)

    p = sub.add_parser("show-config", help="print the canonical form of a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_show_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
