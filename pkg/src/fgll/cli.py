"""Command-line front end.

Subcommands: simulate, fgsi, estimate, localize, evaluate, benchmark.
Exit codes: 0 success, 1 input error, 2 numerical failure. All output
files are written atomically (temp file + rename) so interrupted runs
never leave partial artifacts.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .benchmark import (
    BenchmarkSettings,
    metric_csv,
    report_csv,
    report_json,
    run_benchmark,
    timing_json,
)
from .errors import InputError, NumericalError, ValidationError, WindowMismatch
from .fgsi import Interpolator
from .hydraulics import Scenario, diurnal_pattern, sample_sensors, simulate_scenario, states_csv
from .ingest import (
    MeasurementSet,
    RunConfig,
    load_config,
    parse_inp,
    parse_measurements,
    parse_network_json,
)
from .network import Network, SensorLayout, build_network, sensor_layout, struct_matrices
from .pipeline import estimate_leak_free, evaluate, layout_from_measurements, localize


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as InputError (exit code 1)."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}\n{self.format_usage()}")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_network(path: str) -> Network:
    text = _read(path)
    spec = (
        parse_network_json(text)
        if text.lstrip().startswith("{")
        else parse_inp(text)
    )
    net = build_network(spec)
    net.spec = spec  # keep the raw record for sensor defaults
    return net


def _load_run_config(args) -> RunConfig:
    cfg = load_config(_read(args.config)) if args.config else RunConfig()
    return cfg.with_overrides(
        rng_seed=args.seed,
        mu_L=getattr(args, "mu_l", None),
        window_T=getattr(args, "window", None),
    )


def _split_ids(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def _resolve_layout(net: Network, args, default_all: bool = False) -> SensorLayout:
    pressure = _split_ids(getattr(args, "pressure_sensors", None))
    demand = _split_ids(getattr(args, "demand_sensors", None))
    spec = getattr(net, "spec", None)
    if pressure is None and spec is not None and spec.pressure_sensors:
        pressure = list(spec.pressure_sensors)
    if demand is None and spec is not None and spec.demand_sensors:
        demand = list(spec.demand_sensors)
    if pressure is None:
        if not default_all:
            raise InputError(
                "no sensor layout: pass --pressure-sensors/--demand-sensors or "
                "add a 'sensors' block to the network JSON"
            )
        pressure = list(net.node_ids)
        demand = list(net.node_ids)
    return sensor_layout(net, pressure, demand or [])


def _add_common(p: argparse.ArgumentParser, *, measurements=False, leakfree=False):
    p.add_argument("--network", required=True, help="network JSON or INP file")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured RNG seed")
    p.add_argument("--mu-l", type=float, dest="mu_l", help="interpolation weight")
    p.add_argument("--window", type=int, help="time-window length override")
    if measurements:
        p.add_argument("--measurements", required=True, help="measurement CSV")
    if leakfree:
        p.add_argument("--leakfree", required=True, help="leak-free measurement CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgll", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario and sample sensors")
    _add_common(p)
    p.add_argument("--leak-node", help="junction id receiving the extra leak demand")
    p.add_argument(
        "--leak-size", type=float, default=0.5,
        help="leak size in the configured flow unit (default 0.5 l/s)",
    )
    p.add_argument("--roughness-noise", type=float, default=0.0)
    p.add_argument("--diameter-noise", type=float, default=0.0)
    p.add_argument("--demand-noise", type=float, default=0.0)
    p.add_argument("--pattern-amplitude", type=float, default=0.25)
    p.add_argument("--pressure-sensors", help="comma-separated node ids")
    p.add_argument("--demand-sensors", help="comma-separated node ids")

    p = sub.add_parser("fgsi", help="closed-form head interpolation per instant")
    _add_common(p, measurements=True)

    p = sub.add_parser("estimate", help="factor-graph state estimation")
    _add_common(p, measurements=True)

    p = sub.add_parser("localize", help="two-stage leak localization")
    _add_common(p, measurements=True, leakfree=True)

    p = sub.add_parser("evaluate", help="localization plus distance metrics")
    _add_common(p, measurements=True, leakfree=True)
    p.add_argument("--leak-node", required=True, help="true leak junction id")

    p = sub.add_parser("benchmark", help="seeded multi-scenario comparison")
    _add_common(p)
    p.add_argument("--scenarios", type=int, default=9)
    p.add_argument("--leak-size", type=float, default=0.5,
                   help="leak size in the configured flow unit")
    p.add_argument("--roughness-noise", type=float, default=0.0)
    p.add_argument("--diameter-noise", type=float, default=0.0)
    p.add_argument("--demand-noise", type=float, default=0.0)
    p.add_argument("--pattern-amplitude", type=float, default=0.25)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--pressure-sensors", help="comma-separated node ids")
    p.add_argument("--demand-sensors", help="comma-separated node ids")
    return parser


def _cmd_simulate(args) -> int:
    net = _load_network(args.network)
    cfg = _load_run_config(args)
    layout = _resolve_layout(net, args, default_all=True)
    T = cfg.window_T
    base = net.base_demands()[net.junction_indices]
    demands = diurnal_pattern(T, amplitude=args.pattern_amplitude)[:, None] * base
    leak_node = net.node_index(args.leak_node) if args.leak_node else None
    scenario = Scenario(
        demands=demands,
        leak_node=leak_node,
        leak_sizes=(
            np.full(T, args.leak_size * cfg.flow_scale) if leak_node is not None else None
        ),
        roughness_noise=args.roughness_noise,
        diameter_noise=args.diameter_noise,
        demand_noise=args.demand_noise,
        seed=cfg.rng_seed,
    )
    states, sim_net = simulate_scenario(net, scenario)
    meas = sample_sensors(sim_net, states, layout)
    out = Path(args.out)
    _atomic_write(out / "states.csv", states_csv(sim_net, states, cfg.flow_scale))
    _atomic_write(out / "measurements.csv", meas.to_csv(cfg.flow_scale))
    print(f"wrote {out / 'states.csv'} and {out / 'measurements.csv'}")
    return 0


def _measurement_csv(nodes, values, kind, flow_scale=1.0) -> str:
    lines = ["t,node_id,kind,value"]
    for t in range(values.shape[0]):
        for j, node in enumerate(nodes):
            lines.append(f"{t},{node},{kind},{float(values[t, j] / flow_scale)!r}")
    return "\n".join(lines) + "\n"


def _cmd_fgsi(args) -> int:
    net = _load_network(args.network)
    cfg = _load_run_config(args)
    meas = parse_measurements(_read(args.measurements), cfg, net)
    layout = layout_from_measurements(net, meas)
    interp = Interpolator(struct_matrices(net), layout, cfg.mu_L)
    h_hat = interp.interpolate(meas.h_s)
    out = Path(args.out)
    _atomic_write(
        out / "interpolated.csv",
        _measurement_csv(net.node_ids, h_hat, "pressure"),
    )
    print(f"wrote {out / 'interpolated.csv'}")
    return 0


def _cmd_estimate(args) -> int:
    net = _load_network(args.network)
    cfg = _load_run_config(args)
    meas = parse_measurements(_read(args.measurements), cfg, net)
    layout = layout_from_measurements(net, meas)
    result = estimate_leak_free(net, layout, meas, cfg)
    out = Path(args.out)
    # output instant k corresponds to input instant k+1 (instant 0 is the prior)
    _atomic_write(
        out / "estimated_heads.csv",
        _measurement_csv(net.node_ids, result.h, "pressure"),
    )
    _atomic_write(
        out / "estimated_demands.csv",
        _measurement_csv(net.node_ids, result.d, "demand", cfg.flow_scale),
    )
    _atomic_write(
        out / "estimate.json",
        json.dumps(
            {"iterations": result.iterations, "cost": result.cost,
             "instants": list(result.instants)},
            indent=2, sort_keys=True,
        ) + "\n",
    )
    print(f"wrote estimates for {len(result.instants)} instants to {out}")
    return 0


def _localization(args, net, cfg):
    leak_meas = parse_measurements(_read(args.measurements), cfg, net)
    free_meas = parse_measurements(_read(args.leakfree), cfg, net)
    if leak_meas.T != free_meas.T:
        raise WindowMismatch(
            f"leak window has {leak_meas.T} instants, leak-free has {free_meas.T}"
        )
    layout = layout_from_measurements(net, leak_meas)
    reference = estimate_leak_free(net, layout, free_meas, cfg)
    return localize(net, layout, leak_meas, reference, cfg), layout


def _result_payload(net, result) -> dict:
    ids = net.node_ids
    return {
        "metric": {ids[i]: float(v) for i, v in enumerate(result.metric)},
        "candidates": [ids[i] for i in result.candidates],
        "threshold": result.threshold,
        "iterations": result.iterations,
    }


def _cmd_localize(args) -> int:
    net = _load_network(args.network)
    cfg = _load_run_config(args)
    result, _ = _localization(args, net, cfg)
    out = Path(args.out)
    _atomic_write(
        out / "localization.json",
        json.dumps(_result_payload(net, result), indent=2, sort_keys=True) + "\n",
    )
    lines = ["node_id,metric"] + [
        f"{node},{float(v)!r}" for node, v in zip(net.node_ids, result.metric)
    ]
    _atomic_write(out / "metric.csv", "\n".join(lines) + "\n")
    print(f"candidates: {', '.join(net.node_ids[i] for i in result.candidates) or '(none)'}")
    return 0


def _cmd_evaluate(args) -> int:
    net = _load_network(args.network)
    cfg = _load_run_config(args)
    result, _ = _localization(args, net, cfg)
    true_node = net.node_index(args.leak_node)
    report = evaluate(net, result, true_node)
    payload = _result_payload(net, result)
    payload["evaluation"] = {
        "true_leak_node": args.leak_node,
        "best_km": report.best_km,
        "best_pipes": report.best_pipes,
        "avg5_km": report.avg5_km,
        "avg5_pipes": report.avg5_pipes,
    }
    out = Path(args.out)
    _atomic_write(
        out / "evaluation.json",
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
    )
    print(
        f"best: {report.best_km:.3f} km / {report.best_pipes:.0f} pipes; "
        f"avg-5: {report.avg5_km:.3f} km / {report.avg5_pipes:.1f} pipes"
    )
    return 0


def _cmd_benchmark(args) -> int:
    net = _load_network(args.network)
    cfg = _load_run_config(args)
    layout = _resolve_layout(net, args)
    settings = BenchmarkSettings(
        n_scenarios=args.scenarios,
        seed=cfg.rng_seed,
        leak_size=args.leak_size * cfg.flow_scale,
        roughness_noise=args.roughness_noise,
        diameter_noise=args.diameter_noise,
        demand_noise=args.demand_noise,
        pattern_amplitude=args.pattern_amplitude,
        parallel=args.parallel,
    )
    report = run_benchmark(net, layout, cfg, settings)
    out = Path(args.out)
    _atomic_write(out / "report.json", report_json(report))
    _atomic_write(out / "report.csv", report_csv(report))
    _atomic_write(out / "metrics.csv", metric_csv(report, net))
    _atomic_write(out / "timing.json", timing_json(report))
    for method, agg in report.aggregates.items():
        print(
            f"{method}: best {agg['best_pipes_mean']:.2f}±{agg['best_pipes_std']:.2f} "
            f"pipes, avg-5 {agg['avg5_pipes_mean']:.2f}±{agg['avg5_pipes_std']:.2f} pipes"
        )
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fgsi": _cmd_fgsi,
    "estimate": _cmd_estimate,
    "localize": _cmd_localize,
    "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
