"""Experiment runner CLI: run | sweep | synth | compare.

Every output file is named from (command, config fingerprint); reruns with
the same config produce byte-identical CSV/JSON artifacts, and a name
collision with different content is refused rather than overwritten.

Exit codes: 0 success, 2 config error, 3 batch with no surviving trajectory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import control_lab, metrics, svgplot
from .config import ConfigError, ControllerSpec, ExperimentConfig
from .sampler import RunResult, run_batch, traces_to_csv, traces_to_json


def _write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content.encode("utf-8")
    if path.exists():
        if path.read_bytes() == data:
            return
        raise RuntimeError(f"refusing to overwrite {path} with different content")
    path.write_bytes(data)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = cfgmod.with_seed(cfg, args.seed)
    if args.out is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=args.out))
    if args.format is not None:
        formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
        for fmt in formats:
            if fmt not in cfgmod.OUTPUT_FORMATS:
                raise ConfigError(f"--format: unknown format {fmt!r}")
        if not formats:
            raise ConfigError("--format: no valid format given")
        ordered = tuple(f for f in cfgmod.OUTPUT_FORMATS if f in formats)
        cfg = replace(cfg, output=replace(cfg.output, formats=ordered))
    return cfg


def _mean_reach_step(result: RunResult, fraction: float = 0.05) -> float | None:
    """Mean first step at which the gap norm fell to 5% of its initial value."""
    reach = []
    for trace in result.traces:
        first = trace.e_norm[0]
        if first <= 0.0:
            continue
        hit = np.nonzero(trace.e_norm <= fraction * first)[0]
        if hit.size:
            reach.append(int(hit[0]))
    if not reach:
        return None
    return float(np.mean(reach))


def _mean_gap_curve(result: RunResult) -> tuple[list, list]:
    e = np.stack([t.e_norm for t in result.traces])
    return list(range(e.shape[1])), list(e.mean(axis=0))


def _report_row(cfg: ExperimentConfig, result: RunResult) -> dict:
    system = cfgmod.build_system(cfg.system)
    report = metrics.quality_report(result, system, cfg.system.target)
    row = report.to_dict()
    row["mean_reach_step"] = _mean_reach_step(result)
    return row


def cmd_run(args) -> int:
    cfg = _apply_overrides(cfgmod.load_config(args.config), args)
    tag = cfgmod.fingerprint(cfg)
    out = Path(cfg.output.directory)
    result = run_batch(cfg)
    if not result.traces:
        print(f"run {tag}: every trajectory diverged", file=sys.stderr)
        return 3
    system = cfgmod.build_system(cfg.system)
    report = metrics.quality_report(result, system, cfg.system.target)

    if "csv" in cfg.output.formats:
        _write_text(out / f"run_{tag}_traces.csv", traces_to_csv(result.traces))
    if "json" in cfg.output.formats:
        _write_text(out / f"run_{tag}_report.json", json.dumps(report.to_dict(), indent=2) + "\n")
        _write_text(out / f"run_{tag}_traces.json", traces_to_json(result.traces))
    if "svg" in cfg.output.formats:
        steps, curve = _mean_gap_curve(result)
        _write_text(
            out / f"run_{tag}_e_norm.svg",
            svgplot.line_chart([("mean |e|", steps, curve)], "gap norm per step", "step", "|e|"),
        )
        pts = np.vstack([metrics.phase_plane(t) for t in result.traces])
        ref = None
        if cfg.controller.type == "smc":
            lam = float(cfg.controller.params.get("lambda", 6.0))
            ref = (f"slope -{lam:g}", -lam)
        _write_text(
            out / f"run_{tag}_phase.svg",
            svgplot.scatter_chart(
                [("traces", list(pts[:, 0]), list(pts[:, 1]))],
                "gap phase plane",
                "|e|",
                "d|e|/dtau",
                ref_line=ref,
            ),
        )
    print(f"run {tag}: {len(result.traces)}/{result.n_trajectories} trajectories, "
          f"w2={report.w2:.4f} alignment={report.alignment:.4f} "
          f"oversaturation={report.oversaturation:.4f} divergent={report.n_divergent}")
    return 0


_SWEEP_FIELDS = ("w2", "alignment", "oversaturation", "e_decay_ratio", "mean_reach_step", "n_divergent")


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(cfgmod.load_config(args.config), args)
    if cfg.sweep is None:
        raise ConfigError("sweep: block missing from config")
    tag = cfgmod.fingerprint(cfg)
    out = Path(cfg.output.directory)

    rows = []
    for value in cfg.sweep.values:
        row_cfg = cfgmod.with_controller_value(cfg, cfg.sweep.parameter, value)
        try:
            result = run_batch(row_cfg)
            if not result.traces:
                raise RuntimeError("every trajectory diverged")
            row = _report_row(row_cfg, result)
            rows.append({"value": value, "status": "ok", **row})
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            rows.append({"value": value, "status": f"failed: {exc}"})
    lines = ["value,status," + ",".join(_SWEEP_FIELDS)]
    for row in rows:
        cells = [repr(float(row["value"])), row["status"].split(",")[0]]
        for field in _SWEEP_FIELDS:
            if field == "n_divergent":
                cells.append("" if field not in row else str(row[field]))
            else:
                cells.append(_fmt(row.get(field)))
        lines.append(",".join(cells))
    if "csv" in cfg.output.formats:
        _write_text(out / f"sweep_{tag}_table.csv", "\n".join(lines) + "\n")
    if "json" in cfg.output.formats:
        _write_text(
            out / f"sweep_{tag}_table.json",
            json.dumps({"parameter": cfg.sweep.parameter, "rows": rows}, indent=2) + "\n",
        )
    if "svg" in cfg.output.formats:
        good = [r for r in rows if r["status"] == "ok"]
        for field in ("w2", "alignment", "oversaturation", "e_decay_ratio"):
            xs = [r["value"] for r in good if r.get(field) is not None]
            ys = [r[field] for r in good if r.get(field) is not None]
            if xs:
                _write_text(
                    out / f"sweep_{tag}_{field}.svg",
                    svgplot.line_chart([(field, xs, ys)], f"{field} vs {cfg.sweep.parameter}", cfg.sweep.parameter, field),
                )
    n_ok = sum(1 for r in rows if r["status"] == "ok")
    print(f"sweep {tag}: {n_ok}/{len(rows)} values over {cfg.sweep.parameter}")
    return 0


_COMPARE_DEFAULTS = {
    "cfg": {},
    "weight_schedule": {"shape": "cosine"},
    "apg": {"eta": 0.5},
    "cfg_zero_star": {},
    "rectified_cfgpp": {},
    "smc": {"lambda": 6.0, "k": 0.1, "boundary_layer": 0.0},
}


def _compare_controller(name: str, base: ControllerSpec) -> ControllerSpec:
    if name == base.type:
        return base
    if name not in _COMPARE_DEFAULTS:
        raise ConfigError(f"--controllers: unknown controller type {name!r}")
    w = float(base.params.get("w", base.params.get("w_max", 1.0)))
    params = dict(_COMPARE_DEFAULTS[name])
    if name == "weight_schedule":
        params["w_max"] = max(w, 1.0)
    else:
        params["w"] = w
    return ControllerSpec(name, params)


def cmd_compare(args) -> int:
    cfg = _apply_overrides(cfgmod.load_config(args.config), args)
    names = [n.strip() for n in args.controllers.split(",") if n.strip()]
    if len(names) < 2:
        raise ConfigError("--controllers: need at least two controllers to compare")
    tag = cfgmod.fingerprint(cfg)
    out = Path(cfg.output.directory)
    seed_print = hashlib.sha256(
        json.dumps([cfg.sampler.seed, cfg.sampler.trajectories]).encode()
    ).hexdigest()[:12]

    rows = []
    curves = []
    for name in names:
        row_cfg = replace(cfg, controller=_compare_controller(name, cfg.controller))
        result = run_batch(row_cfg)
        if not result.traces:
            rows.append({"controller": name, "status": "failed: every trajectory diverged"})
            continue
        row = _report_row(row_cfg, result)
        rows.append({"controller": name, "status": "ok", **row})
        steps, curve = _mean_gap_curve(result)
        curves.append((name, steps, curve))

    lines = ["controller,status," + ",".join(_SWEEP_FIELDS)]
    for row in rows:
        cells = [row["controller"], row["status"].split(",")[0]]
        for field in _SWEEP_FIELDS:
            if field == "n_divergent":
                cells.append("" if field not in row else str(row[field]))
            else:
                cells.append(_fmt(row.get(field)))
        lines.append(",".join(cells))
    if "csv" in cfg.output.formats:
        _write_text(out / f"compare_{tag}_table.csv", "\n".join(lines) + "\n")
    if "json" in cfg.output.formats:
        _write_text(
            out / f"compare_{tag}_report.json",
            json.dumps({"seed_fingerprint": seed_print, "rows": rows}, indent=2) + "\n",
        )
    if "svg" in cfg.output.formats and curves:
        _write_text(
            out / f"compare_{tag}_e_norm.svg",
            svgplot.line_chart(curves, "mean gap norm per step", "step", "|e|"),
        )
    print(f"compare {tag}: {len(rows)} controllers, seeds {seed_print}")
    return 0


def cmd_synth(args) -> int:
    s0 = np.zeros(args.dim)
    s0[0] = args.s0
    dyn = control_lab.PerturbedDynamics(
        dim=args.dim,
        w=args.w,
        delta=args.delta,
        rho=args.rho,
        k=args.k,
        dt=args.dt,
        s0=s0,
        drift=args.drift,
        gain_deviation=args.gain_deviation,
        seed=args.seed if args.seed is not None else 0,
    )
    run_params = {
        "dim": args.dim, "w": args.w, "delta": args.delta, "rho": args.rho, "k": args.k,
        "dt": args.dt, "s0": args.s0, "drift": args.drift, "gain_deviation": args.gain_deviation,
        "steps": args.steps, "seed": dyn.seed, "corridor": args.corridor, "k_values": args.k_values,
    }
    tag = hashlib.sha256(json.dumps(run_params, sort_keys=True).encode()).hexdigest()[:12]
    out = Path(args.out or "out")

    k_lo, k_hi = control_lab.stability_corridor(args.delta, args.w, abs(args.s0), args.dt)
    print(f"stability corridor: k in ({k_lo:.6g}, {k_hi:.6g})")
    if k_lo >= k_hi:
        print("warning: corridor infeasible for these parameters")

    if args.corridor:
        if not args.k_values:
            raise ConfigError("--k-values: required with --corridor")
        k_values = [float(v) for v in args.k_values.split(",")]
        rows = control_lab.corridor_sweep(dyn, k_values, args.steps)
        _write_text(out / f"synth_{tag}_corridor.csv", control_lab.corridor_rows_to_csv(rows))
        converged = [(r.k, r.osc_amplitude) for r in rows if r.reached]
        if converged:
            _write_text(
                out / f"synth_{tag}_osc.svg",
                svgplot.line_chart(
                    [("oscillation", [c[0] for c in converged], [c[1] for c in converged])],
                    "tail oscillation vs switching gain", "k", "mean |ds|",
                ),
            )
        for row in rows:
            state = "converged" if row.reached else "did not converge"
            print(f"k={row.k:g}: {state}" + (f" at step {row.reach_step}" if row.reached else ""))
        return 0

    report = control_lab.simulate_sliding(dyn, args.steps)
    series_lines = ["step,s_norm,lyapunov"]
    for i, (sn, vn) in enumerate(zip(report.s_norms, report.lyapunov)):
        series_lines.append(f"{i},{sn!r},{vn!r}")
    _write_text(out / f"synth_{tag}_series.csv", "\n".join(series_lines) + "\n")
    _write_text(
        out / f"synth_{tag}_s_norm.svg",
        svgplot.line_chart(
            [("|s|", list(range(len(report.s_norms))), list(report.s_norms))],
            "surface norm per step", "step", "|s|",
        ),
    )
    if not report.gain_condition_met:
        print("gain condition unmet")
    elif report.reached and report.reach_step is not None and report.bound_steps is not None:
        within = report.reach_step <= report.bound_steps * 1.05 + 1
        print(f"reached band at step {report.reach_step} (bound {report.bound_steps} steps); "
              f"reached within bound: {'yes' if within else 'no'}")
    else:
        print("did not reach the band within the step budget")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfgctrl", description="guided flow sampling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--format", help="comma-separated subset of csv,json,svg")

    p_run = sub.add_parser("run", help="single batch with trace/report export")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="one batch per swept parameter value")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="same batch under several controllers")
    common(p_cmp)
    p_cmp.add_argument("--controllers", required=True, help="comma-separated controller types")
    p_cmp.set_defaults(func=cmd_compare)

    p_syn = sub.add_parser("synth", help="synthetic sliding-dynamics testbed")
    p_syn.add_argument("--delta", type=float, default=0.5)
    p_syn.add_argument("--rho", type=float, default=0.0)
    p_syn.add_argument("--w", type=float, default=5.0)
    p_syn.add_argument("--k", type=float, default=0.5)
    p_syn.add_argument("--dim", type=int, default=1)
    p_syn.add_argument("--dt", type=float, default=0.01)
    p_syn.add_argument("--steps", type=int, default=2000)
    p_syn.add_argument("--s0", type=float, default=2.0)
    p_syn.add_argument("--drift", choices=control_lab.DRIFT_KINDS, default="constant")
    p_syn.add_argument("--gain-deviation", choices=control_lab.GAIN_KINDS, default="zero")
    p_syn.add_argument("--corridor", action="store_true", help="sweep switching gains instead of one run")
    p_syn.add_argument("--k-values", help="comma-separated gains for --corridor")
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--out", help="output directory")
    p_syn.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
