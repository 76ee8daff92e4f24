"""Command-line interface: run, compare, surface and sweep commands.

Exit codes: 0 success, 2 configuration error, 3 divergence or storage
fault, 4 comparison guard, 5 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, sim, svgplot
from .config import Config, ConfigError, config_from_dict, parse_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_GUARD = 4
EXIT_IO = 5

CSV_HEADER = "t_s,v_bus_V,i_L_A,i_batt_A,i_uc_A,zeta_A,soc,v_uc_V,i_limit_A,ctrl_state,flags"
SURFACE_HEADER = "v_bus_V,i_hesm_A,i_limit_A"


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def trace_csv_text(trace: sim.Trace) -> str:
    lines = [CSV_HEADER]
    for k in range(len(trace)):
        lines.append(",".join((
            _fmt(trace.t[k]), _fmt(trace.v_bus[k]), _fmt(trace.i_l[k]),
            _fmt(trace.i_batt[k]), _fmt(trace.i_uc[k]), _fmt(trace.zeta[k]),
            _fmt(trace.soc[k]), _fmt(trace.v_uc[k]), _fmt(trace.i_limit[k]),
            str(int(trace.ctrl_state[k])), str(int(trace.flags[k])),
        )))
    return "\n".join(lines) + "\n"


def _load_config(path: str | None, overrides: dict | None = None) -> Config:
    if path is None:
        data: dict = {}
    else:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"malformed JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top-level JSON value must be an object")
    if overrides:
        data = copy.deepcopy(data)
        if "controller" in overrides:
            data.setdefault("controller", {})["kind"] = overrides["controller"]
        if "model" in overrides:
            integ = data.setdefault("integration", {})
            integ["mode"] = overrides["model"]
            if "dt" not in overrides:
                # The new mode picks its own default step unless --dt pins one.
                integ["dt_s"] = None
        if "dt" in overrides:
            data.setdefault("integration", {})["dt_s"] = overrides["dt"]
    return config_from_dict(data)


def _metrics_or_none(trace: sim.Trace, cfg: Config):
    try:
        return sim.compute_metrics(trace, cfg.load)
    except sim.MetricsError:
        return None


def _report_dict(cfg: Config, trace: sim.Trace, info: sim.RunInfo, metrics) -> dict:
    return {
        "tool_version": __version__,
        "config_digest": cfg.digest,
        "controller": cfg.controller_kind,
        "mode": cfg.mode,
        "dt_s": cfg.dt,
        "decimation_factor": trace.decimation_factor,
        "run": info.to_dict(),
        "metrics": metrics.to_dict() if metrics is not None else None,
        "energy": trace.meta.get("energy"),
    }


def _write_run_outputs(out_dir: Path, cfg: Config, trace: sim.Trace,
                       info: sim.RunInfo) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_name = cfg.trace_path or "trace.csv"
    (out_dir / trace_name).write_text(trace_csv_text(trace))
    metrics = _metrics_or_none(trace, cfg)
    report = _report_dict(cfg, trace, info, metrics)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if cfg.plots and len(trace) > 1:
        svgplot.line_chart(out_dir / "bus_voltage.svg",
                           [("bus voltage", trace.t, trace.v_bus)],
                           title=f"Bus voltage ({cfg.controller_kind})",
                           xlabel="time [s]", ylabel="V")
        svgplot.line_chart(out_dir / "currents.svg",
                           [("inductor", trace.t, trace.i_l),
                            ("battery", trace.t, trace.i_batt),
                            ("ultracap", trace.t, trace.i_uc),
                            ("disturbance", trace.t, trace.zeta)],
                           title=f"Currents ({cfg.controller_kind})",
                           xlabel="time [s]", ylabel="A")
    return report


def cmd_run(args) -> int:
    overrides = {}
    if args.controller:
        overrides["controller"] = args.controller
    if args.model:
        overrides["model"] = args.model
    if args.dt is not None:
        overrides["dt"] = args.dt
    cfg = _load_config(args.config, overrides)
    trace, info = sim.run(cfg)
    report = _write_run_outputs(Path(args.out), cfg, trace, info)
    if not info.ok:
        print(f"FAULT: {info.fault_message}", file=sys.stderr)
        return EXIT_DIVERGENCE
    m = report["metrics"]
    if m:
        print(f"{cfg.controller_kind}: swing_worst={m['swing_worst_v']:.3f} V "
              f"sag={m['sag_v']:.3f} V ({info.wall_time_s:.2f} s wall)")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg_a = _load_config(args.a)
    cfg_b = _load_config(args.b)
    if cfg_a.raw["load"] != cfg_b.raw["load"]:
        print("refusing to compare: the two configs use different load profiles",
              file=sys.stderr)
        return EXIT_GUARD
    out_dir = Path(args.out)
    trace_a, info_a = sim.run(cfg_a)
    trace_b, info_b = sim.run(cfg_b)
    metrics_a = _metrics_or_none(trace_a, cfg_a)
    metrics_b = _metrics_or_none(trace_b, cfg_b)
    improvement = (sim.compare(metrics_a, metrics_b)
                   if metrics_a is not None and metrics_b is not None else None)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "tool_version": __version__,
        "baseline": _report_dict(cfg_a, trace_a, info_a, metrics_a),
        "candidate": _report_dict(cfg_b, trace_b, info_b, metrics_b),
        "improvement": improvement,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if len(trace_a) > 1 and len(trace_b) > 1:
        svgplot.line_chart(
            out_dir / "bus_voltage_overlay.svg",
            [(f"baseline ({cfg_a.controller_kind})", trace_a.t, trace_a.v_bus),
             (f"candidate ({cfg_b.controller_kind})", trace_b.t, trace_b.v_bus)],
            title="Bus voltage comparison", xlabel="time [s]", ylabel="V")
    if not (info_a.ok and info_b.ok):
        for name, info in (("baseline", info_a), ("candidate", info_b)):
            if not info.ok:
                print(f"FAULT in {name}: {info.fault_message}", file=sys.stderr)
        return EXIT_DIVERGENCE
    if improvement:
        print(f"swing improvement: {improvement['swing_improvement_pct']:.1f}%  "
              f"sag improvement: {improvement['sag_improvement_pct']:.1f}%")
    return EXIT_OK


def cmd_surface(args) -> int:
    cfg = _load_config(args.config)
    if cfg.controller_kind != "flc":
        print("surface export requires the fuzzy controller "
              f"(configured: {cfg.controller_kind})", file=sys.stderr)
        return EXIT_CONFIG
    v, i, z = cfg.flc.surface(args.res)
    lines = [SURFACE_HEADER]
    for k, vv in enumerate(v):
        for j, iv in enumerate(i):
            lines.append(f"{_fmt(vv)},{_fmt(iv)},{_fmt(z[j, k])}")
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(v) * len(i)} surface points to {out}")
    return EXIT_OK


def _set_dotted(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "path traverses a non-object value")
    node[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args) -> int:
    if args.config is None:
        base: dict = {}
    else:
        base = json.loads(Path(args.config).read_text())
    values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values", "no sweep values given")
    configs = []
    for val in values:
        d = copy.deepcopy(base)
        _set_dotted(d, args.vary, val)
        configs.append(config_from_dict(d))

    cap = os.environ.get("HESM_SIM_THREADS", "").strip()
    max_workers = int(cap) if cap else (os.cpu_count() or 1)
    max_workers = max(1, min(max_workers, len(configs)))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(sim.run, configs))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    all_ok = True
    for idx, (val, cfg, (trace, info)) in enumerate(zip(values, configs, results)):
        run_dir = out_dir / f"run_{idx:03d}"
        report = _write_run_outputs(run_dir, cfg, trace, info)
        all_ok = all_ok and info.ok
        summary.append({
            "index": idx,
            "vary": args.vary,
            "value": val,
            "dir": run_dir.name,
            "config_digest": cfg.digest,
            "ok": info.ok,
            "metrics": report["metrics"],
        })
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"swept {args.vary} over {len(values)} values "
          f"({max_workers} worker{'s' if max_workers > 1 else ''})")
    return EXIT_OK if all_ok else EXIT_DIVERGENCE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hesm",
                                 description="Hybrid energy storage module simulator")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one configuration")
    p_run.add_argument("--config", help="JSON config path (defaults apply if omitted)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--controller", choices=("flc", "ifthen"),
                       help="override the supervisor selection")
    p_run.add_argument("--model", choices=("switched", "averaged"),
                       help="override the integration model")
    p_run.add_argument("--dt", type=float, help="override the integration step [s]")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run two configs on one load and compare")
    p_cmp.add_argument("--a", required=True, help="baseline config path")
    p_cmp.add_argument("--b", required=True, help="candidate config path")
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_surf = sub.add_parser("surface", help="export the fuzzy control surface as CSV")
    p_surf.add_argument("--config", help="JSON config path (defaults apply if omitted)")
    p_surf.add_argument("--out", required=True, help="output CSV file")
    p_surf.add_argument("--res", type=int, default=50, help="grid resolution per axis")
    p_surf.set_defaults(func=cmd_surface)

    p_sw = sub.add_parser("sweep", help="run one config over a list of values")
    p_sw.add_argument("--config", help="JSON config path (defaults apply if omitted)")
    p_sw.add_argument("--vary", required=True, help="dotted config key to vary")
    p_sw.add_argument("--values", required=True, help="comma-separated values")
    p_sw.add_argument("--out", required=True)
    p_sw.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except sim.SimFault as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
