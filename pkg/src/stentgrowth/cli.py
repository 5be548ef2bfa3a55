"""Command line: periodic, multiscale, resolve, compare, sweep, geometry-dump."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import geometry as geo
from .config import ConfigError, RunConfig
from .grid import fmt
from .microflow import MicroSolver
from .multiscale import MacroSchedule, NonConvergentSequence, PeriodicSolveFailed, richardson_rate, run_multiscale
from .oracle import BudgetExceeded, ConfigMismatch, compare, run_resolved
from .periodic import solve_periodic

log = logging.getLogger("stentgrowth")


class CliError(Exception):
    def __init__(self, kind: str, message: str, status: int = 2):
        super().__init__(message)
        self.kind = kind
        self.status = status


def _load_config(args, **defaults) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.default()
    for key, value in defaults.items():
        cfg.set(key, value)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    cfg.validate()
    return cfg


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_c(path: Path, x1, c) -> None:
    c = np.asarray(c)
    _write_rows(path, ["x1", "c_lower", "c_upper"], zip(np.asarray(x1, dtype=float), c[0], c[1]))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -------------------------------------------------------------

def cmd_periodic(args) -> dict:
    preset = {"problem.kind": "cavity"} if not args.config else {}
    cfg = _load_config(args, **preset)
    if args.nu is not None:
        cfg.set("fluid.nu", args.nu)
    if args.mode is not None:
        cfg.set("periodic.mode", args.mode)
    per = cfg.data["periodic"]
    solver = MicroSolver(cfg.problem(), cfg.fluid_params(), cfg.data["schedule"]["k"])
    _, cyc, report = solve_periodic(solver, None, per["mode"], per["eps"], per["max_cycles"], record_wss=False)
    out = _out_dir(args)
    report.write_csv(out / "error_history.csv")
    result = {"command": "periodic", "config": cfg.data, "config_hash": cfg.hash(), **report.to_dict(),
              "geometric_mean_ratio": report.geometric_mean_ratio(), "mean_outflow": cyc.mean_outflow()}
    _write_json(out / "report.json", result)
    if not report.converged:
        raise CliError("periodic_not_converged", f"periodic solve did not converge in {report.cycles} cycles", 3)
    return result


def _schedule_overrides(args) -> dict:
    over = {}
    if getattr(args, "k", None) is not None:
        over["schedule.k"] = args.k
    if getattr(args, "K", None) is not None:
        over["_K"] = args.K
    return over


def _apply_K(cfg: RunConfig, over: dict) -> RunConfig:
    for key, value in over.items():
        if key != "_K":
            cfg.set(key, value)
    if "_K" in over:
        N = cfg.data["schedule"]["T"] / over["_K"]
        if abs(N - round(N)) > 1e-9 * max(N, 1):
            raise ConfigError(f"K={over['_K']} does not divide T={cfg.data['schedule']['T']}")
        cfg.set("schedule.N", int(round(N)))
    cfg.validate()
    return cfg


def _write_run(out: Path, cfg: RunConfig, run_dict: dict, times, jout) -> None:
    _write_rows(out / "jout.csv", ["t", "jout"], zip(np.asarray(times, dtype=float), np.asarray(jout, dtype=float)))
    _write_c(out / "c_final.csv", run_dict["x1"], run_dict["final_c"])
    _write_json(out / "report.json", {"config": cfg.data, **run_dict})


def cmd_multiscale(args) -> dict:
    cfg = _apply_K(_load_config(args), _schedule_overrides(args))
    run = run_multiscale(cfg)
    out = _out_dir(args)
    d = run.to_dict()
    _write_run(out, cfg, d, run.times, run.jout)
    return {"command": "multiscale", "config_hash": cfg.hash(), "jout_final": float(run.jout[-1]),
            "c_max": float(run.final_c.max()), "wall_time": run.wall_time}


def cmd_resolve(args) -> dict:
    cfg = _apply_K(_load_config(args), _schedule_overrides(args))
    run = run_resolved(cfg)
    out = _out_dir(args)
    d = run.to_dict()
    _write_run(out, cfg, d, run.snapshot_times, run.jout)
    return {"command": "resolve", "config_hash": cfg.hash(), "total_steps": run.total_steps,
            "c_max": float(run.final_c.max()), "wall_time": run.wall_time}


def cmd_compare(args) -> dict:
    reports = []
    for p in (args.resolved, args.multiscale):
        path = Path(p)
        if path.is_dir():
            path = path / "report.json"
        reports.append(json.loads(path.read_text()))
    result = {"command": "compare", **compare(reports[0], reports[1])}
    if args.out:
        _write_json(_out_dir(args) / "report.json", result)
    return result


def _sweep_job(job):
    data, kind = job
    cfg = RunConfig.from_dict(data)
    run = run_multiscale(cfg) if kind == "multiscale" else run_resolved(cfg)
    d = run.to_dict()
    d["config"] = cfg.data
    return d


def cmd_sweep(args) -> dict:
    base = _load_config(args)
    values = [float(v) for v in args.values.split(",")]
    jobs = []
    for v in values:
        cfg = base.copy()
        if args.param == "K":
            cfg = _apply_K(cfg, {"_K": v})
        else:
            cfg.set(args.param, v)
            cfg.validate()
        jobs.append((cfg.data, args.kind))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    out = _out_dir(args)
    rows = []
    for v, d in zip(values, results):
        sub = out / f"{args.param}={v:g}"
        sub.mkdir(exist_ok=True)
        cfg = RunConfig.from_dict(d["config"])
        times = d.get("macro_times", d.get("snapshot_times"))
        _write_run(sub, cfg, d, times, d["jout"])
        rows.append([v, d["jout"][-1], max(map(max, d["final_c"])), d["wall_time"]])
    table = []
    for i in range(len(rows) - 2):
        try:
            rate, ext = richardson_rate(rows[i][1], rows[i + 1][1], rows[i + 2][1])
        except NonConvergentSequence:
            rate, ext = float("nan"), float("nan")
        table.append({"values": values[i:i + 3], "rate": rate, "extrapolated": ext})
    _write_rows(out / "sweep.csv", [args.param, "jout_final", "c_max", "wall_time"], rows)
    result = {"command": "sweep", "param": args.param, "rows": rows, "rates": table}
    _write_json(out / "report.json", result)
    return result


def cmd_geometry_dump(args) -> dict:
    cfg = _load_config(args)
    params = cfg.geometry_params()
    profile = geo.ConstantProfile(args.c)
    pts = geo.sample_points(params.domain, args.n1, args.n2)
    amap = geo.composite_map(pts, profile, params)
    out = _out_dir(args)
    _write_rows(out / "geometry.csv", ["xhat1", "xhat2", "x1", "x2", "J"],
                (list(r) + list(m) + [j] for r, m, j in zip(pts, amap.mapped, amap.J)))
    result = {"command": "geometry-dump", "points": int(len(pts)), "J_min": float(amap.J.min()),
              "config": cfg.data}
    _write_json(out / "report.json", result)
    return result


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stentgrowth", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--config", help="config file (section.key = value lines)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config entry")
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("periodic", help="periodic micro solve (defaults to the Stokes cavity test)")
    common(sp)
    sp.add_argument("--mode", choices=["forward", "averaging"])
    sp.add_argument("--nu", type=float)
    sp.set_defaults(func=cmd_periodic)

    for name, func in (("multiscale", cmd_multiscale), ("resolve", cmd_resolve)):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--K", type=float, help="macro step (sets schedule.N = T / K)")
        sp.add_argument("--k", type=float, help="micro step")
        sp.set_defaults(func=func)

    sp = sub.add_parser("compare", help="compare a resolved and a multiscale report")
    sp.add_argument("resolved")
    sp.add_argument("multiscale")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="run one parameter over several values")
    common(sp)
    sp.add_argument("--param", required=True, help="K or a section.key")
    sp.add_argument("--values", required=True, help="comma separated values")
    sp.add_argument("--kind", choices=["multiscale", "resolve"], default="multiscale")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("geometry-dump", help="sample the composite map")
    common(sp)
    sp.add_argument("--c", type=float, default=0.0, help="uniform growth value")
    sp.add_argument("--n1", type=int, default=141)
    sp.add_argument("--n2", type=int, default=11)
    sp.set_defaults(func=cmd_geometry_dump)
    return p


_ERRORS = (
    (ConfigMismatch, "config_mismatch", 4),
    (ConfigError, "config_error", 2),
    (BudgetExceeded, "budget_exceeded", 5),
    (PeriodicSolveFailed, "periodic_not_converged", 3),
    (geo.GeometryError, "geometry_error", 6),
)


def run_command(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}))
        return exc.status
    except Exception as exc:  # reported as JSON, never as a bare traceback
        for cls, kind, status in _ERRORS:
            if isinstance(exc, cls):
                print(json.dumps({"error": kind, "message": str(exc)}))
                return status
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    print(json.dumps(result if args.command != "periodic" else
                     {k: result[k] for k in ("mode", "cycles", "converged", "geometric_mean_ratio")}))
    return 0


def main() -> None:
    sys.exit(run_command())
