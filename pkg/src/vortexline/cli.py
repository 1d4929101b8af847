"""Command line front end.

    python -m vortexline <subcommand> [--config FILE] [--out DIR] [--t T] [--seed X,Y,Z] [--threads N]

Each subcommand writes CSV/JSON files plus ``manifest.json`` into the output
directory.  Exit status: 0 success, 2 partial result (gaps, lost samples,
failed nodes), 1 failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .chaos import correlate_events, distance_to_xline, stretching_numbers
from .config import RunConfig, load_config
from .dynamics import integrate_trajectory, integrate_with_deviation
from .errors import ConfigError, VortexLineError
from .nodal import trace_all_lines
from .output import write_csv, write_json, write_json_atomic
from .vortex import scan_line, scan_time
from .wavefield import eval_field, probability_current
from .xstruct import build_xline, manifold_branches

SUBCOMMANDS = ("field", "nodal", "npxpc", "xline", "manifolds", "trajectory", "chaos", "hopf-scan")


class Result:
    """What a subcommand reports back to the driver."""

    def __init__(self):
        self.files: list[str] = []
        self.stats: dict = {}
        self.warnings: list[str] = []
        self.partial = False


def thread_count(cli_value: int | None, cfg: RunConfig) -> int:
    if cli_value is not None:
        return max(1, cli_value)
    env = os.environ.get("VORTEXLINE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"VORTEXLINE_THREADS must be an integer, got {env!r}") from None
    return cfg["threads"]


def _pmap(fn, items, threads: int):
    """Ordered map, in worker processes when more than one thread is requested."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _lines(cfg: RunConfig, t: float):
    n = cfg["nodal"]
    return trace_all_lines(cfg.spec(), t, box=cfg.box(), resolution=n["resolution"], ds=n["ds"],
                           max_points=n["max_points"], node_tol=cfg["tolerances"]["node_tol"])


def cmd_field(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec, t = cfg.spec(), cfg["t"]
    n = cfg["field"]["resolution"]
    lo, hi = cfg.box()
    axes = [np.linspace(lo[k], hi[k], n) for k in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    f = eval_field(spec, X, t)
    cur = probability_current(spec, X, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        vel = cur.N / cur.G[:, None]
    rho = np.abs(f.psi) ** 2
    phase = np.angle(f.psi)
    rows = (list(x) + [r, ph] + list(v) for x, r, ph, v in zip(X, rho, phase, vel))
    path = out / "field.csv"
    res.stats["rows"] = write_csv(path, ["x", "y", "z", "rho", "phase", "vx", "vy", "vz"], rows)
    res.files.append(path.name)
    nodes = int(np.count_nonzero(~np.isfinite(vel).all(axis=1)))
    if nodes:
        res.warnings.append(f"{nodes} grid points sit on nodes; velocity written as nan")
    return res


def _line_rows(k, line):
    for p in line.points:
        V = p.V0 if p.V0 is not None else np.full(3, np.nan)
        yield [k, p.s, *p.r0, *p.tangent, *V, p.frame.kind]


def cmd_nodal(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    lines = _lines(cfg, cfg["t"])
    rows = [r for k, ln in enumerate(lines) for r in _line_rows(k, ln)]
    path = out / "nodal_lines.csv"
    write_csv(path, ["line", "s", "x", "y", "z", "tx", "ty", "tz", "Vx", "Vy", "Vz", "frame"], rows)
    res.files.append(path.name)
    res.stats["lines"] = [{"points": len(ln), "length": ln.length, "closed": ln.closed,
                           "termination": list(ln.termination)} for ln in lines]
    for k, ln in enumerate(lines):
        res.warnings += [f"line {k}: {w}" for w in ln.warnings]
        kinds = [p.frame.kind for p in ln.points]
        fallback = sum(kd != "frenet" for kd in kinds)
        if fallback:
            res.warnings.append(f"line {k}: {fallback} nodes use a fallback frame")
    if not lines:
        res.warnings.append("no nodal line found in the box")
        res.partial = True
    return res


def _npxpc_job(args):
    spec, line = args
    return scan_line(spec, line)


def cmd_npxpc(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec = cfg.spec()
    lines = _lines(cfg, cfg["t"])
    results = _pmap(_npxpc_job, [(spec, ln) for ln in lines], threads)
    events = []
    for k, (rows, ev) in enumerate(results):
        path = out / f"npxpc_line{k}.csv"
        write_csv(path, ["s", "A", "f3", "Vu", "Vv", "vfast_ratio", "hopf_flag", "node_type"],
                  ([r.s, r.A, r.f3, r.Vu, r.Vv, r.vfast, r.hopf_flag, r.node_type] for r in rows))
        res.files.append(path.name)
        events += [{"line": k, "kind": e.kind, "s": e.parameter, "bracket": list(e.bracket)} for e in ev]
        slow = sum(r.vfast <= 1 for r in rows)
        if slow:
            res.warnings.append(f"line {k}: {slow} of {len(rows)} nodes below the fast-node margin")
    write_json(out / "npxpc_hopf.json", events)
    res.files.append("npxpc_hopf.json")
    res.stats["hopf_events"] = len(events)
    return res


def _xline_job(args):
    spec, line, tol, mode = args
    return build_xline(spec, line, tol, mode)


_XLINE_HEADER = ["s", "x", "y", "z", "u", "v", "w", "lam1", "lam2", "lam3", "dX", "residual"]


def cmd_xline(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec = cfg.spec()
    lines = _lines(cfg, cfg["t"])
    xls = _pmap(_xline_job, [(spec, ln, cfg["tolerances"]["x_tol_rel"], cfg["xline"]["mode"]) for ln in lines],
                threads)
    res.stats["lines"] = []
    for k, xl in enumerate(xls):
        path = out / f"xline_line{k}.csv"
        write_csv(path, _XLINE_HEADER, xl.rows())
        res.files.append(path.name)
        res.stats["lines"].append({"nodes": len(xl.xpoints), "gap_fraction": xl.gap_fraction,
                                   "jumps": len(xl.jumps)})
        if xl.failures:
            res.partial = True
            res.warnings += [f"line {k} node {i}: {msg}" for i, msg in sorted(xl.failures.items())]
        if xl.jumps:
            res.warnings.append(f"line {k}: X-line discontinuities at nodes {xl.jumps}")
    return res


def _manifold_job(args):
    spec, xp, p, m = args
    return manifold_branches(spec, xp, p, eps=m["eps_rel"] * xp.d_X, arc_budget=m["arc_rel"] * xp.d_X,
                             domain_radius=m["domain_rel"] * xp.d_X)


def cmd_manifolds(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec = cfg.spec()
    m = cfg["manifolds"]
    jobs = []
    for k, ln in enumerate(_lines(cfg, cfg["t"])):
        xl = build_xline(spec, ln, cfg["tolerances"]["x_tol_rel"], cfg["xline"]["mode"])
        for i, xp in enumerate(xl.xpoints):
            if xp is not None and xp.hyperbolic:
                jobs.append((k, i, ln.points[i], xp))
    if not jobs:
        res.partial = True
        res.warnings.append("no hyperbolic X-point available")
    pick = np.unique(np.linspace(0, len(jobs) - 1, min(m["count"], len(jobs))).round().astype(int)) if jobs else []
    chosen = [jobs[i] for i in pick]
    branches = _pmap(_manifold_job, [(spec, xp, p, m) for _, _, p, xp in chosen], threads)
    report = []
    for (k, i, p, xp), br in zip(chosen, branches):
        terms = [b.termination for b in br]
        report.append({"line": k, "node": i, "s": p.s, "xpoint": xp.world, "d_X": xp.d_X,
                       "branches": [b.to_json() for b in br]})
        if "step_limit" in terms:
            res.partial = True
            res.warnings.append(f"line {k} node {i}: a branch hit the arc budget")
    write_json(out / "manifolds.json", report)
    res.files.append("manifolds.json")
    res.stats["xpoints"] = len(chosen)
    return res


def cmd_trajectory(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec, tr_cfg = cfg.spec(), cfg["trajectory"]
    opts = cfg.integrator()
    span = (0.0, tr_cfg["t_end"])
    if tr_cfg["deviation"] == "none":
        tr = integrate_trajectory(spec, tr_cfg["x0"], span, opts)
        rows = ([t, *x] for t, x in zip(tr.t, tr.x))
        header = ["t", "x", "y", "z"]
    else:
        tr = integrate_with_deviation(spec, tr_cfg["x0"], tr_cfg["xi0"], span, opts, mode=tr_cfg["deviation"])
        rows = ([t, *x, a] for t, x, a in zip(tr.t, tr.x, tr.log_growth))
        header = ["t", "x", "y", "z", "alpha"]
    path = out / "trajectory.csv"
    write_csv(path, header, rows)
    res.files.append(path.name)
    res.stats["integrator"] = vars(tr.stats)
    return res


def cmd_chaos(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec, tr_cfg, ch = cfg.spec(), cfg["trajectory"], cfg["chaos"]
    mode = tr_cfg["deviation"] if tr_cfg["deviation"] != "none" else "variational"
    tr = integrate_with_deviation(spec, tr_cfg["x0"], tr_cfg["xi0"], (0.0, tr_cfg["t_end"]), cfg.integrator(),
                                  mode=mode)
    series = stretching_numbers(tr)
    dist = distance_to_xline(spec, tr, ch["line_dt"], cfg.box(), ch["snapshot_resolution"], ch["snapshot_ds"])
    report = correlate_events(series, dist, ch["jump_threshold"], ch["window"],
                              trajectory={"x0": tr_cfg["x0"], "t_end": tr_cfg["t_end"], "mode": mode})
    report.write(out / "chaos.json", out / "chaos.csv")
    res.files += ["chaos.json", "chaos.csv"]
    res.stats["summary"] = report.summary
    res.stats["integrator"] = vars(tr.stats)
    if dist.lost:
        res.partial = True
        res.warnings.append(f"nodal line lost at {len(dist.lost)} sample times")
    return res


def cmd_hopf_scan(cfg: RunConfig, out: Path, threads: int) -> Result:
    res = Result()
    spec, h = cfg.spec(), cfg["hopf"]
    times = np.linspace(h["t_start"], h["t_end"], h["steps"])
    events = []
    for t in times:
        for k, ln in enumerate(_lines(cfg, float(t))):
            _, ev = scan_line(spec, ln)
            events += [{"kind": e.kind, "t": float(t), "line": k, "parameter": e.parameter,
                        "bracket": list(e.bracket)} for e in ev]
    seed_lines = _lines(cfg, float(times[0]))
    f3s = np.full(len(times), np.nan)
    tracked = [None] * len(times)
    if seed_lines:
        point = np.asarray(h["point"], dtype=float)
        line = min(seed_lines, key=lambda ln: ln.nearest(point)[1])
        start = line.points[line.nearest(point)[0]]
        _, f3s, tev, tracked = scan_time(spec, start, times)
        events += [{"kind": e.kind, "t": e.parameter, "line": None, "parameter": e.parameter,
                    "bracket": list(e.bracket)} for e in tev]
    else:
        res.partial = True
        res.warnings.append("no nodal line at the first scan time")
    rows = ([t, f, *(q.r0 if q is not None else [math.nan] * 3)] for t, f, q in zip(times, f3s, tracked))
    write_csv(out / "hopf_time_scan.csv", ["t", "f3", "x", "y", "z"], rows)
    write_json(out / "hopf_events.json", events)
    res.files += ["hopf_time_scan.csv", "hopf_events.json"]
    res.stats["events"] = len(events)
    if np.isnan(f3s).any():
        res.partial = True
        res.warnings.append("tracked node lost at some scan times")
    return res


COMMANDS = {
    "field": cmd_field,
    "nodal": cmd_nodal,
    "npxpc": cmd_npxpc,
    "xline": cmd_xline,
    "manifolds": cmd_manifolds,
    "trajectory": cmd_trajectory,
    "chaos": cmd_chaos,
    "hopf-scan": cmd_hopf_scan,
}


def _seed(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("--seed expects X,Y,Z") from None
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("--seed expects three finite numbers X,Y,Z")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vortexline", description="Nodal lines, X-points and Bohmian chaos.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--t", type=float, help="snapshot time (overrides t)")
        p.add_argument("--seed", type=_seed, help="trajectory start X,Y,Z (overrides trajectory.x0)")
        p.add_argument("--threads", type=int, help="worker processes (default: VORTEXLINE_THREADS or config)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.out is not None:
            changes["output.dir"] = args.out
        if args.t is not None:
            changes["t"] = args.t
        if args.seed is not None:
            changes["trajectory.x0"] = args.seed
        if changes:
            cfg = cfg.override(**changes)
        threads = thread_count(args.threads, cfg)
        out = Path(cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"vortexline: {exc}", file=sys.stderr)
        return 1
    manifest = {"command": args.command, "config_sha256": cfg.digest(), "config": cfg.to_dict(),
                "version": __version__, "threads": threads, "start": started}
    try:
        res = COMMANDS[args.command](cfg, out, threads)
    except (VortexLineError, OSError, ValueError) as exc:
        manifest.update(end=time.time(), status="failure", error=f"{type(exc).__name__}: {exc}")
        try:
            write_json_atomic(out / "manifest.json", manifest)
        except OSError:
            pass
        print(f"vortexline {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    status = "partial" if res.partial else "success"
    manifest.update(end=time.time(), status=status, files=res.files, stats=res.stats, warnings=res.warnings)
    write_json_atomic(out / "manifest.json", manifest)
    for w in res.warnings[:20]:
        print(f"warning: {w}", file=sys.stderr)
    return 2 if res.partial else 0


def main() -> None:
    sys.exit(run())
