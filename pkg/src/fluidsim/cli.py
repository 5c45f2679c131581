"""Command line: contact plans, seed sweeps and reports.

Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import re
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import ScenarioErrors, SimulationError, ValidationError
from .experiments import (DL_SUMMARY_HEADER, SUMMARY_HEADER, SWEEP_HEADER, csv_text, download_seed,
                          download_setup, fmt, infer_seed, learn_seed, validate_inference, validate_learning)
from .orbits import ecef_tracks, walker_constellation
from .scenario import parse_scenario, require_section

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def write_atomic(path, content):
    """Write ``content`` (str or bytes) via a temp file in the same directory and rename."""
    data = content.encode("utf-8") if isinstance(content, str) else content
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_seeds(text):
    """``a..b`` (inclusive), ``a,b,c`` or a single integer."""
    m = re.fullmatch(r"\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise UsageError(f"empty seed range {text!r}")
        return list(range(a, b + 1))
    try:
        seeds = [int(s) for s in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}; use a..b or a,b,c") from None
    if len(set(seeds)) != len(seeds):
        raise UsageError("duplicate seeds")
    return seeds


def manifest(command, scenario, seeds, wall_time, extra=None):
    m = {
        "tool": "fluidsim",
        "version": __version__,
        "command": command,
        "scenario_sha256": scenario.config_hash(),
        "scenario_file": "scenario.toml",
        "seeds": list(seeds),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": round(wall_time, 3),
    }
    m.update(extra or {})
    return json.dumps(m, indent=1, sort_keys=True) + "\n"


def _emit(out, files):
    for name in sorted(files):
        write_atomic(os.path.join(out, name), files[name])


def _map(fn, args, jobs):
    """Results in argument order; workers only when ``jobs > 1``."""
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as ex:
        futures = [ex.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


# ---------------------------------------------------------------- commands

def cmd_contacts_compute(args):
    t0 = time.perf_counter()
    sc = parse_scenario(args.scenario)
    net = sc.network(margin=0.0)
    files = {
        "contacts.csv": net.plan.to_csv(),
        "plan.json": net.plan.to_json() + "\n",
        "scenario.toml": sc.to_toml(),
    }
    files["manifest.json"] = manifest("contacts compute", sc, [], time.perf_counter() - t0,
                                      {"n_windows": len(net.plan.windows)})
    _emit(args.out, files)
    print(f"{len(net.plan.windows)} contact windows -> {args.out}")


def cmd_dump_orbits(args):
    t0 = time.perf_counter()
    sc = parse_scenario(args.scenario)
    if not args.step > 0:
        raise UsageError("--step must be positive")
    sats = walker_constellation(sc.walker())
    times = np.arange(0.0, sc.horizon + 1e-9, args.step)
    tracks = ecef_tracks(sats, times)
    rows = [(fmt(float(t), 3), s, fmt(float(p[0]), 3), fmt(float(p[1]), 3), fmt(float(p[2]), 3))
            for i, t in enumerate(times) for s in range(len(sats)) for p in (tracks[s, i],)]
    files = {"orbits.csv": csv_text(["t_s", "sat_id", "x_m", "y_m", "z_m"], rows), "scenario.toml": sc.to_toml()}
    files["manifest.json"] = manifest("contacts dump-orbits", sc, [], time.perf_counter() - t0,
                                      {"step_s": args.step})
    _emit(args.out, files)
    print(f"{len(rows)} positions -> {args.out}")


def cmd_simulate(args):
    t0 = time.perf_counter()
    sc = parse_scenario(args.scenario)
    seeds = parse_seeds(args.seeds) if args.seeds else [sc.seed]
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    section = {"learn": "learning", "infer": "inference", "download": "download"}[args.protocol]
    require_section(sc, section)
    files = {"scenario.toml": sc.to_toml()}
    extra = {}
    if args.protocol == "learn":
        validate_learning(sc)
        results = _map(learn_seed, [(sc.data, s) for s in seeds], args.jobs)
        refs = []
        for f, ref in results:
            files.update(f)
            refs.append(ref)
        files["learn_reference.csv"] = csv_text(["seed", "centralized_accuracy", "threshold"], refs)
    elif args.protocol == "infer":
        validate_inference(sc)
        results = _map(infer_seed, [(sc.data, s) for s in seeds], args.jobs)
        summary, sweep = [], []
        for f, s, w in results:
            files.update(f)
            summary += s
            sweep += w
        files["infer_summary.csv"] = csv_text(SUMMARY_HEADER, summary)
        if sweep:
            files["infer_sweep.csv"] = csv_text(SWEEP_HEADER, sweep)
    else:
        base = os.path.dirname(os.path.abspath(args.scenario))
        setup = download_setup(sc.data, base)
        library, _, cache, analytic = setup
        results = _map(download_seed, [(sc.data, s, setup) for s in seeds], args.jobs)
        summary = []
        for f, s in results:
            files.update(f)
            summary += s
        files["download_summary.csv"] = csv_text(DL_SUMMARY_HEADER, summary)
        files["cache.csv"] = csv_text(["sat_id", "block_id"], cache.to_rows())
        files["library.toml"] = library.to_toml()
        extra["hit_ratio_analytic"] = round(analytic, 9)
    files["manifest.json"] = manifest(f"simulate {args.protocol}", sc, seeds, time.perf_counter() - t0, extra)
    _emit(args.out, files)
    print(f"{len(files)} files -> {args.out}")


def cmd_report(args):
    from .report import build_report
    if not os.path.isdir(args.dir):
        raise FileNotFoundError(f"no such directory: {args.dir}")
    out = args.out or os.path.join(args.dir, "report")
    files = build_report(args.dir)
    if not files:
        raise UsageError(f"no simulation outputs found under {args.dir}")
    _emit(out, files)
    print(f"{len(files)} report files -> {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="fluidsim", description="LEO satellite learning, inference and download simulator.")
    p.add_argument("--version", action="version", version=f"fluidsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("contacts", help="contact plan tools")
    csub = c.add_subparsers(dest="action", required=True)
    cc = csub.add_parser("compute", help="compute the contact plan for a scenario")
    cc.add_argument("scenario")
    cc.add_argument("--out", required=True)
    cc.set_defaults(func=cmd_contacts_compute)
    cd = csub.add_parser("dump-orbits", help="Earth-fixed satellite positions on a time grid")
    cd.add_argument("scenario")
    cd.add_argument("--out", required=True)
    cd.add_argument("--step", type=float, default=60.0, help="seconds between samples (default 60)")
    cd.set_defaults(func=cmd_dump_orbits)

    s = sub.add_parser("simulate", help="run a protocol over a seed range")
    s.add_argument("protocol", choices=["learn", "infer", "download"])
    s.add_argument("scenario")
    s.add_argument("--seeds", help="a..b, a,b,c or one integer (default: the scenario seed)")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1, help="parallel seed workers (default 1)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summary tables, long-format CSVs and figures")
    r.add_argument("dir")
    r.add_argument("--out", help="output directory (default <dir>/report)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ScenarioErrors as e:
        for err in e.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
