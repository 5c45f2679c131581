"""Aggregate simulation outputs into tables, long-format CSVs and PNG figures."""
from __future__ import annotations

import csv
import io
import math
import os
import re
from collections import defaultdict

import numpy as np

from .experiments import csv_text, fmt

TRACE_RE = re.compile(r"learn_(?P<scheme>[a-z_]+)_seed(?P<seed>-?\d+)\.csv$")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _float(s):
    if s in ("", None):
        return float("nan")
    return float(s)


def time_to_threshold(times, accs, threshold):
    """First time the accuracy reaches ``threshold``; inf if it never does."""
    for t, a in zip(times, accs):
        if a >= threshold:
            return t
    return math.inf


def _walk(root, skip):
    for d, dirs, names in os.walk(root):
        dirs[:] = sorted(x for x in dirs if os.path.abspath(os.path.join(d, x)) != skip)
        for n in sorted(names):
            yield d, n


def collect(root, skip=None):
    """Index the simulation outputs found below ``root``."""
    skip = os.path.abspath(skip or os.path.join(root, "report"))
    found = defaultdict(list)
    for d, n in _walk(root, skip):
        m = TRACE_RE.match(n)
        if m:
            found["traces"].append((d, m["scheme"], int(m["seed"]), os.path.join(d, n)))
        elif n in ("learn_reference.csv", "infer_summary.csv", "infer_sweep.csv", "download_summary.csv"):
            found[n].append(os.path.join(d, n))
    return found


# ---------------------------------------------------------------- learning

def learning_tables(found):
    refs = {}
    for p in found.get("learn_reference.csv", []):
        d = os.path.dirname(p)
        for r in read_csv(p):
            refs[(d, int(r["seed"]))] = _float(r["threshold"])
    long_rows, per_scheme, curves = [], defaultdict(list), defaultdict(list)
    for d, scheme, seed, path in sorted(found.get("traces", [])):
        rows = read_csv(path)
        t = [_float(r["t_s"]) for r in rows]
        a = [_float(r["test_accuracy"]) for r in rows]
        long_rows += [(scheme, seed, r["t_s"], r["test_accuracy"]) for r in rows]
        thr = refs.get((d, seed), math.nan)
        ttt = time_to_threshold(t, a, thr) if not math.isnan(thr) else math.nan
        per_scheme[scheme].append((ttt, a[-1] if a else math.nan))
        curves[scheme].append((t, a))
    table = []
    for scheme in sorted(per_scheme):
        vals = per_scheme[scheme]
        ttt = np.array([v[0] for v in vals])
        fin = np.array([v[1] for v in vals])
        table.append((scheme, len(vals), fmt(float(np.median(ttt)), 3), fmt(float(np.median(fin)))))
    return table, long_rows, curves


# ---------------------------------------------------------------- inference

def _group(rows, key, cols):
    g = defaultdict(list)
    for r in rows:
        g[r[key]].append([_float(r[c]) for c in cols])
    return g


def inference_tables(found):
    rows = [r for p in found.get("infer_summary.csv", []) for r in read_csv(p)]
    cols = ["completion_rate", "mean_latency_s", "mean_accuracy", "h_migrations", "v_migrations"]
    g = _group(rows, "policy", cols)
    table = []
    for pol in sorted(g):
        v = np.array(g[pol])
        table.append((pol, len(v)) + tuple(fmt(float(np.nanmean(v[:, i]))) for i in range(len(cols))))
    long_rows = [(r["policy"], r["seed"], r["completion_rate"]) for r in rows]
    sweep = [r for p in found.get("infer_sweep.csv", []) for r in read_csv(p)]
    gs = _group(sweep, "min_accuracy", ["completion_rate", "mean_latency_s", "mean_accuracy"])
    sweep_table = []
    for q in sorted(gs, key=float):
        v = np.array(gs[q])
        sweep_table.append((q, len(v)) + tuple(fmt(float(np.nanmean(v[:, i]))) for i in range(3)))
    return table, long_rows, sweep_table


# ---------------------------------------------------------------- download

def download_tables(found):
    rows = [r for p in found.get("download_summary.csv", []) for r in read_csv(p)]
    cols = ["hit_ratio_empirical", "mean_completion_s", "makespan_ratio_vs_unicast"]
    g = _group(rows, "mode", cols)
    table = []
    for mode in sorted(g):
        v = np.array(g[mode])
        table.append((mode, len(v)) + tuple(fmt(float(np.nanmean(v[:, i]))) for i in range(len(cols))))
    long_rows = [(r["mode"], r["seed"], r["makespan_ratio_vs_unicast"]) for r in rows]
    return table, long_rows


# ---------------------------------------------------------------- figures

def _png(fig):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    import matplotlib.pyplot as plt
    plt.close(fig)
    return buf.getvalue()


def _fig_learning(curves):
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, scheme in enumerate(sorted(curves)):
        for j, (t, a) in enumerate(curves[scheme]):
            ax.plot(np.array(t) / 3600.0, a, color=f"C{k}", lw=1, alpha=0.7,
                    label=scheme if j == 0 else None)
    ax.set_xlabel("time (h)")
    ax.set_ylabel("test accuracy")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _png(fig)


def _fig_bars(table, col, ylabel):
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = [r[0] for r in table]
    ax.bar(range(len(names)), [_float(r[col]) for r in table], color="C0")
    ax.set_xticks(range(len(names)), names, rotation=15)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _png(fig)


def _fig_tradeoff(sweep_table):
    import matplotlib.pyplot as plt
    q = [float(r[0]) for r in sweep_table]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(q, [_float(r[2]) for r in sweep_table], "o-", color="C0", label="completion rate")
    ax.set_xlabel("minimum accuracy")
    ax.set_ylabel("completion rate")
    ax2 = ax.twinx()
    ax2.plot(q, [_float(r[3]) for r in sweep_table], "s--", color="C1", label="mean latency")
    ax2.set_ylabel("mean latency (s)")
    fig.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    return _png(fig)


def build_report(root, figures=True):
    """Return ``{filename: str | bytes}`` for everything found under ``root``."""
    import matplotlib
    matplotlib.use("Agg")
    found = collect(root)
    files = {}
    table, long_rows, curves = learning_tables(found)
    if table:
        files["learn_table.csv"] = csv_text(["scheme", "n_runs", "median_time_to_threshold_s",
                                             "median_final_accuracy"], table)
        files["learn_accuracy_long.csv"] = csv_text(["scheme", "seed", "t_s", "test_accuracy"], long_rows)
        if figures:
            files["learn_accuracy.png"] = _fig_learning(curves)
    table, long_rows, sweep = inference_tables(found)
    if table:
        files["infer_table.csv"] = csv_text(["policy", "n_runs", "completion_rate", "mean_latency_s",
                                             "mean_accuracy", "h_migrations", "v_migrations"], table)
        files["infer_completion_long.csv"] = csv_text(["policy", "seed", "completion_rate"], long_rows)
        if figures:
            files["infer_completion.png"] = _fig_bars(table, 2, "completion rate")
    if sweep:
        files["infer_tradeoff.csv"] = csv_text(["min_accuracy", "n_runs", "completion_rate", "mean_latency_s",
                                                "mean_accuracy"], sweep)
        if figures:
            files["infer_tradeoff.png"] = _fig_tradeoff(sweep)
    table, long_rows = download_tables(found)
    if table:
        files["download_table.csv"] = csv_text(["mode", "n_runs", "hit_ratio_empirical", "mean_completion_s",
                                                "makespan_ratio_vs_unicast"], table)
        files["download_makespan_long.csv"] = csv_text(["mode", "seed", "makespan_ratio_vs_unicast"], long_rows)
        if figures:
            files["download_makespan.png"] = _fig_bars(table, 4, "makespan / unicast makespan")
    return files
