"""Per-seed experiment runners driven by a validated Scenario.

Each runner returns ``{filename: text}`` so the caller decides where and how
files land. Runners take the scenario's plain data dict so they can be
shipped to worker processes.
"""
from __future__ import annotations

import csv
import functools
import io
import math
import os

from .download import (BlockLibrary, generate_library, generate_requests, outcomes_csv,
                       place_blocks_greedy, run_download, zipf_demand, hit_ratio)
from .inference import (Capacities, OUTCOME_HEADER as INFER_HEADER, PolicyConfig, build_cascade,
                        generate_workload, run_inference)
from .learning import FlSchemeConfig, centralized_accuracy, gen_synthetic_data, run_fl
from .contacts import Network
from .errors import ScenarioErrors, ValidationError
from .scenario import Scenario, loads

POLICY_FLAGS = {
    "full": dict(migration=True, horizontal=True, vertical=True),
    "no_migration": dict(migration=False),
    "horizontal_only": dict(migration=True, horizontal=True, vertical=False),
    "vertical_only": dict(migration=True, horizontal=False, vertical=True),
}


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fmt(x, digits=6):
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "inf"
        return f"{x:.{digits}f}"
    return x


@functools.lru_cache(maxsize=4)
def _network(toml_text, horizon):
    return loads(toml_text).network(horizon)


def network_for(scenario, section):
    """Network covering ``section``'s horizon, cached per process."""
    return _network(scenario.to_toml(), scenario.section_horizon(section))


def cluster_ids(scenario):
    return [g["id"] for g in scenario.data["ground"] if g["kind"] == "cluster"]


# ---------------------------------------------------------------- learning

def _fl_config(sec, scheme):
    return FlSchemeConfig(scheme=scheme, local_epochs=sec["local_epochs"], learning_rate=sec["learning_rate"],
                          batch_size=sec["batch_size"], mixing_alpha=sec["mixing_alpha"],
                          staleness_tau=sec.get("staleness_tau"), gossip_degree=sec["gossip_degree"],
                          aggregation_period=sec["aggregation_period"], min_updates=sec.get("min_updates"),
                          seconds_per_epoch=sec["seconds_per_epoch"], hidden=sec["hidden"])


def learning_network(scenario):
    """The shared network, restricted to the stations listed in ``[learning].stations``."""
    net = network_for(scenario, "learning")
    chosen = scenario.section("learning").get("stations")
    if chosen is None:
        return net
    keep = [g for g in net.ground_nodes if g.kind == "cluster" or g.id in chosen]
    return Network(net.constellation, keep, net.plan, net.links, net.isl, net.route_resolution)


def learn_seed(data, seed):
    """Every scheme on one seed. Returns (files, reference row)."""
    sc = Scenario(data)
    sec = sc.section("learning")
    horizon = sc.section_horizon("learning")
    net = learning_network(sc)
    ids = cluster_ids(sc)

    def fresh():
        return gen_synthetic_data(len(ids), sec["clients_per_cluster"], sec["labels_per_cluster"],
                                  sec["n_classes"], sec["dim"], sec["samples_per_client"], seed,
                                  class_sep=sec["class_sep"], ground_ids=ids)

    clusters, test = fresh()
    arch = (sec["dim"], sec["hidden"], sec["n_classes"])
    central = centralized_accuracy(clusters, test, arch, sec["centralized_epochs"], sec["learning_rate"],
                                   sec["batch_size"], seed)
    files = {}
    for scheme in sec["schemes"]:
        clusters, test = fresh()
        trace, _, _ = run_fl(_fl_config(sec, scheme), net, clusters, test, horizon, seed)
        rows = [(scheme, seed, fmt(t, 3), fmt(a)) for t, a in trace.points]
        files[f"learn_{scheme}_seed{seed}.csv"] = csv_text(["scheme", "seed", "t_s", "test_accuracy"], rows)
    return files, (seed, fmt(central), fmt(sec["threshold_fraction"] * central))


def validate_learning(scenario):
    """Checks that need the assembled network rather than the raw file."""
    sec = scenario.section("learning")
    errs = []
    if len(cluster_ids(scenario)) < 1:
        errs.append(ValidationError("ground", "learning needs at least one cluster node"))
    stations = [g["id"] for g in scenario.data["ground"] if g["kind"] == "station"]
    chosen = sec.get("stations")
    if chosen is not None:
        for sid in chosen:
            if sid not in stations:
                errs.append(ValidationError("learning.stations", f"{sid!r} is not a station id"))
        stations = [s for s in stations if s in chosen]
    if "hierarchical_gs" in sec["schemes"] and not stations:
        errs.append(ValidationError("learning.schemes", "hierarchical_gs needs at least one station"))
    if "isl_gossip" in sec["schemes"] and scenario.data["isl"]["mode"] != "grid":
        errs.append(ValidationError("learning.schemes", "isl_gossip needs isl.mode = 'grid'"))
    if sec["labels_per_cluster"] > sec["n_classes"]:
        errs.append(ValidationError("learning.labels_per_cluster", "must not exceed n_classes"))
    if errs:
        raise ScenarioErrors(errs)


# ---------------------------------------------------------------- inference

def capacities(sec):
    return Capacities(device=sec["device_rate"], satellite=sec["satellite_rate"], station=sec["station_rate"])


def policy_config(sec, name):
    return PolicyConfig(placement_epoch=sec["placement_epoch"], cached_stages=tuple(sec["cached_stages"]),
                        result_size=sec["result_size"], queue_threshold=sec.get("queue_threshold"),
                        **POLICY_FLAGS[name])


SUMMARY_HEADER = ["policy", "seed", "n_tasks", "completion_rate", "mean_latency_s", "mean_accuracy",
                  "h_migrations", "v_migrations"]
SWEEP_HEADER = ["min_accuracy", "seed", "n_tasks", "completion_rate", "mean_latency_s", "mean_accuracy"]


def infer_seed(data, seed):
    """Every policy (and the accuracy sweep) on one seed's workload.

    Returns (files, summary rows, sweep rows).
    """
    sc = Scenario(data)
    sec = sc.section("inference")
    horizon = sc.section_horizon("inference")
    net = network_for(sc, "inference")
    cascade = build_cascade(sec["profile"])
    caps = capacities(sec)
    ids = cluster_ids(sc)
    workload = generate_workload(ids, sec["rate"], horizon, seed, tuple(sec["min_accuracy"]),
                                 tuple(sec["deadline"]), sec["input_size"])
    files, summary, sweep = {}, [], []
    for name in sec["policies"]:
        outcomes, s = run_inference(workload, cascade, net, caps, policy_config(sec, name), seed)
        files[f"infer_{name}_seed{seed}.csv"] = csv_text(INFER_HEADER, [o.row() for o in outcomes])
        summary.append([name, seed, s["n_tasks"], fmt(s["completion_rate"]), fmt(s["mean_latency"]),
                        fmt(s["mean_accuracy"]), s["h_migrations"], s["v_migrations"]])
    for q in sec["sweep_min_accuracy"]:
        wl = generate_workload(ids, sec["rate"], horizon, seed, (q,), tuple(sec["deadline"]), sec["input_size"])
        _, s = run_inference(wl, cascade, net, caps, policy_config(sec, "full"), seed)
        sweep.append([fmt(q, 4), seed, s["n_tasks"], fmt(s["completion_rate"]), fmt(s["mean_latency"]),
                      fmt(s["mean_accuracy"])])
    return files, summary, sweep


def validate_inference(scenario):
    sec = scenario.section("inference")
    errs = []
    if not cluster_ids(scenario):
        errs.append(ValidationError("ground", "inference needs at least one cluster node"))
    try:
        cascade = build_cascade(sec["profile"])
    except ValidationError as e:
        errs.append(e)
    else:
        bad = [i for i in sec["cached_stages"] if i >= cascade.n_stages]
        if bad:
            errs.append(ValidationError("inference.cached_stages", f"stage {bad[0]} does not exist"))
    if sec["rate"] <= 0:
        errs.append(ValidationError("inference.rate", "must be positive"))
    if errs:
        raise ScenarioErrors(errs)


# ---------------------------------------------------------------- download

def download_setup(data, base_dir="."):
    """Library, demand and greedy cache for the scenario (seed-independent)."""
    sc = Scenario(data)
    sec = sc.section("download")
    net = network_for(sc, "download")
    if sec.get("library"):
        path = sec["library"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        library = BlockLibrary.load(path)
    else:
        library = generate_library(sec["n_blocks"], sec["n_models"], sec["shared_fraction"], sc.seed,
                                   (sec["block_size_min"], sec["block_size_max"]))
    demand = zipf_demand(library, cluster_ids(sc), sec["zipf_exponent"], sec["rate"], sc.seed)
    cache = place_blocks_greedy(library, net, demand, sec["capacity_bytes"], sec["isl_budget"])
    analytic = hit_ratio(cache, library, demand, net, sec["isl_budget"])
    return library, demand, cache, analytic


DL_SUMMARY_HEADER = ["mode", "seed", "n_requests", "hit_ratio_empirical", "mean_completion_s",
                     "makespan_ratio_vs_unicast"]


def download_seed(data, seed, setup):
    sc = Scenario(data)
    sec = sc.section("download")
    net = network_for(sc, "download")
    library, demand, cache, _ = setup
    requests = generate_requests(demand, sc.section_horizon("download"), seed)
    files, summary = {}, []
    for mode in sec["modes"]:
        outcomes, s = run_download(requests, cache, library, net, multicast=(mode == "multicast"),
                                   isl_budget=sec["isl_budget"], batch_window=sec["batch_window"], seed=seed)
        files[f"download_{mode}_seed{seed}.csv"] = outcomes_csv(outcomes)
        summary.append([mode, seed, s["n_requests"], fmt(s["hit_ratio_empirical"]),
                        fmt(s["mean_completion_time"]), fmt(s["makespan_ratio_vs_unicast"])])
    return files, summary
