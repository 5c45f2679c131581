"""Brute-force references shared by the unit and acceptance tests."""
import itertools

import numpy as np

from fluidsim.contacts import (ContactPlan, ContactWindow, GroundNode, IslTopology, LinkClass, Network,
                               default_links, transmission_time)
from fluidsim.download import BlockLibrary, CacheState, DemandModel, HitModel
from fluidsim.orbits import Geodetic, WalkerSpec, walker_constellation


def random_cache_instance(rng):
    """At most 3 satellites, 5 blocks, 3 models and 2 clusters over a 1000 s plan."""
    ns = int(rng.integers(2, 4))
    nb = int(rng.integers(3, 6))
    nm = int(rng.integers(2, 4))
    blocks = {f"b{i}": float(rng.integers(1, 6)) * 1e6 for i in range(nb)}
    ids = sorted(blocks)
    models = {}
    for m in range(nm):
        k = int(rng.integers(1, min(3, nb) + 1))
        models[f"m{m}"] = tuple(sorted(rng.choice(ids, size=k, replace=False)))
    lib = BlockLibrary(blocks, models)
    horizon = 1000.0
    clusters = ["c0", "c1"][:int(rng.integers(1, 3))]
    nodes = [GroundNode(c, "cluster", Geodetic.from_degrees(0, 10 * i)) for i, c in enumerate(clusters)]
    ws = []
    for c in clusters:
        for s in range(ns):
            a = float(rng.uniform(0, horizon))
            d = float(rng.uniform(50, 500))
            ws.append(ContactWindow(s, c, a, min(a + d, horizon), 1.0))
    plan = ContactPlan(horizon, 10.0, ws)
    sats = walker_constellation(WalkerSpec.from_degrees(ns, 1, 0, 53, 550))
    isl = None
    if rng.random() < 0.5:
        isl = IslTopology("grid", {s: sorted({(s + 1) % ns, (s - 1) % ns}) for s in range(ns)})
    net = Network(sats, nodes, plan, default_links(), isl)
    probs = {}
    for c in clusters:
        p = np.random.default_rng(int(rng.integers(1 << 30))).dirichlet(np.ones(nm))
        probs[c] = dict(zip(sorted(models), p.tolist()))
    demand = DemandModel(probs, {c: 1.0 for c in clusters})
    cap = float(rng.integers(2, 9)) * 1e6
    return lib, net, demand, cap


def optimal_hit_ratio(lib, net, demand, cap, isl_budget=2.0):
    """Exhaustive optimum over per-satellite maximal feasible block sets.

    Restricting to maximal sets is exact because the hit ratio never
    decreases when a block is added.
    """
    hm = HitModel(lib, demand, net, isl_budget)
    ids = lib.block_ids
    subsets = [set(fs) for k in range(len(ids) + 1) for fs in itertools.combinations(ids, k)
               if sum(lib.blocks[b] for b in fs) <= cap]
    maximal = [f for f in subsets if not any(f < g for g in subsets)]
    best = 0.0
    for combo in itertools.product(maximal, repeat=net.n_sats):
        st = CacheState(tuple(frozenset(x) for x in combo), (cap,) * net.n_sats)
        best = max(best, hm.ratio(st))
    return best


def _partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for p in _partitions(rest):
        for i in range(len(p)):
            yield p[:i] + [[first] + p[i]] + p[i + 1:]
        yield [[first]] + p


def brute_min_makespan(pending, library, link):
    """Shortest schedule over every block order and every grouping of each block's
    recipients into separate transmissions (a block may be re-sent)."""
    need = {}
    for r in pending:
        for b in dict.fromkeys(library.models[r.model_id]):
            need.setdefault(b, []).append(r.request_id)
    best = np.inf
    blocks = sorted(need)
    for order in itertools.permutations(blocks):
        for groups in itertools.product(*[list(_partitions(need[b])) for b in order]):
            t = sum(len(g) * transmission_time(library.blocks[b], link) for b, g in zip(order, groups))
            best = min(best, t)
    return best


def user_link(net):
    return net.links[LinkClass.USER]


def brute_windows(sats, node, horizon, dt=1.0):
    """Windows from plain ``dt`` sampling of the elevation angle: (sat, first, last visible sample)."""
    from fluidsim.orbits import ecef_tracks, elevation_angle
    t = np.arange(0.0, horizon + dt / 2, dt)
    out = []
    for s, el in enumerate(sats):
        vis = elevation_angle(ecef_tracks([el], t)[0], node.location) >= node.min_elevation
        k = 0
        while k < t.size:
            if vis[k]:
                j = k
                while j + 1 < t.size and vis[j + 1]:
                    j += 1
                out.append((s, t[k], t[j]))
                k = j + 1
            else:
                k += 1
    return sorted(out, key=lambda w: (w[1], w[0]))


def tiny_brute(inst):
    """Most tasks that can finish by their deadlines, over every assignment to
    successor, station or drop, with each target serving first-come first-served."""
    best = 0
    kinds = ("succ", "station", "drop") if inst.isl else ("station", "drop")
    for ds in itertools.product(kinds, repeat=len(inst.tasks)):
        queue = {"succ": [], "station": []}
        for task, d in zip(inst.tasks, ds):
            if d == "succ":
                bits = 8 * (task.data + task.params)
                queue[d].append((task.strand_time + inst.isl_latency + bits / inst.isl_rate, task))
            elif d == "station":
                queue[d].append((task.strand_time + inst.feeder_latency + 8 * task.data / inst.feeder_rate, task))
        done = 0
        for d, rate, free, back in (("succ", inst.succ_rate, inst.succ_backlog, inst.succ_return),
                                    ("station", inst.station_rate, inst.station_backlog, inst.station_return)):
            for arrive, task in sorted(queue[d], key=lambda q: q[0]):
                free = max(free, arrive) + task.work / rate
                done += free + back <= task.deadline_abs
        best = max(best, done)
    return best
