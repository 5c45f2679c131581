import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluidsim.contacts import (ContactPlan, ContactWindow, GroundNode, IslTopology, LinkClass, LinkModel,
                               Network, default_links, transmission_time)
from fluidsim.download import (BlockLibrary, CacheState, DemandModel, DlStatus, DownloadRequest, HitModel,
                               generate_library, generate_requests, hit_ratio, place_blocks_greedy,
                               run_download, schedule_multicast, schedule_unicast, serve_request,
                               zipf_demand)
from fluidsim.errors import SimulationError, ValidationError
from fluidsim.experiments import download_setup, network_for
from fluidsim.orbits import EARTH_RADIUS, Geodetic, OrbitalElements, ecef_position
from fluidsim.scenario import parse_scenario
from fluidsim.simcore import stream

from oracles import brute_min_makespan, optimal_hit_ratio, random_cache_instance

ROOT = Path(__file__).resolve().parents[1]
C = 299_792_458.0
USER = default_links()[LinkClass.USER]


def lib3():
    return BlockLibrary({"a": 10e6, "b": 20e6, "c": 30e6}, {"m0": ("a", "b"), "m1": ("a", "c")})


def static_net(n_sats=2, windows=None, isl=True, horizon=1000.0):
    sats = [OrbitalElements(EARTH_RADIUS + 550e3, 0.9, 0.0, 0.02 * k) for k in range(n_sats)]
    node = GroundNode("c0", "cluster", Geodetic.from_degrees(30, 20))
    ws = windows if windows is not None else [ContactWindow(s, "c0", 0.0, horizon, 1.0) for s in range(n_sats)]
    topo = IslTopology("grid", {s: [u for u in range(n_sats) if u != s] for s in range(n_sats)}) if isl else None
    return Network(sats, [node], ContactPlan(horizon, 10.0, ws), isl=topo)


def demand_for(lib, probs=None):
    probs = probs or {m: 1.0 / len(lib.models) for m in lib.model_ids}
    return DemandModel({"c0": probs}, {"c0": 1.0})


# ---------------------------------------------------------------- library

def test_library_round_trip(tmp_path):
    lib = generate_library(10, 4, 0.3, seed=2)
    p = tmp_path / "lib.toml"
    lib.save(p)
    assert BlockLibrary.load(p) == lib
    assert BlockLibrary.from_toml(lib.to_toml()).to_toml() == lib.to_toml()


def test_library_validation():
    with pytest.raises(ValidationError):
        BlockLibrary({"a": 1.0}, {"m": ("a", "zz")})
    with pytest.raises(ValidationError):
        BlockLibrary({"a": 0.0}, {"m": ("a",)})
    with pytest.raises(ValidationError):
        BlockLibrary.from_toml('blocks = [{id = "a", size_bytes = 1}, {id = "a", size_bytes = 2}]')


def test_generated_library_shares_blocks():
    lib = generate_library(16, 6, 0.25, seed=0)
    uses = {}
    for m, bl in lib.models.items():
        for b in bl:
            uses.setdefault(b, set()).add(m)
    assert any(len(v) >= 2 for v in uses.values())
    assert lib == generate_library(16, 6, 0.25, seed=0)


def test_demand_validation():
    with pytest.raises(ValidationError):
        DemandModel({"c0": {"m0": 0.5, "m1": 0.4}}, {"c0": 1.0})
    d = zipf_demand(lib3(), ["c0", "c1"], 1.0, 0.1, seed=1)
    for c in d.clusters:
        assert sum(d.probs[c].values()) == pytest.approx(1.0, abs=1e-12)
        assert sorted(d.probs[c].values()) == pytest.approx([1 / 3, 2 / 3])


# ---------------------------------------------------------------- hit ratio

def test_hit_ratio_boundaries():
    lib = lib3()
    net = static_net()
    assert hit_ratio(CacheState.empty(2, 1e9), lib, demand_for(lib), net) == 0.0
    assert hit_ratio(CacheState.full(lib, 2), lib, demand_for(lib), net) == pytest.approx(1.0)


def test_hit_ratio_half_coverage():
    lib = lib3()
    net = static_net(1, windows=[ContactWindow(0, "c0", 200.0, 700.0, 1.0)], isl=False)
    r = hit_ratio(CacheState.full(lib, 1), lib, demand_for(lib), net, isl_budget=0.0)
    assert r == pytest.approx(500.0 / 1000.0)


def test_hit_ratio_counts_isl_assembly():
    lib = lib3()
    net = static_net(2, windows=[ContactWindow(0, "c0", 0.0, 1000.0, 1.0)])
    cache = CacheState((frozenset({"a"}), frozenset({"b"})), (1e9, 1e9))
    dem = demand_for(lib, {"m0": 1.0, "m1": 0.0})
    assert hit_ratio(cache, lib, dem, net, isl_budget=2.0) == pytest.approx(1.0)
    # b takes 0.16 s over the ISL; a tighter budget turns it into a miss
    assert hit_ratio(cache, lib, dem, net, isl_budget=0.1) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.data())
def test_hit_ratio_monotone_in_cache(seed, data):
    lib, net, dem, cap = random_cache_instance(stream(seed, "monotone"))
    ids = lib.block_ids
    caches = [frozenset(data.draw(st.sets(st.sampled_from(ids)))) for _ in range(net.n_sats)]
    base = CacheState(tuple(caches), (math.inf,) * net.n_sats)
    s = data.draw(st.integers(0, net.n_sats - 1))
    b = data.draw(st.sampled_from(ids))
    grown = list(caches)
    grown[s] = grown[s] | {b}
    more = CacheState(tuple(grown), base.capacity)
    assert hit_ratio(more, lib, dem, net) >= hit_ratio(base, lib, dem, net) - 1e-12


# ---------------------------------------------------------------- placement

def staggered(n_sats, isl=True):
    # each satellite covers its own slice of the horizon
    return static_net(n_sats, [ContactWindow(s, "c0", 300.0 * s, 300.0 * s + 250.0, 1.0) for s in range(n_sats)],
                      isl=isl)


def test_greedy_caches_everything_when_room():
    lib = lib3()
    net = staggered(3, isl=False)
    cache = place_blocks_greedy(lib, net, demand_for(lib), lib.total_bytes())
    assert all(c == frozenset(lib.blocks) for c in cache.caches)
    coverage = 3 * 250.0 / 1000.0
    assert hit_ratio(cache, lib, demand_for(lib), net) == pytest.approx(coverage)


def test_greedy_picks_the_shared_block_first():
    lib = BlockLibrary({"s": 5e6, "x": 5e6, "y": 5e6, "z": 5e6},
                       {"m0": ("s",), "m1": ("s", "x"), "m2": ("s", "y"), "m3": ("s", "z")})
    net = staggered(3, isl=False)
    cache = place_blocks_greedy(lib, net, demand_for(lib), 5e6)
    assert all(c == frozenset({"s"}) for c in cache.caches)


def test_greedy_respects_capacity_and_is_deterministic():
    rng = stream(7, "capacity")
    for _ in range(10):
        lib, net, dem, cap = random_cache_instance(rng)
        a = place_blocks_greedy(lib, net, dem, cap)
        b = place_blocks_greedy(lib, net, dem, cap)
        assert a == b and a.to_rows() == b.to_rows()
        for s in range(net.n_sats):
            assert a.used(lib, s) <= cap


def test_overfull_cache_is_rejected():
    lib = lib3()
    with pytest.raises(SimulationError):
        CacheState((frozenset(lib.blocks),), (1e6,)).check(lib)
    with pytest.raises(ValidationError):
        CacheState.empty(2, 0.0)


def test_greedy_close_to_exhaustive_on_small_instances():
    rng = stream(11, "greedy-vs-opt")
    for _ in range(15):
        lib, net, dem, cap = random_cache_instance(rng)
        got = hit_ratio(place_blocks_greedy(lib, net, dem, cap), lib, dem, net)
        best = optimal_hit_ratio(lib, net, dem, cap)
        assert got <= best + 1e-12
        assert got >= 0.63 * best - 1e-12


# ---------------------------------------------------------------- serving

def test_miss_without_coverage():
    lib = lib3()
    net = static_net(1, windows=[ContactWindow(0, "c0", 500.0, 600.0, 1.0)])
    o = serve_request(DownloadRequest(0, "c0", "m0", 100.0), CacheState.full(lib, 1), lib, net)
    assert o.status == DlStatus.MISS and math.isnan(o.completion_time)


def test_local_hit_time_by_hand():
    lib = lib3()
    net = static_net(1, isl=False)
    t = 42.0
    o = serve_request(DownloadRequest(0, "c0", "m0", t), CacheState.full(lib, 1), lib, net)
    d = np.linalg.norm(ecef_position(net.constellation[0], t) - net.node("c0").location.to_ecef())
    expect = 8 * 10e6 / 50e6 + 8 * 20e6 / 50e6 + d / C + 0.010
    assert o.status == DlStatus.HIT_LOCAL and o.sat == 0
    assert o.completion_time == pytest.approx(expect, rel=1e-12)
    assert o.blocks_from == {"a": 0, "b": 0}


def test_isl_fetch_hit_records_source():
    lib = lib3()
    net = static_net(2, windows=[ContactWindow(0, "c0", 0.0, 1000.0, 1.0)])
    cache = CacheState((frozenset({"a"}), frozenset({"b", "c"})), (1e9, 1e9))
    o = serve_request(DownloadRequest(0, "c0", "m0", 10.0), cache, lib, net)
    assert o.status == DlStatus.HIT_ISL and o.blocks_from == {"a": 0, "b": 1}
    assert 0 < o.fetch_time <= 2.0
    o2 = serve_request(DownloadRequest(0, "c0", "m0", 10.0), cache, lib, net, isl_budget=0.01)
    assert o2.status == DlStatus.MISS


# ---------------------------------------------------------------- multicast

def reqs(models, t=0.0):
    return [DownloadRequest(i, "c0", m, t) for i, m in enumerate(models)]


def test_same_model_multicast_is_one_transmission():
    lib = lib3()
    mc = schedule_multicast(reqs(["m0"] * 5), lib, USER)
    uc = schedule_unicast(reqs(["m0"] * 5), lib, USER)
    one = transmission_time(30e6, USER)
    assert mc.makespan == pytest.approx(one)
    assert uc.makespan == pytest.approx(5 * one)


def test_no_sharing_equals_unicast():
    lib = BlockLibrary({"a": 1e6, "b": 2e6, "c": 3e6}, {"m0": ("a",), "m1": ("b", "c")})
    r = reqs(["m0", "m1"])
    assert schedule_multicast(r, lib, USER).makespan == pytest.approx(schedule_unicast(r, lib, USER).makespan)


def test_shared_block_schedule_is_minimal():
    lib = lib3()
    r = reqs(["m0", "m1", "m0"])
    mc = schedule_multicast(r, lib, USER)
    assert mc.makespan == pytest.approx(8 * (10e6 + 20e6 + 30e6) / USER.data_rate)
    assert mc.makespan == pytest.approx(brute_min_makespan(r, lib, USER))
    # shared block first, then by block id
    assert [t.block_id for t in mc.transmissions] == ["a", "b", "c"]
    for x, y in zip(mc.transmissions, mc.transmissions[1:]):
        assert y.start >= x.end - 1e-12
    for q in r:
        got = {t.block_id for t in mc.transmissions if q.request_id in t.recipients}
        assert got == set(lib.models[q.model_id])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_multicast_never_slower(seed, picks):
    lib = generate_library(8, 6, 0.25, seed=seed)
    r = reqs([lib.model_ids[k] for k in picks])
    mc = schedule_multicast(r, lib, USER).makespan
    uc = schedule_unicast(r, lib, USER).makespan
    assert mc <= uc + 1e-9
    if len(picks) > len(set(picks)):
        assert mc < uc


def test_erasures_only_lengthen():
    lib = lib3()
    lossy = LinkModel(LinkClass.USER, 50e6, 0.01, erasure_prob=0.5)
    clean = schedule_multicast(reqs(["m0", "m1"]), lib, USER).makespan
    noisy = schedule_multicast(reqs(["m0", "m1"]), lib, lossy, rng=stream(0, "erasure")).makespan
    assert noisy >= clean and noisy / transmission_time(1e6, USER) == pytest.approx(
        round(noisy / transmission_time(1e6, USER)))


# ---------------------------------------------------------------- runs

def test_burst_multicast_beats_unicast():
    lib = lib3()
    net = static_net(1, isl=False)
    burst = reqs(["m1"] * 20, t=100.0)
    cache = CacheState.full(lib, 1)
    _, mc = run_download(burst, cache, lib, net, multicast=True)
    _, uc = run_download(burst, cache, lib, net, multicast=False)
    assert mc["mean_completion_time"] < 0.2 * uc["mean_completion_time"]
    assert uc["makespan_ratio_vs_unicast"] == pytest.approx(1.0, rel=1e-12)
    assert mc["makespan_ratio_vs_unicast"] == pytest.approx(1 / 20)


def test_requests_are_deterministic_and_sorted():
    d = zipf_demand(lib3(), ["c0", "c1"], 1.0, 0.05, seed=3)
    a = generate_requests(d, 2000.0, 9)
    assert a == generate_requests(d, 2000.0, 9)
    assert [r.t_arrival for r in a] == sorted(r.t_arrival for r in a)


@pytest.fixture(scope="module")
def default_download():
    sc = parse_scenario(ROOT / "scenarios" / "default.toml")
    return sc, network_for(sc, "download"), download_setup(sc.data, str(ROOT))


def test_empirical_hit_ratio_matches_analytic(default_download):
    sc, net, (lib, demand, cache, analytic) = default_download
    slow = DemandModel(demand.probs, {c: 0.04 for c in demand.clusters})
    requests = generate_requests(slow, sc.section_horizon("download"), 21)
    assert len(requests) >= 1000
    _, s = run_download(requests, cache, lib, net, multicast=False)
    assert abs(s["hit_ratio_empirical"] - analytic) <= 0.05


def test_default_run_dominance(default_download):
    sc, net, (lib, demand, cache, _) = default_download
    requests = generate_requests(demand, sc.section_horizon("download"), 1)
    _, mc = run_download(requests, cache, lib, net, multicast=True)
    _, uc = run_download(requests, cache, lib, net, multicast=False)
    assert mc["makespan_ratio_vs_unicast"] <= 1.0
    assert mc["hit_ratio_empirical"] == uc["hit_ratio_empirical"]
