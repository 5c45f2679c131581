"""Contact plans, link models, ISL topology and snapshot routing."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum

import networkx as nx
import numpy as np

from .errors import ValidationError
from .orbits import EARTH_RADIUS, Geodetic, ecef_position, ecef_snapshot, ecef_tracks, plane_slot

SPEED_OF_LIGHT = 299_792_458.0
BOUNDARY_RESOLUTION = 0.1  # s
DEFAULT_MIN_ELEVATION = math.radians(25.0)


class NodeKind(str, Enum):
    CLUSTER = "cluster"
    STATION = "station"


class LinkClass(str, Enum):
    USER = "user_link"
    FEEDER = "feeder_link"
    ISL = "isl"


@dataclass(frozen=True)
class GroundNode:
    id: str
    kind: NodeKind
    location: Geodetic
    min_elevation: float = DEFAULT_MIN_ELEVATION

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))
        if not 0.0 <= self.min_elevation < math.pi / 2:
            raise ValidationError("min_elevation", "must be in [0, pi/2)")


@dataclass(frozen=True)
class ContactWindow:
    sat_id: int
    ground_id: str
    t_start: float
    t_end: float
    peak_elevation: float

    @property
    def duration(self):
        return self.t_end - self.t_start


@dataclass(frozen=True)
class LinkModel:
    link_class: LinkClass
    data_rate: float  # bit/s
    extra_delay: float = 0.0  # s, one-way
    erasure_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "link_class", LinkClass(self.link_class))
        if not self.data_rate > 0:
            raise ValidationError(f"links.{self.link_class.value}.data_rate", "must be positive")
        if self.extra_delay < 0:
            raise ValidationError(f"links.{self.link_class.value}.extra_delay", "must be non-negative")
        if not 0.0 <= self.erasure_prob < 1.0:
            raise ValidationError(f"links.{self.link_class.value}.erasure_prob", "must be in [0, 1)")


def default_links():
    # extra_delay is one-way; user + feeder overheads of 10 ms each put the
    # median bent-pipe round trip near 50 ms at a 25 deg mask.
    return {
        LinkClass.USER: LinkModel(LinkClass.USER, 50e6, 0.010),
        LinkClass.FEEDER: LinkModel(LinkClass.FEEDER, 500e6, 0.010),
        LinkClass.ISL: LinkModel(LinkClass.ISL, 1e9, 0.001),
    }


def propagation_delay(distance):
    if np.any(np.asarray(distance) < 0):
        raise ValueError("distance must be non-negative")
    return distance / SPEED_OF_LIGHT


def transmission_time(payload_bytes, link):
    if payload_bytes < 0:
        raise ValueError("payload must be non-negative")
    return 8.0 * payload_bytes / link.data_rate


class ContactPlan:
    """Time-ordered visibility windows over ``[0, horizon]``."""

    def __init__(self, horizon, step, windows):
        self.horizon = float(horizon)
        self.step = float(step)
        self.windows = sorted(windows, key=lambda w: (w.t_start, w.sat_id, w.ground_id))
        self._by_ground = {}
        for w in self.windows:
            self._by_ground.setdefault(w.ground_id, []).append(w)
        self._arrays = {}
        for g, ws in self._by_ground.items():
            self._arrays[g] = (np.array([w.t_start for w in ws]), np.array([w.t_end for w in ws]),
                               np.array([w.sat_id for w in ws], dtype=int))

    def __len__(self):
        return len(self.windows)

    def __eq__(self, other):
        return (isinstance(other, ContactPlan) and self.horizon == other.horizon
                and self.step == other.step and self.windows == other.windows)

    def ground_ids(self):
        return sorted(self._by_ground)

    def windows_for(self, ground_id, sat_id=None):
        ws = self._by_ground.get(ground_id, [])
        if sat_id is not None:
            ws = [w for w in ws if w.sat_id == sat_id]
        return ws

    def visible(self, ground_id, t):
        """Satellite ids in contact with ``ground_id`` at time ``t`` (ascending)."""
        arr = self._arrays.get(ground_id)
        if arr is None:
            return []
        ts, te, sats = arr
        m = (ts <= t) & (t < te)
        return sorted(int(s) for s in sats[m])

    def window_at(self, ground_id, sat_id, t):
        arr = self._arrays.get(ground_id)
        if arr is None:
            return None
        ts, te, sats = arr
        idx = np.nonzero((sats == sat_id) & (ts <= t) & (t < te))[0]
        return self._by_ground[ground_id][idx[0]] if idx.size else None

    def next_window(self, ground_id, t, sat_id=None):
        """First window of ``ground_id`` starting at or after ``t``."""
        for w in self._by_ground.get(ground_id, []):
            if w.t_start >= t and (sat_id is None or w.sat_id == sat_id):
                return w
        return None

    def boundaries(self, ground_id):
        """Sorted distinct times at which the visible set of ``ground_id`` can change."""
        pts = {0.0, self.horizon}
        for w in self._by_ground.get(ground_id, []):
            pts.add(min(max(w.t_start, 0.0), self.horizon))
            pts.add(min(max(w.t_end, 0.0), self.horizon))
        return sorted(pts)

    def occupancy(self, ground_id, times):
        """Binary any-satellite-visible timeline sampled at ``times``."""
        times = np.asarray(times, dtype=float)
        out = np.zeros(times.shape, dtype=bool)
        for w in self._by_ground.get(ground_id, []):
            out |= (times >= w.t_start) & (times < w.t_end)
        return out

    def to_records(self):
        return [asdict(w) for w in self.windows]

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["sat_id", "ground_id", "t_start_s", "t_end_s", "peak_elev_deg"])
        for w in self.windows:
            wr.writerow([w.sat_id, w.ground_id, f"{w.t_start:.3f}", f"{w.t_end:.3f}",
                         f"{math.degrees(w.peak_elevation):.4f}"])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def to_json(self):
        return json.dumps({"horizon": self.horizon, "step": self.step, "windows": self.to_records()},
                          sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["horizon"], d["step"], [ContactWindow(**w) for w in d["windows"]])


def _elevations(tracks, site):
    r_site = site.to_ecef()
    up = r_site / np.linalg.norm(r_site)
    d = tracks - r_site
    return np.arcsin(np.clip((d @ up) / np.linalg.norm(d, axis=-1), -1.0, 1.0))


def _elevation_at(constellation, sats, times, site):
    pos = np.stack([ecef_position(constellation[s], t) for s, t in zip(sats, times)])
    return _elevations(pos, site)


def _refine(constellation, site, mask, sats, lo, hi, rising):
    """Vectorized bisection of the mask crossing inside each [lo, hi] bracket.

    For rising edges ``lo`` is out of view and ``hi`` in view (reversed for
    setting edges); the returned time is the in-view end of the final bracket,
    so it never crosses a sampled flip.
    """
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    while lo.size and np.max(hi - lo) > BOUNDARY_RESOLUTION:
        mid = 0.5 * (lo + hi)
        inside = _elevation_at(constellation, sats, mid, site) >= mask
        if rising:
            hi = np.where(inside, mid, hi)
            lo = np.where(inside, lo, mid)
        else:
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
    return hi if rising else lo


def sample_times(horizon, step):
    n = int(math.floor(horizon / step + 1e-9))
    t = np.arange(n + 1) * float(step)
    if t[-1] < horizon - 1e-9:
        t = np.append(t, horizon)
    return t


def compute_contact_plan(constellation, ground_nodes, horizon, step):
    """Sample elevations every ``step`` seconds and bisect each in/out flip to 0.1 s."""
    if not step > 0:
        raise ValidationError("step", "must be positive")
    if horizon < step:
        raise ValidationError("horizon", "must be at least one step")
    windows = []
    if not constellation or not ground_nodes:
        return ContactPlan(horizon, step, windows)
    times = sample_times(horizon, step)
    tracks = ecef_tracks(constellation, times)
    for g in ground_nodes:
        elev = _elevations(tracks, g.location)
        vis = elev >= g.min_elevation
        padded = np.zeros((vis.shape[0], vis.shape[1] + 2), dtype=bool)
        padded[:, 1:-1] = vis
        diff = np.diff(padded.astype(np.int8), axis=1)
        rs, ri = np.nonzero(diff == 1)  # first in-view sample index ri
        fs, fi = np.nonzero(diff == -1)  # first out-of-view sample index fi
        starts = times[ri].astype(float)
        mask = ri > 0
        if mask.any():
            starts[mask] = _refine(constellation, g.location, g.min_elevation, rs[mask],
                                   times[ri[mask] - 1], times[ri[mask]], rising=True)
        ends = np.where(fi < times.size, times[np.minimum(fi, times.size - 1)], times[-1]).astype(float)
        mask = fi < times.size
        if mask.any():
            ends[mask] = _refine(constellation, g.location, g.min_elevation, fs[mask],
                                 times[fi[mask] - 1], times[fi[mask]], rising=False)
        for k in range(rs.size):
            s = int(rs[k])
            peak = float(elev[s, ri[k]:fi[k]].max())
            if ends[k] > starts[k]:
                windows.append(ContactWindow(s, g.id, float(starts[k]), float(ends[k]), peak))
    return ContactPlan(horizon, step, windows)


@dataclass
class IslTopology:
    mode: str
    neighbors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("none", "grid"):
            raise ValidationError("isl.mode", "must be 'none' or 'grid'")

    def of(self, sat_id):
        return self.neighbors.get(sat_id, [])

    def edges(self):
        return sorted({(min(a, b), max(a, b)) for a, ns in self.neighbors.items() for b in ns})


def build_isl_topology(spec, mode="grid", seam=True):
    """+Grid topology: in-plane predecessor/successor plus same-slot cross-plane neighbors."""
    if mode == "none" or spec.total_sats == 0:
        return IslTopology("none", {i: [] for i in range(spec.total_sats)})
    nb = {i: set() for i in range(spec.total_sats)}
    per = spec.per_plane

    def link(a, b):
        if a != b:
            nb[a].add(b)
            nb[b].add(a)

    for sid in range(spec.total_sats):
        p, j = plane_slot(spec, sid)
        link(sid, p * per + (j + 1) % per)
        if p + 1 < spec.planes:
            link(sid, (p + 1) * per + j)
        elif seam and spec.planes > 1:
            link(sid, j)
    return IslTopology("grid", {i: sorted(v) for i, v in nb.items()})


@dataclass(frozen=True)
class Route:
    path: tuple
    latency: float

    @property
    def reachable(self):
        return self.latency != math.inf

    @property
    def hops(self):
        return max(len(self.path) - 1, 0)


NO_ROUTE = Route((), math.inf)


def snapshot_graph(topology, constellation, t, ground_nodes=(), plan=None, links=None):
    """Weighted graph at time ``t``: ISL edges plus ground links open in ``plan``."""
    links = links or default_links()
    g = nx.Graph()
    g.add_nodes_from(range(len(constellation)))
    pos = {i: ecef_position(el, t) for i, el in enumerate(constellation)}
    isl = links[LinkClass.ISL]
    for a, b in topology.edges():
        d = float(np.linalg.norm(pos[a] - pos[b]))
        g.add_edge(a, b, weight=propagation_delay(d) + isl.extra_delay, link=LinkClass.ISL)
    for gn in ground_nodes:
        g.add_node(gn.id)
        if plan is None:
            continue
        lk = links[LinkClass.FEEDER if gn.kind == NodeKind.STATION else LinkClass.USER]
        site = gn.location.to_ecef()
        for s in plan.visible(gn.id, t):
            d = float(np.linalg.norm(pos[s] - site))
            g.add_edge(gn.id, s, weight=propagation_delay(d) + lk.extra_delay, link=lk.link_class)
    return g


def snapshot_route(topology, constellation, t, src, dst, ground_nodes=(), plan=None, links=None):
    """Minimum-latency path at time ``t``; ``NO_ROUTE`` when disconnected."""
    if src == dst:
        return Route((), 0.0)
    g = snapshot_graph(topology, constellation, t, ground_nodes, plan, links)
    if src not in g or dst not in g:
        return NO_ROUTE
    try:
        lat, path = nx.single_source_dijkstra(g, src, dst, weight="weight")
    except nx.NetworkXNoPath:
        return NO_ROUTE
    return Route(tuple(path), float(lat))


def route_link_classes(g, path):
    return [g.edges[a, b]["link"] for a, b in zip(path, path[1:])]


def isl_distance(constellation, a, b, t):
    return float(np.linalg.norm(ecef_position(constellation[a], t) - ecef_position(constellation[b], t)))


def slant_range_to(constellation, sat_id, node, t):
    return float(np.linalg.norm(ecef_position(constellation[sat_id], t) - node.location.to_ecef()))


def footprint_half_angle(altitude, min_elevation):
    """Earth central angle (rad) of the coverage circle edge."""
    r = EARTH_RADIUS / (EARTH_RADIUS + altitude)
    return math.acos(r * math.cos(min_elevation)) - min_elevation


class Network:
    """Constellation, ground nodes, contact plan, links and ISL topology.

    Adds cached single-instant routing used by the protocol simulations;
    ``snapshot_route`` remains the reference implementation.
    """

    def __init__(self, constellation, ground_nodes, plan, links=None, isl=None, route_resolution=1.0):
        self.constellation = list(constellation)
        self.ground_nodes = list(ground_nodes)
        self._nodes = {g.id: g for g in self.ground_nodes}
        self.plan = plan
        self.links = links or default_links()
        self.isl = isl or IslTopology("none", {i: [] for i in range(len(self.constellation))})
        self.route_resolution = route_resolution
        self._snap = {}
        self._dist_cache = {}

    @property
    def n_sats(self):
        return len(self.constellation)

    def node(self, gid):
        return self._nodes[gid]

    def stations(self):
        return [g for g in self.ground_nodes if g.kind == NodeKind.STATION]

    def clusters(self):
        return [g for g in self.ground_nodes if g.kind == NodeKind.CLUSTER]

    def positions(self, t):
        key = float(t)
        pos = self._snap.get(key)
        if pos is None:
            if len(self._snap) > 4096:
                self._snap.clear()
            pos = self._snap[key] = ecef_snapshot(self.constellation, t)
        return pos

    def sat_pos(self, sat, t):
        return ecef_position(self.constellation[sat], t)

    def slant(self, sat, node, t):
        return float(np.linalg.norm(self.sat_pos(sat, t) - node.location.to_ecef()))

    def isl_distance(self, a, b, t):
        return float(np.linalg.norm(self.sat_pos(a, t) - self.sat_pos(b, t)))

    def ground_link(self, node):
        return self.links[LinkClass.FEEDER if node.kind == NodeKind.STATION else LinkClass.USER]

    def ground_latency(self, sat, gid, t):
        """One-way propagation plus overhead between ``sat`` and ground node ``gid``."""
        node = self._nodes[gid]
        return propagation_delay(self.slant(sat, node, t)) + self.ground_link(node).extra_delay

    def _bucket(self, t):
        r = self.route_resolution
        return math.floor(t / r) * r if r else t

    def _isl_matrix(self, t):
        from scipy.sparse import csr_matrix
        pos = self.positions(t)
        edges = self.isl.edges()
        isl = self.links[LinkClass.ISL]
        n = self.n_sats + 1  # last index is a virtual ground source
        if not edges:
            return pos, [], [], [], n
        a = np.array([e[0] for e in edges])
        b = np.array([e[1] for e in edges])
        w = np.linalg.norm(pos[a] - pos[b], axis=1) / SPEED_OF_LIGHT + isl.extra_delay
        return pos, list(np.concatenate([a, b])), list(np.concatenate([b, a])), list(np.concatenate([w, w])), n

    def distances_from_ground(self, gid, t):
        """Latency (s) and predecessor arrays from ground node ``gid`` to every satellite
        at the routing bucket containing ``t``; unreachable satellites get inf."""
        tb = self._bucket(t)
        key = (gid, tb)
        hit = self._dist_cache.get(key)
        if hit is not None:
            return hit
        if len(self._dist_cache) > 8192:
            self._dist_cache.clear()
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import dijkstra
        pos, rows, cols, ws, n = self._isl_matrix(tb)
        node = self._nodes[gid]
        site = node.location.to_ecef()
        extra = self.ground_link(node).extra_delay
        for s in self.plan.visible(gid, tb):
            rows.append(n - 1)
            cols.append(s)
            ws.append(float(np.linalg.norm(pos[s] - site)) / SPEED_OF_LIGHT + extra)
        if not ws:
            out = (np.full(self.n_sats, math.inf), np.full(self.n_sats, -9999))
        else:
            m = csr_matrix((ws, (rows, cols)), shape=(n, n))
            d, pred = dijkstra(m, directed=True, indices=n - 1, return_predecessors=True)
            out = (d[:-1], pred[:-1])
        self._dist_cache[key] = out
        return out

    def distances_from_sat(self, sat, t):
        """ISL-only latency from ``sat`` to every satellite at the routing bucket of ``t``."""
        tb = self._bucket(t)
        key = ("sat", sat, tb)
        hit = self._dist_cache.get(key)
        if hit is not None:
            return hit
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import dijkstra
        pos, rows, cols, ws, n = self._isl_matrix(tb)
        if not ws:
            d = np.full(self.n_sats, math.inf)
            d[sat] = 0.0
            pred = np.full(self.n_sats, -9999)
        else:
            m = csr_matrix((ws, (rows, cols)), shape=(n, n))
            d, pred = dijkstra(m, directed=True, indices=sat, return_predecessors=True)
            d, pred = d[:-1], pred[:-1]
        self._dist_cache[key] = (d, pred)
        return d, pred

    def isl_hops_to_ground(self, gid, sat, t):
        """Number of ISL hops on the cached best path from ``gid`` to ``sat``."""
        d, pred = self.distances_from_ground(gid, t)
        if not math.isfinite(d[sat]):
            return None
        hops, cur = 0, sat
        while pred[cur] >= 0 and pred[cur] < self.n_sats:
            cur = pred[cur]
            hops += 1
        return hops

    def isl_hops(self, src, dst, t):
        d, pred = self.distances_from_sat(src, t)
        if not math.isfinite(d[dst]):
            return None
        hops, cur = 0, dst
        while cur != src:
            cur = pred[cur]
            hops += 1
        return hops
