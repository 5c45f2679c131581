"""Federated learning over satellite carriers.

Three schemes share one event loop and one tiny network (dim -> hidden ->
classes, tanh hidden layer, softmax cross-entropy, plain SGD):

* ``dispersal``: each satellite carries the last regional model it produced
  and fuses it into the next region it serves; no feeder links, no ISLs.
* ``hierarchical_gs``: satellites ferry cluster updates to a ground station,
  which aggregates and sends the global model back out on later passes.
* ``isl_gossip``: every satellite keeps a replica, trains it on the clusters
  it overflies and periodically averages with ISL neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .contacts import LinkClass, Network, NodeKind, propagation_delay, transmission_time
from .errors import SimulationError, ValidationError
from .orbits import ecef_snapshot
from .simcore import Engine, MetricsLog, stream

BYTES_PER_PARAM = 4


class Scheme(str, Enum):
    DISPERSAL = "dispersal"
    HIERARCHICAL = "hierarchical_gs"
    GOSSIP = "isl_gossip"


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class ModelParams:
    vector: np.ndarray
    arch: tuple  # (dim, hidden, n_classes)

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        if v.shape != (n_params(self.arch),):
            raise ValidationError("model", f"expected {n_params(self.arch)} parameters, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("model", "parameters must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "arch", tuple(int(a) for a in self.arch))

    @property
    def size_bytes(self):
        return self.vector.size * BYTES_PER_PARAM

    def same_arch(self, other):
        if self.arch != other.arch:
            raise ValidationError("model", f"architecture mismatch {self.arch} vs {other.arch}")


def n_params(arch):
    d, h, c = arch
    return d * h + h + h * c + c


def unpack(vector, arch):
    d, h, c = arch
    i = 0
    w1 = vector[i:i + d * h].reshape(d, h); i += d * h
    b1 = vector[i:i + h]; i += h
    w2 = vector[i:i + h * c].reshape(h, c); i += h * c
    b2 = vector[i:i + c]
    return w1, b1, w2, b2


def init_model(arch, rng):
    d, h, c = arch
    w1 = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, h))
    w2 = rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, c))
    return ModelParams(np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)]), arch)


def zero_model(arch):
    return ModelParams(np.zeros(n_params(arch)), arch)


def logits(vector, arch, x):
    w1, b1, w2, b2 = unpack(vector, arch)
    return np.tanh(x @ w1 + b1) @ w2 + b2


def loss_and_grad(vector, arch, x, y):
    """Mean softmax cross-entropy and its gradient with respect to the flat vector."""
    w1, b1, w2, b2 = unpack(vector, arch)
    hid = np.tanh(x @ w1 + b1)
    z = hid @ w2 + b2
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
    dz = p
    dz[np.arange(n), y] -= 1.0
    dz /= n
    gw2 = hid.T @ dz
    gb2 = dz.sum(axis=0)
    dh = (dz @ w2.T) * (1.0 - hid ** 2)
    gw1 = x.T @ dh
    gb1 = dh.sum(axis=0)
    return float(loss), np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return int(self.y.size)


def local_train(model, dataset, epochs, lr, batch_size, rng):
    """Mini-batch SGD; returns a new ``ModelParams`` and leaves ``model`` untouched."""
    if epochs == 0 or len(dataset) == 0:
        return model
    if model.arch[0] != dataset.x.shape[1]:
        raise ValidationError("model", "input dimension does not match dataset")
    w = model.vector.copy()
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g = loss_and_grad(w, model.arch, dataset.x[idx], dataset.y[idx])
            if not math.isfinite(loss) or not np.all(np.isfinite(g)):
                raise SimulationError(f"non-finite loss during local training (lr={lr} too high?)")
            w -= lr * g
    if not np.all(np.isfinite(w)):
        raise SimulationError(f"parameters diverged during local training (lr={lr} too high?)")
    return ModelParams(w, model.arch)


def evaluate(model, test_set):
    """Fraction of argmax-correct predictions."""
    if len(test_set) == 0:
        return 0.0
    pred = np.argmax(logits(model.vector, model.arch, test_set.x), axis=1)
    return float(np.mean(pred == test_set.y))


def fedavg(models, weights):
    """Component-wise weighted mean of parameter vectors."""
    if not models:
        raise ValidationError("models", "need at least one model")
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(models),) or np.any(w < 0) or not w.sum() > 0:
        raise ValidationError("weights", "need one non-negative weight per model with positive sum")
    for m in models[1:]:
        models[0].same_arch(m)
    w = w / w.sum()
    out = np.tensordot(w, np.stack([m.vector for m in models]), axes=1)
    # keep the result inside the per-coordinate hull despite rounding
    stack = np.stack([m.vector for m in models])
    out = np.clip(out, stack.min(axis=0), stack.max(axis=0))
    return ModelParams(out, models[0].arch)


# ---------------------------------------------------------------- data

@dataclass
class ClientState:
    client_id: str
    data: Dataset
    local_model: ModelParams = None


@dataclass
class RegionalCluster:
    cluster_id: str
    ground_id: str
    clients: list
    labels: tuple
    regional_model: ModelParams = None
    regional_version: int = 0

    @property
    def n_samples(self):
        return sum(len(c.data) for c in self.clients)


def cluster_labels(n_clusters, labels_per_cluster, n_classes):
    """Rotating label subsets: cluster k owns labels kL, kL+1, ... (mod n_classes)."""
    return [tuple(sorted({(k * labels_per_cluster + j) % n_classes for j in range(labels_per_cluster)}))
            for k in range(n_clusters)]


def gen_synthetic_data(n_clusters, clients_per_cluster, labels_per_cluster, n_classes, dim,
                       samples_per_client, seed, test_per_class=100, class_sep=1.0, noise=1.0,
                       ground_ids=None):
    """Gaussian-blob classification split into label-restricted clusters.

    Returns ``(clusters, test_set)``; ``test_set`` is balanced over all classes.
    """
    if n_clusters < 1:
        raise ValidationError("learning.n_clusters", "must be at least 1")
    if clients_per_cluster < 1:
        raise ValidationError("learning.clients_per_cluster", "must be at least 1")
    if not 1 <= labels_per_cluster <= n_classes:
        raise ValidationError("learning.labels_per_cluster", "must be in [1, n_classes]")
    if samples_per_client < labels_per_cluster:
        raise ValidationError("learning.samples_per_client", "too few samples to cover the cluster's labels")
    rng = stream(seed, "fl/data")
    centers = rng.normal(0.0, class_sep, size=(n_classes, dim))

    def draw(labels):
        return Dataset(centers[labels] + rng.normal(0.0, noise, size=(labels.size, dim)), labels)

    subsets = cluster_labels(n_clusters, labels_per_cluster, n_classes)
    ground_ids = ground_ids or [f"cluster{k}" for k in range(n_clusters)]
    clusters = []
    for k, labs in enumerate(subsets):
        clients = []
        for c in range(clients_per_cluster):
            y = np.array([labs[(i + c) % len(labs)] for i in range(samples_per_client)], dtype=int)
            y = y[rng.permutation(y.size)]
            clients.append(ClientState(f"c{k}.{c}", draw(y)))
        clusters.append(RegionalCluster(f"k{k}", ground_ids[k], clients, labs))
    test = draw(np.repeat(np.arange(n_classes), test_per_class))
    return clusters, test


def pooled(clusters):
    xs = [c.data.x for k in clusters for c in k.clients]
    ys = [c.data.y for k in clusters for c in k.clients]
    return Dataset(np.concatenate(xs), np.concatenate(ys))


def centralized_accuracy(clusters, test_set, arch, epochs, lr, batch_size, seed):
    """Reference accuracy of the same network trained on the pooled client data."""
    m = init_model(arch, stream(seed, "fl/init"))
    m = local_train(m, pooled(clusters), epochs, lr, batch_size, stream(seed, "fl/centralized"))
    return evaluate(m, test_set)


# ---------------------------------------------------------------- fusion

@dataclass
class CarriedModel:
    sat_id: int
    payload: ModelParams
    source_cluster: str
    pickup_time: float
    staleness: float = None


def dispersal_fuse(regional, carried, alpha, now=None, log=None, staleness_tau=None):
    """``alpha * regional + (1 - alpha) * carried.payload``.

    With ``staleness_tau`` set, the carried weight decays with the time since
    pickup. ``now`` stamps the staleness onto ``carried`` and into ``log``.
    """
    regional.same_arch(carried.payload)
    a = float(alpha)
    if now is not None:
        carried.staleness = now - carried.pickup_time
        if log is not None:
            log.log("staleness", now, carried.staleness, sat=carried.sat_id, source=carried.source_cluster)
        if staleness_tau:
            a = a + (1.0 - a) * (1.0 - math.exp(-carried.staleness / staleness_tau))
    out = a * regional.vector + (1.0 - a) * carried.payload.vector
    lo = np.minimum(regional.vector, carried.payload.vector)
    hi = np.maximum(regional.vector, carried.payload.vector)
    return ModelParams(np.clip(out, lo, hi), regional.arch)


# ---------------------------------------------------------------- runs

@dataclass(frozen=True)
class FlSchemeConfig:
    scheme: Scheme = Scheme.DISPERSAL
    local_epochs: int = 1
    learning_rate: float = 0.05
    batch_size: int = 20
    mixing_alpha: float = 0.5
    staleness_tau: float = None
    gossip_degree: int = 2
    aggregation_period: float = 60.0
    min_updates: int = None  # hierarchical K; None -> n_clusters // 2
    seconds_per_epoch: float = 10.0
    hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0.0 < self.mixing_alpha < 1.0:
            raise ValidationError("learning.mixing_alpha", "must be in (0, 1)")
        if not self.learning_rate > 0:
            raise ValidationError("learning.learning_rate", "must be positive")
        if self.local_epochs < 0:
            raise ValidationError("learning.local_epochs", "must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("learning.batch_size", "must be positive")
        if self.gossip_degree < 1:
            raise ValidationError("learning.gossip_degree", "must be positive")
        if not self.aggregation_period > 0:
            raise ValidationError("learning.aggregation_period", "must be positive")


@dataclass
class TrainingTrace:
    scheme: str
    seed: int
    points: list = field(default_factory=list)  # (t, accuracy)

    def times(self):
        return np.array([p[0] for p in self.points])

    def accuracies(self):
        return np.array([p[1] for p in self.points])

    def time_to(self, threshold):
        for t, a in self.points:
            if a >= threshold:
                return t
        return math.inf

    @property
    def final_accuracy(self):
        return self.points[-1][1] if self.points else float("nan")


class _Run:
    """State shared by the three scheme handlers."""

    def __init__(self, cfg, network, clusters, test_set, horizon, seed, log):
        self.cfg = cfg
        self.net = network
        self.clusters = {k.ground_id: k for k in clusters}
        self.test = test_set
        self.horizon = horizon
        self.seed = seed
        self.engine = Engine(seed, log)
        self.log = self.engine.log
        self.trace = TrainingTrace(cfg.scheme.value, seed)
        self.busy_until = {g: 0.0 for g in self.clusters}
        self.round_id = 0
        self.client_rng = {c.client_id: stream(seed, f"fl/{cfg.scheme.value}/{c.client_id}")
                           for k in clusters for c in k.clients}
        any_model = next(iter(self.clusters.values())).regional_model
        self.model_bytes = any_model.size_bytes

    # transfers and compute are logged so every timestamp can be re-derived
    def charge_transfer(self, link_class, payload_bytes, distance, t, count=1, **tags):
        link = self.net.links[link_class]
        dt = count * transmission_time(payload_bytes, link) + propagation_delay(distance) + link.extra_delay
        self.log.log("transfer", t, dt, link=link_class.value, bytes=payload_bytes * count,
                     scheme=self.cfg.scheme.value, **tags)
        return dt

    def charge_compute(self, t, **tags):
        dt = self.cfg.local_epochs * self.cfg.seconds_per_epoch
        self.log.log("compute", t, dt, scheme=self.cfg.scheme.value, **tags)
        return dt

    def train_cluster(self, cluster, start_model):
        models, weights = [], []
        for c in cluster.clients:
            m = local_train(start_model, c.data, self.cfg.local_epochs, self.cfg.learning_rate,
                            self.cfg.batch_size, self.client_rng[c.client_id])
            c.local_model = m
            models.append(m)
            weights.append(len(c.data))
        return fedavg(models, weights)

    def cluster_round(self, sat, cluster, start, window, downlinks):
        """Charge a full round (``downlinks`` model downloads, training, client
        uploads, one regional download). Returns the elapsed time or None when
        the window closes first."""
        rid = self.round_id
        self.round_id += 1
        node = self.net.node(cluster.ground_id)
        dist = self.net.slant(sat, node, start)
        t = start
        n_clients = len(cluster.clients)
        # dry run on durations before logging anything
        user = self.net.links[LinkClass.USER]
        one = transmission_time(self.model_bytes, user) + propagation_delay(dist) + user.extra_delay
        up = n_clients * transmission_time(self.model_bytes, user) + propagation_delay(dist) + user.extra_delay
        total = downlinks * one + self.cfg.local_epochs * self.cfg.seconds_per_epoch + up + one
        if start + total > window.t_end:
            self.log.log("round_aborted", start, total, scheme=self.cfg.scheme.value,
                         sat=sat, cluster=cluster.cluster_id)
            return None
        # charges are stamped at the round start; their sum is the round length
        for _ in range(downlinks):
            t += self.charge_transfer(LinkClass.USER, self.model_bytes, dist, start, round=rid, dir="down")
        t += self.charge_compute(start, round=rid)
        t += self.charge_transfer(LinkClass.USER, self.model_bytes, dist, start, count=n_clients,
                                  round=rid, dir="up")
        t += self.charge_transfer(LinkClass.USER, self.model_bytes, dist, start, round=rid, dir="down")
        return t - start, rid

    def record(self, t, acc):
        self.trace.points.append((t, acc))
        self.log.log("test_accuracy", t, acc, scheme=self.cfg.scheme.value)


def _validate_run(cfg, network, clusters):
    if cfg.scheme == Scheme.HIERARCHICAL and not network.stations():
        raise ValidationError("learning.scheme", "hierarchical_gs needs at least one ground station")
    if cfg.scheme == Scheme.GOSSIP and network.isl.mode != "grid":
        raise ValidationError("learning.scheme", "isl_gossip needs the grid ISL topology")
    ids = {g.id for g in network.ground_nodes}
    for k in clusters:
        if k.ground_id not in ids:
            raise ValidationError("learning.clusters", f"unknown ground node {k.ground_id!r}")


def run_fl(cfg, network, clusters, test_set, horizon, seed=0, log=None, init=None):
    """Simulate one scheme; returns ``(TrainingTrace, MetricsLog, clusters)``.

    ``init`` is the common starting model (defaults to the seeded initializer
    shared by all schemes). Cluster objects are updated in place.
    """
    _validate_run(cfg, network, clusters)
    if init is None:
        init = init_model((clusters[0].clients[0].data.x.shape[1], cfg.hidden,
                           int(test_set.y.max()) + 1), stream(seed, "fl/init"))
    for k in clusters:
        if k.regional_model is None:
            k.regional_model = init
    run = _Run(cfg, network, clusters, test_set, horizon, seed, log if log is not None else MetricsLog())
    {Scheme.DISPERSAL: _Dispersal, Scheme.HIERARCHICAL: _Hierarchical,
     Scheme.GOSSIP: _Gossip}[cfg.scheme](run, init).go()
    return run.trace, run.log, clusters


class _Scheme:
    def __init__(self, run, init):
        self.run = run
        self.init = init
        eng = run.engine
        eng.on("contact", self.on_contact)
        eng.on("round_done", self.on_round_done)
        eng.on("record", lambda ev: run.record(ev.time, ev.payload))
        for w in run.net.plan.windows:
            if w.t_start > run.horizon:
                break
            if w.ground_id in run.clusters or self.wants_station(w.ground_id):
                eng.schedule(max(w.t_start, 0.0), "contact", w)

    def wants_station(self, gid):
        return False

    def initial_accuracy(self):
        raise NotImplementedError

    def go(self):
        self.run.record(0.0, self.initial_accuracy())
        self.run.engine.run_until(self.run.horizon)

    def on_contact(self, ev):
        w = ev.payload
        run = self.run
        if w.ground_id not in run.clusters:
            self.on_station(w)
            return
        start = max(run.engine.now, run.busy_until[w.ground_id])
        if start > run.engine.now:
            if start < w.t_end:
                run.engine.schedule(start, "contact", w)
            return
        self.on_cluster(w, run.clusters[w.ground_id])

    def on_station(self, w):
        pass


class _Dispersal(_Scheme):
    def __init__(self, run, init):
        super().__init__(run, init)
        self.carried = {}
        self.acc = {g: None for g in run.clusters}

    def initial_accuracy(self):
        a = evaluate(self.init, self.run.test)
        for g in self.acc:
            self.acc[g] = a
        return a

    def on_cluster(self, w, cluster):
        run = self.run
        now = run.engine.now
        carried = self.carried.get(w.sat_id)
        deliver = carried is not None and carried.source_cluster != cluster.cluster_id
        res = run.cluster_round(w.sat_id, cluster, now, w, downlinks=1 if deliver else 0)
        if res is None:
            return
        dt, rid = res
        base = cluster.regional_model
        if deliver:
            base = dispersal_fuse(base, carried, run.cfg.mixing_alpha, now, run.log, run.cfg.staleness_tau)
        new = run.train_cluster(cluster, base)
        run.busy_until[w.ground_id] = now + dt
        run.engine.schedule(now + dt, "round_done", (w, cluster, new, rid))

    def on_round_done(self, ev):
        w, cluster, new, rid = ev.payload
        run = self.run
        cluster.regional_model = new
        cluster.regional_version += 1
        self.carried[w.sat_id] = CarriedModel(w.sat_id, new, cluster.cluster_id, run.engine.now)
        self.acc[w.ground_id] = evaluate(new, run.test)
        run.log.log("regional_accuracy", run.engine.now, self.acc[w.ground_id],
                    cluster=cluster.cluster_id, round=rid)
        run.record(run.engine.now, float(np.mean(list(self.acc.values()))))


class _Hierarchical(_Scheme):
    def __init__(self, run, init):
        self.station_ids = {g.id for g in run.net.stations()}
        super().__init__(run, init)
        self.global_model = init
        self.global_version = 0
        self.sat_global = {}  # sat -> (version, model)
        self.sat_updates = {}  # sat -> {cluster_id: (model, weight)}
        self.pending = {}  # cluster_id -> (model, weight)
        self.known_version = {k.cluster_id: 0 for k in run.clusters.values()}
        self.k = run.cfg.min_updates or max(1, len(run.clusters) // 2)

    def wants_station(self, gid):
        return gid in self.station_ids

    def initial_accuracy(self):
        return evaluate(self.init, self.run.test)

    def on_cluster(self, w, cluster):
        run = self.run
        now = run.engine.now
        held = self.sat_global.get(w.sat_id)
        deliver = held is not None and held[0] > self.known_version[cluster.cluster_id]
        res = run.cluster_round(w.sat_id, cluster, now, w, downlinks=1 if deliver else 0)
        if res is None:
            return
        dt, rid = res
        if deliver:
            self.known_version[cluster.cluster_id] = held[0]
            cluster.regional_model = held[1]
        new = run.train_cluster(cluster, cluster.regional_model)
        run.busy_until[w.ground_id] = now + dt
        run.engine.schedule(now + dt, "round_done", (w, cluster, new, rid))

    def on_round_done(self, ev):
        w, cluster, new, rid = ev.payload
        cluster.regional_model = new
        cluster.regional_version += 1
        self.sat_updates.setdefault(w.sat_id, {})[cluster.cluster_id] = (new, cluster.n_samples)

    def on_station(self, w):
        run = self.run
        now = run.engine.now
        node = run.net.node(w.ground_id)
        dist = run.net.slant(w.sat_id, node, now)
        t = now
        ups = self.sat_updates.pop(w.sat_id, {})
        if ups:
            t += run.charge_transfer(LinkClass.FEEDER, run.model_bytes, dist, now, count=len(ups),
                                     dir="up", sat=w.sat_id)
            self.pending.update(ups)
        if len(self.pending) >= self.k:
            keys = sorted(self.pending)
            self.global_model = fedavg([self.pending[c][0] for c in keys], [self.pending[c][1] for c in keys])
            self.global_version += 1
            self.pending.clear()
            run.engine.schedule(t, "record", evaluate(self.global_model, run.test))
        held = self.sat_global.get(w.sat_id)
        if held is None or held[0] < self.global_version:
            t += run.charge_transfer(LinkClass.FEEDER, run.model_bytes, dist, now, dir="down", sat=w.sat_id)
            self.sat_global[w.sat_id] = (self.global_version, self.global_model)
        if t > w.t_end:
            raise SimulationError("feeder exchange overran its contact window")


class _Gossip(_Scheme):
    def __init__(self, run, init):
        super().__init__(run, init)
        n = len(run.net.constellation)
        self.replicas = [init] * n
        self.tick = 0
        run.engine.on("gossip", self.on_gossip)
        run.engine.on("gossip_apply", self.on_apply)
        if run.cfg.aggregation_period <= run.horizon:
            run.engine.schedule(run.cfg.aggregation_period, "gossip")

    def initial_accuracy(self):
        return evaluate(self.init, self.run.test)

    def on_cluster(self, w, cluster):
        run = self.run
        now = run.engine.now
        res = run.cluster_round(w.sat_id, cluster, now, w, downlinks=1)
        if res is None:
            return
        dt, rid = res
        new = run.train_cluster(cluster, self.replicas[w.sat_id])
        run.busy_until[w.ground_id] = now + dt
        run.engine.schedule(now + dt, "round_done", (w, cluster, new, rid))

    def on_round_done(self, ev):
        w, cluster, new, rid = ev.payload
        cluster.regional_model = new
        cluster.regional_version += 1
        self.replicas[w.sat_id] = new

    def chosen(self, sat):
        nb = self.run.net.isl.of(sat)
        d = min(self.run.cfg.gossip_degree, len(nb))
        off = self.tick % len(nb) if nb else 0
        return [nb[(off + i) % len(nb)] for i in range(d)]

    def on_gossip(self, ev):
        run = self.run
        now = run.engine.now
        new = []
        slowest = 0.0
        n_transfers = 0
        pos = ecef_snapshot(run.net.constellation, now)
        isl = run.net.links[LinkClass.ISL]
        for s, rep in enumerate(self.replicas):
            peers = self.chosen(s)
            if not peers:
                new.append(rep)
                continue
            dist = max(float(np.linalg.norm(pos[s] - pos[p])) for p in peers)
            dt = len(peers) * transmission_time(run.model_bytes, isl) + propagation_delay(dist) + isl.extra_delay
            slowest = max(slowest, dt)
            n_transfers += len(peers)
            group = [rep] + [self.replicas[p] for p in peers]
            new.append(fedavg(group, np.ones(len(group))))
        run.log.log("transfer", now, slowest, link=LinkClass.ISL.value, bytes=run.model_bytes * n_transfers,
                    count=n_transfers, scheme=run.cfg.scheme.value, tick=self.tick)
        self.tick += 1
        run.engine.schedule(now + slowest, "gossip_apply", new)
        nxt = now + run.cfg.aggregation_period
        if nxt <= run.horizon:
            run.engine.schedule(nxt, "gossip")

    def on_apply(self, ev):
        self.replicas = ev.payload
        run = self.run
        run.record(run.engine.now, float(np.mean([evaluate(r, run.test) for r in self.replicas])))
