"""Cascaded early-exit inference over satellites and ground stations.

A task uploads its input to a visible satellite, runs the head sub-model
there, and continues through middle/tail sub-models (on the satellite or a
ground station) until an exit meets its accuracy target. When the serving
satellite is about to lose the task's cluster, the task is migrated to the
next satellite over ISLs (horizontal) or down to a station (vertical),
whichever is predicted to finish first.

Every second between arrival and result delivery is charged to exactly one
component (uplink, queue, compute, transfer, migration, wait, return), so
``e2e_latency == sum(charges)`` for every outcome.
"""
from __future__ import annotations

import collections
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .contacts import LinkClass, propagation_delay, transmission_time
from .errors import ValidationError
from .simcore import Engine, MetricsLog, stream


class Status(str, Enum):
    COMPLETED = "completed"
    DEADLINE_MISSED = "deadline_missed"
    DROPPED = "dropped_no_coverage"


# ---------------------------------------------------------------- cascade

@dataclass(frozen=True)
class SubModel:
    compute_cost: float  # FLOP
    activation_size: float  # bytes handed to the next stage
    exit_accuracy: float
    param_size: float = 0.0  # bytes, shipped when migrating to a node without it


@dataclass(frozen=True)
class CascadeModel:
    sub_models: tuple

    @property
    def n_stages(self):
        return len(self.sub_models)

    def accuracy(self, i):
        return self.sub_models[i].exit_accuracy

    def target_exit(self, min_accuracy):
        """First stage whose exit meets ``min_accuracy``; the last stage otherwise."""
        for i, s in enumerate(self.sub_models):
            if s.exit_accuracy >= min_accuracy:
                return i
        return self.n_stages - 1


DEFAULT_PROFILE = (
    (2e8, 200e3, 0.70, 4e6),
    (6e8, 100e3, 0.85, 12e6),
    (1.2e9, 0.0, 0.92, 24e6),
)


def build_cascade(profile):
    """Validate ``(compute_cost, activation_size, exit_accuracy[, param_size])`` rows."""
    if not profile:
        raise ValidationError("inference.profile", "cascade needs at least one stage")
    subs = []
    for i, row in enumerate(profile):
        sm = SubModel(*[float(v) for v in row])
        if not sm.compute_cost > 0:
            raise ValidationError(f"inference.profile[{i}].compute_cost", "must be positive")
        if sm.activation_size < 0 or sm.param_size < 0:
            raise ValidationError(f"inference.profile[{i}]", "sizes must be non-negative")
        if not 0.0 <= sm.exit_accuracy <= 1.0:
            raise ValidationError(f"inference.profile[{i}].exit_accuracy", "must be in [0, 1]")
        if subs and sm.exit_accuracy < subs[-1].exit_accuracy:
            raise ValidationError(f"inference.profile[{i}].exit_accuracy",
                                  f"exit accuracy drops at index {i}; must be non-decreasing")
        subs.append(sm)
    return CascadeModel(tuple(subs))


@dataclass(frozen=True)
class Capacities:
    """Compute rates in FLOP/s by tier; ``overrides`` maps node id -> rate."""
    device: float = 1e9
    satellite: float = 1e10
    station: float = 1e11
    overrides: tuple = ()

    def rate(self, node):
        ov = dict(self.overrides)
        if node in ov:
            return ov[node]
        return self.satellite if isinstance(node, (int, np.integer)) else self.station


def is_sat(node):
    return isinstance(node, (int, np.integer))


@dataclass(frozen=True)
class QoS:
    min_accuracy: float
    deadline: float

    def __post_init__(self):
        if not self.deadline > 0:
            raise ValidationError("qos.deadline", "must be positive")


@dataclass(frozen=True)
class InferenceTask:
    task_id: int
    origin: str
    arrival_time: float
    input_size: float
    qos: QoS

    @property
    def deadline_abs(self):
        return self.arrival_time + self.qos.deadline


@dataclass
class TaskOutcome:
    task_id: int
    status: Status
    exit_index: int = -1
    achieved_accuracy: float = float("nan")
    e2e_latency: float = float("nan")
    h_migrations: int = 0
    v_migrations: int = 0
    charges: list = field(default_factory=list)  # (component, seconds)

    def row(self):
        return [self.task_id, self.status.value, self.exit_index,
                "" if math.isnan(self.achieved_accuracy) else f"{self.achieved_accuracy:.4f}",
                "" if math.isnan(self.e2e_latency) else f"{self.e2e_latency:.6f}",
                self.h_migrations, self.v_migrations]


OUTCOME_HEADER = ["task_id", "status", "exit_index", "accuracy", "latency_s", "h_migrations", "v_migrations"]


@dataclass(frozen=True)
class Placement:
    nodes: tuple  # stage index -> node id
    valid_from: float
    valid_until: float
    est_latency: float

    @property
    def head(self):
        return self.nodes[0]


@dataclass(frozen=True)
class PolicyConfig:
    migration: bool = True
    horizontal: bool = True
    vertical: bool = True
    placement_epoch: float = 60.0
    cached_stages: tuple = (0,)  # sub-models pre-installed on every satellite
    result_size: float = 1e3  # bytes returned to the user
    queue_threshold: float = None  # s of backlog that triggers a horizontal offload


# ---------------------------------------------------------------- network helpers

def sat_to_station(net, sat, station, payload, t):
    """Transfer time from ``sat`` to ``station`` over ISL hops plus feeder; inf if unreachable."""
    d, _ = net.distances_from_ground(station, t)
    if not math.isfinite(d[sat]):
        return math.inf
    hops = net.isl_hops_to_ground(station, sat, t)
    return (d[sat] + transmission_time(payload, net.links[LinkClass.FEEDER])
            + hops * transmission_time(payload, net.links[LinkClass.ISL]))


def sat_to_sat(net, src, dst, payload, t):
    if src == dst:
        return 0.0
    d, _ = net.distances_from_sat(src, t)
    if not math.isfinite(d[dst]):
        return math.inf
    return d[dst] + net.isl_hops(src, dst, t) * transmission_time(payload, net.links[LinkClass.ISL])


def station_to_user(net, station, origin, payload, t):
    """Best station -> satellite(s) -> cluster delivery time at ``t``; inf if none."""
    best = math.inf
    for s in net.plan.visible(origin, t):
        leg = sat_to_station(net, s, station, payload, t)
        if math.isfinite(leg):
            leg += net.ground_latency(s, origin, t) + transmission_time(payload, net.links[LinkClass.USER])
            best = min(best, leg)
    return best


def user_link_time(net, sat, origin, payload, t):
    return transmission_time(payload, net.links[LinkClass.USER]) + net.ground_latency(sat, origin, t)


def window_from(plan, origin, sat, t):
    """Window of ``sat`` over ``origin`` containing ``t``, else the next one to start."""
    for w in plan.windows_for(origin):
        if w.sat_id == sat and w.t_end > t:
            return w
    return None


def next_station_delivery(net, station, origin, payload, t, limit):
    """Earliest ``(wait, delivery)`` with a station->user route starting in [t, limit]."""
    cands = [t] + [w.t_start for w in net.plan.windows_for(origin) if t < w.t_start <= limit]
    for tc in sorted(cands):
        d = station_to_user(net, station, origin, payload, tc)
        if math.isfinite(d):
            return tc - t, d
    return None


# ---------------------------------------------------------------- placement

def placement_latency(cascade, nodes, net, capacities, origin, t, input_size=0.0):
    """Full-depth latency estimate of a stage->node assignment at time ``t``."""
    est = user_link_time(net, nodes[0], origin, input_size, t)
    for i, node in enumerate(nodes):
        if i > 0 and node != nodes[i - 1]:
            prev = nodes[i - 1]
            act = cascade.sub_models[i - 1].activation_size
            if is_sat(prev) and not is_sat(node):
                est += sat_to_station(net, prev, node, act, t)
            elif is_sat(prev) and is_sat(node):
                est += sat_to_sat(net, prev, node, act, t)
            else:
                return math.inf
        est += cascade.sub_models[i].compute_cost / capacities.rate(node)
    return est


def place_cascade(cascade, t, net, capacities, origin, input_size=0.0, epoch=60.0):
    """Head on a visible satellite, a contiguous prefix there, the rest on one station.

    Minimizes the full-depth latency estimate; ties go to the lowest satellite
    id, then the longest on-satellite prefix. Returns None when no satellite
    is visible (the caller retries later).
    """
    sats = net.plan.visible(origin, t)
    if not sats:
        return None
    n = cascade.n_stages
    best = None
    for s in sats:
        for k in range(n, 0, -1):
            station_opts = [None] if k == n else [g.id for g in net.stations()]
            for g in station_opts:
                nodes = tuple([s] * k + [g] * (n - k))
                est = placement_latency(cascade, nodes, net, capacities, origin, t, input_size)
                if math.isfinite(est) and (best is None or est < best[0] - 1e-12):
                    best = (est, nodes)
    est, nodes = best
    w = net.plan.window_at(origin, nodes[0], t)
    until = min(t + epoch, w.t_end if w else t + epoch)
    return Placement(nodes, t, until, est)


# ---------------------------------------------------------------- decisions

def early_exit_decision(task, exit_index, cascade, remaining_estimate, now=None):
    """Return ``"exit"`` or ``"continue"`` after stage ``exit_index`` completes.

    Exits when the stage meets the task's accuracy target, at the last stage,
    or when continuing is predicted to overrun the deadline.
    """
    if exit_index >= cascade.n_stages - 1:
        return "exit"
    if cascade.accuracy(exit_index) >= task.qos.min_accuracy:
        return "exit"
    if now is not None and now + remaining_estimate > task.deadline_abs:
        return "exit"
    return "continue"


@dataclass(frozen=True)
class MigrationOption:
    kind: str  # "horizontal" | "vertical" | "stay"
    target: object
    predicted_completion: float
    transfer_time: float = 0.0


@dataclass(frozen=True)
class MigrationChoice:
    kind: str  # "horizontal" | "vertical" | "stay" | "drop"
    target: object = None
    predicted_completion: float = math.inf
    transfer_time: float = 0.0


_KIND_ORDER = {"stay": 0, "horizontal": 1, "vertical": 2}


def migrate_decision(options, deadline_abs):
    """Pick the option with the earliest predicted completion within the deadline."""
    feasible = [o for o in options if o.predicted_completion <= deadline_abs]
    if not feasible:
        return MigrationChoice("drop")
    o = min(feasible, key=lambda o: (o.predicted_completion, _KIND_ORDER[o.kind], str(o.target)))
    return MigrationChoice(o.kind, o.target, o.predicted_completion, o.transfer_time)


# ---------------------------------------------------------------- event-driven run

class _Job:
    __slots__ = ("task", "nodes", "serving", "stage", "target", "data", "charges", "clock",
                 "h", "v", "ready", "pending_strand", "done", "computing", "window")

    def __init__(self, task, cascade):
        self.task = task
        self.nodes = None
        self.serving = None
        self.stage = 0
        self.target = cascade.target_exit(task.qos.min_accuracy)
        self.data = task.input_size
        self.charges = []
        self.clock = task.arrival_time
        self.h = 0
        self.v = 0
        self.ready = task.arrival_time
        self.pending_strand = False
        self.done = False
        self.computing = False
        self.window = None  # contact window of the serving satellite the result relies on

    def charge(self, kind, dt):
        self.charges.append((kind, float(dt)))
        self.clock += dt


class _Node:
    __slots__ = ("queue", "busy_until", "current")

    def __init__(self):
        self.queue = collections.deque()
        self.busy_until = 0.0
        self.current = None


class InferenceRun:
    def __init__(self, workload, cascade, net, capacities, policy, seed=0, log=None, horizon=math.inf):
        self.workload = workload
        self.cascade = cascade
        self.net = net
        self.cap = capacities
        self.policy = policy
        self.horizon = horizon
        self.engine = Engine(seed, log if log is not None else MetricsLog())
        self.log = self.engine.log
        self.nodes = collections.defaultdict(_Node)
        self.placements = {}
        self.watched = set()
        self.active = {}
        self.outcomes = {}
        e = self.engine
        for kind in ("arrive", "at_node", "stage_done", "deliver", "handover", "relay"):
            e.on(kind, getattr(self, "on_" + kind))

    # -- bookkeeping
    def compute_time(self, stage, node):
        return self.cascade.sub_models[stage].compute_cost / self.cap.rate(node)

    def backlog(self, node, now):
        st = self.nodes[node]
        b = max(st.busy_until - now, 0.0)
        for j in st.queue:
            b += self.compute_time(j.stage, node)
        return b

    def finish(self, job, status, exit_index=-1):
        job.done = True
        self.active.pop(job.task.task_id, None)
        acc = self.cascade.accuracy(exit_index) if exit_index >= 0 else float("nan")
        lat = float("nan") if status == Status.DROPPED else self.engine.now - job.task.arrival_time
        if status == Status.COMPLETED and not (acc >= job.task.qos.min_accuracy and lat <= job.task.qos.deadline):
            status = Status.DEADLINE_MISSED
        out = TaskOutcome(job.task.task_id, status, exit_index, acc, lat, job.h, job.v, list(job.charges))
        self.outcomes[job.task.task_id] = out
        self.log.log("task", self.engine.now, 0.0 if math.isnan(lat) else lat,
                     task=job.task.task_id, status=status.value)

    def watch(self, w):
        key = (w.sat_id, w.ground_id, w.t_end)
        if key not in self.watched:
            self.watched.add(key)
            self.engine.schedule(max(w.t_end, self.engine.now), "handover", (w.sat_id, w.ground_id))

    def placement_for(self, origin, t, input_size):
        p = self.placements.get(origin)
        if (p is None or t >= p.valid_until or self.net.plan.window_at(origin, p.head, t) is None
                or not math.isfinite(placement_latency(self.cascade, p.nodes, self.net, self.cap, origin, t))):
            p = place_cascade(self.cascade, t, self.net, self.cap, origin, input_size, self.policy.placement_epoch)
            self.placements[origin] = p
            if p is not None:
                self.log.log("placement", t, p.est_latency, origin=origin,
                             nodes="/".join(str(n) for n in p.nodes))
        return p

    # -- events
    def run(self):
        for task in self.workload:
            self.engine.schedule(task.arrival_time, "arrive", _Job(task, self.cascade))
        self.engine.run_until(self.horizon)
        for job in list(self.active.values()):
            self.finish(job, Status.DEADLINE_MISSED)
        return [self.outcomes[t.task_id] for t in self.workload]

    def on_arrive(self, ev):
        job = ev.payload
        now = self.engine.now
        self.active[job.task.task_id] = job
        origin = job.task.origin
        p = self.placement_for(origin, now, job.task.input_size)
        if p is None:
            # out of coverage: wait for the next pass if it comes before the deadline
            w = self.net.plan.next_window(origin, now)
            if w is None or w.t_start > job.task.deadline_abs:
                self.finish(job, Status.DROPPED)
            else:
                job.charge("wait", w.t_start - now)
                self.engine.schedule(w.t_start, "arrive", job)
            return
        job.nodes = list(p.nodes)
        job.serving = p.head
        job.window = self.net.plan.window_at(origin, p.head, now)
        dt = user_link_time(self.net, p.head, origin, job.task.input_size, now)
        job.charge("uplink", dt)
        self.watch(job.window)
        self.engine.schedule(now + dt, "at_node", (job, p.head))

    def serving_lost(self, job, now):
        return now >= job.window.t_end

    def on_at_node(self, ev):
        job, node = ev.payload
        now = self.engine.now
        if job.done:
            return
        job.ready = now
        if is_sat(node) and node == job.serving and self.serving_lost(job, now) and self.needs_serving(job, job.stage):
            self.strand(job)
            return
        if (is_sat(node) and self.policy.migration and self.policy.horizontal
                and self.policy.queue_threshold is not None
                and self.backlog(node, now) > self.policy.queue_threshold):
            if self.strand(job, allow_stay=True):
                return
        self.nodes[node].queue.append(job)
        self.try_start(node)

    def try_start(self, node):
        st = self.nodes[node]
        now = self.engine.now
        if st.current is not None or not st.queue:
            return
        job = st.queue.popleft()
        job.charge("queue", now - job.clock)
        dt = self.compute_time(job.stage, node)
        job.charge("compute", dt)
        job.computing = True
        st.current = job
        st.busy_until = now + dt
        self.engine.schedule(now + dt, "stage_done", (job, node))

    def remaining_estimate(self, job, i, node, now):
        """Predicted time from ``now`` to delivery if the job runs on to its target exit."""
        est = 0.0
        prev = node
        for j in range(i + 1, job.target + 1):
            nxt = job.nodes[j]
            if nxt != prev:
                est += self.transfer_time(prev, nxt, self.cascade.sub_models[j - 1].activation_size, now)
            est += self.backlog(nxt, now) if nxt != prev else 0.0
            est += self.compute_time(j, nxt)
            prev = nxt
        est += self.return_time(prev, job, now + est)
        return est

    def transfer_time(self, src, dst, payload, t):
        if is_sat(src) and not is_sat(dst):
            return sat_to_station(self.net, src, dst, payload, t)
        if is_sat(src) and is_sat(dst):
            return sat_to_sat(self.net, src, dst, payload, t)
        return math.inf

    def return_time(self, node, job, t):
        origin = job.task.origin
        size = self.policy.result_size
        if is_sat(node):
            return self.sat_return(node, job.window, origin, t)
        return station_to_user(self.net, node, origin, size, t)

    def sat_return(self, sat, w, origin, t):
        """Wait for ``w`` to open (if needed) plus the user-link leg; inf once it closed."""
        if w is None or t >= w.t_end:
            return math.inf
        start = max(t, w.t_start)
        return start - t + user_link_time(self.net, sat, origin, self.policy.result_size, start)

    def needs_serving(self, job, from_stage):
        return any(job.nodes[j] == job.serving for j in range(from_stage, job.target + 1))

    def on_stage_done(self, ev):
        job, node = ev.payload
        now = self.engine.now
        st = self.nodes[node]
        st.current = None
        job.computing = False
        i = job.stage
        job.stage += 1
        job.data = self.cascade.sub_models[i].activation_size
        self.try_start(node)
        if job.done:
            return
        if job.pending_strand:
            job.pending_strand = False
            if i >= job.target or self.needs_serving(job, job.stage):
                self.strand(job, exited_at=i if i >= job.target else None)
                return
        rem = self.remaining_estimate(job, i, node, now) if i < job.target else 0.0
        decision = early_exit_decision(job.task, i, self.cascade, rem, now)
        if decision == "exit":
            self.deliver(job, i, node)
            return
        nxt = job.nodes[i + 1]
        if nxt == node:
            self.engine.schedule(now, "at_node", (job, nxt))
            return
        dt = self.transfer_time(node, nxt, job.data, now)
        if not math.isfinite(dt):
            # the planned hop vanished; treat like a handover of the serving satellite
            self.strand(job)
            return
        job.charge("transfer", dt)
        self.engine.schedule(now + dt, "at_node", (job, nxt))

    def deliver(self, job, exit_index, node):
        now = self.engine.now
        if is_sat(node):
            w = job.window
            if now >= w.t_end:
                self.strand(job, exited_at=exit_index)
                return
            if now < w.t_start:
                job.charge("wait", w.t_start - now)
            start = max(now, w.t_start)
            dt = user_link_time(self.net, node, job.task.origin, self.policy.result_size, start)
            job.charge("return", dt)
            self.engine.schedule(start + dt, "deliver", (job, exit_index))
            return
        limit = max(job.task.deadline_abs, now) + 3600.0
        found = next_station_delivery(self.net, node, job.task.origin, self.policy.result_size, now, limit)
        if found is None:
            self.finish(job, Status.DROPPED, exit_index)
            return
        wait, dt = found
        if wait > 0:
            job.charge("wait", wait)
        job.charge("return", dt)
        self.engine.schedule(now + wait + dt, "deliver", (job, exit_index))

    def on_deliver(self, ev):
        job, exit_index = ev.payload
        if not job.done:
            self.finish(job, Status.COMPLETED, exit_index)

    def on_handover(self, ev):
        sat, origin = ev.payload
        now = self.engine.now
        st = self.nodes[sat]
        stranded = [j for j in st.queue if j.serving == sat and j.task.origin == origin
                    and self.serving_lost(j, now) and self.needs_serving(j, j.stage)]
        for j in stranded:
            st.queue.remove(j)
        cur = st.current
        if cur is not None and cur.serving == sat and cur.task.origin == origin and self.serving_lost(cur, now):
            if cur.stage >= cur.target or self.needs_serving(cur, cur.stage + 1):
                cur.pending_strand = True
        for j in stranded:
            self.log.log("handover", now, 1.0, task=j.task.task_id, sat=sat)
            self.strand(j)

    # -- migration
    def strand(self, job, exited_at=None, allow_stay=False):
        """Serving satellite lost (or overloaded): migrate or drop. Returns True if handled."""
        now = self.engine.now
        if now > job.clock:
            job.charge("queue", now - job.clock)
        if not self.policy.migration:
            if allow_stay:
                return False
            self.finish(job, Status.DROPPED)
            return True
        options = self.migration_options(job, now, exited_at)
        if allow_stay:
            stay = self.stay_prediction(job, now)
            options.append(MigrationOption("stay", job.serving, stay))
        choice = migrate_decision(options, job.task.deadline_abs)
        if choice.kind == "stay":
            return False
        if choice.kind == "drop":
            self.log.log("migration", now, 0.0, task=job.task.task_id, kind="drop")
            self.finish(job, Status.DEADLINE_MISSED)
            return True
        self.log.log("migration", now, choice.transfer_time, task=job.task.task_id, kind=choice.kind,
                     target=choice.target)
        job.charge("migration", choice.transfer_time)
        src = job.serving
        if choice.kind == "horizontal":
            job.h += 1
            job.serving = choice.target
            job.nodes = [choice.target if n == src else n for n in job.nodes]
            job.window = window_from(self.net.plan, job.task.origin, choice.target, now)
            self.watch(job.window)
        else:
            job.v += 1
            job.nodes = [n if j < job.stage else choice.target for j, n in enumerate(job.nodes)]
        if exited_at is not None:
            # only the result moves; it is delivered from the new node
            self.engine.schedule(now + choice.transfer_time, "relay", (job, exited_at, choice.target))
        else:
            self.engine.schedule(now + choice.transfer_time, "at_node", (job, job.nodes[job.stage]))
        return True

    def on_relay(self, ev):
        job, exit_index, node = ev.payload
        if not job.done:
            self.deliver(job, exit_index, node)

    def stay_prediction(self, job, now):
        node = job.serving
        t = now + self.backlog(node, now)
        for j in range(job.stage, job.target + 1):
            t += self.compute_time(j, job.nodes[j])
        return t + self.return_time(node, job, t)

    def successors(self, origin, src, now, limit):
        """First upcoming (or current) window of every other satellite over ``origin``."""
        seen = {}
        for w in self.net.plan.windows_for(origin):
            if w.sat_id != src and w.t_end > now and w.t_start <= limit and w.sat_id not in seen:
                seen[w.sat_id] = w
        return [seen[k] for k in sorted(seen)]

    def migration_options(self, job, now, exited_at=None):
        net = self.net
        origin = job.task.origin
        src = job.serving
        opts = []
        payload = self.policy.result_size if exited_at is not None else job.data
        last = exited_at if exited_at is not None else job.target
        first = job.stage if exited_at is None else last + 1
        if self.policy.horizontal and net.isl.mode != "none":
            for wt in self.successors(origin, src, now, job.task.deadline_abs):
                t_sat = wt.sat_id
                stages = [j for j in range(first, last + 1) if job.nodes[j] == src]
                params = sum(self.cascade.sub_models[j].param_size for j in stages
                             if j not in self.policy.cached_stages)
                xfer = sat_to_sat(net, src, t_sat, payload + params, now)
                if not math.isfinite(xfer):
                    continue
                t = now + xfer + (self.backlog(t_sat, now) if stages else 0.0)
                prev = t_sat
                for j in range(first, last + 1):
                    node = t_sat if job.nodes[j] == src else job.nodes[j]
                    if node != prev:
                        t += self.transfer_time(prev, node, self.cascade.sub_models[j - 1].activation_size, t)
                        t += self.backlog(node, now)
                    t += self.compute_time(j, node)
                    prev = node
                t += self.sat_return(prev, wt, origin, t) if is_sat(prev) else self.return_time(prev, job, t)
                opts.append(MigrationOption("horizontal", t_sat, t, xfer))
        if self.policy.vertical:
            for g in net.stations():
                xfer = sat_to_station(net, src, g.id, payload, now)
                if not math.isfinite(xfer):
                    continue
                t = now + xfer
                if first <= last:
                    t += self.backlog(g.id, now)
                    for j in range(first, last + 1):
                        t += self.compute_time(j, g.id)
                found = next_station_delivery(net, g.id, origin, self.policy.result_size, t,
                                              job.task.deadline_abs)
                if found is None:
                    continue
                t += found[0] + found[1]
                opts.append(MigrationOption("vertical", g.id, t, xfer))
        return opts


def summarize(outcomes):
    """Completion rate (1.0 for an empty workload), mean latency and accuracy."""
    n = len(outcomes)
    done = [o for o in outcomes if o.status == Status.COMPLETED]
    lats = [o.e2e_latency for o in outcomes if not math.isnan(o.e2e_latency)]
    accs = [o.achieved_accuracy for o in outcomes if not math.isnan(o.achieved_accuracy)]
    return {
        "n_tasks": n,
        "completion_rate": len(done) / n if n else 1.0,
        "mean_latency": float(np.mean(lats)) if lats else float("nan"),
        "mean_accuracy": float(np.mean(accs)) if accs else float("nan"),
        "h_migrations": sum(o.h_migrations for o in outcomes),
        "v_migrations": sum(o.v_migrations for o in outcomes),
    }


def run_inference(workload, cascade, net, capacities, policy, seed=0, log=None, horizon=math.inf):
    """Simulate ``workload`` (sorted by arrival); returns ``(outcomes, summary)``."""
    arr = [t.arrival_time for t in workload]
    if arr != sorted(arr):
        raise ValidationError("workload", "tasks must be sorted by arrival_time")
    run = InferenceRun(workload, cascade, net, capacities, policy, seed, log, horizon)
    outcomes = run.run()
    return outcomes, summarize(outcomes)


def generate_workload(origins, rate, horizon, seed, min_accuracy=(0.8,), deadline=(2.0,), input_size=100e3):
    """Poisson arrivals (``rate`` per second) at each origin.

    ``min_accuracy`` and ``deadline`` are sequences (or scalars) drawn
    uniformly and independently per task.
    """
    accs = np.atleast_1d(np.asarray(min_accuracy, dtype=float))
    dls = np.atleast_1d(np.asarray(deadline, dtype=float))
    tasks = []
    for origin in origins:
        rng = stream(seed, f"inference/workload/{origin}")
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= horizon:
                break
            q = float(accs[int(rng.integers(len(accs)))])
            d = float(dls[int(rng.integers(len(dls)))])
            tasks.append((t, origin, q, d))
    tasks.sort()
    return [InferenceTask(i, o, t, input_size, QoS(q, d)) for i, (t, o, q, d) in enumerate(tasks)]


# ---------------------------------------------------------------- tiny instances

@dataclass(frozen=True)
class TinyTask:
    strand_time: float
    deadline_abs: float
    data: float  # bytes of task state
    params: float  # sub-model bytes the successor lacks
    work: float  # FLOP remaining


@dataclass(frozen=True)
class TinyInstance:
    """Serving satellite S hands over to successor T or station G.

    ``isl`` False removes the horizontal option. Latencies are one-way fixed
    costs; rates are bits/s for links and FLOP/s for compute.
    """
    tasks: tuple
    isl: bool
    isl_latency: float
    isl_rate: float
    feeder_latency: float
    feeder_rate: float
    succ_rate: float
    station_rate: float
    succ_backlog: float
    station_backlog: float
    succ_return: float
    station_return: float


def _tiny_times(inst, task, kind):
    if kind == "horizontal":
        arrive = task.strand_time + inst.isl_latency + 8 * (task.data + task.params) / inst.isl_rate
        return arrive, task.work / inst.succ_rate, inst.succ_return
    arrive = task.strand_time + inst.feeder_latency + 8 * task.data / inst.feeder_rate
    return arrive, task.work / inst.station_rate, inst.station_return


def tiny_simulate(inst, decisions):
    """Completion count for one decision per task (FIFO by arrival at each target)."""
    free = {"horizontal": inst.succ_backlog, "vertical": inst.station_backlog}
    jobs = []
    for task, d in zip(inst.tasks, decisions):
        if d == "drop":
            continue
        if d == "horizontal" and not inst.isl:
            return -1
        arrive, work, ret = _tiny_times(inst, task, d)
        jobs.append((arrive, d, work, ret, task))
    done = 0
    for arrive, d, work, ret, task in sorted(jobs, key=lambda j: (j[0], j[1])):
        start = max(arrive, free[d])
        free[d] = start + work
        if start + work + ret <= task.deadline_abs:
            done += 1
    return done


def tiny_greedy(inst):
    """Decide each stranded task in turn with ``migrate_decision`` given the commitments so far."""
    free = {"horizontal": inst.succ_backlog, "vertical": inst.station_backlog}
    decisions = []
    for task in inst.tasks:
        opts = []
        for kind in ("horizontal", "vertical"):
            if kind == "horizontal" and not inst.isl:
                continue
            arrive, work, ret = _tiny_times(inst, task, kind)
            opts.append(MigrationOption(kind, kind, max(arrive, free[kind]) + work + ret))
        choice = migrate_decision(opts, task.deadline_abs)
        decisions.append(choice.kind)
        if choice.kind != "drop":
            arrive, work, _ = _tiny_times(inst, task, choice.kind)
            free[choice.kind] = max(arrive, free[choice.kind]) + work
    return decisions


def tiny_optimum(inst):
    best = (-1, None)
    for ds in itertools.product(("horizontal", "vertical", "drop"), repeat=len(inst.tasks)):
        c = tiny_simulate(inst, ds)
        if c > best[0]:
            best = (c, ds)
    return best


def random_tiny_instance(rng):
    n = int(rng.integers(1, 3))
    tasks = []
    t = 0.0
    for _ in range(n):
        t += float(rng.uniform(0.0, 0.5))
        work = float(rng.uniform(2e8, 2e9))
        tasks.append(TinyTask(t, t + float(rng.uniform(0.1, 1.5)), float(rng.uniform(5e4, 5e5)),
                              float(rng.choice([0.0, 4e6, 12e6])), work))
    return TinyInstance(
        tuple(tasks), bool(rng.random() < 0.8),
        float(rng.uniform(0.002, 0.02)), float(rng.choice([1e8, 1e9])),
        float(rng.uniform(0.01, 0.05)), float(rng.choice([1e8, 5e8])),
        float(rng.uniform(5e9, 2e10)), float(rng.uniform(2e10, 2e11)),
        float(rng.uniform(0.0, 0.3)), float(rng.uniform(0.0, 0.3)),
        float(rng.uniform(0.005, 0.02)), float(rng.uniform(0.02, 0.08)),
    )
