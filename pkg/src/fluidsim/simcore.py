"""Deterministic discrete-event engine, keyed random streams and metrics log."""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationError


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    payload: object = field(compare=False, default=None)


def stream(seed, label):
    """Independent generator for ``(seed, label)``.

    The label is folded into the seed sequence's spawn key, so adding a new
    component label leaves every existing stream untouched.
    """
    key = zlib.crc32(str(label).encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & (2 ** 64 - 1), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Measurement:
    name: str
    t: float
    value: float
    tags: tuple = ()

    def tag(self, key, default=None):
        return dict(self.tags).get(key, default)


def _fmt(x):
    return repr(float(x))


class MetricsLog:
    """Append-only timestamped measurements."""

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def log(self, name, t, value, **tags):
        if self.records and t < self.records[-1].t:
            raise SimulationError(f"metric {name!r} at t={t} precedes t={self.records[-1].t}")
        self.records.append(Measurement(name, float(t), float(value),
                                        tuple(sorted((k, str(v)) for k, v in tags.items()))))

    def select(self, name, **tags):
        out = []
        for r in self.records:
            if r.name != name:
                continue
            d = dict(r.tags)
            if all(d.get(k) == str(v) for k, v in tags.items()):
                out.append(r)
        return out

    def count(self, name, **tags):
        return len(self.select(name, **tags))

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["name", "t_s", "value", "tags"])
        for r in self.records:
            wr.writerow([r.name, _fmt(r.t), _fmt(r.value), ";".join(f"{k}={v}" for k, v in r.tags)])
        return buf.getvalue()

    def to_jsonl(self):
        return "".join(json.dumps({"name": r.name, "t": r.t, "value": r.value, "tags": dict(r.tags)},
                                  sort_keys=True) + "\n" for r in self.records)


class Engine:
    """Single-threaded event loop ordered by (time, insertion sequence)."""

    def __init__(self, seed=0, log=None):
        self.seed = seed
        self.now = 0.0
        self.log = log if log is not None else MetricsLog()
        self.fired = 0
        self._queue = []
        self._seq = 0
        self._handlers = {}

    def on(self, kind, handler):
        self._handlers[kind] = handler

    def rng(self, label):
        return stream(self.seed, label)

    def schedule(self, time, kind, payload=None):
        if not math.isfinite(time):
            raise SimulationError(f"event {kind!r} scheduled at non-finite time {time}")
        if time < self.now:
            raise SimulationError(f"event {kind!r} scheduled at {time} < clock {self.now}")
        ev = Event(float(time), self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def __len__(self):
        return len(self._queue)

    def run_until(self, horizon=math.inf):
        while self._queue and self._queue[0].time <= horizon:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            handler = self._handlers.get(ev.kind)
            if handler is None:
                raise SimulationError(f"no handler for event kind {ev.kind!r}")
            self.fired += 1
            handler(ev)
        if math.isfinite(horizon) and horizon > self.now:
            self.now = horizon
        return self.log
