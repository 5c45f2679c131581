"""Scenario files (TOML): strict parsing, defaults, serialization and network assembly."""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .contacts import (DEFAULT_MIN_ELEVATION, GroundNode, LinkClass, LinkModel, Network,
                       build_isl_topology, compute_contact_plan, default_links)
from .errors import ScenarioErrors, ValidationError
from .orbits import Geodetic, WalkerSpec, walker_constellation

REQUIRED = object()


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _pos(v):
    return _num(v) and v > 0


def _nonneg(v):
    return _num(v) and v >= 0


def _prob(v):
    return _num(v) and 0 <= v <= 1


def _str(v):
    return isinstance(v, str) and v != ""


def _bool(v):
    return isinstance(v, bool)


def _list_of(check, nonempty=True):
    def f(v):
        return isinstance(v, list) and (v or not nonempty) and all(check(x) for x in v)
    return f


# key -> (check, default, description of the expectation)
TOP = {
    "seed": (_int, 0, "an integer"),
    "horizon": (_pos, REQUIRED, "a positive number of seconds"),
    "step": (_pos, 10.0, "a positive number of seconds"),
}

CONSTELLATION = {
    "total_sats": (lambda v: _int(v) and v >= 0, REQUIRED, "a non-negative integer"),
    "planes": (lambda v: _int(v) and v >= 1, REQUIRED, "a positive integer"),
    "phasing": (lambda v: _int(v) and v >= 0, 0, "a non-negative integer"),
    "inclination_deg": (lambda v: _num(v) and 0 < v <= 180, REQUIRED, "a number in (0, 180]"),
    "altitude_km": (_pos, REQUIRED, "a positive number"),
    "raan_offset_deg": (_num, 0.0, "a number"),
}

ISL = {"mode": (lambda v: v in ("none", "grid"), "grid", "'none' or 'grid'")}

LINK = {
    "data_rate_bps": (_pos, REQUIRED, "a positive number"),
    "extra_delay_s": (_nonneg, 0.0, "a non-negative number"),
    "erasure_prob": (lambda v: _num(v) and 0 <= v < 1, 0.0, "a number in [0, 1)"),
}

GROUND = {
    "id": (_str, REQUIRED, "a non-empty string"),
    "kind": (lambda v: v in ("cluster", "station"), REQUIRED, "'cluster' or 'station'"),
    "lat_deg": (lambda v: _num(v) and -90 <= v <= 90, REQUIRED, "a number in [-90, 90]"),
    "lon_deg": (lambda v: _num(v) and -180 <= v <= 360, REQUIRED, "a number in [-180, 360]"),
    "min_elevation_deg": (lambda v: _num(v) and 0 <= v < 90, math.degrees(DEFAULT_MIN_ELEVATION),
                          "a number in [0, 90)"),
}

LEARNING = {
    "horizon": (_pos, None, "a positive number of seconds"),
    "schemes": (_list_of(lambda v: v in ("dispersal", "hierarchical_gs", "isl_gossip")),
                ["dispersal", "hierarchical_gs", "isl_gossip"], "a list of scheme names"),
    "clients_per_cluster": (lambda v: _int(v) and v >= 1, 5, "a positive integer"),
    "labels_per_cluster": (lambda v: _int(v) and v >= 1, 3, "a positive integer"),
    "n_classes": (lambda v: _int(v) and v >= 2, 10, "an integer >= 2"),
    "dim": (lambda v: _int(v) and v >= 1, 20, "a positive integer"),
    "samples_per_client": (lambda v: _int(v) and v >= 1, 100, "a positive integer"),
    "class_sep": (_pos, 1.0, "a positive number"),
    "local_epochs": (lambda v: _int(v) and v >= 0, 1, "a non-negative integer"),
    "learning_rate": (_pos, 0.05, "a positive number"),
    "batch_size": (lambda v: _int(v) and v >= 1, 20, "a positive integer"),
    "mixing_alpha": (lambda v: _num(v) and 0 < v < 1, 0.5, "a number in (0, 1)"),
    "staleness_tau": (_pos, None, "a positive number of seconds"),
    "gossip_degree": (lambda v: _int(v) and v >= 1, 2, "a positive integer"),
    "aggregation_period": (_pos, 60.0, "a positive number of seconds"),
    "min_updates": (lambda v: _int(v) and v >= 1, None, "a positive integer"),
    "seconds_per_epoch": (_nonneg, 10.0, "a non-negative number"),
    "hidden": (lambda v: _int(v) and v >= 1, 32, "a positive integer"),
    "centralized_epochs": (lambda v: _int(v) and v >= 1, 30, "a positive integer"),
    "threshold_fraction": (lambda v: _num(v) and 0 < v <= 1, 0.8, "a number in (0, 1]"),
    "stations": (_list_of(_str, nonempty=False), None, "a list of station ids"),
}

POLICIES = ("full", "no_migration", "horizontal_only", "vertical_only")

INFERENCE = {
    "horizon": (_pos, None, "a positive number of seconds"),
    "profile": (_list_of(lambda r: isinstance(r, list) and len(r) in (3, 4) and all(_nonneg(x) for x in r)),
                [[2e8, 200e3, 0.70, 4e6], [6e8, 100e3, 0.85, 12e6], [1.2e9, 0.0, 0.92, 24e6]],
                "a list of [compute_flop, activation_bytes, exit_accuracy(, param_bytes)] rows"),
    "rate": (_nonneg, 1.0, "a non-negative number of tasks per second per cluster"),
    "min_accuracy": (_list_of(_prob), [0.8, 0.9], "a list of numbers in [0, 1]"),
    "deadline": (_list_of(_pos), [2.0, 30.0, 300.0], "a list of positive numbers of seconds"),
    "input_size": (_nonneg, 100e3, "a non-negative number of bytes"),
    "result_size": (_nonneg, 1e3, "a non-negative number of bytes"),
    "device_rate": (_pos, 1e9, "a positive FLOP/s"),
    "satellite_rate": (_pos, 2e9, "a positive FLOP/s"),
    "station_rate": (_pos, 1e11, "a positive FLOP/s"),
    "placement_epoch": (_pos, 60.0, "a positive number of seconds"),
    "cached_stages": (_list_of(lambda v: _int(v) and v >= 0, nonempty=False), [0], "a list of stage indices"),
    "queue_threshold": (_pos, None, "a positive number of seconds"),
    "policies": (_list_of(lambda v: v in POLICIES), ["full", "no_migration"], f"a list drawn from {POLICIES}"),
    "sweep_min_accuracy": (_list_of(_prob, nonempty=False), [], "a list of numbers in [0, 1]"),
}

DOWNLOAD = {
    "horizon": (_pos, None, "a positive number of seconds"),
    "library": (_str, None, "a path to a block library file"),
    "n_blocks": (lambda v: _int(v) and v >= 1, 16, "a positive integer"),
    "n_models": (lambda v: _int(v) and v >= 1, 6, "a positive integer"),
    "shared_fraction": (_prob, 0.25, "a number in [0, 1]"),
    "block_size_min": (_pos, 5e6, "a positive number of bytes"),
    "block_size_max": (_pos, 40e6, "a positive number of bytes"),
    "capacity_bytes": (_pos, 60e6, "a positive number of bytes"),
    "zipf_exponent": (_nonneg, 1.0, "a non-negative number"),
    "rate": (_nonneg, 0.05, "a non-negative number of requests per second per cluster"),
    "isl_budget": (_nonneg, 2.0, "a non-negative number of seconds"),
    "batch_window": (_nonneg, 5.0, "a non-negative number of seconds"),
    "modes": (_list_of(lambda v: v in ("multicast", "unicast")), ["multicast", "unicast"],
              "a list drawn from ('multicast', 'unicast')"),
}

LINK_NAMES = {"user_link": LinkClass.USER, "feeder_link": LinkClass.FEEDER, "isl": LinkClass.ISL}
PROTOCOLS = {"learning": LEARNING, "inference": INFERENCE, "download": DOWNLOAD}


def _check_table(raw, schema, prefix, errors):
    out = {}
    if not isinstance(raw, dict):
        errors.append(ValidationError(prefix, "must be a table"))
        return out
    for k in raw:
        if k not in schema:
            errors.append(ValidationError(f"{prefix}.{k}" if prefix else k, "unknown key"))
    for k, (check, default, expect) in schema.items():
        name = f"{prefix}.{k}" if prefix else k
        if k in raw:
            v = raw[k]
            if not check(v):
                errors.append(ValidationError(name, f"must be {expect}"))
                continue
            out[k] = float(v) if _num(v) and not _int(v) else v
        elif default is REQUIRED:
            errors.append(ValidationError(name, "missing required key"))
        elif default is not None:
            out[k] = copy.deepcopy(default)
    return out


@dataclass
class Scenario:
    """Validated scenario with every default filled in (plain TOML-able values)."""
    data: dict

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def horizon(self):
        return self.data["horizon"]

    def section(self, name):
        return self.data.get(name)

    def section_horizon(self, name):
        sec = self.data.get(name) or {}
        return sec.get("horizon", self.horizon)

    def to_toml(self):
        return tomli_w.dumps(self.data)

    def config_hash(self):
        return hashlib.sha256(self.to_toml().encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data

    # -- model objects
    def walker(self):
        c = self.data["constellation"]
        return WalkerSpec.from_degrees(c["total_sats"], c["planes"], c["phasing"], c["inclination_deg"],
                                       c["altitude_km"], c["raan_offset_deg"])

    def ground_nodes(self):
        return [GroundNode(g["id"], g["kind"], Geodetic.from_degrees(g["lat_deg"], g["lon_deg"]),
                           math.radians(g["min_elevation_deg"])) for g in self.data["ground"]]

    def links(self):
        links = default_links()
        for name, lc in LINK_NAMES.items():
            spec = self.data.get("links", {}).get(name)
            if spec:
                links[lc] = LinkModel(lc, spec["data_rate_bps"], spec["extra_delay_s"], spec["erasure_prob"])
        return links

    def network(self, horizon=None, margin=600.0):
        """Constellation, contact plan over ``horizon + margin`` and routing helper."""
        spec = self.walker()
        sats = walker_constellation(spec)
        nodes = self.ground_nodes()
        h = (horizon if horizon is not None else self.horizon) + margin
        plan = compute_contact_plan(sats, nodes, h, self.data["step"])
        return Network(sats, nodes, plan, self.links(), build_isl_topology(spec, self.data["isl"]["mode"]))


def validate(doc):
    """Return a Scenario for the raw document or raise ScenarioErrors with every problem."""
    errors = []
    if not isinstance(doc, dict):
        raise ScenarioErrors([ValidationError("scenario", "must be a table")])
    known = set(TOP) | {"constellation", "isl", "links", "ground"} | set(PROTOCOLS)
    for k in doc:
        if k not in known:
            errors.append(ValidationError(k, "unknown key"))
    data = _check_table({k: v for k, v in doc.items() if k in TOP}, TOP, "", errors)
    if "constellation" not in doc:
        errors.append(ValidationError("constellation", "missing required section"))
    else:
        data["constellation"] = _check_table(doc["constellation"], CONSTELLATION, "constellation", errors)
        c = data["constellation"]
        if {"total_sats", "planes", "phasing"} <= set(c) and c["planes"] >= 1:
            if c["total_sats"] % c["planes"]:
                errors.append(ValidationError("constellation.total_sats", "must be a multiple of planes"))
            if c["phasing"] >= c["planes"]:
                errors.append(ValidationError("constellation.phasing", "must be smaller than planes"))
    data["isl"] = _check_table(doc.get("isl", {}), ISL, "isl", errors)
    links = doc.get("links", {})
    data["links"] = {}
    if not isinstance(links, dict):
        errors.append(ValidationError("links", "must be a table"))
    else:
        for k, v in links.items():
            if k not in LINK_NAMES:
                errors.append(ValidationError(f"links.{k}", "unknown link class"))
            else:
                data["links"][k] = _check_table(v, LINK, f"links.{k}", errors)
    ground = doc.get("ground")
    data["ground"] = []
    if not isinstance(ground, list) or not ground:
        errors.append(ValidationError("ground", "missing required list of ground nodes"))
    else:
        seen = set()
        for i, g in enumerate(ground):
            row = _check_table(g, GROUND, f"ground[{i}]", errors)
            if "id" in row:
                if row["id"] in seen:
                    errors.append(ValidationError(f"ground[{i}].id", f"duplicate ground node id {row['id']!r}"))
                seen.add(row["id"])
            data["ground"].append(row)
    for name, schema in PROTOCOLS.items():
        if name in doc:
            data[name] = _check_table(doc[name], schema, name, errors)
    dl = data.get("download")
    if dl and dl.get("block_size_min", 0) > dl.get("block_size_max", math.inf):
        errors.append(ValidationError("download.block_size_min", "must not exceed block_size_max"))
    if errors:
        raise ScenarioErrors(errors)
    return Scenario(data)


def loads(text):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioErrors([ValidationError("scenario", f"not valid TOML: {exc}")]) from exc
    return validate(doc)


def parse_scenario(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioErrors([ValidationError("scenario", "file is not UTF-8 text")]) from exc
    return loads(text)


def require_section(scenario, name):
    if scenario.section(name) is None:
        raise ScenarioErrors([ValidationError(name, f"section [{name}] is required for this command")])
    return scenario.section(name)
