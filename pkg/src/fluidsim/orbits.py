"""Walker constellations on circular orbits and spherical-Earth geometry.

Frame conventions (used everywhere in the package):

* ECI: z along the Earth spin axis, x toward the RAAN origin at t = 0.
* ECEF = Rz(-omega_E * t) @ ECI, i.e. the Earth-fixed frame coincides with
  ECI at t = 0 and rotates eastward. A point fixed in ECI at +x therefore
  appears at -y in ECEF a quarter sidereal day later.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

EARTH_RADIUS = 6_371_000.0  # m
MU_EARTH = 3.986004418e14  # m^3 / s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad / s
SIDEREAL_DAY = 2.0 * math.pi / EARTH_ROTATION_RATE
TWO_PI = 2.0 * math.pi


def wrap_angle(x):
    """Normalize an angle (or array of angles) to [0, 2*pi)."""
    y = np.mod(x, TWO_PI)
    if np.ndim(y) == 0:
        y = float(y)
        return 0.0 if y >= TWO_PI else y
    return np.where(y >= TWO_PI, 0.0, y)


def angle_distance(a, b):
    """Smallest absolute difference of two angles modulo 2*pi."""
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


@dataclass(frozen=True)
class WalkerSpec:
    total_sats: int
    planes: int
    phasing: int
    inclination: float  # rad
    altitude: float  # m
    raan_offset: float = 0.0

    def __post_init__(self):
        validate_walker(self)

    @property
    def per_plane(self):
        return self.total_sats // self.planes

    @property
    def semi_major_axis(self):
        return EARTH_RADIUS + self.altitude

    @classmethod
    def from_degrees(cls, total_sats, planes, phasing, inclination_deg, altitude_km, raan_offset_deg=0.0):
        return cls(total_sats, planes, phasing, math.radians(inclination_deg),
                   altitude_km * 1e3, math.radians(raan_offset_deg))


def validate_walker(spec):
    if not isinstance(spec.total_sats, int) or spec.total_sats < 0:
        raise ValidationError("total_sats", "must be a non-negative integer")
    if not isinstance(spec.planes, int) or spec.planes < 1:
        raise ValidationError("planes", "must be a positive integer")
    if spec.total_sats % spec.planes != 0:
        raise ValidationError("total_sats", "must be a multiple of planes")
    if not 0 <= spec.phasing < spec.planes:
        raise ValidationError("phasing", "must satisfy 0 <= phasing < planes")
    if not 0.0 < spec.inclination <= math.pi:
        raise ValidationError("inclination", "must be in (0, pi]")
    if not spec.altitude > 0:
        raise ValidationError("altitude", "must be positive")


@dataclass(frozen=True)
class OrbitalElements:
    semi_major_axis: float
    inclination: float
    raan: float
    arg_latitude_at_epoch: float
    epoch: float = 0.0

    def __post_init__(self):
        if not self.semi_major_axis > EARTH_RADIUS:
            raise ValidationError("semi_major_axis", "must exceed the Earth radius")
        object.__setattr__(self, "raan", wrap_angle(self.raan))
        object.__setattr__(self, "arg_latitude_at_epoch", wrap_angle(self.arg_latitude_at_epoch))

    @property
    def mean_motion(self):
        return math.sqrt(MU_EARTH / self.semi_major_axis ** 3)

    @property
    def period(self):
        return TWO_PI / self.mean_motion


@dataclass(frozen=True)
class Geodetic:
    latitude: float  # rad
    longitude: float  # rad
    altitude: float = 0.0

    def __post_init__(self):
        if not -math.pi / 2 <= self.latitude <= math.pi / 2:
            raise ValidationError("latitude", "must be in [-pi/2, pi/2]")
        lon = (self.longitude + math.pi) % TWO_PI - math.pi
        object.__setattr__(self, "longitude", lon)

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, altitude=0.0):
        return cls(math.radians(lat_deg), math.radians(lon_deg), altitude)

    def to_ecef(self):
        r = EARTH_RADIUS + self.altitude
        cl = math.cos(self.latitude)
        return np.array([r * cl * math.cos(self.longitude),
                         r * cl * math.sin(self.longitude),
                         r * math.sin(self.latitude)])


def orbital_period(altitude):
    """Period in seconds of a circular orbit at ``altitude`` meters."""
    return TWO_PI * math.sqrt((EARTH_RADIUS + altitude) ** 3 / MU_EARTH)


def walker_constellation(spec):
    """Satellites of a Walker delta pattern, plane-major then in-plane slot.

    Planes are spaced 2*pi/P in RAAN, slots 2*pi*P/T in argument of latitude,
    and plane p is shifted by p * 2*pi*F/T relative to plane 0.
    """
    validate_walker(spec)
    a = spec.semi_major_axis
    out = []
    for p in range(spec.planes):
        raan = spec.raan_offset + TWO_PI * p / spec.planes
        for j in range(spec.per_plane):
            u = TWO_PI * j * spec.planes / spec.total_sats + TWO_PI * spec.phasing * p / spec.total_sats
            out.append(OrbitalElements(a, spec.inclination, raan, u, 0.0))
    return out


def plane_slot(spec, sat_id):
    return divmod(sat_id, spec.per_plane)


def _orbit_basis(el):
    co, so = math.cos(el.raan), math.sin(el.raan)
    ci, si = math.cos(el.inclination), math.sin(el.inclination)
    # node vector and in-plane normal-to-node vector
    p = np.array([co, so, 0.0])
    q = np.array([-so * ci, co * ci, si])
    return p, q


def arg_latitude(el, t):
    return el.arg_latitude_at_epoch + el.mean_motion * (np.asarray(t, dtype=float) - el.epoch)


def propagate(el, t):
    """ECI position (m) at time ``t`` (scalar or array; arrays give shape (N, 3))."""
    u = arg_latitude(el, t)
    p, q = _orbit_basis(el)
    pos = el.semi_major_axis * (np.multiply.outer(np.cos(u), p) + np.multiply.outer(np.sin(u), q))
    return pos


def eci_to_ecef(p, t):
    """Rotate ECI vector(s) into the Earth-fixed frame at time(s) ``t``."""
    p = np.asarray(p, dtype=float)
    th = EARTH_ROTATION_RATE * np.asarray(t, dtype=float)
    c, s = np.cos(th), np.sin(th)
    x, y = p[..., 0], p[..., 1]
    return np.stack([c * x + s * y, -s * x + c * y, p[..., 2]], axis=-1)


def ecef_to_geodetic(p):
    x, y, z = p
    r = math.sqrt(x * x + y * y + z * z)
    return Geodetic(math.asin(z / r), math.atan2(y, x), r - EARTH_RADIUS)


def ecef_position(el, t):
    return eci_to_ecef(propagate(el, t), t)


def ecef_tracks(elements, times):
    """Earth-fixed positions, shape (n_sats, n_times, 3)."""
    times = np.asarray(times, dtype=float)
    if not elements:
        return np.zeros((0, times.size, 3))
    return np.stack([ecef_position(el, times) for el in elements])


def slant_range(sat, site):
    """Distance (m) from the site to Earth-fixed satellite position(s)."""
    return np.linalg.norm(np.asarray(sat, dtype=float) - site.to_ecef(), axis=-1)


def elevation_angle(sat, site):
    """Elevation (rad) of Earth-fixed satellite position(s) above the site horizon."""
    r_site = site.to_ecef()
    up = r_site / np.linalg.norm(r_site)
    d = np.asarray(sat, dtype=float) - r_site
    rng = np.linalg.norm(d, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.clip((d @ up) / rng, -1.0, 1.0)
    el = np.arcsin(s)
    el = np.where(rng == 0, math.pi / 2, el)
    return float(el) if np.ndim(el) == 0 else el


def repeat_interval(spec, max_time=2 * 86400.0, tol=math.radians(1.0)):
    """Shortest time after which the constellation, seen from the rotating Earth,
    maps onto itself up to ``tol`` of in-plane phase.

    Earth must turn by a whole number k of plane spacings, after which plane p
    occupies the Earth-fixed RAAN of plane p - k; the slots then have to line up
    with that plane's slots, which carry an extra -k*2*pi*F/T phasing shift.
    Returns ``(interval, phase_error)``; when nothing within ``max_time`` beats
    ``tol`` the best candidate found is returned.
    """
    n = math.sqrt(MU_EARTH / spec.semi_major_axis ** 3)
    slot = TWO_PI * spec.planes / spec.total_sats if spec.total_sats else TWO_PI
    best = None
    k = 1
    while True:
        dt = TWO_PI * k / (spec.planes * EARTH_ROTATION_RATE)
        if dt > max_time:
            break
        err = (n * dt + TWO_PI * k * spec.phasing / spec.total_sats) % slot
        err = min(err, slot - err)
        if best is None or err < best[1] - 1e-12:
            best = (dt, err)
        if err <= tol:
            return dt, err
        k += 1
    return best


def ecef_snapshot(elements, t):
    """Earth-fixed positions of every satellite at one instant, shape (n_sats, 3)."""
    if not elements:
        return np.zeros((0, 3))
    a = np.array([e.semi_major_axis for e in elements])
    inc = np.array([e.inclination for e in elements])
    raan = np.array([e.raan for e in elements])
    u = np.array([e.arg_latitude_at_epoch + e.mean_motion * (t - e.epoch) for e in elements])
    cu, su = np.cos(u), np.sin(u)
    co, so = np.cos(raan), np.sin(raan)
    ci, si = np.cos(inc), np.sin(inc)
    eci = a[:, None] * np.stack([cu * co - su * so * ci, cu * so + su * co * ci, su * si], axis=1)
    return eci_to_ecef(eci, t)
