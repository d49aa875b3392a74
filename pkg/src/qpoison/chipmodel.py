"""Device geometry and physical parameters shared by every other module."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import constants

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "Site",
    "Anchor",
    "ChipGeometry",
    "QubitParams",
    "TransportParams",
    "load_config",
    "default_config_path",
    "island_at",
    "corner_anchors",
]

AL_GAP_EV = 180e-6


class ConfigError(ValueError):
    """Raised when a config cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class Site:
    label: str
    x: float
    y: float
    footprint_area: float = 100e-12


@dataclass(frozen=True)
class Anchor:
    x: float
    y: float
    capture_radius: float = 0.5e-3


def corner_anchors(side_length, capture_radius=0.5e-3):
    L = side_length
    return tuple(Anchor(x, y, capture_radius) for x, y in ((0, 0), (L, 0), (0, L), (L, L)))


@dataclass(frozen=True)
class ChipGeometry:
    """Square chip with qubit junctions on top and an optional island lattice on the back.

    The chip occupies ``0 <= x, y <= side_length`` and ``0 <= z <= thickness``;
    the device layer is the top surface ``z = thickness``.
    """

    side_length: float = 8.0e-3
    thickness: float = 0.525e-3
    qubit_sites: tuple[Site, ...] = ()
    injector_sites: tuple[Site, ...] = ()
    island_pitch: float = 250e-6
    island_size: float = 200e-6
    islands_enabled: bool = False
    anchor_points: tuple[Anchor, ...] | None = None

    def __post_init__(self):
        if self.anchor_points is None:
            object.__setattr__(self, "anchor_points", corner_anchors(self.side_length))
        self.validate()

    def validate(self):
        if not self.thickness > 0:
            raise ConfigError("geometry.thickness: must be > 0")
        if not self.side_length > 0:
            raise ConfigError("geometry.side_length: must be > 0")
        if not 0 < self.island_size < self.island_pitch:
            raise ConfigError("geometry.island_size: must satisfy 0 < island_size < island_pitch")
        labels = [s.label for s in self.qubit_sites]
        if len(set(labels)) != len(labels):
            raise ConfigError("geometry.qubits: qubit labels must be unique")
        for kind, sites in (("qubits", self.qubit_sites), ("injectors", self.injector_sites)):
            for s in sites:
                if not (0 < s.x < self.side_length and 0 < s.y < self.side_length):
                    raise ConfigError(f"geometry.{kind}.{s.label}: site outside chip")
                if s.footprint_area <= 0:
                    raise ConfigError(f"geometry.{kind}.{s.label}.footprint_area: must be > 0")
        for a in self.anchor_points:
            if a.capture_radius < 0:
                raise ConfigError("geometry.anchors.capture_radius: must be >= 0")

    @property
    def qubit_labels(self):
        return tuple(s.label for s in self.qubit_sites)

    def qubit(self, label):
        for s in self.qubit_sites:
            if s.label == label:
                return s
        raise KeyError(f"unknown qubit {label!r}")

    def injector(self, label):
        for s in self.injector_sites:
            if s.label == label:
                return s
        raise KeyError(f"unknown injector {label!r}")

    def with_islands(self, enabled=True):
        return replace(self, islands_enabled=enabled)


@dataclass(frozen=True)
class QubitParams:
    f01: float
    f_ro: float
    charge_dispersion: float
    t1_mean: float
    t1_sigma: float
    ej_over_ec: float
    gap: float = AL_GAP_EV * constants.e  # J

    def __post_init__(self):
        for name in ("f01", "f_ro", "charge_dispersion", "t1_mean", "gap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"qubits.{name}: must be > 0")
        if self.t1_sigma < 0:
            raise ConfigError("qubits.t1_sigma: must be >= 0")
        if not 10 <= self.ej_over_ec <= 100:
            raise ConfigError("qubits.ej_over_ec: must lie in [10, 100]")


@dataclass(frozen=True)
class TransportParams:
    sound_speed: float = 6.0e3
    island_absorb_prob: float = 0.0
    anchor_escape_prob: float = 0.227
    qubit_pairbreak_prob: float = 1.0
    phonons_per_second_of_pulse: float = 1.0e10
    subgap_leakage: float = 0.0

    def __post_init__(self):
        if not self.sound_speed > 0:
            raise ConfigError("transport.sound_speed: must be > 0")
        for name in ("island_absorb_prob", "anchor_escape_prob", "qubit_pairbreak_prob", "subgap_leakage"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"transport.{name}: probability must lie in [0, 1]")
        if self.phonons_per_second_of_pulse < 0:
            raise ConfigError("transport.phonons_per_second_of_pulse: must be >= 0")


def effective_diffusivity(params, geometry):
    """Boundary-limited diffusivity ``c_s * d``."""
    return params.sound_speed * geometry.thickness


def island_at(geometry, x, y):
    """True where (x, y) lies on a back-side island.

    Islands are squares of side ``island_size`` centred on the lattice
    ``(k + 1/2) * island_pitch``; the gaps between them are the saw cuts.
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    L = geometry.side_length
    if np.any((x < 0) | (x > L) | (y < 0) | (y > L)):
        raise ValueError("point outside chip footprint")
    if not geometry.islands_enabled:
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        return bool(out) if out.ndim == 0 else out
    out = _on_island(x, y, geometry.island_pitch, geometry.island_size)
    return bool(out) if out.ndim == 0 else out


def _on_island(x, y, pitch, size):
    half = 0.5 * size
    ux = np.abs(np.mod(x, pitch) - 0.5 * pitch)
    uy = np.abs(np.mod(y, pitch) - 0.5 * pitch)
    return (ux <= half) & (uy <= half)


def default_config_path():
    return Path(str(resources.files("qpoison") / "data" / "default.toml"))


def load_config(path=None):
    """Read a TOML device config.

    Returns ``(geometry, qubits, transport)`` where ``qubits`` maps label to
    :class:`QubitParams`. Omitted fields take their defaults.
    """
    path = default_config_path() if path is None else Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw):
    g = dict(raw.get("geometry", {}))
    side = float(g.get("side_length", 8.0e-3))
    try:
        qubit_sites = tuple(
            Site(str(q["label"]), float(q["x"]), float(q["y"]), float(q.get("footprint_area", 100e-12)))
            for q in g.get("qubits", [])
        )
        injector_sites = tuple(
            Site(str(q["label"]), float(q["x"]), float(q["y"]), float(q.get("footprint_area", 1e-12)))
            for q in g.get("injectors", [])
        )
    except KeyError as exc:
        raise ConfigError(f"geometry: site missing field {exc}") from exc
    anchors_cfg = g.get("anchors", {})
    radius = float(anchors_cfg.get("capture_radius", 0.5e-3))
    if "points" in anchors_cfg:
        anchors = tuple(Anchor(float(p[0]), float(p[1]), radius) for p in anchors_cfg["points"])
    else:
        anchors = corner_anchors(side, radius)
    geometry = ChipGeometry(
        side_length=side,
        thickness=float(g.get("thickness", 0.525e-3)),
        qubit_sites=qubit_sites,
        injector_sites=injector_sites,
        island_pitch=float(g.get("island_pitch", 250e-6)),
        island_size=float(g.get("island_size", 200e-6)),
        islands_enabled=bool(g.get("islands_enabled", False)),
        anchor_points=anchors,
    )

    t = dict(raw.get("transport", {}))
    known = {f for f in TransportParams.__dataclass_fields__}
    unknown = set(t) - known
    if unknown:
        raise ConfigError(f"transport: unknown field(s) {sorted(unknown)}")
    transport = TransportParams(**{k: float(v) for k, v in t.items()})

    qubits = {}
    for label, q in raw.get("qubits", {}).items():
        q = dict(q)
        gap_ev = float(q.pop("gap_ev", AL_GAP_EV))
        try:
            qubits[label] = QubitParams(gap=gap_ev * constants.e, **{k: float(v) for k, v in q.items()})
        except TypeError as exc:
            raise ConfigError(f"qubits.{label}: {exc}") from exc
        except ConfigError as exc:
            raise ConfigError(str(exc).replace("qubits.", f"qubits.{label}.", 1)) from exc
    return geometry, qubits, transport


def gap_voltage(gap_joules=AL_GAP_EV * constants.e):
    """Pair-breaking threshold ``2*Delta/e`` in volts."""
    return 2.0 * gap_joules / constants.e


def distance(a, b):
    return math.hypot(a.x - b.x, a.y - b.y)
