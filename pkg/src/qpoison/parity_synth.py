"""Ground-truth poisoning events and synthetic single-shot parity readout."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import DataError, check_positive

__all__ = [
    "EVENT_TYPES",
    "QUBITS",
    "EventRates",
    "QubitReadout",
    "ReadoutModel",
    "ChargeNoiseModel",
    "PulseTrain",
    "DoseResponse",
    "EventList",
    "ParityTrace",
    "generate_events",
    "offset_charge_series",
    "mapping_fidelity",
    "synthesize_trace",
    "synthesize_pulsed",
    "read_trace_csv",
    "read_truth_csv",
]

QUBITS = ("A", "B", "C")
EVENT_TYPES = ("A", "B", "C", "AB", "BC", "AC", "ABC")
PULSE_TYPE = "pulse"
# membership[i, q]: event type i couples to qubit q
MEMBERSHIP = np.array([[q in t for q in QUBITS] for t in EVENT_TYPES], dtype=bool)


@dataclass(frozen=True)
class EventRates:
    """Exclusive Poisson rates (1/s) of events coupling to exactly the named qubits."""

    r_A: float = 0.0
    r_B: float = 0.0
    r_C: float = 0.0
    r_AB: float = 0.0
    r_BC: float = 0.0
    r_AC: float = 0.0
    r_ABC: float = 0.0

    def __post_init__(self):
        for t in EVENT_TYPES:
            v = getattr(self, "r_" + t)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"rate r_{t} must be >= 0, got {v!r}")

    def as_array(self):
        return np.array([getattr(self, "r_" + t) for t in EVENT_TYPES], dtype=float)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError("expected seven rates ordered A, B, C, AB, BC, AC, ABC")
        return cls(*map(float, values))


@dataclass(frozen=True)
class QubitReadout:
    """Calibration Gaussians of the readout signal for the states even and odd parity map to."""

    mean_even: float = 1.0
    mean_odd: float = -1.0
    sigma_even: float = 0.6
    sigma_odd: float = 0.6

    def __post_init__(self):
        if not (self.sigma_even > 0 and self.sigma_odd > 0):
            raise ValueError("readout sigmas must be > 0")
        if self.mean_even == self.mean_odd:
            raise ValueError("readout means must differ")

    @property
    def midpoint(self):
        return 0.5 * (self.mean_even + self.mean_odd)

    @property
    def separation(self):
        return abs(self.mean_odd - self.mean_even)

    def affine(self, a, b):
        return QubitReadout(a * self.mean_even + b, a * self.mean_odd + b, abs(a) * self.sigma_even,
                            abs(a) * self.sigma_odd)


@dataclass(frozen=True)
class ReadoutModel:
    qubits: dict = field(default_factory=lambda: {q: QubitReadout() for q in QUBITS})
    fidelity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.fidelity <= 1.0:
            raise ValueError("parity mapping fidelity must lie in [0, 1]")

    def __getitem__(self, label):
        return self.qubits[label]


@dataclass(frozen=True)
class ChargeNoiseModel:
    diffusion_sigma: float = 0.0  # e / sqrt(s)
    jump_rate: float = 0.0  # 1/s
    jump_size_min: float = 0.1  # e
    degeneracy_halfwidth: float = 0.05  # e

    def __post_init__(self):
        for name in ("diffusion_sigma", "jump_rate", "jump_size_min", "degeneracy_halfwidth"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.degeneracy_halfwidth >= 0.125:
            raise ValueError("degeneracy_halfwidth must be < 0.125 e")
        if self.jump_size_min > 0.5:
            raise ValueError("jump_size_min must be <= 0.5 e")


@dataclass(frozen=True)
class PulseTrain:
    rate: float = 20.0  # Hz
    amplitude: float = 1e-3  # V
    duration: float = 10e-6  # s
    phase: float = 0.5  # fraction of a period before the first pulse

    def times(self, total):
        n = int(np.floor(total * self.rate - self.phase)) + 1
        t = (np.arange(max(n, 0)) + self.phase) / self.rate
        return t[t < total]


@dataclass(frozen=True)
class DoseResponse:
    """Per-pulse flip probability ``P(T) = (1 - exp(-T/T0)) / 2`` for each qubit."""

    t0: dict = field(default_factory=lambda: {q: 2e-6 for q in QUBITS})

    def probability(self, label, duration):
        if duration <= 0:
            return 0.0
        return 0.5 * (1.0 - np.exp(-duration / self.t0[label]))

    def scaled(self, factor):
        return DoseResponse({q: v * factor for q, v in self.t0.items()})


@dataclass
class EventList:
    """Event times, type indices and realized flips ``(n_events, 3)``.

    A type index of 7 marks injected pulses.
    """

    times: np.ndarray
    types: np.ndarray
    flips: np.ndarray
    duration: float

    def __len__(self):
        return len(self.times)

    @property
    def type_names(self):
        names = EVENT_TYPES + (PULSE_TYPE,)
        return [names[i] for i in self.types]

    def flip_times(self, q):
        return self.times[self.flips[:, q]]

    def flip_counts(self):
        return self.flips.sum(axis=0)

    @classmethod
    def concatenate(cls, parts, duration):
        t = np.concatenate([p.times for p in parts])
        ty = np.concatenate([p.types for p in parts])
        fl = np.concatenate([p.flips for p in parts])
        order = np.lexsort((ty, t))
        return cls(t[order], ty[order], fl[order], duration)


def generate_events(rates, duration, seed):
    """Seven independent Poisson processes; each member qubit flips with probability 1/2."""
    check_positive("duration", duration)
    rng = np.random.default_rng(seed)
    r = rates.as_array()
    counts = rng.poisson(r * duration)
    types = np.repeat(np.arange(7), counts)
    times = rng.uniform(0.0, duration, types.size)
    flips = (rng.random((types.size, 3)) < 0.5) & MEMBERSHIP[types]
    order = np.lexsort((types, times))
    return EventList(times[order], types[order], flips[order], float(duration))


def offset_charge_series(charge, n_shots, dt_rep, rng, start=None):
    """Offset charge per shot: a random start, Gaussian diffusion and Poisson jumps.

    Jump sizes are uniform in ``[jump_size_min, 0.5]`` with random sign.
    """
    n0 = rng.random() if start is None else start
    steps = np.zeros(n_shots)
    if charge.diffusion_sigma > 0:
        steps += rng.normal(0.0, charge.diffusion_sigma * np.sqrt(dt_rep), n_shots)
    if charge.jump_rate > 0:
        n_jumps = rng.poisson(charge.jump_rate * n_shots * dt_rep)
        where = rng.integers(0, n_shots, n_jumps)
        size = rng.uniform(charge.jump_size_min, 0.5, n_jumps) * rng.choice([-1.0, 1.0], n_jumps)
        np.add.at(steps, where, size)
    steps[0] = 0.0
    return n0 + np.cumsum(steps)


def mapping_fidelity(ng, fidelity, halfwidth):
    """Signed parity-mapping fidelity versus offset charge ``ng``.

    Magnitude ``F * |cos 2 pi ng|`` rescaled to reach zero at the edge of the
    degeneracy band around ``ng = 1/4 + k/2``; the sign flips across
    degeneracy, where the dispersion changes sign.
    """
    c = np.cos(2.0 * np.pi * np.asarray(ng, dtype=float))
    sw = np.sin(2.0 * np.pi * halfwidth)
    mag = np.clip((np.abs(c) - sw) / (1.0 - sw), 0.0, 1.0)
    return fidelity * mag * np.where(c < 0, -1.0, 1.0)


@dataclass
class ParityTrace:
    dt_rep: float
    samples: np.ndarray  # (3, n_shots)
    labels: tuple = QUBITS
    parity: np.ndarray | None = None  # (3, n_shots) of +-1
    offset_charge: np.ndarray | None = None
    events: EventList | None = None
    pulse_shots: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] != len(self.labels):
            raise DataError("one sample row per qubit expected")
        if self.parity is not None and self.parity.shape != self.samples.shape:
            raise DataError("truth parity must align with samples")

    @property
    def n_shots(self):
        return self.samples.shape[1]

    @property
    def times(self):
        return np.arange(self.n_shots) * self.dt_rep

    def truth_flip_counts(self):
        return np.count_nonzero(np.diff(self.parity, axis=1), axis=1)

    def to_csv(self, path):
        cols = [np.arange(self.n_shots), self.times, *self.samples]
        header = ",".join(["shot_index", "time_s"] + [f"q{q}_signal" for q in self.labels])
        fmt = ["%d", "%.10g"] + ["%.17g"] * len(self.labels)
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt=fmt)

    def truth_to_csv(self, path):
        if self.events is None:
            raise ValueError("trace carries no truth events")
        ev = self.events
        names = ev.type_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event_time_s", "type", "flips"])
            for t, name, fl in zip(ev.times, names, ev.flips):
                flipped = "".join(q for q, f in zip(self.labels, fl) if f) or "-"
                w.writerow([repr(float(t)), name, flipped])


def read_trace_csv(path):
    """Load a trace written by :meth:`ParityTrace.to_csv` (samples only, no truth)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 3 or header[:2] != ["shot_index", "time_s"]:
        raise DataError(f"{path}: not a parity trace CSV")
    labels = tuple(h[1:-len("_signal")] for h in header[2:])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0:
        raise DataError(f"{path}: no unmasked data (empty trace)")
    t = data[:, 1]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return ParityTrace(dt, data[:, 2:].T.copy(), labels)


def read_truth_csv(path, duration=None, labels=QUBITS):
    names = EVENT_TYPES + (PULSE_TYPE,)
    times, types, flips = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["event_time_s"]))
            types.append(names.index(row["type"]))
            flips.append([q in row["flips"] for q in labels])
    fl = np.array(flips, dtype=bool).reshape(-1, len(labels))
    dur = duration if duration is not None else (max(times) if times else 0.0)
    return EventList(np.array(times), np.array(types, dtype=np.int64), fl, dur)


def _parity_from_flips(events, n_shots, dt_rep, rng):
    parity = np.empty((3, n_shots), dtype=np.int8)
    for q in range(3):
        shots = np.ceil(events.flip_times(q) / dt_rep).astype(np.int64)
        shots = shots[shots < n_shots]
        toggles = np.bincount(shots, minlength=n_shots)
        start = rng.choice(np.array([-1, 1], dtype=np.int8))
        parity[q] = start * np.where(np.cumsum(toggles) % 2 == 0, 1, -1)
    return parity


def _readout_samples(parity, ng, readout, charge, labels, rng):
    samples = np.empty(parity.shape)
    for q, label in enumerate(labels):
        ro = readout[label]
        f = mapping_fidelity(ng[q], readout.fidelity, charge.degeneracy_halfwidth)
        mapped_even = (parity[q] > 0) == (f >= 0)
        faithful = rng.random(parity.shape[1]) < np.abs(f)
        even_state = np.where(faithful, mapped_even, rng.random(parity.shape[1]) < 0.5)
        mu = np.where(even_state, ro.mean_even, ro.mean_odd)
        sd = np.where(even_state, ro.sigma_even, ro.sigma_odd)
        samples[q] = mu + sd * rng.standard_normal(parity.shape[1])
    return samples


def synthesize_trace(events, readout, charge, dt_rep, duration, seed, offset_charge=None, labels=QUBITS):
    """Analog single-shot readout for three qubits driven by ``events``.

    A flip at time ``t`` shows up from shot ``ceil(t / dt_rep)``. Each shot
    reports the state the parity maps to with probability ``|F_eff|`` and a
    random state otherwise. ``offset_charge`` of shape ``(3,)`` sets the
    starting offsets of the stochastic charge model; ``(3, n_shots)``
    replaces it entirely.
    """
    check_positive("dt_rep", dt_rep)
    n_shots = int(round(duration / dt_rep))
    rng = np.random.default_rng(seed)
    parity = _parity_from_flips(events, n_shots, dt_rep, rng)
    oc = None if offset_charge is None else np.asarray(offset_charge, dtype=float)
    if oc is None or oc.ndim == 1:
        starts = [None] * len(labels) if oc is None else oc.reshape(len(labels))
        ng = np.stack([offset_charge_series(charge, n_shots, dt_rep, rng, s) for s in starts])
    else:
        ng = np.broadcast_to(oc.reshape(len(labels), -1), (len(labels), n_shots)).copy()
    samples = _readout_samples(parity, ng, readout, charge, labels, rng)
    return ParityTrace(dt_rep, samples, tuple(labels), parity, ng, events)


def synthesize_pulsed(rates_background, pulses, dose, readout, charge, dt_rep=100e-6, duration=60.0, seed=0,
                      offset_charge=None, labels=QUBITS):
    """Trace with periodic injection pulses on top of background events.

    At every pulse each qubit flips independently with the dose-response
    probability for the pulse duration.
    """
    check_positive("dt_rep", dt_rep)
    if pulses.rate * duration < 1:
        raise ValueError("pulse rate x duration must be >= 1")
    ss = np.random.SeedSequence(seed)
    s_bg, s_pulse, s_trace = ss.spawn(3)
    bg = generate_events(rates_background, duration, s_bg)
    rng = np.random.default_rng(s_pulse)
    tp = pulses.times(duration)
    prob = np.array([dose.probability(q, pulses.duration) for q in labels])
    flips = rng.random((tp.size, 3)) < prob
    pulse_ev = EventList(tp, np.full(tp.size, 7, dtype=np.int64), flips, duration)
    events = EventList.concatenate([bg, pulse_ev], duration)
    trace = synthesize_trace(events, readout, charge, dt_rep, duration, s_trace, offset_charge, labels)
    trace.pulse_shots = np.ceil(tp / dt_rep).astype(np.int64)
    return trace
