"""Monte Carlo transport of pair-breaking phonons in the chip substrate.

Phonons fly ballistically at the sound speed and re-emit diffusely (Lambert
cosine law) at every surface, which gives boundary-limited diffusion with
``D ~ c_s * d``. Losses are island absorption on the back side, escape through
the corner anchors and pair breaking in the qubit junction footprints.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.optimize import curve_fit

from .chipmodel import AL_GAP_EV, Site, _on_island, gap_voltage

logger = logging.getLogger(__name__)

__all__ = [
    "InjectionPulse",
    "PhononEnsemble",
    "HitSeries",
    "SubGapWarning",
    "CalibrationError",
    "launch",
    "transport",
    "simulate",
    "hit_flux",
    "fit_flux_decay",
    "population_decay_time",
    "peak_time",
    "calibrate_anchor_escape",
    "calibrate_downconversion",
    "delivered_ratio",
    "with_footprints",
]

# outcome codes
ALIVE, HIT, ABSORBED, ESCAPED, SURVIVED = 0, 1, 2, 3, 4

BLOCK_SIZE = 16384


class SubGapWarning(UserWarning):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class InjectionPulse:
    injector_label: str = "inj"
    amplitude: float = 1e-3
    duration: float = 10e-6
    start_time: float = 0.0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("pulse duration must be >= 0")
        if self.amplitude < 0:
            raise ValueError("pulse amplitude must be >= 0")

    @property
    def end_time(self):
        return self.start_time + self.duration


@dataclass
class PhononEnsemble:
    position: np.ndarray  # (n, 3)
    direction: np.ndarray  # (n, 3), unit
    birth_time: np.ndarray  # (n,)

    def __len__(self):
        return len(self.birth_time)

    @property
    def alive(self):
        return np.ones(len(self), dtype=bool)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))


@dataclass
class HitSeries:
    """Pair-breaking hits per qubit plus loss tallies.

    ``hit_time`` is sorted; ``hit_qubit`` indexes ``qubit_labels``.
    """

    qubit_labels: tuple
    hit_qubit: np.ndarray
    hit_time: np.ndarray
    launched: int
    absorbed: int
    escaped: int
    surviving: int
    death_time: np.ndarray | None = None

    def times(self, label):
        try:
            idx = self.qubit_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown qubit {label!r}") from None
        return self.hit_time[self.hit_qubit == idx]

    @property
    def counts(self):
        return {q: int(np.sum(self.hit_qubit == i)) for i, q in enumerate(self.qubit_labels)}

    @property
    def total_hits(self):
        return int(len(self.hit_time))

    def tallies(self):
        return {
            "launched": self.launched,
            "hits": self.counts,
            "island_absorbed": self.absorbed,
            "escaped": self.escaped,
            "surviving": self.surviving,
        }

    def check_conservation(self):
        total = self.total_hits + self.absorbed + self.escaped + self.surviving
        assert total == self.launched, f"phonon bookkeeping broken: {total} != {self.launched}"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["qubit_label", "hit_time_s"])
            for q, t in zip(self.hit_qubit, self.hit_time):
                w.writerow([self.qubit_labels[q], repr(float(t))])

    def tallies_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.tallies(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def merge(cls, parts):
        parts = list(parts)
        labels = parts[0].qubit_labels
        q = np.concatenate([p.hit_qubit for p in parts])
        t = np.concatenate([p.hit_time for p in parts])
        order = np.lexsort((q, t))
        deaths = [p.death_time for p in parts if p.death_time is not None]
        return cls(
            labels,
            q[order],
            t[order],
            sum(p.launched for p in parts),
            sum(p.absorbed for p in parts),
            sum(p.escaped for p in parts),
            sum(p.surviving for p in parts),
            np.sort(np.concatenate(deaths)) if deaths else None,
        )


def _isotropic_down(rng, n):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = -np.abs(v[:, 2])
    return v


def launch(pulse, params, geometry, seed, n_phonons=None, gap=AL_GAP_EV * constants.e):
    """Create the phonons emitted by one injection pulse.

    The ensemble size is ``round(phonons_per_second_of_pulse * duration)``
    unless ``n_phonons`` is given. Below the pair-breaking threshold
    ``2*Delta/e`` only the ``subgap_leakage`` fraction is emitted and a
    :class:`SubGapWarning` is issued.
    """
    site = geometry.injector(pulse.injector_label)
    if n_phonons is None:
        n_phonons = int(round(params.phonons_per_second_of_pulse * pulse.duration))
    if pulse.amplitude <= gap_voltage(gap):
        warnings.warn(
            f"sub-gap injection: {pulse.amplitude:.3g} V <= 2*Delta/e = {gap_voltage(gap):.3g} V",
            SubGapWarning,
            stacklevel=2,
        )
        n_phonons = int(round(n_phonons * params.subgap_leakage))
    if n_phonons == 0 or pulse.duration == 0:
        return PhononEnsemble.empty()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    pos = np.empty((n_phonons, 3))
    pos[:, 0] = site.x
    pos[:, 1] = site.y
    pos[:, 2] = geometry.thickness
    direction = _isotropic_down(rng, n_phonons)
    birth = pulse.start_time + pulse.duration * rng.random(n_phonons)
    return PhononEnsemble(pos, direction, birth)


def _lambert(rng, n, axis, sign):
    """Cosine-law directions leaving a face whose inward normal is ``sign * e_axis``."""
    u1 = rng.random(n)
    phi = 2.0 * np.pi * rng.random(n)
    cos_t = np.sqrt(u1)
    sin_t = np.sqrt(1.0 - u1)
    out = np.empty((n, 3))
    others = [a for a in range(3) if a != axis]
    out[:, axis] = sign * cos_t
    out[:, others[0]] = sin_t * np.cos(phi)
    out[:, others[1]] = sin_t * np.sin(phi)
    return out


def _transport_block(pos, direction, t, params, geometry, horizon, rng, record_deaths):
    n = len(t)
    L = geometry.side_length
    d = geometry.thickness
    c = params.sound_speed
    qx = np.array([s.x for s in geometry.qubit_sites])
    qy = np.array([s.y for s in geometry.qubit_sites])
    qhalf = 0.5 * np.sqrt(np.array([s.footprint_area for s in geometry.qubit_sites]))
    ax = np.array([a.x for a in geometry.anchor_points])
    ay = np.array([a.y for a in geometry.anchor_points])
    ar2 = np.array([a.capture_radius for a in geometry.anchor_points]) ** 2

    outcome = np.zeros(n, dtype=np.int8)
    hit_q = np.full(n, -1, dtype=np.int64)
    end_t = np.full(n, np.inf)

    idx = np.arange(n)
    p = pos.copy()
    v = direction.copy()
    tt = t.copy()
    bounds = np.array([L, L, d])
    while idx.size:
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(v > 0, (bounds - p) / v, np.where(v < 0, -p / v, np.inf))
        face = np.argmin(dist, axis=1)
        s = dist[np.arange(idx.size), face]
        t_new = tt + s / c
        late = t_new > horizon
        if late.any():
            outcome[idx[late]] = SURVIVED
            keep = ~late
            idx, p, v, face, s, t_new = idx[keep], p[keep], v[keep], face[keep], s[keep], t_new[keep]
        p = p + s[:, None] * v
        np.clip(p, 0.0, bounds, out=p)
        tt = t_new
        m = idx.size
        done = np.zeros(m, dtype=bool)
        u = rng.random(m)

        top = (face == 2) & (v[:, 2] > 0)
        bottom = (face == 2) & ~top
        wall = face != 2

        if top.any():
            it = np.flatnonzero(top)
            inside = (np.abs(p[it, 0, None] - qx) <= qhalf) & (np.abs(p[it, 1, None] - qy) <= qhalf)
            any_in = inside.any(axis=1)
            hit = any_in & (u[it] < params.qubit_pairbreak_prob)
            if hit.any():
                ih = it[hit]
                outcome[idx[ih]] = HIT
                hit_q[idx[ih]] = np.argmax(inside[hit], axis=1)
                end_t[idx[ih]] = tt[ih]
                done[ih] = True
            refl = it[~hit]
            v[refl] = _lambert(rng, refl.size, 2, -1.0)
        if bottom.any():
            ib = np.flatnonzero(bottom)
            if geometry.islands_enabled and params.island_absorb_prob > 0:
                on = _on_island(p[ib, 0], p[ib, 1], geometry.island_pitch, geometry.island_size)
                gone = on & (u[ib] < params.island_absorb_prob)
                ig = ib[gone]
                outcome[idx[ig]] = ABSORBED
                end_t[idx[ig]] = tt[ig]
                done[ig] = True
                ib = ib[~gone]
            v[ib] = _lambert(rng, ib.size, 2, 1.0)
        if wall.any():
            iw = np.flatnonzero(wall)
            if params.anchor_escape_prob > 0 and ax.size:
                near = ((p[iw, 0, None] - ax) ** 2 + (p[iw, 1, None] - ay) ** 2 <= ar2).any(axis=1)
                gone = near & (u[iw] < params.anchor_escape_prob)
                ig = iw[gone]
                outcome[idx[ig]] = ESCAPED
                end_t[idx[ig]] = tt[ig]
                done[ig] = True
                iw = iw[~gone]
            fw = face[iw]
            upper = v[iw, fw] > 0
            for axis in (0, 1):
                for sign, at_upper in ((1.0, False), (-1.0, True)):
                    sel = iw[(fw == axis) & (upper == at_upper)]
                    if sel.size:
                        v[sel] = _lambert(rng, sel.size, axis, sign)

        keep = ~done
        idx, p, v, tt = idx[keep], p[keep], v[keep], tt[keep]

    hit_mask = outcome == HIT
    deaths = end_t[np.isfinite(end_t)] if record_deaths else None
    return (
        hit_q[hit_mask],
        end_t[hit_mask],
        int(np.sum(outcome == ABSORBED)),
        int(np.sum(outcome == ESCAPED)),
        int(np.sum(outcome == SURVIVED)),
        deaths,
    )


def transport(ensemble, params, geometry, horizon, seed, n_jobs=1, record_deaths=False, block_size=BLOCK_SIZE):
    """Propagate an ensemble until every phonon is lost or ``horizon`` passes.

    Phonons are processed in fixed blocks, each with its own random stream
    derived from ``(seed, block index)``, so the result does not depend on
    ``n_jobs``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    labels = geometry.qubit_labels
    n = len(ensemble)
    if n == 0:
        return HitSeries(labels, np.zeros(0, dtype=np.int64), np.zeros(0), 0, 0, 0, 0,
                         np.zeros(0) if record_deaths else None)

    def run(b):
        lo, hi = b * block_size, min(n, (b + 1) * block_size)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, b]))
        q, t, ab, es, sv, deaths = _transport_block(
            ensemble.position[lo:hi], ensemble.direction[lo:hi], ensemble.birth_time[lo:hi],
            params, geometry, horizon, rng, record_deaths,
        )
        return HitSeries(labels, q, t, hi - lo, ab, es, sv, deaths)

    blocks = range(math.ceil(n / block_size))
    if n_jobs == 1:
        parts = [run(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(run, blocks))
    out = HitSeries.merge(parts)
    out.check_conservation()
    return out


def simulate(pulse, params, geometry, horizon, seed, n_phonons=None, **kwargs):
    """``launch`` followed by ``transport`` with the same seed."""
    ens = launch(pulse, params, geometry, seed, n_phonons=n_phonons)
    return transport(ens, params, geometry, horizon, seed, **kwargs)


def with_footprints(geometry, area):
    """Copy of ``geometry`` with every qubit footprint set to ``area`` (m^2)."""
    sites = tuple(Site(s.label, s.x, s.y, area) for s in geometry.qubit_sites)
    return replace(geometry, qubit_sites=sites)


def hit_flux(hits, qubit=None, bin_width=2e-6, t_max=None, t_min=0.0):
    """Histogram of hit times as a rate (hits per second).

    Returns ``(bin_centers, rate, counts)``.
    """
    times = hits.hit_time if qubit is None else hits.times(qubit)
    if t_max is None:
        t_max = float(times.max()) if times.size else bin_width
    n_bins = max(int(math.ceil((t_max - t_min) / bin_width - 1e-9)), 1)
    edges = t_min + bin_width * np.arange(n_bins + 1)
    counts, edges = np.histogram(times, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return centers, counts / bin_width, counts


def _exp_model(t, a, tau):
    return a * np.exp(-t / tau)


def fit_flux_decay(centers, counts, start, min_counts=5):
    """Exponential decay constant of a binned flux from ``start`` onwards.

    Weighted least squares with Poisson weights; bins after the first one
    falling below ``min_counts`` are dropped. Returns ``(tau, tau_err)``.
    """
    sel = centers >= start
    t = centers[sel]
    y = counts[sel].astype(float)
    low = np.flatnonzero(y < min_counts)
    if low.size:
        t, y = t[: low[0]], y[: low[0]]
    if t.size < 3:
        raise CalibrationError("too few populated bins to fit a decay")
    t0 = t[0]
    slope = np.polyfit(t - t0, np.log(np.maximum(y, 1.0)), 1)[0]
    tau0 = -1.0 / slope if slope < 0 else (t[-1] - t0)
    popt, pcov = curve_fit(_exp_model, t - t0, y, p0=(y[0], tau0), sigma=np.sqrt(np.maximum(y, 1.0)),
                           absolute_sigma=True, maxfev=10000)
    return float(popt[1]), float(np.sqrt(pcov[1, 1]))


def peak_time(hits, qubit=None, bin_width=2e-6, t_max=None):
    centers, rate, _ = hit_flux(hits, qubit, bin_width, t_max)
    if not rate.any():
        raise ValueError("no hits recorded")
    return float(centers[np.argmax(rate)])


def population_decay_time(hits, start, stop):
    """Exponential lifetime of the in-flight population between ``start`` and ``stop``.

    Uses the recorded death times: with constant per-phonon loss rate the
    maximum-likelihood lifetime is the mean residual life of the phonons
    alive at ``start`` (censored at ``stop``).
    """
    if hits.death_time is None:
        raise ValueError("transport(..., record_deaths=True) required")
    deaths = hits.death_time[hits.death_time >= start]
    n_censored = hits.surviving
    in_window = deaths[deaths <= stop]
    n_late = deaths.size - in_window.size + n_censored
    exposure = np.sum(in_window - start) + n_late * (stop - start)
    if in_window.size == 0:
        return math.inf
    return float(exposure / in_window.size)


def calibrate_anchor_escape(params, geometry, target_tau=60e-6, pulse=None, n_phonons=20000,
                            horizon=600e-6, seed=0, rel_tol=0.01, max_iter=30):
    """Set ``anchor_escape_prob`` so the post-pulse population decays with ``target_tau``.

    Bisection with common random numbers; the lifetime is measured on the
    phonon population once it has spread over the chip (``pulse end + 40 us``
    onwards).
    """
    if pulse is None:
        pulse = InjectionPulse(geometry.injector_sites[0].label)
    start = pulse.end_time + 40e-6
    stop = horizon

    def tau_for(p_esc):
        pr = replace(params, anchor_escape_prob=p_esc)
        hits = simulate(pulse, pr, geometry, horizon, seed, n_phonons=n_phonons, record_deaths=True)
        return population_decay_time(hits, start, stop)

    lo, hi = 0.0, 1.0
    tau_hi = tau_for(hi)
    if tau_hi > target_tau:
        raise CalibrationError(f"target lifetime {target_tau:.3g} s unreachable: minimum {tau_hi:.3g} s")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        tau = tau_for(mid)
        if abs(tau - target_tau) <= rel_tol * target_tau:
            lo = hi = mid
            break
        if tau > target_tau:
            lo = mid
        else:
            hi = mid
    return replace(params, anchor_escape_prob=0.5 * (lo + hi))


def delivered_ratio(params, geometry, pulse, n_phonons, horizon, seed, reference=None):
    """Islands-off to islands-on ratio of total pair-breaking hits."""
    off = reference if reference is not None else simulate(
        pulse, params, geometry.with_islands(False), horizon, seed, n_phonons=n_phonons).total_hits
    on = simulate(pulse, params, geometry.with_islands(True), horizon, seed, n_phonons=n_phonons)
    return off / max(on.total_hits, 1), on


def calibrate_downconversion(params, geometry, target_flux_ratio=20.0, pulse=None, n_phonons=20000,
                             horizon=1e-3, seed=0, scoring_area=None, rel_tol=0.005, max_iter=40):
    """Choose ``island_absorb_prob`` so islands cut the delivered hits by ``target_flux_ratio``.

    Bisection over Monte Carlo runs sharing one random stream. The returned
    probability is the upper end of the final bracket, so the calibration
    ensemble itself meets the target. ``scoring_area`` temporarily enlarges
    the qubit footprints to give usable hit statistics.
    """
    if target_flux_ratio < 1:
        raise ValueError("target_flux_ratio must be >= 1")
    if target_flux_ratio == 1:
        return params
    if pulse is None:
        pulse = InjectionPulse(geometry.injector_sites[0].label)
    geo = with_footprints(geometry, scoring_area) if scoring_area else geometry
    reference = simulate(pulse, params, geo.with_islands(False), horizon, seed, n_phonons=n_phonons).total_hits
    if reference == 0:
        raise CalibrationError("no hits delivered without islands; enlarge scoring_area or n_phonons")

    def ratio(p):
        r, _ = delivered_ratio(replace(params, island_absorb_prob=p), geo, pulse, n_phonons, horizon,
                               seed, reference=reference)
        return r

    if ratio(1.0) < target_flux_ratio:
        raise CalibrationError(f"target ratio {target_flux_ratio} not reachable with island_absorb_prob <= 1")
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if ratio(mid) >= target_flux_ratio:
            hi = mid
        else:
            lo = mid
    logger.info("island_absorb_prob bracket [%.4f, %.4f]", lo, hi)
    return replace(params, island_absorb_prob=hi)
