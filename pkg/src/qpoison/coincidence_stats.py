"""Multi-qubit coincidence counting, accidental backgrounds and deconvolution of exclusive rates."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import DataError, FitError, check_positive, check_window
from .parity_decode.filters import DigitalParity, detect_switches
from .parity_synth import EVENT_TYPES

__all__ = [
    "CoincidenceSet",
    "DeconvolvedRates",
    "FaultToleranceReport",
    "find_coincidences",
    "match_pairs",
    "match_triples",
    "background_rates",
    "observation_model",
    "solve_observation_model",
    "deconvolve",
    "rate_summary",
    "pulse_switch_probabilities",
    "write_report_csv",
    "read_rates_csv",
]

PAIRS = (("AB", 0, 1), ("BC", 1, 2), ("AC", 0, 2))


@dataclass
class CoincidenceSet:
    """Counts ``N`` and unmasked exposures ``tau`` (s) in the order A, B, C, AB, BC, AC, ABC."""

    N: np.ndarray
    tau: np.ndarray
    window: int = 40
    dt_rep: float = 10e-3

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        if self.N.shape != (7,) or self.tau.shape != (7,):
            raise ValueError("N and tau need seven entries")

    @property
    def rates(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.tau > 0, self.N / self.tau, 0.0)

    @property
    def sigmas(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.tau > 0, np.sqrt(self.N) / self.tau, 0.0)

    @property
    def delta_t(self):
        return self.window * self.dt_rep

    def as_dict(self):
        return {t: (int(n), float(s)) for t, n, s in zip(EVENT_TYPES, self.N, self.tau)}


@dataclass
class DeconvolvedRates:
    rates: np.ndarray
    sigmas: np.ndarray
    delta_t: float
    residual: float
    iterations: int
    observed: np.ndarray = field(default_factory=lambda: np.zeros(7))
    observed_sigmas: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def __getitem__(self, label):
        return self.rates[EVENT_TYPES.index(label)]

    @property
    def probabilities(self):
        return self.rates * self.delta_t


@dataclass(frozen=True)
class FaultToleranceReport:
    pair_probabilities: dict
    max_probability: float
    threshold: float
    below_threshold: bool

    def summary(self):
        flag = "below" if self.below_threshold else "ABOVE"
        return (f"max two-fold error probability per cycle {self.max_probability:.3g} "
                f"({flag} threshold {self.threshold:.1g})")


def match_pairs(a, b, half_width):
    """Greedy maximum matching of two sorted index arrays with ``|a_i - b_j| < half_width``."""
    i = j = 0
    out = []
    while i < len(a) and j < len(b):
        if abs(a[i] - b[j]) < half_width:
            out.append((a[i], b[j]))
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return out


def match_triples(a, b, c, half_width):
    """Greedy left-to-right triples with all members inside ``[t, t + half_width)``.

    ``t`` is the earliest unused switch; its partners are the earliest unused
    switches on the other two qubits.
    """
    seqs = (a, b, c)
    ptr = [0, 0, 0]
    out = []
    while all(ptr[k] < len(seqs[k]) for k in range(3)):
        heads = [seqs[k][ptr[k]] for k in range(3)]
        first = int(np.argmin(heads))
        if max(heads) - heads[first] < half_width:
            out.append(tuple(heads))
            ptr = [p + 1 for p in ptr]
        else:
            ptr[first] += 1
    return out


def _as_values(d):
    return d.values if isinstance(d, DigitalParity) else np.asarray(d, dtype=np.int8)


def find_coincidences(digitals, window=40, dt_rep=None):
    """Count single, double and triple switching events on three digital records.

    Switches on different qubits coincide when their shot indices differ by
    less than ``window / 2``; every member of a triple lies within that span.
    A switch is used at most once per coincidence type, and a triple also
    appears in all three doubles. Only switches where every member qubit is
    unmasked count, and ``tau`` is the matching unmasked exposure.
    """
    window = check_window("window", window)
    if len(digitals) != 3:
        raise ValueError("three digital records expected")
    vals = [_as_values(d) for d in digitals]
    n = vals[0].size
    if any(v.size != n for v in vals):
        raise DataError("digital records differ in length")
    if dt_rep is None:
        dt_rep = digitals[0].dt_rep if isinstance(digitals[0], DigitalParity) else 1.0
    live = [v != 0 for v in vals]
    sw = [detect_switches(v) for v in vals]
    half = window / 2.0

    N = np.zeros(7)
    tau = np.zeros(7)
    for q in range(3):
        N[q] = sw[q].size
        tau[q] = np.count_nonzero(live[q]) * dt_rep
    for k, (_, i, j) in enumerate(PAIRS):
        both = live[i] & live[j]
        a = sw[i][both[sw[i]]]
        b = sw[j][both[sw[j]]]
        N[3 + k] = len(match_pairs(a, b, half))
        tau[3 + k] = np.count_nonzero(both) * dt_rep
    allq = live[0] & live[1] & live[2]
    trip = [s[allq[s]] for s in sw]
    N[6] = len(match_triples(*trip, half))
    tau[6] = np.count_nonzero(allq) * dt_rep
    return CoincidenceSet(N, tau, window, dt_rep)


def background_rates(singles, delta_t, sigmas=None):
    """Accidental pair (``r_i r_j dt``) and triple (``r_A r_B r_C dt^2``) rates.

    Returns ``(rates, sigmas)`` ordered AB, BC, AC, ABC; uncertainties add the
    fractional errors of the singles in quadrature.
    """
    check_positive("delta_t", delta_t)
    r = np.asarray(singles, dtype=float)
    s = np.zeros(3) if sigmas is None else np.asarray(sigmas, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(r > 0, s / r, 0.0)
    rates = np.array([r[i] * r[j] * delta_t for _, i, j in PAIRS] + [r.prod() * delta_t**2])
    fr = [np.hypot(frac[i], frac[j]) for _, i, j in PAIRS] + [np.hypot(np.hypot(frac[0], frac[1]), frac[2])]
    return rates, rates * np.array(fr)


def observation_model(p):
    """Observed switching probabilities per window given exclusive event probabilities."""
    pA, pB, pC, pAB, pBC, pAC, pABC = p
    return np.array([
        0.5 * (pABC + pAB + pAC + pA),
        0.5 * (pABC + pAB + pBC + pB),
        0.5 * (pABC + pBC + pAC + pC),
        0.25 * (pABC + pAB + pA * pB),
        0.25 * (pABC + pBC + pB * pC),
        0.25 * (pABC + pAC + pA * pC),
        0.125 * (pABC + pA * pB * pC + pAB * pC + pA * pBC + pAC * pB),
    ])


def _linear_inverse(obs):
    oA, oB, oC, oAB, oBC, oAC, oABC = obs
    pABC = 8.0 * oABC
    pAB, pBC, pAC = 4.0 * oAB - pABC, 4.0 * oBC - pABC, 4.0 * oAC - pABC
    return np.array([
        2.0 * oA - pABC - pAB - pAC,
        2.0 * oB - pABC - pAB - pBC,
        2.0 * oC - pABC - pBC - pAC,
        pAB, pBC, pAC, pABC,
    ])


def _jacobian(fun, p, h=1e-7):
    J = np.empty((7, 7))
    for k in range(7):
        step = h * max(1.0, abs(p[k]))
        e = np.zeros(7)
        e[k] = step
        J[:, k] = (fun(p + e) - fun(p - e)) / (2.0 * step)
    return J


def solve_observation_model(obs, tol=1e-12, max_iter=100, p0=None):
    """Damped Newton solve of ``observation_model(p) = obs``.

    Starts from the solution with the product terms dropped. Returns
    ``(p, max_abs_residual, iterations)``.
    """
    obs = np.asarray(obs, dtype=float)
    p = _linear_inverse(obs) if p0 is None else np.array(p0, dtype=float)

    def F(x):
        return observation_model(x) - obs

    r = F(p)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(r)) < tol:
            return p, float(np.max(np.abs(r))), it - 1
        J = _jacobian(observation_model, p)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular Jacobian at iteration {it}; residual {np.max(np.abs(r)):.3g}") from exc
        lam = 1.0
        norm0 = np.linalg.norm(r)
        while lam > 1e-10:
            trial = p + lam * step
            rt = F(trial)
            if np.linalg.norm(rt) < norm0:
                break
            lam *= 0.5
        else:
            break
        p, r = trial, rt
    res = float(np.max(np.abs(r)))
    if res < tol:
        return p, res, max_iter
    raise FitError(f"Newton solve did not converge; final residual {res:.3g}")


def deconvolve(observed, delta_t=None, sigmas=None, tol=1e-12, max_iter=100):
    """Exclusive event rates from observed switching rates.

    ``observed`` is a :class:`CoincidenceSet` or seven rates (1/s). The
    uncertainties re-solve the system with each observed probability nudged
    by central differences and scale by the Poisson error of that rate.
    Negative solutions are returned unchanged.
    """
    if isinstance(observed, CoincidenceSet):
        r_obs = observed.rates
        sig = observed.sigmas if sigmas is None else np.asarray(sigmas, dtype=float)
        delta_t = observed.delta_t if delta_t is None else delta_t
    else:
        r_obs = np.asarray(observed, dtype=float)
        sig = np.zeros(7) if sigmas is None else np.asarray(sigmas, dtype=float)
    if delta_t is None:
        raise ValueError("delta_t required with plain rates")
    check_positive("delta_t", delta_t)
    if r_obs.shape != (7,):
        raise ValueError("seven observed rates expected")
    obs = r_obs * delta_t
    if np.any(obs >= 1.0):
        raise ValueError("observed switching probability per window must be < 1")
    p, res, its = solve_observation_model(obs, tol, max_iter)

    dpdo = np.empty((7, 7))
    for j in range(7):
        h = 1e-6 * max(abs(obs[j]), 1e-4)
        e = np.zeros(7)
        e[j] = h
        hi, _, _ = solve_observation_model(obs + e, tol, max_iter, p0=p)
        lo, _, _ = solve_observation_model(obs - e, tol, max_iter, p0=p)
        dpdo[:, j] = (hi - lo) / (2.0 * h)
    sig_p = np.sqrt(((dpdo * (sig * delta_t)) ** 2).sum(axis=1))
    return DeconvolvedRates(p / delta_t, sig_p / delta_t, float(delta_t), res, its, r_obs, sig)


def rate_summary(decon, surface_code_cycle=1e-6, threshold=1e-8):
    """Two-fold error probability per surface-code cycle against the correlated-error threshold."""
    rates = decon.rates if isinstance(decon, DeconvolvedRates) else np.asarray(decon, dtype=float)
    pairs = {name: float(rates[3 + k] * surface_code_cycle) for k, (name, _, _) in enumerate(PAIRS)}
    worst = max(0.0, max(pairs.values()))
    return FaultToleranceReport(pairs, worst, threshold, worst < threshold)


def pulse_switch_probabilities(digitals, pulse_shots, window):
    """Fraction of pulses followed by switches on each qubit set.

    A qubit counts as switched when its record changes anywhere within
    ``window / 2`` shots of the pulse shot. Only pulses whose window is
    unmasked on the relevant qubits are used. Returns a dict keyed like
    ``EVENT_TYPES`` with non-exclusive probabilities (``"AB"`` is A and B
    both switched, whatever C did).
    """
    window = check_window("window", window)
    vals = [_as_values(d) for d in digitals]
    n = vals[0].size
    half = window // 2
    starts = np.asarray(pulse_shots, dtype=np.int64) - half
    ok = (starts >= 1) & (starts + window <= n)
    starts = starts[ok]
    sw = np.zeros((3, starts.size), dtype=bool)
    live = np.zeros((3, starts.size), dtype=bool)
    for q, v in enumerate(vals):
        cs = np.concatenate(([0], np.cumsum(np.abs(np.diff(v.astype(np.int16))) == 2)))
        ms = np.concatenate(([0], np.cumsum(v == 0)))
        # a switch at shot i compares i-1 and i
        sw[q] = (cs[starts + window - 1] - cs[starts - 1]) > 0
        live[q] = (ms[starts + window] - ms[starts - 1]) == 0
    out = {}
    for name in EVENT_TYPES:
        idx = ["ABC".index(c) for c in name]
        good = live[idx].all(axis=0)
        out[name] = float(sw[idx][:, good].all(axis=0).mean()) if good.any() else float("nan")
    return out


def write_report_csv(path, decon, counts=None, labels=EVENT_TYPES):
    """Table with observed, background and extracted rates per qubit set.

    ``counts`` is the :class:`CoincidenceSet` behind ``decon``; without it
    the ``N_i`` and ``tau_i_s`` columns stay empty.
    """
    r = decon.observed
    s = counts.sigmas if counts is not None else decon.observed_sigmas
    bg, bgs = background_rates(r[:3], decon.delta_t, s[:3])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Qubit(s)", "N_i", "tau_i_s", "r_obs", "r_obs_err", "r_background", "r_background_err",
                    "r_extracted", "r_extracted_err"])
        for k, name in enumerate(labels):
            n, tau = ("", "") if counts is None else (int(counts.N[k]), f"{counts.tau[k]:.6g}")
            b, be = ("", "") if k < 3 else (f"{bg[k - 3]:.6g}", f"{bgs[k - 3]:.6g}")
            w.writerow([name, n, tau, f"{r[k]:.6g}", f"{s[k]:.6g}", b, be, f"{decon.rates[k]:.6g}",
                        f"{decon.sigmas[k]:.6g}"])


def read_rates_csv(path):
    """Observed-rates table keyed by a ``Qubit(s)`` column.

    Each row gives either ``N_i`` and ``tau_i_s`` or ``r_obs`` (optionally
    ``r_obs_err``). Returns ``(rates, sigmas)`` ordered A, B, C, AB, BC, AC, ABC.
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "Qubit(s)" not in reader.fieldnames:
            raise DataError(f"{path}: missing 'Qubit(s)' column")
        for row in reader:
            rows[row["Qubit(s)"].strip()] = row
    missing = [t for t in EVENT_TYPES if t not in rows]
    if missing:
        raise DataError(f"{path}: missing rows {missing}")
    rates = np.empty(7)
    sig = np.zeros(7)
    for k, t in enumerate(EVENT_TYPES):
        row = rows[t]
        try:
            if row.get("N_i") not in (None, "") and row.get("tau_i_s") not in (None, ""):
                n, tau = float(row["N_i"]), float(row["tau_i_s"])
                rates[k], sig[k] = n / tau, np.sqrt(n) / tau
            else:
                rates[k] = float(row["r_obs"])
                if row.get("r_obs_err") not in (None, ""):
                    sig[k] = float(row["r_obs_err"])
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise DataError(f"{path}: bad row {t!r}: {exc}") from exc
    return rates, sig
