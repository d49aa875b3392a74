"""Offset-charge tomography fits, charge-jump counting and the gamma-impact rate estimate."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import DataError, FitError, check_1d, check_positive

__all__ = [
    "TomographyScan",
    "GammaRateInputs",
    "JumpRate",
    "ChargeTomographyFit",
    "tomography_p1",
    "fit_tomography",
    "canonical_offset",
    "detect_jumps",
    "estimate_gamma_rate",
    "simulate_offset_series",
    "simulate_scan",
    "read_scan_csv",
    "write_series_csv",
]

# tomography model is invariant under ng -> ng + 1/2
CELL = 0.5
DEGENERATE_P = 0.01


def tomography_p1(ng_ext, d, nu, dng):
    """``P1 = (d + nu cos(pi cos 2 pi (ng_ext + dng))) / 2``."""
    ng = np.asarray(ng_ext, dtype=float) + dng
    return 0.5 * (d + nu * np.cos(np.pi * np.cos(2.0 * np.pi * ng)))


def canonical_offset(dng):
    """Representative of ``dng`` in ``[0, 1/2)``."""
    r = np.mod(dng, CELL)
    # tiny negative inputs round up to exactly CELL
    return np.where(r >= CELL, 0.0, r) if np.ndim(r) else (0.0 if r >= CELL else float(r))


@dataclass(frozen=True)
class TomographyScan:
    ng_ext: np.ndarray
    p1: np.ndarray
    d: float
    nu: float
    dng: float
    stderr: tuple  # (d, nu, dng)
    ci95: tuple  # ((lo, hi) for d, nu, dng)
    residual_norm: float


def fit_tomography(ng_ext, p1, n_starts=8):
    """Least-squares fit of ``d``, ``nu`` and ``dng`` with multi-start over the offset.

    The model only determines ``dng`` modulo 1/2, so the result is folded
    into ``[0, 1/2)``.
    """
    x = check_1d("ng_ext", ng_ext)
    y = check_1d("p1", p1)
    if x.shape != y.shape:
        raise DataError("ng_ext and p1 differ in length")
    if x.size < 8:
        raise ValueError("tomography fit needs at least 8 points")
    if np.ptp(x) < CELL * (1.0 - 1.0 / x.size):
        raise ValueError("scan must span one period of the offset charge")
    if np.any((y < 0) | (y > 1)):
        raise DataError("P1 values must lie in [0, 1]")
    d0 = 2.0 * y.mean()
    nu0 = max(np.ptp(y), 1e-3)

    def resid(p):
        return tomography_p1(x, *p) - y

    best = None
    for s in np.arange(n_starts) * CELL / n_starts:
        sol = least_squares(resid, (d0, nu0, s), bounds=([-np.inf, 0.0, -np.inf], np.inf), xtol=1e-15,
                            ftol=1e-15, gtol=1e-15, x_scale=(1.0, 1.0, 0.1))
        if best is None or sol.cost < best.cost:
            best = sol
    d, nu, dng = best.x
    if not best.success:
        raise FitError(f"tomography fit did not converge (residual {np.linalg.norm(best.fun):.3g})")
    dof = max(x.size - 3, 1)
    s2 = 2.0 * best.cost / dof
    try:
        cov = np.linalg.inv(best.jac.T @ best.jac) * s2
    except np.linalg.LinAlgError as exc:
        raise FitError("degenerate scan: fit is singular") from exc
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    # F-test of the full model against a flat P1 (nu = 0)
    rss, rss0 = 2.0 * best.cost, float(np.sum((y - y.mean()) ** 2))
    gain = rss0 - rss
    p_flat = 1.0 if gain <= 0 else (0.0 if rss == 0 else float(stats.f.sf(gain / 2.0 / (rss / dof), 2, dof)))
    if abs(nu) < 1e-9 or p_flat > DEGENERATE_P:
        raise FitError(f"degenerate scan: visibility indistinguishable from zero (p = {p_flat:.3g})")
    ci = tuple((v - 1.96 * e, v + 1.96 * e) for v, e in zip((d, nu, canonical_offset(dng)), se))
    return TomographyScan(x, y, float(d), float(nu), float(canonical_offset(dng)), tuple(map(float, se)), ci,
                          float(np.linalg.norm(best.fun)))


class ChargeTomographyFit(RegressorMixin, BaseEstimator):
    """Estimator around :func:`fit_tomography`; ``X`` holds the applied offset charges."""

    def __init__(self, n_starts=8):
        self.n_starts = n_starts

    def fit(self, X, y):
        res = fit_tomography(np.asarray(X, dtype=float).reshape(-1), y, self.n_starts)
        self.scan_ = res
        self.d_, self.nu_, self.dng_ = res.d, res.nu, res.dng
        return self

    def predict(self, X):
        check_is_fitted(self, "scan_")
        return tomography_p1(np.asarray(X, dtype=float).reshape(-1), self.d_, self.nu_, self.dng_)


@dataclass(frozen=True)
class JumpRate:
    count: int
    span: float
    rate: float
    sigma: float
    jump_indices: np.ndarray


def detect_jumps(times, dng, threshold=0.1):
    """Rate of offset-charge steps larger than ``threshold`` between consecutive scans.

    Differences are taken modulo 1/2 into ``(-1/4, 1/4]`` so that the
    wrap-around of the folded offset is not counted. The error is
    ``sqrt(count) / span``.
    """
    t = check_1d("times", times)
    q = check_1d("dng", dng)
    if t.size < 2 or q.size != t.size:
        raise DataError("need at least two scans with matching times")
    if np.any(np.diff(t) < 0):
        raise DataError("scan times must be ordered")
    step = np.diff(q)
    step = step - CELL * np.round(step / CELL)
    idx = np.flatnonzero(np.abs(step) > threshold) + 1
    span = float(t[-1] - t[0])
    check_positive("time span", span)
    return JumpRate(int(idx.size), span, idx.size / span, np.sqrt(idx.size) / span, idx)


@dataclass(frozen=True)
class GammaRateInputs:
    reference_rate: float = 0.0198
    reference_sense_area: float = 19902e-12
    reference_jump_rate: float = 0.00135
    reference_chip_area: float = 6.25e-3**2
    our_sense_area: float = 6612e-12
    our_jump_rate: float = 0.00115
    our_chip_area: float = 8e-3**2

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def estimate_gamma_rate(inputs=GammaRateInputs()):
    """Scale a reference impact rate by sensing area, jump rate and chip area.

    Smaller islands see fewer jumps per impact, so the rate grows with the
    reference/our sensing-area ratio; it scales with the measured jump rate
    and with chip area.
    """
    i = inputs
    return (i.reference_rate * (i.reference_sense_area / i.our_sense_area)
            * (i.our_jump_rate / i.reference_jump_rate) * (i.our_chip_area / i.reference_chip_area))


def simulate_offset_series(n_scans, scan_period=28.0, jump_rate=0.0012, seed=None, jump_size=(0.1, 0.5),
                           drift_sigma=0.0, start=None):
    """Folded offset-charge series sampled once per scan with Poisson jumps.

    Jumps are uniform in ``jump_size`` (e) with random sign. Returns
    ``(times, dng, n_jumps)``. ``n_jumps`` counts every jump, including those
    whose size folds (modulo 1/2) below a detection threshold.
    """
    rng = np.random.default_rng(seed)
    times = np.arange(n_scans) * scan_period
    n_j = rng.poisson(jump_rate * scan_period, max(n_scans - 1, 0))
    steps = np.zeros(n_scans)
    for k in np.flatnonzero(n_j):
        s = rng.uniform(*jump_size, n_j[k]) * rng.choice([-1.0, 1.0], n_j[k])
        steps[k + 1] = s.sum()
    if drift_sigma:
        steps[1:] += rng.normal(0.0, drift_sigma, n_scans - 1)
    q0 = rng.random() * CELL if start is None else start
    return times, canonical_offset(q0 + np.cumsum(steps)), int(n_j.sum())


def simulate_scan(dng, d=1.0, nu=0.8, n_points=41, noise=0.0, seed=None):
    x = np.linspace(0.0, 1.0, n_points)
    y = tomography_p1(x, d, nu, dng)
    if noise:
        y = np.clip(y + np.random.default_rng(seed).normal(0.0, noise, n_points), 0.0, 1.0)
    return x, y


def read_scan_csv(path):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: cannot parse tomography CSV: {exc}") from exc
    if data.shape[0] == 0 or data.shape[1] < 2:
        raise DataError(f"{path}: expected columns n_g_ext_e, P1")
    return data[:, 0], data[:, 1]


def write_series_csv(path, times, dng):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "dng_e"])
        for t, q in zip(times, dng):
            w.writerow([repr(float(t)), repr(float(q))])
