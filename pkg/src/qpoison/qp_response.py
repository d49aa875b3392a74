"""Qubit relaxation observables: Delta Gamma_1, quasiparticle density and T1 fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import constants, stats
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import FitError, check_1d, check_positive
from .chipmodel import AL_GAP_EV
from .phonon_mc import hit_flux

__all__ = [
    "RelaxationObservation",
    "T1Fit",
    "T1Fitter",
    "delta_gamma1",
    "xqp_from_gamma",
    "gamma_from_hits",
    "calibrate_responsivity",
    "fit_t1",
    "inversion_recovery",
    "write_gamma_csv",
]


@dataclass(frozen=True)
class RelaxationObservation:
    delay_after_pulse: float
    T1_fitted: float
    T1_ci95: tuple
    delta_gamma1: float
    delta_xqp: float

    def __post_init__(self):
        if not self.T1_fitted > 0:
            raise ValueError("T1_fitted must be > 0")
        lo, hi = self.T1_ci95
        if not lo <= self.T1_fitted <= hi:
            raise ValueError("T1_ci95 must bracket T1_fitted")


@dataclass(frozen=True)
class T1Fit:
    T1: float
    A: float
    B: float
    T1_stderr: float
    ci95: tuple
    residual_norm: float


def delta_gamma1(T1, T1_baseline):
    """``1/T1 - 1/T1_baseline``; negative when the qubit got better than baseline."""
    check_positive("T1", T1)
    check_positive("T1_baseline", T1_baseline)
    return 1.0 / T1 - 1.0 / T1_baseline


def xqp_from_gamma(dG1, delta_al=AL_GAP_EV * constants.e, f01=4.84e9):
    """Reduced quasiparticle density change for a relaxation-rate change ``dG1``.

    ``delta_al`` in joules, ``f01`` in Hz. Linear in ``dG1``; accepts arrays.
    """
    check_positive("delta_al", delta_al)
    check_positive("f01", f01)
    omega = 2.0 * np.pi * f01
    return np.pi * np.asarray(dG1, dtype=float) / math.sqrt(2.0 * delta_al * omega / constants.hbar)


def gamma_from_hits(hits, qubit, responsivity, bin, t_max=None):
    """Relaxation-rate excess ``responsivity * hit_rate`` binned in time.

    Returns ``(bin_centers, delta_gamma1)``.
    """
    check_positive("bin", bin)
    if qubit not in hits.qubit_labels:
        raise KeyError(f"unknown qubit {qubit!r}")
    if t_max is None:
        t_max = float(hits.hit_time.max()) if hits.total_hits else bin
    centers, rate, _ = hit_flux(hits, qubit, bin, t_max)
    return centers, responsivity * rate


def calibrate_responsivity(hits, qubit, target_peak, bin):
    """Responsivity that maps the peak binned hit rate to ``target_peak`` (1/s)."""
    _, rate = gamma_from_hits(hits, qubit, 1.0, bin)
    if rate.size == 0 or rate.max() <= 0:
        raise FitError(f"no hits on qubit {qubit!r}; cannot calibrate responsivity")
    return target_peak / rate.max()


def _model(t, A, T1, B):
    return A * np.exp(-t / T1) + B


def fit_t1(wait_times, populations):
    """Least-squares fit of ``A exp(-t/T1) + B`` to inversion-recovery data.

    The 95% interval uses Student-t quantiles with ``n - 3`` degrees of
    freedom and the residual-scaled covariance. A noiseless input yields a
    zero-width interval.
    """
    t = check_1d("wait_times", wait_times)
    y = check_1d("populations", populations)
    if t.shape != y.shape:
        raise ValueError("wait_times and populations differ in length")
    if t.size < 5:
        raise ValueError("fit_t1 needs at least 5 samples")
    tpos = t[t > 0]
    if tpos.size == 0 or t.max() < 10.0 * tpos.min():
        raise ValueError("wait times must span at least one decade")
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        raise FitError("degenerate data: constant signal")

    B0 = y[np.argmax(t)]
    A0 = y[np.argmin(t)] - B0
    grid = np.geomspace(tpos.min(), t.max(), 25)
    sse = [np.sum((_model(t, A0, g, B0) - y) ** 2) for g in grid]
    p0 = (A0, grid[int(np.argmin(sse))], B0)
    sol = least_squares(lambda p: _model(t, *p) - y, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=20000)
    A, T1, B = sol.x
    resid = float(np.linalg.norm(sol.fun))
    if not (sol.success and T1 > 0):
        raise FitError(f"T1 fit did not converge (residual norm {resid:.3g})")
    J = sol.jac
    try:
        pcov = np.linalg.inv(J.T @ J) * (resid**2 / (t.size - 3))
    except np.linalg.LinAlgError as exc:
        raise FitError(f"T1 fit is singular (residual norm {resid:.3g})") from exc
    se = float(np.sqrt(pcov[1, 1]))
    q = stats.t.ppf(0.975, t.size - 3)
    return T1Fit(float(T1), float(A), float(B), se, (T1 - q * se, T1 + q * se), resid)


def inversion_recovery(wait_times, T1, A=1.0, B=0.0, noise=0.0, seed=None):
    """Populations ``A exp(-t/T1) + B`` with optional Gaussian noise."""
    t = np.asarray(wait_times, dtype=float)
    y = _model(t, A, T1, B)
    if noise:
        y = y + np.random.default_rng(seed).normal(0.0, noise, t.shape)
    return y


class T1Fitter(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_t1`; ``X`` holds the wait times."""

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        res = fit_t1(t, y)
        self.T1_ = res.T1
        self.A_ = res.A
        self.B_ = res.B
        self.T1_stderr_ = res.T1_stderr
        self.ci95_ = res.ci95
        self.residual_norm_ = res.residual_norm
        return self

    def predict(self, X):
        check_is_fitted(self, "T1_")
        t = np.asarray(X, dtype=float).reshape(-1)
        return _model(t, self.A_, self.T1_, self.B_)


def write_gamma_csv(path, x, dG1, f01, delta_al=AL_GAP_EV * constants.e, x_name="time_s"):
    """CSV of a Delta Gamma_1 curve against time (or bias, via ``x_name``) with Delta x_qp."""
    xq = xqp_from_gamma(dG1, delta_al, f01)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([x_name, "delta_gamma1_per_s", "delta_xqp"])
        for a, b, c in zip(np.asarray(x, float), np.asarray(dG1, float), xq):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
