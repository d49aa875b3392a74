"""Two-state hidden Markov decoding of averaged parity signals."""
from __future__ import annotations

import numba
import numpy as np

from .._validation import DataError, check_1d, check_positive
from .filters import DigitalParity, mask_from_windows, windows_from_mask

__all__ = ["viterbi2", "hmm_decode"]


@numba.njit(cache=True)
def viterbi2(log_e0, log_e1, log_stay, log_flip):
    """Most likely path of a symmetric two-state chain; returns 0/1 per step.

    Ties resolve to staying in the current state.
    """
    n = log_e0.size
    back = np.zeros((n, 2), dtype=np.int8)
    path = np.zeros(n, dtype=np.int8)
    if n == 0:
        return path
    # uniform prior
    d0 = log_e0[0]
    d1 = log_e1[0]
    for t in range(1, n):
        s0 = d0 + log_stay
        f0 = d1 + log_flip
        s1 = d1 + log_stay
        f1 = d0 + log_flip
        if s0 >= f0:
            n0 = s0
            back[t, 0] = 0
        else:
            n0 = f0
            back[t, 0] = 1
        if s1 >= f1:
            n1 = s1
            back[t, 1] = 1
        else:
            n1 = f1
            back[t, 1] = 0
        d0 = n0 + log_e0[t]
        d1 = n1 + log_e1[t]
        # keep numbers bounded; only differences matter
        m = max(d0, d1)
        d0 -= m
        d1 -= m
    path[n - 1] = 0 if d0 >= d1 else 1
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _log_gauss(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - np.log(sigma)


def hmm_decode(averaged, readout, gamma_prior, dt_rep, mask_windows=(), moving_average_n=1):
    """Viterbi path using the calibration Gaussians as emissions.

    The per-shot switching probability is ``1 - exp(-gamma_prior * dt_rep)``.
    Each unmasked segment is decoded on its own, so no path crosses a mask.
    State +1 is the ``mean_even`` state.
    """
    x = check_1d("averaged", averaged)
    check_positive("gamma_prior", gamma_prior)
    check_positive("dt_rep", dt_rep)
    m = mask_from_windows(mask_windows, x.size)
    if m.all():
        raise DataError("no unmasked data")
    p = -np.expm1(-gamma_prior * dt_rep)
    log_stay, log_flip = np.log1p(-p), np.log(p)
    e_even = _log_gauss(x, readout.mean_even, readout.sigma_even)
    e_odd = _log_gauss(x, readout.mean_odd, readout.sigma_odd)
    out = np.zeros(x.size, dtype=np.int8)
    for s, e in windows_from_mask(~m):
        path = viterbi2(e_even[s:e], e_odd[s:e], log_stay, log_flip)
        out[s:e] = np.where(path == 0, 1, -1)
    return DigitalParity(out, dt_rep, moving_average_n, windows_from_mask(m))
