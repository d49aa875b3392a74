"""Smoothing, masking and digital-parity containers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from .._validation import DataError, check_1d, check_window

__all__ = ["DigitalParity", "moving_average", "envelope_mask", "mask_from_windows", "windows_from_mask",
           "threshold_decode", "detect_switches"]


def windows_from_mask(mask):
    """Half-open ``(start, end)`` runs of True in a boolean array."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return []
    d = np.diff(np.concatenate(([0], m.view(np.int8), [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def mask_from_windows(windows, n):
    m = np.zeros(n, dtype=bool)
    for s, e in windows:
        m[max(s, 0) : min(e, n)] = True
    return m


@dataclass
class DigitalParity:
    """Per-shot parity in {+1, -1}; masked shots hold 0."""

    values: np.ndarray
    dt_rep: float = 1.0
    moving_average_n: int = 1
    mask_windows: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        m = mask_from_windows(self.mask_windows, self.values.size)
        self.values[m] = 0
        if np.any(self.values[~m] == 0):
            raise DataError("unmasked shots must be +1 or -1")

    @property
    def mask(self):
        return self.values == 0

    def __len__(self):
        return self.values.size

    def with_mask(self, windows):
        m = self.mask | mask_from_windows(windows, len(self))
        v = self.values.copy()
        return DigitalParity(v, self.dt_rep, self.moving_average_n, windows_from_mask(m))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["shot_index", "value"])
            for i, v in enumerate(self.values):
                w.writerow([i, "NaN" if v == 0 else int(v)])


def moving_average(samples, n):
    """Centred boxcar of width ``n``; the window shrinks to the available points at the edges."""
    x = check_1d("samples", samples)
    n = check_window("n", n)
    if n > x.size:
        raise ValueError(f"moving-average width {n} exceeds length {x.size}")
    if n == 1:
        return x.copy()
    c = np.concatenate(([0.0], np.cumsum(x)))
    i = np.arange(x.size)
    lo = np.maximum(i - n // 2, 0)
    hi = np.minimum(i + (n - 1) // 2 + 1, x.size)
    return (c[hi] - c[lo]) / (hi - lo)


def envelope_mask(samples, readout, window=100, threshold_fraction=0.5):
    """Mask windows where the averaged signal loses its bimodal swing.

    The envelope is twice the running maximum (over ``window`` shots) of the
    distance between the ``window``-point moving average and the calibration
    midpoint. Shots where it falls below ``threshold_fraction`` times the
    calibration separation are masked.
    """
    x = check_1d("samples", samples)
    window = check_window("window", window)
    if window < 2:
        raise ValueError("window must be >= 2")
    if x.size < window:
        raise ValueError(f"trace shorter than mask window ({x.size} < {window})")
    dev = np.abs(moving_average(x, window) - readout.midpoint)
    env = 2.0 * maximum_filter1d(dev, size=window, mode="nearest")
    return windows_from_mask(env < threshold_fraction * readout.separation)


def threshold_decode(averaged, mask_windows=(), readout=None, dt_rep=1.0, moving_average_n=1):
    """Sign of each sample relative to the unmasked mean.

    With ``readout`` the sign is oriented so +1 is the ``mean_even`` side.
    """
    x = check_1d("averaged", averaged)
    m = mask_from_windows(mask_windows, x.size)
    if m.all():
        raise DataError("no unmasked data")
    mean = x[~m].mean()
    v = np.where(x >= mean, 1, -1).astype(np.int8)
    if readout is not None and readout.mean_even < readout.mean_odd:
        v = -v
    return DigitalParity(v, dt_rep, moving_average_n, list(mask_windows))


def detect_switches(digital):
    """Shot indices ``i`` where shots ``i-1`` and ``i`` are both unmasked and differ."""
    v = digital.values if isinstance(digital, DigitalParity) else np.asarray(digital)
    if v.size < 2:
        return np.zeros(0, dtype=np.int64)
    a, b = v[:-1], v[1:]
    return np.flatnonzero((a != 0) & (b != 0) & (a != b)) + 1
