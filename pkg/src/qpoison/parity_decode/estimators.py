"""Estimator wrappers for the decoding chain."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import FitError, check_1d
from ..parity_synth import QubitReadout
from .filters import envelope_mask, moving_average, threshold_decode
from .hmm import hmm_decode
from .psd import lorentzian_psd, psd_gamma

__all__ = ["ParityDecoder", "LorentzianPSD", "decode_trace"]

PSD_RECORD = 20000


class ParityDecoder(TransformerMixin, BaseEstimator):
    """Analog single-qubit parity record to masked digital parity.

    ``fit`` fills in whatever was not supplied: the readout Gaussians are
    bootstrapped from a threshold decode, and the switching-rate prior comes
    from a Lorentzian fit to the raw thresholded record.
    """

    def __init__(self, dt_rep=10e-3, avg=40, method="hmm", readout=None, gamma_prior=None, mask=True,
                 mask_window=100, threshold_fraction=0.5):
        self.dt_rep = dt_rep
        self.avg = avg
        self.method = method
        self.readout = readout
        self.gamma_prior = gamma_prior
        self.mask = mask
        self.mask_window = mask_window
        self.threshold_fraction = threshold_fraction

    def fit(self, X, y=None):
        x = check_1d("X", X, min_len=2)
        if self.method not in ("hmm", "threshold"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.readout is None:
            rough = threshold_decode(moving_average(x, min(self.avg, x.size)))
            hi, lo = x[rough.values > 0], x[rough.values < 0]
            if hi.size < 2 or lo.size < 2:
                raise FitError("cannot bootstrap readout levels from a one-sided record")
            self.readout_ = QubitReadout(hi.mean(), lo.mean(), max(hi.std(), 1e-12), max(lo.std(), 1e-12))
        else:
            self.readout_ = self.readout
        if self.gamma_prior is None:
            self.gamma_prior_ = self._estimate_gamma(x)
        else:
            self.gamma_prior_ = float(self.gamma_prior)
        return self

    def _estimate_gamma(self, x):
        raw = np.where(x >= self.readout_.midpoint, 1.0, -1.0)
        n = min(PSD_RECORD, raw.size)
        recs = raw[: (raw.size // n) * n].reshape(-1, n)
        try:
            return psd_gamma(recs, self.dt_rep).Gamma_p
        except FitError:
            flips = np.count_nonzero(np.diff(threshold_decode(moving_average(x, self.avg)).values))
            return max(flips, 1) / (x.size * self.dt_rep)

    def mask_windows(self, X):
        check_is_fitted(self, "readout_")
        x = check_1d("X", X)
        if not self.mask:
            return []
        return envelope_mask(x, self.readout_, min(self.mask_window, x.size), self.threshold_fraction)

    def decode(self, X):
        check_is_fitted(self, "readout_")
        x = check_1d("X", X)
        windows = self.mask_windows(x)
        avg = moving_average(x, self.avg)
        if self.method == "hmm":
            return hmm_decode(avg, self.readout_, self.gamma_prior_, self.dt_rep, windows, self.avg)
        return threshold_decode(avg, windows, self.readout_, self.dt_rep, self.avg)

    def transform(self, X):
        return self.decode(X).values


class LorentzianPSD(BaseEstimator):
    """Fit ``Gamma_p`` and ``F`` to a stack of +-1 records (rows)."""

    def __init__(self, dt=10e-3, model="exact", fmax=None):
        self.dt = dt
        self.model = model
        self.fmax = fmax

    def fit(self, X, y=None):
        res = psd_gamma(X, self.dt, self.model, self.fmax)
        self.result_ = res
        self.Gamma_p_ = res.Gamma_p
        self.F_ = res.F
        self.ci95_ = res.ci95
        return self

    def predict(self, f):
        check_is_fitted(self, "Gamma_p_")
        return lorentzian_psd(f, self.Gamma_p_, self.F_, self.dt)


def decode_trace(trace, avg=40, method="hmm", readout=None, gamma_prior=None, mask=True, mask_window=100,
                 threshold_fraction=0.5):
    """Decode every qubit row of a :class:`~qpoison.parity_synth.ParityTrace`.

    ``readout`` may be a :class:`~qpoison.parity_synth.ReadoutModel` (or a
    mapping of label to :class:`QubitReadout`); missing entries are
    bootstrapped from the data. Returns ``(digitals, decoders)``.
    """
    digitals, decoders = [], []
    for label, x in zip(trace.labels, trace.samples):
        ro = None
        if readout is not None:
            qubits = getattr(readout, "qubits", readout)
            ro = qubits.get(label)
        dec = ParityDecoder(trace.dt_rep, avg, method, ro, gamma_prior, mask, mask_window, threshold_fraction)
        dec.fit(x)
        digitals.append(dec.decode(x))
        decoders.append(dec)
    return digitals, decoders
