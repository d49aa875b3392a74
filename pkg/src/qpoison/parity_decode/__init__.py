"""Analog parity traces to masked digital parity and switching spectra."""
from .estimators import LorentzianPSD, ParityDecoder, decode_trace
from .filters import (
    DigitalParity,
    detect_switches,
    envelope_mask,
    mask_from_windows,
    moving_average,
    threshold_decode,
    windows_from_mask,
)
from .hmm import hmm_decode, viterbi2
from .psd import (
    PsdFit,
    expected_periodogram,
    lorentzian_psd,
    mean_periodogram,
    periodogram,
    psd_gamma,
    total_power,
    write_psd_csv,
)

__all__ = [
    "DigitalParity",
    "LorentzianPSD",
    "ParityDecoder",
    "PsdFit",
    "decode_trace",
    "detect_switches",
    "envelope_mask",
    "expected_periodogram",
    "hmm_decode",
    "lorentzian_psd",
    "mask_from_windows",
    "mean_periodogram",
    "moving_average",
    "periodogram",
    "psd_gamma",
    "threshold_decode",
    "total_power",
    "viterbi2",
    "windows_from_mask",
    "write_psd_csv",
]
