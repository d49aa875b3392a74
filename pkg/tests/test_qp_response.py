import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpoison._validation import FitError
from qpoison.phonon_mc import HitSeries
from qpoison.qp_response import (
    RelaxationObservation,
    T1Fitter,
    calibrate_responsivity,
    delta_gamma1,
    fit_t1,
    gamma_from_hits,
    inversion_recovery,
    write_gamma_csv,
)

# CODATA 2018, typed in rather than imported so the oracle is independent
HBAR = 1.054571817e-34
E_CHARGE = 1.602176634e-19


def xqp_oracle(dG1, gap_ev, f01):
    return math.pi * dG1 / math.sqrt(2.0 * gap_ev * E_CHARGE * 2.0 * math.pi * f01 / HBAR)


def test_delta_gamma1_examples():
    assert delta_gamma1(20e-6, 20e-6) == 0.0
    assert delta_gamma1(10e-6, 20e-6) == pytest.approx(5.0e4)
    assert delta_gamma1(40e-6, 20e-6) == pytest.approx(-2.5e4)
    with pytest.raises(ValueError):
        delta_gamma1(0.0, 20e-6)
    with pytest.raises(ValueError):
        delta_gamma1(10e-6, -1.0)


def test_xqp_closed_form():
    from qpoison.qp_response import xqp_from_gamma

    assert xqp_from_gamma(0.0) == 0.0
    got = xqp_from_gamma(1e4, 180e-6 * E_CHARGE, 4.84e9)
    assert got == pytest.approx(xqp_oracle(1e4, 180e-6, 4.84e9), rel=1e-9)
    # frozen from the oracle above
    assert got == pytest.approx(2.4359529e-7, rel=1e-6)
    with pytest.raises(ValueError):
        xqp_from_gamma(1.0, 0.0, 4.84e9)
    with pytest.raises(ValueError):
        xqp_from_gamma(1.0, 1e-23, -1.0)


@given(g=st.floats(-1e7, 1e7), f01=st.floats(1e9, 1e10))
def test_xqp_linear(g, f01):
    from qpoison.qp_response import xqp_from_gamma

    assert xqp_from_gamma(2 * g, f01=f01) == 2 * xqp_from_gamma(g, f01=f01)


def empty_hits():
    return HitSeries(("A", "B"), np.zeros(0, dtype=np.int64), np.zeros(0), 0, 0, 0, 0)


def test_gamma_from_empty_hits():
    t, g = gamma_from_hits(empty_hits(), "A", 3.0, 1e-6, t_max=20e-6)
    assert t.size == 20 and not g.any()


def test_gamma_from_hits_linear_and_label(rng):
    t = np.sort(rng.uniform(0, 100e-6, 500))
    hits = HitSeries(("A", "B"), rng.integers(0, 2, 500), t, 500, 0, 0, 0)
    _, g1 = gamma_from_hits(hits, "A", 1.0, 5e-6)
    _, g3 = gamma_from_hits(hits, "A", 3.0, 5e-6)
    assert np.allclose(g3, 3.0 * g1)
    assert g1.sum() * 5e-6 == pytest.approx(hits.counts["A"])
    with pytest.raises(KeyError):
        gamma_from_hits(hits, "Z", 1.0, 5e-6)
    with pytest.raises(ValueError):
        gamma_from_hits(hits, "A", 1.0, 0.0)
    k = calibrate_responsivity(hits, "A", 1e4, 5e-6)
    assert gamma_from_hits(hits, "A", k, 5e-6)[1].max() == pytest.approx(1e4)


def test_calibrated_run_peaks_about_30us_after_pulse(pulse_run):
    hits, pulse = pulse_run["hits"], pulse_run["pulse"]
    for q in "ABC":
        t, g = gamma_from_hits(hits, q, 1.0, 2e-6, t_max=600e-6)
        delay = t[np.argmax(g)] - pulse.end_time
        assert 10e-6 <= delay <= 40e-6, f"{q}: peak {delay * 1e6:.1f} us after pulse end"


def test_fit_t1_noiseless():
    t = np.geomspace(1e-6, 200e-6, 30)
    res = fit_t1(t, inversion_recovery(t, 20e-6, 0.9, 0.05))
    assert res.T1 == pytest.approx(20e-6, rel=1e-9)
    assert res.A == pytest.approx(0.9, rel=1e-6) and res.B == pytest.approx(0.05, rel=1e-6)
    assert res.ci95[0] <= res.T1 <= res.ci95[1]


@given(T1=st.floats(2e-6, 100e-6), A=st.floats(0.2, 1.0), B=st.floats(0.0, 0.2))
def test_fit_t1_recovers_own_model(T1, A, B):
    t = np.geomspace(T1 / 20, T1 * 10, 25)
    res = fit_t1(t, inversion_recovery(t, T1, A, B))
    assert res.T1 == pytest.approx(T1, rel=1e-6)
    assert res.A == pytest.approx(A, rel=1e-6)
    assert res.B == pytest.approx(B, rel=1e-6, abs=1e-9)


def test_fit_t1_ci_coverage():
    t = np.geomspace(1e-6, 150e-6, 50)
    inside = 0
    for seed in range(500):
        res = fit_t1(t, inversion_recovery(t, 20e-6, 1.0, 0.0, noise=0.02, seed=seed))
        inside += res.ci95[0] <= 20e-6 <= res.ci95[1]
    assert inside / 500 >= 0.90


def test_fit_t1_rejects_bad_input():
    t = np.geomspace(1e-6, 100e-6, 10)
    with pytest.raises(FitError, match="degenerate"):
        fit_t1(t, np.full(10, 0.3))
    with pytest.raises(ValueError, match="5 samples"):
        fit_t1(t[:4], inversion_recovery(t[:4], 2e-5))
    with pytest.raises(ValueError, match="decade"):
        tt = np.linspace(10e-6, 50e-6, 10)
        fit_t1(tt, inversion_recovery(tt, 2e-5))


def test_t1_estimator():
    t = np.geomspace(1e-6, 200e-6, 30)
    y = inversion_recovery(t, 15e-6)
    est = T1Fitter().fit(t.reshape(-1, 1), y)
    assert est.T1_ == pytest.approx(15e-6, rel=1e-9)
    assert est.score(t.reshape(-1, 1), y) == pytest.approx(1.0)


def test_relaxation_observation_invariants():
    RelaxationObservation(5e-6, 10e-6, (9e-6, 11e-6), 5e4, 1e-6)
    with pytest.raises(ValueError):
        RelaxationObservation(5e-6, 10e-6, (11e-6, 12e-6), 5e4, 1e-6)
    with pytest.raises(ValueError):
        RelaxationObservation(5e-6, -1.0, (-2.0, 0.0), 5e4, 1e-6)


def test_gamma_csv(tmp_path):
    p = tmp_path / "g.csv"
    write_gamma_csv(p, [1e-6, 2e-6], [0.0, 1e4], 4.84e9)
    lines = p.read_text().splitlines()
    assert lines[0] == "time_s,delta_gamma1_per_s,delta_xqp"
    assert float(lines[2].split(",")[2]) == pytest.approx(xqp_oracle(1e4, 180e-6, 4.84e9), rel=1e-9)
