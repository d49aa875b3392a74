import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from qpoison._validation import DataError, FitError
from qpoison.coincidence_stats import (
    CoincidenceSet,
    background_rates,
    deconvolve,
    find_coincidences,
    match_pairs,
    observation_model,
    rate_summary,
    read_rates_csv,
    solve_observation_model,
    write_report_csv,
)
from qpoison.parity_decode import DigitalParity

NONCU_N = [8528, 5202, 7959, 832, 670, 1078, 109]
NONCU_TAU = [28557, 17272, 31609, 12851, 11124, 18941, 8842]
NONCU_EXTRACTED = [0.20, 0.19, 0.12, 0.18, 0.17, 0.15, 0.064]
NONCU_EXTRACTED_ERR = [0.02, 0.02, 0.02, 0.01, 0.01, 0.01, 0.009]
CU_N = [4031, 4515, 1779, 66, 20, 22, 1]
CU_TAU = [182103, 134192, 77322, 78936, 25376, 41277, 15389]
CU_EXTRACTED = [0.041, 0.063, 0.043, 0.0019, 0.0016, 0.0010, 0.0004]
CU_EXTRACTED_ERR = [0.001, 0.001, 0.002, 0.0007, 0.0009, 0.0007, 0.0006]


def digital_from_switches(n, switches):
    v = np.ones(n, dtype=np.int8)
    for s in sorted(switches):
        v[s:] *= -1
    return DigitalParity(v, 10e-3)


def last_digit(x):
    """Unit of the last reported digit of a value printed as in the tables."""
    s = f"{x:g}"
    return 10.0 ** -(len(s.split(".")[1]) if "." in s else 0)


# counting

def test_table_counts_give_reported_rates():
    cs = CoincidenceSet(NONCU_N, NONCU_TAU)
    assert round(cs.rates[3], 3) == 0.065 and round(cs.sigmas[3], 3) == 0.002
    assert cs.tau[3] == 12_851 and cs.N[6] == 109 and cs.tau[6] == 8_842
    assert cs.delta_t == pytest.approx(0.4)


def test_no_overlap_no_coincidences():
    n = 5000
    d = [digital_from_switches(n, [100, 900]), digital_from_switches(n, [300, 2000]),
         digital_from_switches(n, [600, 4000])]
    cs = find_coincidences(d, 40)
    assert np.array_equal(cs.N, [2, 2, 2, 0, 0, 0, 0])
    assert np.allclose(cs.tau, n * 10e-3)


def test_window_size_pattern():
    # B and C switch 15 shots apart; A switches 45 shots after B
    n = 1000
    d = [digital_from_switches(n, [545]), digital_from_switches(n, [500]), digital_from_switches(n, [515])]
    assert find_coincidences(d, 10).N[3:].sum() == 0
    cs40 = find_coincidences(d, 40)
    assert cs40.N[4] == 1 and cs40.N[3] == 0 and cs40.N[5] == 0 and cs40.N[6] == 0
    assert find_coincidences(d, 100).N[6] == 1


def test_switch_used_once_per_type():
    n = 1000
    d = [digital_from_switches(n, [500]), digital_from_switches(n, [495, 505]), digital_from_switches(n, [])]
    assert find_coincidences(d, 40).N[3] == 1


def test_masked_exposure_and_errors():
    n = 1000
    a = DigitalParity(np.ones(n), 10e-3, mask_windows=[(0, 100)])
    b = DigitalParity(np.ones(n), 10e-3, mask_windows=[(50, 300)])
    c = DigitalParity(np.ones(n), 10e-3)
    cs = find_coincidences([a, b, c], 40)
    assert cs.tau[:3] == pytest.approx([9.0, 7.5, 10.0])
    assert cs.tau[3] == pytest.approx(7.0) and cs.tau[6] == pytest.approx(7.0)
    with pytest.raises(DataError):
        find_coincidences([a, b, DigitalParity(np.ones(10))], 40)


def random_digitals(seed, n=3000, rate=0.01, mask=True):
    r = np.random.default_rng(seed)
    out = []
    for q in range(3):
        sw = np.flatnonzero(r.random(n) < rate)
        d = digital_from_switches(n, sw)
        if mask and r.random() < 0.7:
            s = int(r.integers(0, n - 200))
            d = d.with_mask([(s, s + int(r.integers(1, 200)))])
        out.append(d)
    return out


@given(seed=st.integers(0, 2**32 - 1), w1=st.integers(1, 120), dw=st.integers(0, 80))
def test_counts_grow_with_window(seed, w1, dw):
    d = random_digitals(seed)
    a = find_coincidences(d, w1)
    b = find_coincidences(d, w1 + dw)
    assert np.all(b.N >= a.N)


@given(seed=st.integers(0, 2**32 - 1), window=st.integers(1, 120))
def test_triples_imply_doubles(seed, window):
    cs = find_coincidences(random_digitals(seed, rate=0.03), window)
    assert np.all(cs.N[3:6] >= cs.N[6])
    assert np.all(cs.tau[3:6] <= np.minimum(cs.tau[[0, 1, 0]], cs.tau[[1, 2, 2]]) + 1e-12)
    assert np.all(cs.tau[6] <= cs.tau[3:6] + 1e-12)
    assert np.allclose(cs.rates, np.where(cs.tau > 0, cs.N / np.where(cs.tau > 0, cs.tau, 1), 0))


@given(a=st.lists(st.integers(0, 300), max_size=25, unique=True),
       b=st.lists(st.integers(0, 300), max_size=25, unique=True), h=st.integers(1, 30))
def test_greedy_pairing_is_maximum(a, b, h):
    a, b = sorted(a), sorted(b)
    greedy = match_pairs(a, b, h)
    assert all(abs(x - y) < h for x, y in greedy)
    if not a or not b:
        assert greedy == []
        return
    adj = csr_matrix(np.abs(np.subtract.outer(a, b)) < h)
    best = np.count_nonzero(maximum_bipartite_matching(adj, perm_type="column") >= 0)
    assert len(greedy) == best


# backgrounds

def test_background_examples():
    # rounded singles, compared within the reported uncertainty
    rates, sig = background_rates([0.299, 0.301, 0.252], 0.4)
    assert abs(rates[0] - 0.0360) <= 0.0006
    assert abs(rates[3] - 0.00362) <= 0.00008
    sA, sB, sC = (np.sqrt(N) / t for N, t in zip(NONCU_N[:3], NONCU_TAU[:3]))
    r_obs = np.array(NONCU_N[:3]) / np.array(NONCU_TAU[:3])
    rates, sig = background_rates(r_obs, 0.4, [sA, sB, sC])
    assert round(rates[0], 4) == 0.0360 and round(sig[0], 4) == 0.0006
    assert round(rates[3], 5) == 0.00362 and round(sig[3], 5) == 0.00008
    assert rates[0] == pytest.approx(r_obs[0] * r_obs[1] * 0.4)
    assert sig[0] == pytest.approx(rates[0] * np.hypot(sA / r_obs[0], sB / r_obs[1]))
    z, _ = background_rates([0.3, 0.0, 0.2], 0.4)
    assert z[0] == z[1] == z[3] == 0.0 and z[2] > 0


@given(r=st.lists(st.floats(0, 10), min_size=3, max_size=3), s=st.lists(st.floats(0, 1), min_size=3, max_size=3),
       dt=st.floats(1e-3, 10), perm=st.permutations([0, 1, 2]))
def test_background_label_symmetry(r, s, dt, perm):
    rates, sig = background_rates(r, dt, s)
    pr, ps = background_rates(np.array(r)[list(perm)], dt, np.array(s)[list(perm)])
    pair_of = {frozenset((0, 1)): 0, frozenset((1, 2)): 1, frozenset((0, 2)): 2}
    for (i, j), k in zip(((0, 1), (1, 2), (0, 2)), range(3)):
        orig = pair_of[frozenset((perm[i], perm[j]))]
        assert pr[k] == pytest.approx(rates[orig], rel=1e-12, abs=1e-300)
        assert ps[k] == pytest.approx(sig[orig], rel=1e-9, abs=1e-300)
    assert pr[3] == pytest.approx(rates[3], rel=1e-12, abs=1e-300)


# deconvolution

def test_deconvolve_reported_row():
    d = deconvolve([0.299, 0.301, 0.252, 0.065, 0.060, 0.057, 0.012], 0.4)
    for got, want in zip(d.rates, NONCU_EXTRACTED):
        assert abs(got - want) <= last_digit(want) + 1e-12, (got, want)


@pytest.mark.parametrize("N,tau,want,err", [(NONCU_N, NONCU_TAU, NONCU_EXTRACTED, NONCU_EXTRACTED_ERR),
                                            (CU_N, CU_TAU, CU_EXTRACTED, CU_EXTRACTED_ERR)])
def test_deconvolve_table_counts(N, tau, want, err):
    d = deconvolve(CoincidenceSet(N, tau))
    for got, w in zip(d.rates, want):
        assert abs(got - w) <= last_digit(w) + 1e-12, (got, w)
    for got, e in zip(d.sigmas, err):
        assert abs(got - e) <= last_digit(e) + 1e-12, (got, e)


def test_deconvolve_zero_is_fixed_point():
    d = deconvolve(np.zeros(7), 0.4)
    assert np.array_equal(d.rates, np.zeros(7)) and d.residual == 0.0


@given(p=st.lists(st.floats(0.0, 0.15), min_size=7, max_size=7))
def test_solver_residual_contract(p):
    obs = observation_model(np.array(p))
    sol, res, _ = solve_observation_model(obs)
    assert res < 1e-12
    assert np.all(np.abs(observation_model(sol) - obs) < 1e-12)


def test_deconvolve_errors():
    with pytest.raises(ValueError):
        deconvolve([3.0, 0, 0, 0, 0, 0, 0], 0.4)
    with pytest.raises(ValueError):
        deconvolve(np.zeros(7), 0.0)
    with pytest.raises(FitError):
        solve_observation_model(np.zeros(7), max_iter=0, p0=np.full(7, 0.3))


def test_uncertainty_matches_analytic_jacobian():
    """Propagated errors against the inverse of the analytic Jacobian of the forward model."""
    cs = CoincidenceSet(NONCU_N, NONCU_TAU)
    d = deconvolve(cs)
    pA, pB, pC, pAB, pBC, pAC, pABC = d.probabilities
    J = np.zeros((7, 7))
    J[0, [0, 3, 5, 6]] = 0.5
    J[1, [1, 3, 4, 6]] = 0.5
    J[2, [2, 4, 5, 6]] = 0.5
    J[3] = 0.25 * np.array([pB, pA, 0, 1, 0, 0, 1])
    J[4] = 0.25 * np.array([0, pC, pB, 0, 1, 0, 1])
    J[5] = 0.25 * np.array([pC, 0, pA, 0, 0, 1, 1])
    J[6] = 0.125 * np.array([pB * pC + pBC, pA * pC + pAC, pA * pB + pAB, pC, pA, pB, 1])
    dpdo = np.linalg.inv(J)
    sig = np.sqrt(((dpdo * (cs.sigmas * 0.4)) ** 2).sum(axis=1)) / 0.4
    assert np.allclose(d.sigmas, sig, rtol=1e-5)


def test_rate_summary_examples():
    def report(r):
        return rate_summary(np.array([0, 0, 0, r, 0, 0, 0]))
    assert report(0.002).max_probability == pytest.approx(2e-9) and report(0.002).below_threshold
    assert report(0.02).max_probability == pytest.approx(2e-8) and not report(0.02).below_threshold
    assert report(0.0).max_probability == 0.0 and report(0.0).below_threshold


def test_report_csv_round_trip(tmp_path):
    cs = CoincidenceSet(NONCU_N, NONCU_TAU)
    d = deconvolve(cs)
    write_report_csv(tmp_path / "r.csv", d, cs)
    rates, sig = read_rates_csv(tmp_path / "r.csv")
    assert np.allclose(rates, cs.rates, rtol=1e-9) and np.allclose(sig, cs.sigmas, rtol=1e-9)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("Qubit(s),N_i,tau_i_s,r_obs,r_obs_err,r_background")
    assert lines[4].startswith("AB,832,12851,")


def test_synth_decode_deconvolve_round_trip():
    from qpoison.parity_decode import decode_trace
    from qpoison.parity_synth import ChargeNoiseModel, EventRates, ReadoutModel, generate_events, synthesize_trace

    truth = np.array(NONCU_EXTRACTED)
    ro = ReadoutModel(fidelity=0.9)
    ev = generate_events(EventRates.from_array(truth), 30_000.0, 11)
    tr = synthesize_trace(ev, ro, ChargeNoiseModel(), 10e-3, 30_000.0, 12, offset_charge=np.array([0.05, 0.1, 0.0]))
    digs, _ = decode_trace(tr, 40, readout=ro)
    cs = find_coincidences(digs, 40)
    assert np.all(cs.N >= 50)
    d = deconvolve(cs)
    z = (d.rates - truth) / d.sigmas
    assert np.all(np.abs(z) <= 3.0), np.round(z, 2)
