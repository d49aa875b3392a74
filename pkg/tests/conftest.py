import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# property suites run at least 100 cases; derandomized so a failure reproduces
settings.register_profile(
    "default",
    max_examples=100,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_config():
    from qpoison.chipmodel import load_config

    return load_config()


# enlarged junction footprints (m^2) so 1e5 phonons give usable hit statistics
SCORING_AREA = 1e-8


@pytest.fixture(scope="session")
def calibrated():
    """Escape and downconversion calibrations on the default chip, run once per session."""
    import time

    from qpoison.chipmodel import load_config
    from qpoison.phonon_mc import calibrate_anchor_escape, calibrate_downconversion

    geo, qubits, tp = load_config()
    t0 = time.perf_counter()
    tp_esc = calibrate_anchor_escape(tp, geo)
    t1 = time.perf_counter()
    tp_cal = calibrate_downconversion(tp_esc, geo, 20.0, n_phonons=100_000, scoring_area=SCORING_AREA, seed=3)
    t2 = time.perf_counter()
    return {"geometry": geo, "escape": tp_esc, "transport": tp_cal, "escape_seconds": t1 - t0,
            "downconversion_seconds": t2 - t1}


@pytest.fixture(scope="session")
def pulse_run(calibrated):
    """1e5 phonons from one 1 mV, 10 us pulse on the islands-off chip."""
    import time

    from qpoison.phonon_mc import InjectionPulse, simulate, with_footprints

    geo = with_footprints(calibrated["geometry"], SCORING_AREA)
    pulse = InjectionPulse("inj", 1e-3, 10e-6)
    t0 = time.perf_counter()
    hits = simulate(pulse, calibrated["escape"], geo, 600e-6, 1, n_phonons=100_000, record_deaths=True)
    return {"hits": hits, "pulse": pulse, "geometry": geo, "seconds": time.perf_counter() - t0}


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
