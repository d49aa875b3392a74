import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpoison.chipmodel import (
    ChipGeometry,
    ConfigError,
    Site,
    TransportParams,
    config_from_dict,
    distance,
    effective_diffusivity,
    gap_voltage,
    island_at,
    load_config,
)


def rasterized_islands(geometry, step):
    """Brute-force island mask on a fine grid: paint every island strip explicitly."""
    n = int(round(geometry.side_length / step))
    centers = (np.arange(n) + 0.5) * step
    pitch, size = geometry.island_pitch, geometry.island_size
    covered = np.zeros(n, dtype=bool)
    k = 0
    while (k + 0.5) * pitch - size / 2 < geometry.side_length:
        lo, hi = (k + 0.5) * pitch - size / 2, (k + 0.5) * pitch + size / 2
        covered |= (centers >= lo) & (centers <= hi)
        k += 1
    return centers, covered[:, None] & covered[None, :]


def test_default_config_dimensions(default_config):
    geo, qubits, tp = default_config
    assert geo.side_length == pytest.approx(8e-3)
    assert geo.thickness == pytest.approx(0.525e-3)
    assert set(qubits) == {"A", "B", "C"}
    assert geo.qubit_labels == ("A", "B", "C")


def test_qubit_spacings_match_layout(default_config):
    geo = default_config[0]
    a, b, c = (geo.qubit(q) for q in "ABC")
    assert distance(a, b) == pytest.approx(5.3e-3, abs=0.05e-3)
    assert distance(b, c) == pytest.approx(4.5e-3, abs=0.05e-3)
    assert distance(a, c) == pytest.approx(2.0e-3, abs=0.05e-3)
    inj = geo.injector("inj")
    for q in (a, b, c):
        assert 4e-3 <= distance(inj, q) <= 6e-3


def test_site_outside_chip_rejected():
    raw = {"geometry": {"qubits": [{"label": "A", "x": 9e-3, "y": 1e-3}]}}
    with pytest.raises(ConfigError, match="site outside chip"):
        config_from_dict(raw)


def test_sound_speed_default():
    _, _, tp = config_from_dict({"transport": {"island_absorb_prob": 0.1}})
    assert tp.sound_speed == 6.0e3
    assert effective_diffusivity(tp, ChipGeometry()) == pytest.approx(3.15)


def test_invariant_errors_name_the_field():
    with pytest.raises(ConfigError, match="island_absorb_prob"):
        TransportParams(island_absorb_prob=1.5)
    with pytest.raises(ConfigError, match="island_size"):
        ChipGeometry(island_size=300e-6)
    with pytest.raises(ConfigError, match="thickness"):
        ChipGeometry(thickness=0.0)
    with pytest.raises(ConfigError, match="unique"):
        ChipGeometry(qubit_sites=(Site("A", 1e-3, 1e-3), Site("A", 2e-3, 2e-3)))
    with pytest.raises(ConfigError, match="ej_over_ec"):
        config_from_dict({"qubits": {"A": {"f01": 5e9, "f_ro": 6e9, "charge_dispersion": 3e6, "t1_mean": 2e-5,
                                           "t1_sigma": 1e-6, "ej_over_ec": 5}}})
    with pytest.raises(ConfigError, match="unknown field"):
        config_from_dict({"transport": {"speed_of_sound": 1.0}})


def test_unparseable_config(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[geometry\nside_length = ")
    with pytest.raises(ConfigError):
        load_config(p)


def test_gap_voltage_is_about_0p36_mV():
    assert gap_voltage() == pytest.approx(360e-6)


def test_islands_disabled_everywhere_false():
    geo = ChipGeometry(islands_enabled=False)
    xs = np.linspace(0, 8e-3, 33)
    assert not island_at(geo, xs, xs).any()


def test_island_center_and_cut():
    geo = ChipGeometry(islands_enabled=True)
    assert island_at(geo, 125e-6, 125e-6)
    assert island_at(geo, 125e-6 + 7 * 250e-6, 125e-6 + 3 * 250e-6)
    # cut centres sit on multiples of the pitch
    assert not island_at(geo, 250e-6, 125e-6)
    assert not island_at(geo, 125e-6, 1000e-6)


def test_island_lattice_matches_rasterization():
    geo = ChipGeometry(islands_enabled=True)
    centers, grid = rasterized_islands(geo, 5e-6)
    X, Y = np.meshgrid(centers, centers, indexing="ij")
    assert np.array_equal(island_at(geo, X, Y), grid)


def test_island_point_outside_rejected():
    with pytest.raises(ValueError, match="outside"):
        island_at(ChipGeometry(islands_enabled=True), -1e-6, 1e-3)


def test_island_area_fraction_monte_carlo(rng):
    geo = ChipGeometry(islands_enabled=True)
    n = 400_000
    # the 8 mm side is an integer number of pitches, so the interior fraction is exact
    x, y = rng.uniform(0, geo.side_length, (2, n))
    frac = island_at(geo, x, y).mean()
    expected = (geo.island_size / geo.island_pitch) ** 2
    assert expected == pytest.approx(0.64, abs=1e-9)
    assert abs(frac - expected) < 3 * np.sqrt(expected * (1 - expected) / n)


@given(x=st.floats(0, 8e-3), y=st.floats(0, 8e-3), enabled=st.booleans())
def test_island_queries_are_pure(x, y, enabled):
    geo = ChipGeometry(islands_enabled=enabled)
    assert island_at(geo, x, y) == island_at(geo, x, y)
