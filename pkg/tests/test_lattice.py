import numpy as np
import pytest
from hypothesis import given, strategies as st

from stirvoter.lattice import (
    Configuration,
    Torus,
    config_from_int,
    config_from_json,
    config_to_int,
    config_to_json,
    flip,
    neighbor_index,
    neighbor_tables,
    offset_table,
    site_coords,
    site_index,
    swap,
    translate,
)

TORI = [Torus(1, 6), Torus(2, 4), Torus(3, 3)]


def test_torus_validation():
    with pytest.raises(ValueError):
        Torus(0, 5)
    with pytest.raises(ValueError):
        Torus(1, 1)
    t = Torus(2, 4)
    assert t.size == 16
    assert list(t.sites()) == list(range(16))


@pytest.mark.parametrize("torus", TORI, ids=lambda t: f"d{t.d}n{t.n}")
def test_site_index_coords_roundtrip(torus):
    for idx in torus.sites():
        coords = site_coords(torus, idx)
        assert len(coords) == torus.d
        assert all(0 <= c < torus.n for c in coords)
        assert site_index(torus, coords) == idx


def test_site_index_wraps_mod_n():
    t = Torus(2, 4)
    assert site_index(t, (4, 0)) == site_index(t, (0, 0))
    assert site_index(t, (-1, 2)) == site_index(t, (3, 2))
    assert site_index(t, (7, -5)) == site_index(t, (3, 3))


@pytest.mark.parametrize("torus", TORI, ids=lambda t: f"d{t.d}n{t.n}")
def test_neighbor_tables_agree_with_neighbor_index(torus):
    plus, minus = neighbor_tables(torus)
    assert plus.shape == (torus.d, torus.size)
    for j in range(torus.d):
        for x in torus.sites():
            assert plus[j, x] == neighbor_index(torus, x, j, +1)
            assert minus[j, x] == neighbor_index(torus, x, j, -1)
        # the two tables are inverse permutations of each other
        assert np.array_equal(minus[j][plus[j]], np.arange(torus.size))


def test_offset_table_matches_coordinate_shift():
    t = Torus(2, 5)
    tab = offset_table(t, (1, -2))
    for x in t.sites():
        coords = site_coords(t, x)
        assert tab[x] == site_index(t, (coords[0] + 1, coords[1] - 2))


def test_configuration_bits_roundtrip():
    t = Torus(1, 6)
    eta = Configuration.from_bits(t, "110100")
    assert eta.bits() == "110100"
    assert eta.particle_count() == 3
    assert eta == eta.copy()
    assert Configuration.constant(t, 1).particle_count() == 6
    with pytest.raises(ValueError):
        Configuration.from_bits(t, "11")


def test_bernoulli_start_is_reproducible():
    t = Torus(1, 32)
    a = Configuration.bernoulli(t, 0.5, np.random.default_rng(7))
    b = Configuration.bernoulli(t, 0.5, np.random.default_rng(7))
    assert a == b
    assert 0 < a.particle_count() < 32  # all-equal draw has probability 2^-31


def test_flip_swap_translate_are_pure():
    t = Torus(1, 5)
    eta = Configuration.from_bits(t, "10010")
    flipped = flip(eta, 0)
    swapped = swap(eta, 0, 1)
    rolled = translate(eta, (2,))
    assert eta.bits() == "10010"
    assert flipped.bits() == "00010"
    assert swapped.bits() == "01010"
    assert rolled.particle_count() == eta.particle_count()


def test_translate_is_the_pullback():
    # (tau_z eta)_x = eta_{x+z}: the new origin reads the old site z
    t = Torus(2, 4)
    eta = Configuration(t, np.zeros(16, dtype=np.uint8))
    eta.occ[site_index(t, (1, 2))] = 1
    moved = translate(eta, (1, 1))
    assert moved.occ[site_index(t, (0, 1))] == 1
    assert moved.particle_count() == 1


@given(st.integers(0, 2**12 - 1))
def test_config_int_roundtrip(word):
    t = Torus(1, 12)
    eta = config_from_int(t, word)
    assert config_to_int(eta) == word
    # site 0 is the least significant bit
    assert eta.occ[0] == word & 1


@given(st.integers(2, 7), st.data())
def test_translate_inverse(n, data):
    t = Torus(1, n)
    bits = data.draw(st.text(alphabet="01", min_size=n, max_size=n))
    z = data.draw(st.integers(-2 * n, 2 * n))
    eta = Configuration.from_bits(t, bits)
    back = translate(translate(eta, (z,)), (-z,))
    assert back == eta


@given(st.integers(0, 2**9 - 1), st.integers(0, 8), st.integers(0, 8))
def test_swap_conserves_particles(word, x, y):
    t = Torus(1, 9)
    eta = config_from_int(t, word)
    assert swap(eta, x, y).particle_count() == eta.particle_count()
    assert abs(flip(eta, x).particle_count() - eta.particle_count()) == 1


def test_config_json_roundtrip():
    t = Torus(2, 3)
    eta = config_from_int(t, 0b101101011)
    again = config_from_json(config_to_json(eta))
    assert again == eta
    assert again.torus == t
