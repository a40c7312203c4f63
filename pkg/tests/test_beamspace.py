import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsfeedback import beamspace as bs
from bsfeedback.channel import UpaGeometry
from bsfeedback.errors import ConfigError, DimensionError, UndefinedError


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_trivial_geometry():
    np.testing.assert_allclose(bs.build_obm(UpaGeometry(1, 1)).b, [[1.0]])


def test_obm_unitary_8x4():
    b = bs.build_obm(UpaGeometry(8, 4)).b
    assert np.max(np.abs(b.conj().T @ b - np.eye(32))) < 1e-10
    np.testing.assert_allclose(np.linalg.norm(b, axis=0), 1.0)


def test_obm_2x2_hand_kronecker():
    b = bs.build_obm(UpaGeometry(2, 2)).b
    h = np.array([[1, 1], [1, -1]])
    expected = 0.5 * np.array([[h[i // 2, j // 2] * h[i % 2, j % 2] for j in range(4)] for i in range(4)])
    np.testing.assert_allclose(b, expected, atol=1e-15)


def test_obm_matches_2d_dft_of_grid():
    # B^T vec(H) is the unitary 2-D DFT of the N_H x N_V grid, vectorised column-major
    g = UpaGeometry(4, 3)
    rng = np.random.default_rng(0)
    grid = crandn(rng, 4, 3)
    vec = grid.reshape(-1, order="F")
    beam = bs.to_beam_domain(vec, bs.build_obm(g))
    np.testing.assert_allclose(beam, np.fft.fft2(grid, norm="ortho").reshape(-1, order="F"), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2 ** 31 - 1))
def test_unitarity_and_parseval(n_h, n_v, seed):
    obm = bs.build_obm(UpaGeometry(n_h, n_v))
    assert np.max(np.abs(obm.b.conj().T @ obm.b - np.eye(obm.n_b))) < 1e-10
    h = crandn(np.random.default_rng(seed), obm.n_b)
    beam = bs.to_beam_domain(h, obm)
    assert abs(np.linalg.norm(beam) - np.linalg.norm(h)) < 1e-10 * max(1, np.linalg.norm(h))
    assert np.max(np.abs(bs.from_beam_domain(beam, obm) - h)) < 1e-10


def test_batched_round_trip():
    obm = bs.build_obm(UpaGeometry())
    h = crandn(np.random.default_rng(1), 5, 32, 8)
    np.testing.assert_allclose(bs.from_beam_domain(bs.to_beam_domain(h, obm), obm), h, atol=1e-12)


def test_conjugate_obm_column_maps_to_unit_vector():
    obm = bs.build_obm(UpaGeometry())
    k = 11
    beam = bs.to_beam_domain(np.conj(obm.b[:, k]), obm)
    assert abs(abs(beam[k]) - 1) < 1e-12
    assert np.max(np.abs(np.delete(beam, k))) < 1e-12


def test_domain_dimension_errors():
    obm = bs.build_obm(UpaGeometry())
    with pytest.raises(DimensionError):
        bs.to_beam_domain(np.ones(31), obm)
    with pytest.raises(DimensionError):
        bs.from_beam_domain(np.ones((31, 2)), obm)


def test_select_top_beams_examples():
    assert set(bs.select_top_beams([0.1, 0.9, 0.5, 0.2], 2).indices) == {1, 2}
    assert list(bs.select_top_beams([0.1, 0.9, 0.5, 0.2], 2).indices) == [1, 2]
    assert list(bs.select_top_beams(np.ones(6), 3).indices) == [0, 1, 2]
    assert sorted(bs.select_top_beams(np.arange(8.0), 8).indices) == list(range(8))
    for bad in (0, 5):
        with pytest.raises(ConfigError):
            bs.select_top_beams([1.0, 2.0, 3.0, 4.0], bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 16), st.floats(1e-3, 1e3))
def test_select_top_beams_scale_invariant(seed, l, c):
    mags = np.abs(np.random.default_rng(seed).standard_normal(16))
    a = bs.select_top_beams(mags, l).indices
    b = bs.select_top_beams(c * mags, l).indices
    np.testing.assert_array_equal(a, b)
    assert len(set(a)) == l


def test_top_beam_indices_batched_matches_single():
    mags = np.abs(np.random.default_rng(2).standard_normal((4, 3, 10)))
    idx = bs.top_beam_indices(mags, 4)
    for i in range(4):
        for j in range(3):
            np.testing.assert_array_equal(idx[i, j], bs.select_top_beams(mags[i, j], 4).indices)


def test_sparse_map_examples():
    out = bs.sparse_map(np.array([2 + 1j, -3j]), bs.BeamSelection(np.array([1, 3])), 4)
    np.testing.assert_array_equal(out, [0, 2 + 1j, 0, -3j])
    vals = np.arange(1, 5) * (1 + 1j)
    perm = np.array([2, 0, 3, 1])
    full = bs.sparse_map(vals, perm, 4)
    assert np.all(full != 0)
    np.testing.assert_array_equal(full[perm], vals)
    with pytest.raises(DimensionError):
        bs.sparse_map(vals[:2], np.array([0, 4]), 4)
    with pytest.raises(DimensionError):
        bs.sparse_map(vals, np.array([0, 1]), 4)


def test_beam_energy_fraction_examples():
    rng = np.random.default_rng(3)
    h = crandn(rng, 32)
    assert bs.beam_energy_fraction(h, 32) == pytest.approx(1.0)
    e = np.zeros(32, dtype=complex)
    e[7] = 2 - 1j
    assert bs.beam_energy_fraction(e, 1) == 1.0
    uniform = np.exp(1j * rng.uniform(0, 6, 32))
    assert abs(bs.beam_energy_fraction(uniform, 16) - 0.5) < 1e-12
    with pytest.raises(UndefinedError):
        bs.beam_energy_fraction(np.zeros(4), 2)


def test_grid_round_trip():
    g = UpaGeometry(4, 2)
    v = np.arange(8) + 0j
    grid = bs.to_grid(v, g)
    assert grid.shape == (4, 2) and grid[1, 1] == 5  # element m + N_H * n
    np.testing.assert_array_equal(bs.from_grid(grid), v)
