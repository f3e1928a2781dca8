import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dense_parry, dense_spectral_radius
from orbitentropy.orbit_space import BudgetExceeded
from orbitentropy.sft import (
    BoxLabel,
    InadmissiblePath,
    TransitionMatrix,
    build_matrix_block,
    build_matrix_geometric,
    images_coincide,
    injectivity_probe,
    is_irreducible,
    parry_measure,
    perron_root,
    pi_tilde,
    sample_parry_path,
    semiconjugacy_holds,
    sft_entropy,
)

L_SETS = [(2, 3), (2, 5), (3, 4), (2, 3, 5)]
distinct_L = st.lists(st.integers(2, 7), min_size=1, max_size=3, unique=True).filter(
    lambda L: len(L) * math.prod(L) <= 512)


def test_box_label_bijection():
    M, k = 6, 2
    seen = set()
    for l in range(1, k * M + 1):
        b = BoxLabel.from_linear(l, M, k)
        assert b.l == l and 1 <= b.i <= k and 0 <= b.j < M
        seen.add((b.i, b.j))
    assert len(seen) == k * M


def test_block_example_23():
    A = build_matrix_block((2, 3))
    assert A.size == 12 and A.A.nnz == 60
    assert set(A.column_sums()) == {5}


def test_single_map_is_all_ones():
    assert np.array_equal(build_matrix_block((2,)).dense(), np.ones((2, 2)))
    assert np.array_equal(build_matrix_geometric((2,)).dense(), np.ones((2, 2)))


def test_235_column_sums():
    A = build_matrix_block((2, 3, 5))
    assert A.size == 90 and set(A.column_sums()) == {10}


@given(distinct_L)
def test_constructions_agree_and_rows_have_k_L_ones(L):
    A, G = build_matrix_block(L), build_matrix_geometric(L)
    assert A == G
    M, k = math.prod(L), len(L)
    rows = A.row_sums()
    for s, Ls in enumerate(L):
        assert np.all(rows[s * M:(s + 1) * M] == k * Ls)
    assert np.all(A.column_sums() == sum(L))
    assert is_irreducible(A)


def test_validation_errors():
    for bad in [(2, 2), (1, 3), (2.5,), ()]:
        with pytest.raises(ValueError):
            build_matrix_block(bad)
    with pytest.raises(BudgetExceeded):
        build_matrix_block((7, 11, 13), budget=1000)


def test_irreducibility_examples():
    assert not is_irreducible(np.eye(2))
    assert is_irreducible(np.ones((2, 2)))
    assert is_irreducible(build_matrix_block((2, 3)))


@pytest.mark.parametrize("L", L_SETS)
def test_perron_matches_dense_eigensolver(L):
    A = build_matrix_block(L)
    pd = perron_root(A)
    assert abs(pd.rho - sum(L)) <= 1e-9
    assert abs(pd.rho - dense_spectral_radius(A.dense())) <= 1e-9
    assert np.all(pd.right_vec > 0) and np.all(pd.left_vec > 0)
    assert pd.residual <= 1e-9
    assert abs(sft_entropy(L) - math.log(sum(L))) <= 1e-9


def test_perron_all_ones():
    assert perron_root(np.ones((2, 2))).rho == pytest.approx(2.0, abs=1e-12)


def test_perron_rejects_reducible():
    with pytest.raises(ValueError):
        perron_root(np.eye(3))


@pytest.mark.parametrize("L", L_SETS)
def test_parry_measure(L):
    A = build_matrix_block(L)
    m = parry_measure(A)
    assert m.row_sum_error() <= 1e-12
    assert m.stationary_residual() < 1e-10
    assert abs(m.entropy_rate() - math.log(sum(L))) <= 1e-9
    assert np.all(m.stationary > 0) and abs(m.stationary.sum() - 1) < 1e-12
    _, P, mu = dense_parry(A.dense())
    assert np.allclose(m.P.toarray(), P, atol=1e-9)
    assert np.allclose(m.stationary, mu, atol=1e-9)


def test_parry_symmetric_case():
    m = parry_measure(np.ones((2, 2)))
    assert np.allclose(m.P.toarray(), 0.5) and np.allclose(m.stationary, 0.5)
    assert m.entropy_rate() == pytest.approx(math.log(2), abs=1e-12)


def test_sampled_paths_admissible_and_seeded():
    A = build_matrix_block((2, 3))
    m = parry_measure(A)
    path = sample_parry_path(m, 10_000, seed=7)
    dense = A.dense()
    assert all(dense[a - 1, b - 1] for a, b in zip(path, path[1:]))
    assert path == sample_parry_path(m, 10_000, seed=7)
    freq = np.bincount(np.array(path) - 1, minlength=A.size) / len(path)
    assert np.max(np.abs(freq - m.stationary)) <= 3 / math.sqrt(len(path))


def test_pi_tilde_fixed_point():
    r = pi_tilde((1,) * 8, (2, 3))
    assert r.interval == (Fraction(0), Fraction(1, 6 * 2**7))
    assert r.point.itinerary == (1,) * 7


def test_pi_tilde_widths_shrink():
    m = parry_measure(build_matrix_block((2, 3)))
    path = sample_parry_path(m, 25, seed=3)
    widths = [pi_tilde(path[:j], (2, 3)).width for j in range(1, 26)]
    assert widths[0] == Fraction(1, 6)
    for a, b in zip(widths, widths[1:]):
        assert b <= a / 2
    assert widths[-1] <= Fraction(1, 6) * Fraction(1, 2) ** 24


def test_pi_tilde_orbit_visits_boxes():
    m = parry_measure(build_matrix_block((2, 3, 5)))
    path = sample_parry_path(m, 20, seed=11)
    r = pi_tilde(path, (2, 3, 5))
    for x, l in zip(r.point.orbit(), path):
        b = BoxLabel.from_linear(l, 30, 3)
        lo, hi = b.interval()
        assert lo <= x <= hi


def test_pi_tilde_rejects_inadmissible():
    # box (1, j=0) maps onto cells 0..1 only
    with pytest.raises(InadmissiblePath):
        pi_tilde((1, 4), (2, 3))


def test_semiconjugacy_on_sampled_paths():
    m = parry_measure(build_matrix_block((2, 3)))
    assert all(semiconjugacy_holds(sample_parry_path(m, 30, s), (2, 3)) for s in range(25))


def test_injectivity_probe():
    m = parry_measure(build_matrix_block((2, 3)))
    assert injectivity_probe(m, (2, 3), 60, 30, seed=1) == 0.0
    path = sample_parry_path(m, 30, seed=2)
    assert images_coincide(pi_tilde(path, (2, 3)), pi_tilde(path, (2, 3)))


def test_coordinate_list_round_trip():
    A = build_matrix_block((2, 3))
    text = A.to_coordinate_list()
    lines = text.splitlines()
    assert lines[0] == "12" and len(lines) == 61 and lines[1] == "1 1"
    assert TransitionMatrix.from_coordinate_list(text, (2, 3)) == A
