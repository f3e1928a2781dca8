import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitentropy.actions import Action, CircleLinear, CircleRotation, Generic, TorusMatrix, circle_action
from orbitentropy.bounds import (
    BoundaryWarning,
    NotExpanding,
    charpoly,
    lipschitz_bound,
    lipschitz_constant,
    power_rule,
    single_endo_entropy,
    skew_bound,
    spectrum,
    torus_preimage_bound,
)
from orbitentropy.sft import sft_entropy


def test_lipschitz_constants():
    assert lipschitz_constant(CircleLinear(3)) == 3
    assert lipschitz_constant(CircleRotation(0.2)) == 1
    assert lipschitz_constant(TorusMatrix(((2, 0), (0, 3)))) == 3
    assert lipschitz_constant(TorusMatrix(((2, -1), (1, 1)))) == 3
    assert lipschitz_constant(Generic(lambda x: x, lip=0.5)) == 0.5
    with pytest.raises(ValueError):
        lipschitz_constant(Generic(lambda x: x))


def test_lipschitz_bound_examples():
    assert lipschitz_bound(circle_action(2, 3), 1).value == math.log(5)
    rot = Action([CircleRotation(0.1), CircleRotation(0.3)])
    assert lipschitz_bound(rot, 1).value == math.log(2)
    tor = Action([TorusMatrix(((2, 0), (0, 2))), TorusMatrix(((3, 0), (0, 3)))])
    assert lipschitz_bound(tor).value == pytest.approx(math.log(13), abs=1e-15)


def test_lplus_floor():
    contraction = Action([Generic(lambda x: x / 2, lip=0.5), CircleRotation(0.25)])
    r = lipschitz_bound(contraction, 1)
    assert r.lipschitz == (1.0, 1.0) and r.value == math.log(2)


def test_skew_bound_examples():
    assert skew_bound(circle_action(2, 3), 1).value == pytest.approx(math.log(6), abs=1e-15)
    rot3 = Action([CircleRotation(0.1), CircleRotation(0.2), CircleRotation(0.3)])
    assert skew_bound(rot3, 1).value == math.log(3)
    assert skew_bound(circle_action(2), 1).value == math.log(2)


@given(st.lists(st.integers(2, 9), min_size=1, max_size=4, unique=True))
def test_bound_ordering_identity(L):
    T = circle_action(*L)
    exact = math.log(sum(L))
    assert lipschitz_bound(T, 1).value == pytest.approx(exact, abs=1e-12)
    assert (skew_bound(T, 1).value >= exact - 1e-12) == (len(L) * max(L) >= sum(L))


def test_torus_bound_examples():
    tor = Action([TorusMatrix(((2, 0), (0, 2))), TorusMatrix(((3, 0), (0, 3)))])
    r = torus_preimage_bound(tor)
    assert r.value == pytest.approx(math.log(13), abs=1e-15) and r.dets == (4, 9)
    assert torus_preimage_bound(circle_action(2, 3)).value == pytest.approx(math.log(5), abs=1e-15)


def test_torus_bound_rejects_cat_map():
    with pytest.raises(NotExpanding) as exc:
        torus_preimage_bound(Action([TorusMatrix(((2, 1), (1, 1)))]))
    assert exc.value.modulus == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-9)


def test_charpoly():
    assert charpoly([[2, 1], [0, 2]]) == [1, -4, 4]
    assert charpoly([[1, 1], [1, 0]]) == [1, -1, -1]
    assert charpoly([[2, 0, 0], [0, 3, 0], [0, 0, 5]]) == [1, -10, 31, -30]


matrices = st.lists(st.lists(st.integers(-4, 4), min_size=3, max_size=3), min_size=3, max_size=3)


@given(matrices)
def test_moduli_product_matches_exact_det(A):
    sp = spectrum(A)
    assert sp.det == round(np.linalg.det(np.array(A, dtype=float)))
    assert abs(sp.det_from_moduli() - abs(sp.det)) <= 1e-7 * max(1, abs(sp.det))


def test_single_endo_examples():
    assert single_endo_entropy([[2, 0], [0, 3]]) == pytest.approx(math.log(6), abs=1e-12)
    assert single_endo_entropy([[1, 1], [1, 0]]) == pytest.approx(math.log((1 + math.sqrt(5)) / 2), abs=1e-12)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert single_endo_entropy([[0, -1], [1, 0]]) == 0.0
    assert any(issubclass(x.category, BoundaryWarning) for x in w)
    with pytest.raises(ValueError):
        single_endo_entropy([[1, 2], [2, 4]])


def test_single_endo_equals_log_det_when_expanding():
    for A in ([[2, 1], [0, 2]], [[3, 1], [1, 2]], [[2, 0, 0], [1, 3, 0], [0, 1, 2]]):
        d = abs(round(np.linalg.det(np.array(A, dtype=float))))
        assert single_endo_entropy(A) == pytest.approx(math.log(d), abs=1e-9)


@pytest.mark.parametrize("L", [(2, 3), (2, 5), (3, 4), (2, 3, 5)])
@pytest.mark.parametrize("m", [2, 3])
def test_power_rule(L, m):
    lhs, rhs = power_rule(L, m)
    assert lhs == pytest.approx(math.log(sum(l**m for l in L)), abs=1e-9)
    assert rhs == pytest.approx(m * sft_entropy(L), abs=1e-12)
    assert lhs <= rhs
