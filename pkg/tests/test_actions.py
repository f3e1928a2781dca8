import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitentropy.actions import (
    Action,
    ActionFormatError,
    CapacityError,
    CircleLinear,
    CircleRotation,
    Generic,
    TorusMatrix,
    action_to_dict,
    circle_action,
    commutes,
    conjugate_action,
    load_action,
    power_action,
    sine_homeomorphism,
    subaction,
)
from orbitentropy.spaces import circle_dist

rationals = st.fractions(min_value=0, max_value=1).filter(lambda q: q < 1)


def test_linear_exact_on_fractions():
    assert CircleLinear(3)(Fraction(1, 2)) == Fraction(1, 2)
    assert CircleLinear(2)(Fraction(3, 4)) == Fraction(1, 2)
    with pytest.raises(ValueError):
        CircleLinear(0)


def test_torus_matrix_validation():
    with pytest.raises(ValueError):
        TorusMatrix(((1, 2), (2, 4)))
    A = TorusMatrix(((2, 1), (0, 2)))
    assert A.det == 4
    assert A((Fraction(1, 2), Fraction(1, 4))) == (Fraction(1, 4), Fraction(1, 2))
    with pytest.raises(ValueError):
        A((0.1, 0.2, 0.3))


def test_action_rejects_equal_generators():
    with pytest.raises(ValueError):
        circle_action(2, 2)
    with pytest.raises(ValueError):
        Action([CircleRotation(Fraction(1, 3)), CircleRotation(Fraction(4, 3))])
    with pytest.raises(ValueError):
        Action([Generic(lambda x: 2 * x), CircleLinear(2)])


def test_action_rejects_mixed_spaces():
    with pytest.raises(ValueError):
        Action([CircleLinear(2), TorusMatrix(((2, 0), (0, 2)))])


def test_orbit_one_based():
    T = circle_action(2, 3)
    assert T.orbit(Fraction(1, 10), (1, 2)) == (Fraction(1, 10), Fraction(1, 5), Fraction(3, 5))


@given(rationals, st.integers(1, 5))
def test_power_equals_repeated_application_exact(x, m):
    for g in (CircleLinear(3), CircleRotation(Fraction(2, 7)), TorusMatrix(((2, 1), (1, 2)))):
        p = g.compose_power(m)
        y = x if not isinstance(g, TorusMatrix) else (x, 1 - x)
        z = y
        for _ in range(m):
            z = g(z)
        assert p(y) == z


def test_power_generic_within_tolerance():
    g = Generic(lambda x: 2 * x + 0.1 * np.sin(2 * np.pi * x), lip=2.7)
    p = g.compose_power(3)
    X = np.linspace(0, 1, 200, endpoint=False)
    Y = X
    for _ in range(3):
        Y = g.apply_array(Y)
    assert np.max(circle_dist(p.apply_array(X), Y)) <= 1e-12
    assert p.lip == pytest.approx(2.7**3)


def test_power_capacity():
    with pytest.raises(CapacityError):
        CircleLinear(3).compose_power(40)


def test_power_action_multipliers():
    assert power_action(circle_action(2, 3), 2).multipliers == (4, 9)


@given(st.sets(st.integers(1, 5), min_size=1), st.sets(st.integers(1, 5), min_size=1))
def test_subaction_of_subaction(I, J):
    T = circle_action(2, 3, 5, 7, 11)
    inner = sorted(I & J)
    if not inner:
        return
    first = subaction(T, sorted(I))
    # indices of J inside the subaction's numbering
    pos = [sorted(I).index(j) + 1 for j in inner]
    assert subaction(first, pos) == subaction(T, inner)


def test_conjugate_by_translation_is_affine():
    c = 0.17
    T = circle_action(2, 3)
    C = conjugate_action(T, lambda x: (x + c) % 1.0, lambda x: (x - c) % 1.0)
    X = np.linspace(0, 1, 257, endpoint=False)
    for L, g in zip((2, 3), C.generators):
        expected = (L * X + c * (1 - L)) % 1.0
        assert np.max(circle_dist(g.apply_array(X), expected)) <= 1e-12


def test_conjugate_by_sine_is_definitional():
    h, h_inv = sine_homeomorphism(0.05)
    T = circle_action(2, 3)
    C = conjugate_action(T, h, h_inv)
    X = np.linspace(0, 1, 101, endpoint=False)
    for g, base in zip(C.generators, T.generators):
        assert np.array_equal(g.apply_array(X), h(base.apply_array(h_inv(X))))
    assert np.max(circle_dist(h(h_inv(X)), X)) < 1e-12


def test_conjugate_rejects_non_inverse():
    with pytest.raises(ValueError):
        conjugate_action(circle_action(2, 3), lambda x: x, lambda x: (x + 0.1) % 1)


def test_commutes():
    assert commutes(CircleLinear(2), CircleLinear(3))
    assert commutes(CircleLinear(3), CircleRotation(Fraction(1, 2)))
    assert not commutes(CircleLinear(2), CircleRotation(Fraction(1, 3)))
    assert not commutes(TorusMatrix(((1, 1), (0, 1))), TorusMatrix(((1, 0), (1, 1))))


def test_load_action_round_trip():
    text = """
space: torus
dim: 2
generators:
  - matrix: [[2, 1], [0, 2]]
  - matrix: [[3, 0], [0, 3]]
"""
    T = load_action(text)
    assert T.k == 2 and T[1].det == 4
    assert load_action(__import__("yaml").safe_dump(action_to_dict(T))) == T


def test_load_action_rotation_fraction():
    T = load_action("generators: [{rotation: '1/3'}, {rotation: 0}]")
    assert T[1].alpha == Fraction(1, 3)


@pytest.mark.parametrize("text,line", [
    ("generators:\n  - linear: 2\n  - linear: 2.5\n", 3),
    ("space: sphere\ngenerators: [{linear: 2}]\n", 1),
    ("generators:\n  - linear: 2\n  - wobble: 3\n", 3),
    ("space: torus\ndim: 2\ngenerators:\n  - matrix: [[1, 2], [2, 4]]\n", 4),
    ("generators: []\n", 1),
])
def test_load_action_diagnostics(text, line):
    with pytest.raises(ActionFormatError) as exc:
        load_action(text)
    assert exc.value.line == line


def test_sine_homeomorphism_bounds():
    with pytest.raises(ValueError):
        sine_homeomorphism(1.0)
    assert math.isclose(float(sine_homeomorphism(0.3)[0](np.array(0.25))), 0.25 + 0.3 / (2 * math.pi))
