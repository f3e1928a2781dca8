"""Closed-form entropy bounds and the entropy of a single toral endomorphism."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .actions import Action, CircleLinear, CircleRotation, Generic, TorusMatrix, _det_bareiss

__all__ = [
    "BoundaryWarning",
    "NotExpanding",
    "BoundReport",
    "Spectrum",
    "spectrum",
    "charpoly",
    "lipschitz_constant",
    "lipschitz_bound",
    "skew_bound",
    "torus_preimage_bound",
    "single_endo_entropy",
    "power_rule",
]

MODULUS_TOL = 1e-9


class BoundaryWarning(UserWarning):
    """An eigenvalue modulus is within tolerance of 1."""


class NotExpanding(ValueError):
    def __init__(self, msg, modulus):
        super().__init__(msg)
        self.modulus = modulus


@dataclass(frozen=True)
class BoundReport:
    kind: str
    value: float
    ball_dimension: float | None = None
    lipschitz: tuple = ()
    moduli: tuple = ()
    dets: tuple = ()
    boundary: tuple = ()

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"{self.kind} bound is not finite")
        if any(l < 1 for l in self.lipschitz):
            raise ValueError("L_+ constants must be >= 1")


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: tuple
    det: int

    @property
    def moduli(self) -> tuple:
        return tuple(float(abs(z)) for z in self.eigenvalues)

    def det_from_moduli(self) -> float:
        return math.prod(self.moduli)


def charpoly(A) -> list:
    """Integer coefficients of det(tI - A), leading first (Faddeev-LeVerrier, exact)."""
    n = len(A)
    M = [[Fraction(int(v)) for v in row] for row in A]
    coeffs = [Fraction(1)]
    Mk = [[Fraction(0)] * n for _ in range(n)]
    c = Fraction(1)
    for k in range(1, n + 1):
        # Mk <- A (M_{k-1} + c_{k-1} I)
        B = [[Mk[i][j] + (c if i == j else 0) for j in range(n)] for i in range(n)]
        Mk = [[sum(M[i][t] * B[t][j] for t in range(n)) for j in range(n)] for i in range(n)]
        c = -sum(Mk[i][i] for i in range(n)) / k
        coeffs.append(c)
    return [int(v) for v in coeffs]


def _as_matrix(A) -> tuple:
    if isinstance(A, TorusMatrix):
        return A.A
    if isinstance(A, CircleLinear):
        return ((A.L,),)
    rows = tuple(tuple(int(v) for v in r) for r in np.atleast_2d(np.asarray(A, dtype=object)))
    for r, orig in zip(rows, np.atleast_2d(np.asarray(A))):
        if any(int(v) != v for v in orig):
            raise ValueError("integer matrix expected")
    return rows


def spectrum(A) -> Spectrum:
    rows = _as_matrix(A)
    eig = tuple(complex(z) for z in np.roots(charpoly(rows)))
    return Spectrum(eig, _det_bareiss(rows))


def lipschitz_constant(g) -> float:
    """Lipschitz constant for the metric of the generator's space (sup metric on tori)."""
    if isinstance(g, CircleLinear):
        return float(g.L)
    if isinstance(g, CircleRotation):
        return 1.0
    if isinstance(g, TorusMatrix):
        return float(max(sum(abs(a) for a in row) for row in g.A))
    if isinstance(g, Generic):
        if g.lip is None:
            raise ValueError("generic map has no declared Lipschitz constant")
        return float(g.lip)
    raise TypeError(f"unknown generator {g!r}")


def _lplus(T: Action) -> tuple:
    return tuple(max(1.0, lipschitz_constant(g)) for g in T.generators)


def lipschitz_bound(T: Action, D: float | None = None) -> BoundReport:
    """log sum_i L_+(T_i)^D, with D the ball dimension of the space by default."""
    D = T.space.ball_dimension if D is None else float(D)
    if not (0 < D < math.inf):
        raise ValueError("ball dimension must be positive and finite")
    lp = _lplus(T)
    value = math.log(math.fsum(l**D for l in lp))
    return BoundReport("lipschitz", value, D, lp)


def skew_bound(T: Action, D: float | None = None) -> BoundReport:
    """log k + D log max_i L_+(T_i), the bound carried by the skew product."""
    D = T.space.ball_dimension if D is None else float(D)
    if not (0 <= D < math.inf):
        raise ValueError("ball dimension must be finite")
    lp = _lplus(T)
    return BoundReport("skew", math.log(T.k) + D * math.log(max(lp)), D, lp)


def torus_preimage_bound(T: Action) -> BoundReport:
    """log sum_i |det A_i| for actions of expanding integer matrices.

    Circle endomorphisms count as 1x1 matrices.  |det| is taken from exact
    elimination and cross-checked against the product of eigenvalue moduli.
    """
    dets, moduli = [], []
    for idx, g in enumerate(T.generators, start=1):
        if not isinstance(g, (TorusMatrix, CircleLinear)):
            raise TypeError(f"generator {idx} is not an integer endomorphism: {g!r}")
        sp = spectrum(g)
        for m in sp.moduli:
            if m <= 1 + MODULUS_TOL:
                raise NotExpanding(f"generator {idx} is not expanding: eigenvalue modulus {m:.6g} <= 1", m)
        d = abs(sp.det)
        if abs(sp.det_from_moduli() - d) > 1e-7 * max(1, d):
            raise ArithmeticError(f"generator {idx}: |det| {d} vs product of moduli {sp.det_from_moduli()}")
        dets.append(d)
        moduli.append(sp.moduli)
    return BoundReport("torus_preimage", math.log(sum(dets)), T.space.ball_dimension,
                       moduli=tuple(moduli), dets=tuple(dets))


def single_endo_entropy(A) -> float:
    """Sum of log|lambda| over eigenvalues outside the unit circle.

    Moduli within 1e-9 of 1 contribute nothing either way; they raise a
    :class:`BoundaryWarning` so the case is visible rather than silently
    classified.
    """
    sp = spectrum(A)
    if sp.det == 0:
        raise ValueError("singular matrix")
    boundary = [m for m in sp.moduli if abs(m - 1) <= MODULUS_TOL]
    if boundary:
        warnings.warn(f"eigenvalue moduli {boundary} lie on the unit circle within {MODULUS_TOL}",
                      BoundaryWarning, stacklevel=2)
    return math.fsum(math.log(m) for m in sp.moduli if m > 1 + MODULUS_TOL)


def power_rule(L: Sequence[int], m: int, budget: int = 20_000) -> tuple:
    """(h(T^m), m h(T)) for the circle action with multipliers L.

    h(T^m) comes from the transition matrix of L^m when it fits the budget
    and from the closed form log sum L_i^m otherwise.
    """
    from .sft import BudgetExceeded, sft_entropy

    Lm = [l**m for l in L]
    try:
        lhs = sft_entropy(Lm, budget)
    except BudgetExceeded:
        lhs = math.log(sum(Lm))
    return lhs, m * sft_entropy(L, budget)
