"""Metric spaces: the circle, the n-torus, the symbolic space and the orbit space.

Points on the circle are plain numbers (``float`` or ``Fraction``) taken mod 1.
Torus points are tuples of such numbers.  Every distance on truncated data is
returned as a :class:`TruncatedDistance` so callers can make separation
decisions conservatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np

__all__ = [
    "TruncatedDistance",
    "Circle",
    "Torus",
    "CIRCLE",
    "wrap",
    "circle_dist",
    "torus_dist",
    "symbol_dist",
    "sequence_dist",
    "orbit_dist",
    "check_symbols",
]


@dataclass(frozen=True)
class TruncatedDistance:
    """A distance known only up to an omitted tail.

    The true distance lies in ``[value, value + tail_bound]``.
    """

    value: float
    tail_bound: float

    def __post_init__(self):
        if self.value < 0 or self.tail_bound < 0:
            raise ValueError("distance and tail bound must be nonnegative")

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound

    def exceeds(self, eps: float) -> bool:
        """True when the true distance is certainly larger than ``eps``."""
        return self.value > eps + self.tail_bound

    def within(self, eps: float) -> bool:
        """True when the true distance is certainly at most ``eps``."""
        return self.value + self.tail_bound <= eps


def wrap(x):
    """Reduce a number (or array) into [0, 1)."""
    if isinstance(x, np.ndarray):
        y = np.mod(x, 1.0)
        # np.mod can round a tiny negative up to exactly 1.0
        y[y >= 1.0] = 0.0
        return y
    if isinstance(x, Fraction) or isinstance(x, int):
        return Fraction(x) % 1
    y = float(x) % 1.0
    return 0.0 if y >= 1.0 else y


def circle_dist(x, y):
    """Length of the shorter arc joining ``x`` and ``y`` on R/Z.

    Works on floats, Fractions and numpy arrays (elementwise).
    """
    if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
        d = np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), 1.0)
        return np.minimum(d, 1.0 - d)
    d = wrap(x - y) if (isinstance(x, Fraction) and isinstance(y, Fraction)) else wrap(float(x) - float(y))
    return min(d, 1 - d)


def torus_dist(x: Sequence, y: Sequence):
    """Sup over coordinates of the circle distance."""
    if len(x) != len(y):
        raise ValueError(f"dimension mismatch: {len(x)} vs {len(y)}")
    if len(x) == 0:
        return 0.0
    return max(circle_dist(a, b) for a, b in zip(x, y))


class Circle:
    """The unit circle R/Z with arc-length metric."""

    dim = 1
    diam = 0.5
    ball_dimension = 1.0
    name = "circle"

    def normalize(self, x):
        if isinstance(x, (tuple, list, np.ndarray)) and not np.isscalar(x):
            if len(x) != 1:
                raise ValueError("circle points are scalars")
            x = x[0]
        if not isinstance(x, Real):
            raise TypeError(f"not a circle point: {x!r}")
        return wrap(x)

    def dist(self, x, y):
        return circle_dist(x, y)

    def as_array(self, x) -> np.ndarray:
        return np.array([float(x)])

    def from_array(self, a):
        return float(a[0])

    def __eq__(self, other):
        return isinstance(other, Circle)

    def __hash__(self):
        return hash("circle")

    def __repr__(self):
        return "Circle()"


class Torus:
    """The n-torus R^n/Z^n with the sup-product of circle metrics."""

    diam = 0.5

    def __init__(self, n: int):
        if int(n) != n or n < 1:
            raise ValueError("torus dimension must be a positive integer")
        self.dim = int(n)
        self.ball_dimension = float(n)
        self.name = f"torus({n})"

    def normalize(self, x):
        x = tuple(x) if not np.isscalar(x) else (x,)
        if len(x) != self.dim:
            raise ValueError(f"dimension mismatch: expected {self.dim}, got {len(x)}")
        return tuple(wrap(c) for c in x)

    def dist(self, x, y):
        return torus_dist(x, y)

    def as_array(self, x) -> np.ndarray:
        return np.array([float(c) for c in x])

    def from_array(self, a):
        return tuple(float(c) for c in a)

    def __eq__(self, other):
        return isinstance(other, Torus) and other.dim == self.dim

    def __hash__(self):
        return hash(("torus", self.dim))

    def __repr__(self):
        return f"Torus({self.dim})"


CIRCLE = Circle()


def check_symbols(word: Sequence[int], k: int) -> tuple:
    word = tuple(int(s) for s in word)
    bad = [s for s in word if not 1 <= s <= k]
    if bad:
        raise ValueError(f"symbols {bad} outside alphabet 1..{k}")
    return word


def symbol_dist(u: Sequence[int], v: Sequence[int], depth: int | None = None) -> TruncatedDistance:
    """Distance on the full shift, summed over the first ``depth`` symbols.

    ``depth`` defaults to the shorter word length.  Symbols beyond the depth
    are unknown, so the tail bound is the worst case ``2**(1 - depth)``.
    """
    if depth is None:
        depth = min(len(u), len(v))
    if depth > min(len(u), len(v)):
        raise ValueError("depth exceeds word length")
    value = math.fsum(2.0**-n for n in range(depth) if u[n] != v[n])
    return TruncatedDistance(value, 2.0 ** (1 - depth))


def sequence_dist(xs: Sequence, ys: Sequence, space=CIRCLE) -> TruncatedDistance:
    """Orbit-space distance between two finite point sequences of equal length."""
    if len(xs) != len(ys):
        raise ValueError(f"depth mismatch: {len(xs)} vs {len(ys)}")
    value = math.fsum(float(space.dist(a, b)) / 2.0**n for n, (a, b) in enumerate(zip(xs, ys)))
    return TruncatedDistance(value, space.diam * 2.0 ** (1 - len(xs)))


def orbit_dist(a, b) -> TruncatedDistance:
    """Distance between two truncated orbit points (realized orbits)."""
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} vs {b.depth}")
    if a.action.space != b.action.space:
        raise ValueError("orbit points live on different spaces")
    return sequence_dist(a.orbit(), b.orbit(), a.action.space)
