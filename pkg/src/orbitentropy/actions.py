"""Generators, actions and the actions derived from them (powers, subactions, conjugates).

An :class:`Action` is an ordered tuple of pairwise different generator maps on
one common space.  Integer variants (:class:`CircleLinear`,
:class:`TorusMatrix`) act exactly on ``Fraction`` input, which keeps preimage
enumeration and nested-interval bookkeeping exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import yaml

from .spaces import CIRCLE, Circle, Torus, circle_dist, wrap

__all__ = [
    "CapacityError",
    "ActionFormatError",
    "CircleLinear",
    "CircleRotation",
    "TorusMatrix",
    "Generic",
    "Action",
    "apply",
    "circle_action",
    "power_action",
    "subaction",
    "conjugate_action",
    "commutes",
    "sine_homeomorphism",
    "parse_action",
    "load_action",
    "action_to_dict",
]

# Largest integer a float64 represents exactly; vectorized dynamics run in float64.
EXACT_INT_LIMIT = 2**53


class CapacityError(OverflowError):
    """A derived generator does not fit the exact numeric range."""


class ActionFormatError(ValueError):
    """Malformed action description; carries the offending line when known."""

    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _det_bareiss(rows) -> int:
    """Exact integer determinant by fraction-free elimination."""
    a = [list(map(int, r)) for r in rows]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1] if n else 1


@dataclass(frozen=True)
class CircleLinear:
    """x -> L x mod 1."""

    L: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"CircleLinear needs an integer L >= 1, got {self.L!r}")
        object.__setattr__(self, "L", int(self.L))

    space = CIRCLE

    def __call__(self, x):
        if isinstance(x, (Fraction, int)):
            return (self.L * Fraction(x)) % 1
        return wrap(self.L * float(x))

    def apply_array(self, X: np.ndarray) -> np.ndarray:
        return wrap(self.L * X)

    def compose_power(self, m: int) -> "CircleLinear":
        Lm = self.L**m
        if Lm > EXACT_INT_LIMIT:
            raise CapacityError(f"L**m = {self.L}**{m} exceeds exact range")
        return CircleLinear(Lm)


@dataclass(frozen=True)
class CircleRotation:
    """x -> x + alpha mod 1."""

    alpha: float | Fraction

    def __post_init__(self):
        a = self.alpha
        a = Fraction(a) % 1 if isinstance(a, (Fraction, int)) else wrap(float(a))
        object.__setattr__(self, "alpha", a)

    space = CIRCLE

    def __call__(self, x):
        if isinstance(x, (Fraction, int)) and isinstance(self.alpha, Fraction):
            return (Fraction(x) + self.alpha) % 1
        return wrap(float(x) + float(self.alpha))

    def apply_array(self, X: np.ndarray) -> np.ndarray:
        return wrap(X + float(self.alpha))

    def compose_power(self, m: int) -> "CircleRotation":
        if isinstance(self.alpha, Fraction):
            return CircleRotation(self.alpha * m)
        return CircleRotation(wrap(m * self.alpha))


@dataclass(frozen=True)
class TorusMatrix:
    """x -> A x mod Z^n for a nonsingular integer matrix A."""

    A: tuple

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in r) for r in self.A)
        if any(len(r) != len(rows) for r in rows) or not rows:
            raise ValueError("TorusMatrix needs a square nonempty matrix")
        for r, orig in zip(rows, self.A):
            if any(int(v) != v for v in orig):
                raise ValueError("TorusMatrix entries must be integers")
        object.__setattr__(self, "A", rows)
        if _det_bareiss(rows) == 0:
            raise ValueError(f"singular matrix {rows}")

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def space(self):
        return Torus(self.n)

    @property
    def det(self) -> int:
        return _det_bareiss(self.A)

    def __call__(self, x):
        x = tuple(x)
        if len(x) != self.n:
            raise ValueError(f"dimension mismatch: matrix is {self.n}x{self.n}, point has {len(x)} coords")
        exact = all(isinstance(c, (Fraction, int)) for c in x)
        if exact:
            return tuple(sum(a * Fraction(c) for a, c in zip(row, x)) % 1 for row in self.A)
        return tuple(wrap(sum(a * float(c) for a, c in zip(row, x))) for row in self.A)

    def apply_array(self, X: np.ndarray) -> np.ndarray:
        if X.shape[-1] != self.n:
            raise ValueError("dimension mismatch")
        return wrap(X @ np.array(self.A, dtype=float).T)

    def compose_power(self, m: int) -> "TorusMatrix":
        P = np.eye(self.n, dtype=object)
        B = np.array(self.A, dtype=object)
        for _ in range(m):
            P = P.dot(B)
        if max(abs(int(v)) for v in P.flat) > EXACT_INT_LIMIT:
            raise CapacityError(f"entries of A**{m} exceed exact range")
        return TorusMatrix(tuple(tuple(int(v) for v in r) for r in P))


@dataclass(frozen=True, eq=False)
class Generic:
    """An arbitrary map given by a callable with a declared Lipschitz constant.

    ``func`` should accept numpy arrays (it is applied to whole candidate
    batches); scalar callables are wrapped with ``np.vectorize`` on failure.
    """

    func: Callable
    lip: float | None = None
    space: object = field(default=CIRCLE)

    def __call__(self, x):
        if isinstance(self.space, Circle):
            return wrap(float(self.func(float(x))))
        y = self.func(np.array([float(c) for c in x]))
        return tuple(wrap(float(c)) for c in np.atleast_1d(y))

    def apply_array(self, X: np.ndarray) -> np.ndarray:
        try:
            Y = np.asarray(self.func(X), dtype=float)
            if Y.shape != X.shape:
                raise ValueError
        except Exception:
            if isinstance(self.space, Circle):
                Y = np.vectorize(lambda v: float(self.func(v)))(X)
            else:
                Y = np.stack([np.asarray(self.func(row), dtype=float) for row in X])
        return wrap(Y)

    def compose_power(self, m: int) -> "Generic":
        f = self.func

        def fm(x):
            for _ in range(m):
                x = wrap(np.asarray(f(x), dtype=float)) if isinstance(x, np.ndarray) else wrap(f(x))
            return x

        lip = None if self.lip is None else self.lip**m
        return Generic(fm, lip, self.space)


def apply(g, x):
    """Apply one generator to a point."""
    return g(x)


def _sample_grid(space, size=1024):
    if isinstance(space, Circle):
        return (np.arange(size) / size)
    per_axis = max(2, int(round(size ** (1.0 / space.dim))))
    axes = [np.arange(per_axis) / per_axis] * space.dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, space.dim)


def _same_generator(g, h, space) -> bool:
    if type(g) is type(h) and not isinstance(g, Generic):
        return g == h
    X = _sample_grid(space)
    d = circle_dist(g.apply_array(X), h.apply_array(X))
    return bool(np.all(d <= 1e-12))


class Action:
    """An action of the free commutative monoid on k generators.

    Parameters
    ----------
    generators : sequence of generator maps, all on one space
    space : optional space, inferred from the first generator
    """

    def __init__(self, generators: Sequence, space=None):
        gens = tuple(generators)
        if not gens:
            raise ValueError("an action needs at least one generator")
        if space is None:
            space = gens[0].space
        for g in gens:
            if g.space != space:
                raise ValueError(f"generator {g!r} acts on {g.space}, not {space}")
        for i in range(len(gens)):
            for j in range(i + 1, len(gens)):
                if _same_generator(gens[i], gens[j], space):
                    raise ValueError(f"generators {i + 1} and {j + 1} coincide")
        self.generators = gens
        self.space = space

    @property
    def k(self) -> int:
        return len(self.generators)

    def __getitem__(self, i):
        """1-based generator lookup, matching itinerary symbols."""
        return self.generators[i - 1]

    def __len__(self):
        return self.k

    def __iter__(self):
        return iter(self.generators)

    def __eq__(self, other):
        return isinstance(other, Action) and self.space == other.space and self.generators == other.generators

    def __hash__(self):
        return hash((self.space, self.generators))

    def __repr__(self):
        return f"Action({list(self.generators)!r})"

    @property
    def multipliers(self) -> tuple:
        """The L_i of an all-CircleLinear action."""
        if not all(isinstance(g, CircleLinear) for g in self.generators):
            raise TypeError("action is not generated by circle endomorphisms x -> Lx")
        return tuple(g.L for g in self.generators)

    def orbit(self, x0, itinerary: Sequence[int]) -> tuple:
        """Realized orbit x_0, x_1, ... following a 1-based itinerary."""
        xs = [self.space.normalize(x0)]
        for s in itinerary:
            xs.append(self[s](xs[-1]))
        return tuple(xs)


def circle_action(*L) -> Action:
    """Shorthand for the action generated by x -> L_i x."""
    return Action([CircleLinear(l) for l in L])


def power_action(T: Action, m: int) -> Action:
    """The action generated by the m-fold compositions of each generator."""
    if int(m) != m or m < 1:
        raise ValueError("power must be a positive integer")
    if m == 1:
        return T
    return Action([g.compose_power(int(m)) for g in T.generators], T.space)


def subaction(T: Action, indices) -> Action:
    """Restrict to the 1-based generator ``indices`` (order preserved)."""
    idx = sorted(set(int(i) for i in indices))
    if not idx:
        raise ValueError("subaction needs a nonempty index set")
    if idx[0] < 1 or idx[-1] > T.k:
        raise ValueError(f"indices must lie in 1..{T.k}")
    return Action([T[i] for i in idx], T.space)


def conjugate_action(T: Action, h: Callable, h_inv: Callable, lip: float | None = None,
                     tol: float = 1e-9) -> Action:
    """Conjugate every generator by the homeomorphism ``h``.

    Both callables must accept numpy arrays.  ``h(h_inv(x)) == x`` is checked
    on a 1024-point grid; ``lip`` is the declared Lipschitz constant of the
    conjugated generators, if known.
    """
    X = _sample_grid(T.space)
    err = circle_dist(wrap(np.asarray(h(h_inv(X)), dtype=float)), X)
    if np.max(err) > tol:
        raise ValueError(f"h_inv is not an inverse of h (max error {np.max(err):.3g})")

    def conj(g):
        def f(x):
            return h(g.apply_array(wrap(np.asarray(h_inv(x), dtype=float))))

        return Generic(f, lip, T.space)

    return Action([conj(g) for g in T.generators], T.space)


def sine_homeomorphism(c: float):
    """h(x) = x + c sin(2 pi x) / (2 pi) mod 1 and its inverse, for |c| < 1.

    The inverse is found by Newton's method, which converges because
    h' = 1 + c cos(2 pi x) stays in [1 - |c|, 1 + |c|].
    """
    if not abs(c) < 1:
        raise ValueError("need |c| < 1 for a homeomorphism")
    two_pi = 2 * math.pi

    def h(x):
        x = np.asarray(x, dtype=float)
        return wrap(np.atleast_1d(x + c * np.sin(two_pi * x) / two_pi)).reshape(x.shape)

    def h_inv(y):
        y = np.asarray(y, dtype=float)
        x = y.copy()
        for _ in range(60):
            step = (x + c * np.sin(two_pi * x) / two_pi - y) / (1 + c * np.cos(two_pi * x))
            x = x - step
            if np.max(np.abs(step), initial=0.0) < 1e-15:
                break
        return wrap(np.atleast_1d(x)).reshape(y.shape)

    return h, h_inv


def commutes(g, h) -> bool:
    """Whether two generators commute (exact for integer variants)."""
    if isinstance(g, CircleLinear) and isinstance(h, CircleLinear):
        return True
    if isinstance(g, CircleRotation) and isinstance(h, CircleRotation):
        return True
    if {type(g), type(h)} == {CircleLinear, CircleRotation}:
        lin, rot = (g, h) if isinstance(g, CircleLinear) else (h, g)
        a = rot.alpha
        if isinstance(a, Fraction):
            return ((lin.L - 1) * a) % 1 == 0
        return circle_dist((lin.L - 1) * a, 0.0) <= 1e-12
    if isinstance(g, TorusMatrix) and isinstance(h, TorusMatrix):
        A, B = np.array(g.A, dtype=object), np.array(h.A, dtype=object)
        return bool(np.all(A.dot(B) == B.dot(A)))
    return False


# ---------------------------------------------------------------------------
# Action description documents
# ---------------------------------------------------------------------------

def _parse_rational(value, line):
    if isinstance(value, bool):
        raise ActionFormatError(f"expected a number, got {value!r}", line)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            pass
        try:
            return float(value)
        except ValueError:
            raise ActionFormatError(f"cannot read number {value!r}", line) from None
    raise ActionFormatError(f"expected a number, got {value!r}", line)


def _node_line(node):
    return node.start_mark.line + 1 if node is not None else None


def _mapping_get(node, key):
    if not isinstance(node, yaml.MappingNode):
        return None
    for k, v in node.value:
        if k.value == key:
            return v
    return None


def parse_action(doc, node=None) -> Action:
    """Build an :class:`Action` from a parsed description.

    The description is a mapping::

        space: circle            # or: torus
        dim: 2                   # torus only
        generators:
          - linear: 2
          - rotation: "1/3"
          - matrix: [[2, 1], [0, 2]]

    ``node`` is the matching YAML node, used only for line numbers.
    """
    if not isinstance(doc, dict):
        raise ActionFormatError("action description must be a mapping", _node_line(node))
    space_name = str(doc.get("space", "circle")).strip().lower()
    gens_doc = doc.get("generators")
    gens_node = _mapping_get(node, "generators")
    if not isinstance(gens_doc, list) or not gens_doc:
        raise ActionFormatError("'generators' must be a nonempty list", _node_line(gens_node or node))
    if "k" in doc and int(doc["k"]) != len(gens_doc):
        raise ActionFormatError(f"k={doc['k']} but {len(gens_doc)} generators listed",
                                _node_line(_mapping_get(node, "k")))
    if space_name == "circle":
        space = CIRCLE
    elif space_name == "torus":
        if "dim" not in doc:
            raise ActionFormatError("torus action needs 'dim'", _node_line(node))
        space = Torus(int(doc["dim"]))
    else:
        raise ActionFormatError(f"unknown space {space_name!r}", _node_line(_mapping_get(node, "space")))

    gens = []
    for i, g in enumerate(gens_doc):
        gnode = gens_node.value[i] if isinstance(gens_node, yaml.SequenceNode) else None
        line = _node_line(gnode)
        if not isinstance(g, dict) or len(g) != 1:
            raise ActionFormatError(f"generator {i + 1}: expected one of linear/rotation/matrix", line)
        (kind, val), = g.items()
        try:
            if kind == "linear":
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ActionFormatError(f"generator {i + 1}: L must be an exact integer, got {val!r}", line)
                gens.append(CircleLinear(val))
            elif kind == "rotation":
                gens.append(CircleRotation(_parse_rational(val, line)))
            elif kind == "matrix":
                if not isinstance(val, list) or any(not isinstance(r, list) for r in val):
                    raise ActionFormatError(f"generator {i + 1}: matrix must be a list of rows", line)
                if any(isinstance(v, bool) or not isinstance(v, int) for r in val for v in r):
                    raise ActionFormatError(f"generator {i + 1}: matrix entries must be exact integers", line)
                gens.append(TorusMatrix(val))
            else:
                raise ActionFormatError(f"generator {i + 1}: unknown variant {kind!r}", line)
        except ActionFormatError:
            raise
        except ValueError as exc:
            raise ActionFormatError(f"generator {i + 1}: {exc}", line) from None
    try:
        return Action(gens, space)
    except ValueError as exc:
        raise ActionFormatError(str(exc), _node_line(gens_node)) from None


def load_action(text: str) -> Action:
    """Parse an action description from YAML text."""
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ActionFormatError(f"YAML error: {getattr(exc, 'problem', exc)}",
                                mark.line + 1 if mark else None) from None
    return parse_action(doc, node)


def action_to_dict(T: Action) -> dict:
    """Inverse of :func:`parse_action` for the integer and rotation variants."""
    out = {"space": "circle" if isinstance(T.space, Circle) else "torus"}
    if isinstance(T.space, Torus):
        out["dim"] = T.space.dim
    gens = []
    for g in T.generators:
        if isinstance(g, CircleLinear):
            gens.append({"linear": g.L})
        elif isinstance(g, CircleRotation):
            gens.append({"rotation": str(g.alpha) if isinstance(g.alpha, Fraction) else g.alpha})
        elif isinstance(g, TorusMatrix):
            gens.append({"matrix": [list(r) for r in g.A]})
        else:
            gens.append({"generic": repr(g.func)})
    out["generators"] = gens
    return out




