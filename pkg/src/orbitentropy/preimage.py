"""Preimage sets, preimage trees, branch metrics and preimage entropies.

Preimages of integer variants are computed exactly when the base point is
rational.  Trees are stored as chains (z_0 = root, z_1, ..., z_l) with
T_{i_j} z_j = z_{j-1}; the dump format prints them in the conventional
order [z_l, ..., z_0].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .actions import Action, CircleLinear, CircleRotation, Generic, TorusMatrix, _det_bareiss
from .orbit_space import (
    DEFAULT_BUDGET,
    BudgetExceeded,
    CandidateSet,
    EntropyEstimate,
    OrbitPoint,
    _greedy_from_edges,
    _near_pairs,
    grid_size,
    max_separated,
    truncation_depth,
)
from .spaces import CIRCLE, Circle, circle_dist, wrap

__all__ = [
    "UnsupportedMap",
    "PreimageSet",
    "PreimageTree",
    "BranchDistanceReport",
    "HurleyReport",
    "preimages",
    "preimage_count",
    "build_tree",
    "branch_dist",
    "tree_dist",
    "estimate_hm",
    "estimate_hi",
    "check_union_cardinality",
    "hurley_check",
]


class UnsupportedMap(TypeError):
    """The generator has no preimage oracle."""


def _is_exact(x) -> bool:
    if isinstance(x, tuple):
        return all(isinstance(c, (Fraction, int)) for c in x)
    return isinstance(x, (Fraction, int))


@dataclass(frozen=True)
class PreimageSet:
    base: object
    generator: object
    points: tuple

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def verify(self, tol: float = 1e-12) -> bool:
        """Applying the generator to every point returns the base."""
        space = self.generator.space
        for p in self.points:
            y = self.generator(p)
            if _is_exact(p) and _is_exact(self.base):
                if space.normalize(y) != space.normalize(self.base):
                    return False
            elif float(space.dist(y, self.base)) > tol:
                return False
        return True


@lru_cache(maxsize=256)
def _coset_representatives(A: tuple) -> tuple:
    """Distinct A^{-1} v mod 1 over integer v, one per coset of Z^n / A Z^n.

    Every coset meets A [0,1)^n, whose points have |v_i| <= sum_j |A_ij|, so a
    box search over that range finds all of them.
    """
    n = len(A)
    inv = _inverse_fraction(A)
    bound = [sum(abs(a) for a in row) for row in A]
    reps = set()
    for v in itertools.product(*[range(-b, b + 1) for b in bound]):
        reps.add(tuple((sum(inv[r][c] * v[c] for c in range(n))) % 1 for r in range(n)))
    reps = tuple(sorted(reps))
    det = abs(_det_bareiss(A))
    if len(reps) != det:
        raise AssertionError(f"found {len(reps)} coset representatives, expected |det| = {det}")
    return reps


def _inverse_fraction(A: tuple) -> list:
    n = len(A)
    M = [[Fraction(a) for a in row] + [Fraction(int(r == c)) for c in range(n)] for r, row in enumerate(A)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        M[col] = [v / p for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [row[n:] for row in M]


def preimage_count(g) -> int:
    if isinstance(g, CircleLinear):
        return g.L
    if isinstance(g, CircleRotation):
        return 1
    if isinstance(g, TorusMatrix):
        return abs(g.det)
    raise UnsupportedMap(f"no preimage oracle for {g!r}")


def preimages(g, x) -> PreimageSet:
    """All points mapped to ``x`` by ``g``, exact for rational ``x``."""
    if isinstance(g, Generic):
        raise UnsupportedMap("generic maps have no preimage oracle")
    x = g.space.normalize(x)
    if isinstance(g, CircleLinear):
        if _is_exact(x):
            pts = tuple((Fraction(x) + j) / g.L for j in range(g.L))
        else:
            pts = tuple(wrap((x + j) / g.L) for j in range(g.L))
    elif isinstance(g, CircleRotation):
        if _is_exact(x) and isinstance(g.alpha, Fraction):
            pts = ((Fraction(x) - g.alpha) % 1,)
        else:
            pts = (wrap(float(x) - float(g.alpha)),)
    elif isinstance(g, TorusMatrix):
        inv = _inverse_fraction(g.A)
        reps = _coset_representatives(g.A)
        n = g.n
        if _is_exact(x):
            base = [sum(inv[r][c] * Fraction(x[c]) for c in range(n)) for r in range(n)]
            pts = tuple(tuple((base[r] + rep[r]) % 1 for r in range(n)) for rep in reps)
        else:
            finv = np.array([[float(v) for v in row] for row in inv])
            base = finv @ np.array(x, dtype=float)
            pts = tuple(tuple(wrap(float(base[r] + float(rep[r]))) for r in range(n)) for rep in reps)
    else:
        raise UnsupportedMap(f"no preimage oracle for {g!r}")
    return PreimageSet(x, g, pts)


@dataclass(frozen=True)
class PreimageTree:
    """Backward chains of length ``depth`` ending at ``root``.

    ``chains[b]`` is (z_0, ..., z_l) and ``words[b]`` the 1-based generator
    indices (i_1, ..., i_l) with T_{i_j} z_j = z_{j-1}.  ``root_point`` is set
    for trees in the orbit space: level j of chain b is then the orbit point
    (z_j, ..., z_1) followed by the root orbit.
    """

    action: Action
    root: object
    depth: int
    chains: tuple
    words: tuple
    root_point: OrbitPoint | None = None

    def __len__(self):
        return len(self.chains)

    @property
    def branches(self) -> list:
        """Branches in the order [z_l, ..., z_1, z_0 = root]."""
        return [tuple(reversed(c)) for c in self.chains]

    def leaves(self) -> list:
        return [c[-1] for c in self.chains]

    def level_array(self) -> np.ndarray:
        """(branches, depth + 1, dim) float array of chain points."""
        sp = self.action.space
        return np.array([[sp.as_array(z) for z in c] for c in self.chains]).reshape(
            len(self.chains), self.depth + 1, sp.dim)

    def orbit_point(self, b: int, level: int) -> OrbitPoint:
        if self.root_point is None:
            raise ValueError("not an orbit-space tree")
        c, w = self.chains[b], self.words[b]
        head = tuple(reversed(w[:level]))
        return OrbitPoint(self.action, c[level], head + self.root_point.itinerary)

    def dump(self) -> str:
        """Indented text: a header, then one branch per line with rational coordinates."""
        lines = [f"tree root={_fmt(self.root)} depth={self.depth} branches={len(self)}"]
        for c, w in zip(self.chains, self.words):
            pts = ", ".join(_fmt(z) for z in reversed(c))
            lines.append(f"  [{pts}]  word={list(reversed(w))}")
        return "\n".join(lines) + "\n"


def _fmt(z) -> str:
    if isinstance(z, tuple):
        return "(" + ", ".join(_fmt(c) for c in z) + ")"
    return str(z) if isinstance(z, Fraction) else repr(float(z))


def build_tree(T: Action, x, itinerary_choice="all", depth: int = 1,
               budget: int = DEFAULT_BUDGET) -> PreimageTree:
    """Preimage tree of ``x`` (a base point or an OrbitPoint).

    ``itinerary_choice`` is "all" (every generator at every level) or a
    sequence of 1-based generator indices (i_1, ..., i_l).
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    root_point = x if isinstance(x, OrbitPoint) else None
    root = x.x0 if root_point is not None else T.space.normalize(x)
    if itinerary_choice == "all":
        levels = [tuple(range(1, T.k + 1))] * depth
    else:
        seq = tuple(int(i) for i in itinerary_choice)
        if len(seq) != depth:
            raise ValueError(f"itinerary has {len(seq)} symbols, depth is {depth}")
        if any(not 1 <= i <= T.k for i in seq):
            raise ValueError(f"generator index outside 1..{T.k}")
        levels = [(i,) for i in seq]
    bound = math.prod(sum(preimage_count(T[i]) for i in lev) for lev in levels)
    if bound > budget:
        raise BudgetExceeded(f"tree has up to {bound} branches, budget {budget}")
    chains, words = [(root,)], [()]
    for lev in levels:
        cache = {}
        nc, nw = [], []
        for c, w in zip(chains, words):
            for i in lev:
                key = (i, c[-1])
                if key not in cache:
                    cache[key] = preimages(T[i], c[-1]).points
                for z in cache[key]:
                    nc.append(c + (z,))
                    nw.append(w + (i,))
        chains, words = nc, nw
    return PreimageTree(T, root, depth, tuple(chains), tuple(words), root_point)


def branch_dist(xi: Sequence, eta: Sequence, space=CIRCLE) -> float:
    """Max over levels of the base distance between two equal-length branches."""
    if len(xi) != len(eta):
        raise ValueError(f"depth mismatch: {len(xi)} vs {len(eta)}")
    return max(float(space.dist(a, b)) for a, b in zip(xi, eta))


def _pairwise_branch(t1: PreimageTree, t2: PreimageTree) -> np.ndarray:
    X, Y = t1.level_array(), t2.level_array()
    D = circle_dist(X[:, None], Y[None, :]).max(axis=3)  # (B1, B2, l+1)
    if t1.root_point is None:
        return D.max(axis=2)
    # orbit-space levels: D_j = d(z_j, z'_j) + D_{j-1} / 2, starting from the root distance
    r1 = np.array([t1.action.space.as_array(z) for z in t1.root_point.orbit()])
    r2 = np.array([t2.action.space.as_array(z) for z in t2.root_point.orbit()])
    d0 = circle_dist(r1, r2).max(axis=1)
    level = float(sum(d0[m] / 2.0**m for m in range(len(d0))))
    out = np.full(D.shape[:2], level)
    cur = np.full(D.shape[:2], level)
    for j in range(1, D.shape[2]):
        cur = D[:, :, j] + 0.5 * cur
        np.maximum(out, cur, out=out)
    return out


def tree_dist(t1: PreimageTree, t2: PreimageTree) -> float:
    """Hausdorff distance between the branch sets under the branch distance."""
    if t1.depth != t2.depth:
        raise ValueError(f"depth mismatch: {t1.depth} vs {t2.depth}")
    if (t1.root_point is None) != (t2.root_point is None):
        raise ValueError("cannot compare a base tree with an orbit-space tree")
    if t1.root_point is not None and t1.root_point.depth != t2.root_point.depth:
        raise ValueError("orbit-space roots have different depths")
    B = _pairwise_branch(t1, t2)
    return float(max(B.min(axis=1).max(), B.min(axis=0).max()))


@dataclass(frozen=True)
class BranchDistanceReport:
    value: float
    kind: str

    def __post_init__(self):
        if self.value < 0 or self.kind not in ("branch", "tree"):
            raise ValueError("invalid branch distance report")


def _padding(T: Action, epsilon: float, padding):
    K = truncation_depth(epsilon, T.space.diam)
    if padding is None:
        return (1,) * K
    pad = tuple(int(s) for s in padding)
    if len(pad) < K:
        raise ValueError(f"padding of length {len(pad)} is shorter than K(eps) = {K}")
    return pad


def _leaf_candidates(tree: PreimageTree) -> CandidateSet:
    """The sigma_T-preimages of the root orbit point, as a candidate set."""
    sp = tree.action.space
    root = np.array([sp.as_array(z) for z in tree.root_point.orbit()])
    chains = tree.level_array()[:, ::-1]  # z_l, ..., z_0
    orbits = np.concatenate([chains[:, :-1], np.broadcast_to(root, (len(chains),) + root.shape)], axis=1)
    pad = np.array(tree.root_point.itinerary, dtype=np.int16) - 1
    heads = np.array([tuple(reversed(w)) for w in tree.words], dtype=np.int16).reshape(len(chains), -1) - 1
    its = np.concatenate([heads, np.broadcast_to(pad, (len(chains), len(pad)))], axis=1)
    return CandidateSet(tree.action, its, orbits)


def estimate_hm(T: Action, n_max: int, epsilon_list: Sequence[float], sample_points: Sequence,
                padding=None, budget: int = DEFAULT_BUDGET) -> list:
    """Separated subsets of sigma_T^{-n}(root), maximized over the sampled roots.

    Each root is a base point followed by a forward padding itinerary of
    length K(eps).  Returns one estimate per (eps, n), n = 1..n_max.
    """
    out = []
    for eps in epsilon_list:
        pad = _padding(T, eps, padding)
        for n in range(1, n_max + 1):
            best = None
            for x in sample_points:
                root = OrbitPoint(T, x, pad)
                tree = build_tree(T, root, "all", n, budget)
                est = max_separated(_leaf_candidates(tree), n, eps)
                if best is None or est.count > best.count:
                    best = est
            best.kind = "preimage-points"
            out.append(best)
    return out


def _greedy_trees(trees: Sequence[PreimageTree], epsilon: float, tails: Sequence[float],
                  root_dists=None) -> list:
    """Greedy separated subfamily; a pair is separated when tree_dist > eps + tail.

    ``root_dists(a, b)`` is an optional cheap lower bound on tree_dist used to
    skip the full Hausdorff computation.
    """
    kept = []
    for a, t in enumerate(trees):
        ok = True
        for b in kept:
            thr = epsilon + max(tails[a], tails[b])
            if root_dists is not None and root_dists(a, b) > thr:
                continue
            if tree_dist(t, trees[b]) <= thr:
                ok = False
                break
        if ok:
            kept.append(a)
    return kept


def estimate_hi(T: Action, n_max: int, epsilon_list: Sequence[float], grid: float,
                padding_words: str = "all", budget: int = DEFAULT_BUDGET) -> list:
    """Greedy separated families of orbit-space preimage trees over a grid of roots.

    Roots are the orbit points with x0 on the grid and every padding
    itinerary of length K(eps) (or only the all-ones padding when
    ``padding_words`` is "first").  Separation is conservative in the
    padding truncation.
    """
    g = grid_size(grid)
    sp = T.space
    axis = [Fraction(j, g) for j in range(g)]
    xs = axis if sp.dim == 1 else list(itertools.product(axis, repeat=sp.dim))
    out = []
    for eps in epsilon_list:
        K = truncation_depth(eps, sp.diam)
        pads = list(itertools.product(range(1, T.k + 1), repeat=K)) if padding_words == "all" else [(1,) * K]
        roots = [OrbitPoint(T, x, p) for p in pads for x in xs]
        R = CandidateSet.from_points(roots)
        roots = list(R)
        orbits = R.orbits
        tail = sp.diam * 2.0 ** (1 - R.depth)

        def root_lower(a, b):
            d = circle_dist(orbits[a], orbits[b]).max(axis=1)
            return float(sum(d[m] / 2.0**m for m in range(len(d))))

        for n in range(1, n_max + 1):
            if len(roots) * sum(preimage_count(g_) for g_ in T.generators) ** n > 50 * budget:
                raise BudgetExceeded("too many tree branches for this grid")
            trees = [build_tree(T, r, "all", n, budget) for r in roots]
            kept = _greedy_trees(trees, eps, [tail] * len(trees), root_lower)
            count = len(kept)
            out.append(EntropyEstimate(n, eps, count, math.log(count) / n, grid=grid,
                                       candidates=len(trees), kind="preimage-trees"))
    return out


def check_union_cardinality(T: Action, x) -> int:
    """Number of distinct points in the union of T_i^{-1}(x)."""
    pts = set()
    for g in T.generators:
        for p in preimages(g, x):
            pts.add(p if _is_exact(p) else _round_key(p))
    return len(pts)


def _round_key(p):
    if isinstance(p, tuple):
        return tuple(_round_key(c) for c in p)
    return round(float(p) % 1.0, 12) % 1.0


@dataclass
class HurleyReport:
    n: int
    epsilon: float
    h_m: float
    h: float
    h_i: float
    counts: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        tol = 1e-12
        return self.h_m <= self.h + tol and self.h <= self.h_m + self.h_i + tol


def _bowen_count(orbits: np.ndarray, epsilon: float, diam: float) -> int:
    """Greedy count of points pairwise separated in max_{s<n} d(f^s x, f^s y) > eps."""
    n = orbits.shape[1]
    bounds = np.full(n, float(epsilon))
    pairs = _near_pairs(orbits, bounds, diam, prefer=list(range(n - 1, -1, -1)))
    if len(pairs):
        D = circle_dist(orbits[pairs[:, 0]], orbits[pairs[:, 1]]).max(axis=(1, 2))
        pairs = pairs[D <= epsilon]
    return len(_greedy_from_edges(len(orbits), pairs))


def _forward(f, x0: np.ndarray, n: int) -> np.ndarray:
    X = np.empty((len(x0), n, x0.shape[1]))
    X[:, 0] = x0
    for s in range(1, n):
        cur = X[:, s - 1]
        X[:, s] = f.apply_array(cur[:, 0])[:, None] if x0.shape[1] == 1 and not isinstance(f, TorusMatrix) \
            else f.apply_array(cur)
    return X


def hurley_check(f, n: int, epsilon: float, grid: float | None = None, tree_grid: float = 1 / 64,
                 sample_points: Sequence = (Fraction(1, 7), Fraction(3, 11), Fraction(5, 13))) -> HurleyReport:
    """Finite-scale h_m, h and h_i of a single map in its Bowen metric at one (n, eps).

    h_m: largest separated subset of f^{-n}(x) over the sampled x.
    h: greedy separated subset of a uniform grid (default spacing 1/(4 L^n)).
    h_i: greedy separated family of preimage trees of depth n over a grid
    of roots, under the branch-Hausdorff distance.
    """
    if isinstance(f, Action):
        if f.k != 1:
            raise ValueError("hurley_check is for a single map")
        f = f.generators[0]
    T = Action([f])
    sp = f.space
    if not isinstance(sp, Circle):
        raise ValueError("hurley_check supports circle maps")
    mult = preimage_count(f)
    hm_count = 0
    for x in sample_points:
        tree = build_tree(T, x, "all", n, budget=10**7)
        leaves = np.array([[float(z)] for z in tree.leaves()])
        hm_count = max(hm_count, _bowen_count(_forward(f, leaves, n), epsilon, sp.diam))
    if grid is None:
        grid = 1.0 / (4 * max(mult, 2) ** n)
    g = grid_size(grid)
    x0 = (np.arange(g) / g)[:, None]
    h_count = _bowen_count(_forward(f, x0, n), epsilon, sp.diam)
    tg = grid_size(tree_grid)
    trees = [build_tree(T, Fraction(j, tg), "all", n, budget=10**7) for j in range(tg)]
    roots = [float(Fraction(j, tg)) for j in range(tg)]
    kept = _greedy_trees(trees, epsilon, [0.0] * tg, lambda a, b: circle_dist(roots[a], roots[b]))
    hi_count = len(kept)
    return HurleyReport(n, epsilon, math.log(hm_count) / n, math.log(h_count) / n, math.log(hi_count) / n,
                        {"h_m": hm_count, "h": h_count, "h_i": hi_count, "grid": g, "tree_grid": tg})
