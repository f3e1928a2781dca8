"""The orbit space X_T, its shift, the skew product, and separated/spanning estimators.

Orbit points are truncated: an initial point plus an itinerary word.  The
estimators work on :class:`CandidateSet` batches (numpy arrays of realized
orbits) and decide separation conservatively, so every reported separated
set is separated in the true orbit metric and every spanning set really
spans the candidates.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .actions import Action, CircleLinear, CircleRotation, Generic, TorusMatrix, commutes
from .spaces import check_symbols, circle_dist

__all__ = [
    "BudgetExceeded",
    "InsufficientDepth",
    "DEFAULT_BUDGET",
    "OrbitPoint",
    "SkewPoint",
    "EntropyEstimate",
    "CandidateSet",
    "truncation_depth",
    "grid_size",
    "shift",
    "skew_apply",
    "project_pi",
    "enumerate_candidates",
    "separated_indices",
    "spanning_indices",
    "max_separated",
    "min_spanning",
    "estimate_entropy",
    "estimate_traditional_entropy",
    "growth_rate",
]

DEFAULT_BUDGET = 300_000

# pairs are scored in chunks to bound memory
_CHUNK = 400_000
# at most this many orbit coordinates feed the KD-tree prefilter
_MAX_KD_COLS = 8
_ALL_PAIRS_LIMIT = 20_000


class BudgetExceeded(RuntimeError):
    """The requested candidate set or tree is larger than the budget."""


class InsufficientDepth(ValueError):
    """Orbit points are too short for a rigorous decision at this (n, epsilon)."""


@dataclass(frozen=True)
class OrbitPoint:
    """A truncated element of the orbit space: ``x0`` plus a 1-based itinerary."""

    action: Action
    x0: object
    itinerary: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x0", self.action.space.normalize(self.x0))
        object.__setattr__(self, "itinerary", check_symbols(self.itinerary, self.action.k))

    @property
    def depth(self) -> int:
        return len(self.itinerary) + 1

    @cached_property
    def _orbit(self) -> tuple:
        return self.action.orbit(self.x0, self.itinerary)

    def orbit(self) -> tuple:
        return self._orbit

    def __eq__(self, other):
        return (isinstance(other, OrbitPoint) and self.action == other.action
                and self.itinerary == other.itinerary and self.x0 == other.x0)

    def __hash__(self):
        return hash((self.itinerary, self.x0))


@dataclass(frozen=True)
class SkewPoint:
    """A point (word, x) of the skew-product space Sigma_k x X."""

    word: tuple
    x: object

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(int(s) for s in self.word))


@dataclass
class EntropyEstimate:
    n: int
    epsilon: float
    count: int
    rate: float
    conservative: bool = True
    grid: float | None = None
    candidates: int | None = None
    sampled: bool = False
    elapsed_ms: float | None = None
    kind: str = "separated"

    def __post_init__(self):
        if self.count < 1 or self.rate < 0:
            raise ValueError("count must be >= 1 and rate >= 0")


def truncation_depth(epsilon: float, diam: float = 0.5) -> int:
    """K(eps) = ceil(log2(diam / eps)): orbit terms past n + K change distances by < eps."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return max(0, math.ceil(math.log2(diam / epsilon) - 1e-12))


def grid_size(grid_spacing: float) -> int:
    if grid_spacing <= 0:
        raise ValueError("grid spacing must be positive")
    return max(1, math.ceil(1.0 / grid_spacing - 1e-9))


def _rate(count: int, n: int) -> float:
    return math.log(count) / n


# ---------------------------------------------------------------------------
# shift, skew product, projection
# ---------------------------------------------------------------------------

def shift(p: OrbitPoint) -> OrbitPoint:
    """The shift on the orbit space: drop x0 and the first itinerary symbol."""
    if p.depth < 2:
        raise ValueError("cannot shift an orbit point of depth < 2")
    return OrbitPoint(p.action, p.orbit()[1], p.itinerary[1:])


def skew_apply(T: Action, s: SkewPoint) -> SkewPoint:
    """(i_0 i_1 ..., x) -> (i_1 ..., T_{i_0} x)."""
    if not s.word:
        raise ValueError("skew product needs a nonempty word")
    return SkewPoint(s.word[1:], T[s.word[0]](s.x))


def project_pi(T: Action, s: SkewPoint, depth: int | None = None) -> OrbitPoint:
    """Project a skew point to the orbit it generates, truncated to ``depth``."""
    if depth is None:
        depth = len(s.word) + 1
    if depth < 1 or len(s.word) < depth - 1:
        raise ValueError(f"word of length {len(s.word)} too short for depth {depth}")
    return OrbitPoint(T, s.x, s.word[: depth - 1])


# ---------------------------------------------------------------------------
# candidate sets
# ---------------------------------------------------------------------------

class CandidateSet:
    """A batch of orbit points with a common depth, stored as arrays.

    Candidates are kept sorted lexicographically by (itinerary, x0); greedy
    packing visits them in that order.

    Attributes
    ----------
    action : the action
    itineraries : (N, depth-1) int array of 0-based generator indices
    orbits : (N, depth, dim) float array of realized orbits
    """

    def __init__(self, action: Action, itineraries: np.ndarray, orbits: np.ndarray,
                 sampled: bool = False, presorted: bool = False):
        orbits = np.asarray(orbits, dtype=float)
        if orbits.ndim == 2:
            orbits = orbits[:, :, None]
        itineraries = np.asarray(itineraries, dtype=np.int16).reshape(len(orbits), -1)
        if itineraries.shape[1] != orbits.shape[1] - 1:
            raise ValueError("itinerary length must be depth - 1")
        if not presorted and len(orbits) > 1:
            keys = [orbits[:, 0, d] for d in reversed(range(orbits.shape[2]))]
            keys += [itineraries[:, c] for c in reversed(range(itineraries.shape[1]))]
            order = np.lexsort(keys)
            orbits, itineraries = orbits[order], itineraries[order]
        self.action = action
        self.itineraries = itineraries
        self.orbits = orbits
        self.sampled = sampled

    @classmethod
    def from_points(cls, points: Iterable[OrbitPoint]) -> "CandidateSet":
        pts = list(points)
        if not pts:
            raise ValueError("empty candidate set")
        T, depth = pts[0].action, pts[0].depth
        for p in pts:
            if p.depth != depth:
                raise ValueError("candidates must share one depth")
            if p.action.space != T.space:
                raise ValueError("candidates live on different spaces")
        sp = T.space
        orbits = np.array([[sp.as_array(x) for x in p.orbit()] for p in pts])
        its = np.array([[s - 1 for s in p.itinerary] for p in pts], dtype=np.int16).reshape(len(pts), depth - 1)
        return cls(T, its, orbits)

    @property
    def depth(self) -> int:
        return self.orbits.shape[1]

    def __len__(self):
        return len(self.orbits)

    def __getitem__(self, i) -> OrbitPoint:
        x0 = self.action.space.from_array(self.orbits[i, 0])
        return OrbitPoint(self.action, x0, tuple(int(s) + 1 for s in self.itineraries[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def _itinerary_array(k: int, length: int, budget_words: int | None, seed: int):
    total = k**length
    if budget_words is None or budget_words >= total:
        if length == 0:
            return np.zeros((1, 0), dtype=np.int16), False
        words = np.array(list(itertools.product(range(k), repeat=length)), dtype=np.int16)
        return words, False
    rng = np.random.default_rng(seed)
    if total < 2**62:
        idx = np.sort(rng.choice(total, size=budget_words, replace=False))
        words = np.empty((budget_words, length), dtype=np.int16)
        for c in reversed(range(length)):
            words[:, c] = idx % k
            idx //= k
    else:
        words = rng.integers(0, k, size=(budget_words, length), dtype=np.int16)
        words = np.unique(words, axis=0)
    return words, True


def _grid_points(space, g: int) -> np.ndarray:
    axis = np.arange(g) / g
    if space.dim == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * space.dim), indexing="ij")
    return np.stack(mesh, -1).reshape(-1, space.dim)


def _realize(T: Action, x0: np.ndarray, words: np.ndarray) -> np.ndarray:
    """Orbits for every (word, x0) pair, word-major order."""
    W, G, dim = len(words), len(x0), x0.shape[1]
    depth = words.shape[1] + 1
    X = np.empty((W * G, depth, dim))
    X[:, 0] = np.tile(x0, (W, 1))
    sym = np.repeat(words, G, axis=0)
    for t in range(depth - 1):
        cur = X[:, t]
        nxt = np.empty_like(cur)
        for i, g in enumerate(T.generators):
            mask = sym[:, t] == i
            if mask.any():
                nxt[mask] = _apply_block(g, cur[mask])
        X[:, t + 1] = nxt
    return X, sym


def _apply_block(g, block: np.ndarray) -> np.ndarray:
    if block.shape[1] == 1 and not isinstance(g, TorusMatrix):
        return g.apply_array(block[:, 0])[:, None]
    return g.apply_array(block)


def enumerate_candidates(T: Action, depth: int, grid_spacing: float, budget: int = DEFAULT_BUDGET,
                         sample_itineraries: bool = False, seed: int = 0) -> CandidateSet:
    """All orbit points with x0 on the uniform grid and every itinerary of length depth-1.

    When the full set exceeds ``budget`` a :class:`BudgetExceeded` is raised,
    unless ``sample_itineraries`` is set: then a seeded uniform sample of
    itineraries is used, as many as fit the budget.  Any subset of the orbit
    space still yields genuinely separated sets, so the certified-lower-bound
    reading of the estimate survives sampling.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    g = grid_size(grid_spacing)
    G = g**T.space.dim
    total = T.k ** (depth - 1) * G
    words_cap = None
    if total > budget:
        if not sample_itineraries or budget < G:
            raise BudgetExceeded(
                f"{T.k}^{depth - 1} itineraries x {G} grid points = {total} candidates exceeds budget {budget}")
        words_cap = budget // G
    words, sampled = _itinerary_array(T.k, depth - 1, words_cap, seed)
    X, sym = _realize(T, _grid_points(T.space, g), words)
    return CandidateSet(T, sym, X, sampled=sampled, presorted=True)


# ---------------------------------------------------------------------------
# greedy packing / covering engine
# ---------------------------------------------------------------------------

def _tails(depth: int, n: int, diam: float) -> np.ndarray:
    return np.array([diam * 2.0 ** (1 - (depth - s)) for s in range(n)])


def _coordinate_bounds(thr: np.ndarray, depth: int) -> np.ndarray:
    """Largest d(x_j, y_j) compatible with value_s <= thr_s for every s < n."""
    n = len(thr)
    B = np.full(depth, np.inf)
    for j in range(depth):
        for s in range(min(j, n - 1) + 1):
            B[j] = min(B[j], thr[s] * 2.0 ** (j - s))
    return B


def _near_pairs(orbits: np.ndarray, bounds: np.ndarray, diam: float, prefer=None) -> np.ndarray:
    """Superset of the index pairs (i < j) with d(x_c, y_c) <= bounds[c] on every coordinate c.

    ``prefer`` orders the coordinates offered to the KD-tree prefilter
    (default: tightest bound first).
    """
    N = len(orbits)
    if prefer is None:
        prefer = np.argsort(bounds, kind="stable")
    cols = [c for c in prefer if bounds[c] < diam][:_MAX_KD_COLS]
    if not cols:
        if N > _ALL_PAIRS_LIMIT:
            raise BudgetExceeded(f"no prefilter available and {N} candidates is too many for all pairs")
        return np.array(np.triu_indices(N, 1)).T
    cols = sorted(cols)
    dim = orbits.shape[2]
    box = np.repeat(1.0 / bounds[cols], dim)
    data = np.mod(orbits[:, cols, :].reshape(N, -1) * box, box)
    tree = cKDTree(data, boxsize=box)
    pairs = tree.query_pairs(1.0 + 1e-9, p=np.inf, output_type="ndarray")
    return pairs.reshape(-1, 2)


def _shift_values(orbits: np.ndarray, I: np.ndarray, J: np.ndarray, n: int) -> np.ndarray:
    """Truncated orbit-metric distances of sigma^s a, sigma^s b for s < n, shape (P, n)."""
    D = circle_dist(orbits[I], orbits[J]).max(axis=2)
    depth = D.shape[1]
    V = np.zeros(len(I))
    out = np.empty((len(I), n))
    for s in range(depth - 1, -1, -1):
        V = D[:, s] + 0.5 * V
        if s < n:
            out[:, s] = V
    return out


def _greedy_from_edges(N: int, edges: np.ndarray) -> list:
    """Visit 0..N-1 in order; keep a node unless an earlier kept node is adjacent."""
    if len(edges) == 0:
        return list(range(N))
    both = np.concatenate([edges, edges[:, ::-1]])
    order = np.argsort(both[:, 0], kind="stable")
    nbr = both[order, 1].tolist()
    indptr = np.searchsorted(both[order, 0], np.arange(N + 1)).tolist()
    dead = bytearray(N)
    kept = []
    for i in range(N):
        if dead[i]:
            continue
        kept.append(i)
        for j in nbr[indptr[i]:indptr[i + 1]]:
            dead[j] = 1
    return kept


def _conflict_edges(orbits: np.ndarray, n: int, epsilon: float, diam: float, mode: str) -> np.ndarray:
    depth = orbits.shape[1]
    tails = _tails(depth, n, diam)
    thr = epsilon + tails
    pairs = _near_pairs(orbits, _coordinate_bounds(thr, depth), diam)
    keep = []
    for a in range(0, len(pairs), _CHUNK):
        P = pairs[a:a + _CHUNK]
        V = _shift_values(orbits, P[:, 0], P[:, 1], n)
        if mode == "separated":
            # not certainly separated at any shift
            bad = np.all(V <= thr, axis=1)
        else:
            # certainly within epsilon at every shift
            bad = np.all(V + tails <= epsilon, axis=1)
        keep.append(P[bad])
    return np.concatenate(keep) if keep else np.empty((0, 2), dtype=int)


def _as_candidates(points) -> CandidateSet:
    if isinstance(points, CandidateSet):
        return points
    return CandidateSet.from_points(points)


def _check_depth(C: CandidateSet, n: int, epsilon: float):
    if n < 1:
        raise ValueError("n must be >= 1")
    need = n + truncation_depth(epsilon, C.action.space.diam)
    if C.depth < need:
        raise InsufficientDepth(f"depth {C.depth} < n + K(eps) = {need}")


def separated_indices(points, n: int, epsilon: float) -> list:
    """Indices of a greedy (n, eps)-separated subset, decided conservatively.

    A pair counts as separated only when some shift s < n has truncated
    distance greater than eps plus the truncation tail.
    """
    C = _as_candidates(points)
    _check_depth(C, n, epsilon)
    edges = _conflict_edges(C.orbits, n, epsilon, C.action.space.diam, "separated")
    return _greedy_from_edges(len(C), edges)


def spanning_indices(points, n: int, epsilon: float) -> list:
    """Indices of greedy centers that (n, eps)-span the candidate set."""
    C = _as_candidates(points)
    _check_depth(C, n, epsilon)
    edges = _conflict_edges(C.orbits, n, epsilon, C.action.space.diam, "spanning")
    return _greedy_from_edges(len(C), edges)


def max_separated(points, n: int, epsilon: float) -> EntropyEstimate:
    """Greedy maximal (n, eps)-separated set; log(count)/n bounds the packing rate from below."""
    C = _as_candidates(points)
    count = len(separated_indices(C, n, epsilon))
    return EntropyEstimate(n, epsilon, count, _rate(count, n), candidates=len(C), sampled=C.sampled)


def min_spanning(points, n: int, epsilon: float) -> EntropyEstimate:
    """Greedy (n, eps)-spanning set of the candidates; its size bounds the minimal cover from above."""
    C = _as_candidates(points)
    count = len(spanning_indices(C, n, epsilon))
    return EntropyEstimate(n, epsilon, count, _rate(count, n), candidates=len(C),
                           sampled=C.sampled, kind="spanning")


def _schedule_rows(schedule):
    rows = []
    for row in schedule:
        if isinstance(row, dict):
            n, eps, grid = row["n"], row["epsilon"], row["grid"]
        else:
            n, eps, grid = row
        rows.append((int(n), float(eps), float(grid)))
    if not rows:
        raise ValueError("empty schedule")
    return rows


def estimate_entropy(T: Action, schedule: Sequence, budget: int = DEFAULT_BUDGET,
                     sample_itineraries: bool = False, seed: int = 0, threads: int = 1) -> list:
    """One separated-set estimate per (n, eps, grid) schedule row.

    Candidates have depth n + K(eps).  Rows are independent and may run on a
    thread pool; results keep the schedule order.
    """
    rows = _schedule_rows(schedule)

    def run(row):
        n, eps, grid = row
        t0 = time.perf_counter()
        depth = n + truncation_depth(eps, T.space.diam)
        C = enumerate_candidates(T, depth, grid, budget, sample_itineraries, seed)
        est = max_separated(C, n, eps)
        est.grid = grid
        est.elapsed_ms = 1000.0 * (time.perf_counter() - t0)
        return est

    if threads > 1 and len(rows) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, rows))
    return [run(r) for r in rows]


def growth_rate(prev: EntropyEstimate, cur: EntropyEstimate) -> float:
    """log(count ratio)/(n difference) between two estimates at one (eps, grid).

    This difference quotient cancels the eps-dependent prefactor of the
    separated count, which dominates log(count)/n at small n.
    """
    if prev.epsilon != cur.epsilon or prev.grid != cur.grid or cur.n <= prev.n:
        raise ValueError("growth rate needs increasing n at matched eps and grid")
    return math.log(cur.count / prev.count) / (cur.n - prev.n)


def _cube_orbits(T: Action, n: int, x0: np.ndarray) -> np.ndarray:
    """T^i x0 for every i in {0..n-1}^k, shape (N, n**k, dim)."""
    k = T.k
    cube = list(itertools.product(range(n), repeat=k))
    index = {c: m for m, c in enumerate(cube)}
    out = np.empty((len(x0), len(cube), x0.shape[1]))
    out[:, 0] = x0
    for m, c in enumerate(cube[1:], start=1):
        # step from the predecessor along the last nonzero axis
        r = max(i for i in range(k) if c[i] > 0)
        prev = list(c)
        prev[r] -= 1
        out[:, m] = _apply_block(T.generators[r], out[:, index[tuple(prev)]])
    return out


def estimate_traditional_entropy(T: Action, n: int, epsilon: float, grid: float,
                                 budget: int = 50_000_000) -> EntropyEstimate:
    """Separated count over the cube {0..n-1}^k of composite maps; rate log(count)/n^k."""
    for g in T.generators:
        if isinstance(g, Generic):
            raise ValueError("cube orbits need commuting generators; Generic maps are rejected")
    for a, b in itertools.combinations(T.generators, 2):
        if not commutes(a, b):
            raise ValueError(f"generators {a!r} and {b!r} do not commute")
    if n < 1 or epsilon <= 0:
        raise ValueError("need n >= 1 and epsilon > 0")
    t0 = time.perf_counter()
    g = grid_size(grid)
    x0 = _grid_points(T.space, g)
    work = T.k * n**T.k * len(x0)
    if work > budget:
        raise BudgetExceeded(f"{work} map evaluations exceed budget {budget}")
    Y = _cube_orbits(T, n, x0)
    bounds = np.full(Y.shape[1], float(epsilon))
    # the most expanded cube corners discriminate best
    cube = list(itertools.product(range(n), repeat=T.k))
    prefer = sorted(range(len(cube)), key=lambda m: -sum(cube[m]))
    pairs = _near_pairs(Y, bounds, T.space.diam, prefer)
    keep = []
    for a in range(0, len(pairs), _CHUNK):
        P = pairs[a:a + _CHUNK]
        D = circle_dist(Y[P[:, 0]], Y[P[:, 1]]).max(axis=(1, 2))
        keep.append(P[D <= epsilon])
    edges = np.concatenate(keep) if keep else np.empty((0, 2), dtype=int)
    count = len(_greedy_from_edges(len(Y), edges))
    return EntropyEstimate(n, epsilon, count, math.log(count) / n**T.k, grid=grid,
                           candidates=len(Y), elapsed_ms=1000.0 * (time.perf_counter() - t0),
                           kind="traditional")
