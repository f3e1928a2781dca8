"""The subshift of finite type coding an expanding circle action.

Boxes are pairs (generator i, interval [j/M, (j+1)/M]) with M = prod(L).  The
transition matrix records which boxes the skew product maps over which;
its spectral radius is sum(L), so the shift has entropy log sum(L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order

from .actions import circle_action
from .orbit_space import BudgetExceeded, OrbitPoint

__all__ = [
    "BoxLabel",
    "TransitionMatrix",
    "PerronData",
    "MarkovMeasure",
    "PiTilde",
    "NotConverged",
    "InadmissiblePath",
    "DEFAULT_SFT_BUDGET",
    "validate_multipliers",
    "build_matrix_block",
    "build_matrix_geometric",
    "is_irreducible",
    "perron_root",
    "sft_entropy",
    "parry_measure",
    "sample_parry_path",
    "pi_tilde",
    "images_coincide",
    "injectivity_probe",
    "semiconjugacy_holds",
]

# upper limit on the number of boxes k*M
DEFAULT_SFT_BUDGET = 20_000


class NotConverged(RuntimeError):
    """Power iteration hit its cap; the partial result is attached."""

    def __init__(self, msg, data=None):
        super().__init__(msg)
        self.data = data


class InadmissiblePath(ValueError):
    pass


@dataclass(frozen=True)
class BoxLabel:
    i: int
    j: int
    M: int

    @property
    def l(self) -> int:
        return (self.i - 1) * self.M + self.j + 1

    @classmethod
    def from_linear(cls, l: int, M: int, k: int) -> "BoxLabel":
        if not 1 <= l <= k * M:
            raise ValueError(f"label {l} outside 1..{k * M}")
        i, j = divmod(l - 1, M)
        return cls(i + 1, j, M)

    def interval(self) -> tuple:
        return Fraction(self.j, self.M), Fraction(self.j + 1, self.M)


class TransitionMatrix:
    """A boolean kM x kM matrix stored as scipy CSR, with its box labels."""

    def __init__(self, A, L: Sequence[int]):
        self.A = sparse.csr_matrix(A, dtype=np.int8)
        self.A.sort_indices()
        self.L = tuple(L)
        self.M = math.prod(self.L)
        if self.A.shape != (self.size, self.size):
            raise ValueError(f"matrix shape {self.A.shape} does not match kM = {self.size}")
        if self.A.nnz and self.A.data.max() > 1:
            raise ValueError("entries must be boolean")

    @property
    def k(self) -> int:
        return len(self.L)

    @property
    def size(self) -> int:
        return self.k * self.M

    @property
    def labels(self) -> list:
        return [BoxLabel.from_linear(l, self.M, self.k) for l in range(1, self.size + 1)]

    def row(self, l: int) -> set:
        """1-based column indices with A(l, t) = 1."""
        r = self.A.getrow(l - 1)
        return set((r.indices + 1).tolist())

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.A.sum(axis=0)).ravel()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.A.sum(axis=1)).ravel()

    def dense(self) -> np.ndarray:
        return self.A.toarray()

    def check(self) -> None:
        """Raise unless every column sums to sum(L) and the matrix is irreducible."""
        cs = self.column_sums()
        if not np.all(cs == sum(self.L)):
            raise ValueError(f"column sums {sorted(set(cs.tolist()))} differ from {sum(self.L)}")
        if not is_irreducible(self):
            raise ValueError("transition matrix is reducible")

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix) or other.A.shape != self.A.shape:
            return False
        return (self.A != other.A).nnz == 0

    def to_coordinate_list(self) -> str:
        """Size line, then one 1-indexed "row col" pair per nonzero entry."""
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [str(self.size)]
        lines += [f"{r + 1} {c + 1}" for r, c in zip(coo.row[order], coo.col[order])]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_coordinate_list(cls, text: str, L: Sequence[int]) -> "TransitionMatrix":
        lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        size = int(lines[0][0])
        rc = np.array([[int(a) - 1, int(b) - 1] for a, b in lines[1:]], dtype=int).reshape(-1, 2)
        A = sparse.coo_matrix((np.ones(len(rc), dtype=np.int8), (rc[:, 0], rc[:, 1])), shape=(size, size))
        return cls(A, L)


def validate_multipliers(L: Sequence[int], budget: int = DEFAULT_SFT_BUDGET) -> tuple:
    L = tuple(L)
    if not L:
        raise ValueError("need at least one multiplier")
    for v in L:
        if int(v) != v or v < 2:
            raise ValueError(f"multipliers must be integers >= 2, got {v!r}")
    L = tuple(int(v) for v in L)
    if len(set(L)) != len(L):
        raise ValueError(f"multipliers must be pairwise distinct, got {L}")
    size = len(L) * math.prod(L)
    if size > budget:
        raise BudgetExceeded(f"kM = {size} boxes exceeds budget {budget}")
    return L


def build_matrix_block(L: Sequence[int], budget: int = DEFAULT_SFT_BUDGET) -> TransitionMatrix:
    """Assemble A from row blocks Q_s, each P_s tiled L_s times down and k times across."""
    L = validate_multipliers(L, budget)
    k, M = len(L), math.prod(L)
    blocks = []
    for Ls in L:
        h = M // Ls
        rows = np.repeat(np.arange(h), Ls)
        cols = np.arange(M)
        P = sparse.csr_matrix((np.ones(M, dtype=np.int8), (rows, cols)), shape=(h, M))
        Q = sparse.hstack([sparse.vstack([P] * Ls)] * k)
        blocks.append(Q)
    return TransitionMatrix(sparse.vstack(blocks).tocsr(), L)


def build_matrix_geometric(L: Sequence[int], budget: int = DEFAULT_SFT_BUDGET) -> TransitionMatrix:
    """A(s, t) = 1 iff T_i maps the interval of box s over the interior of box t's interval."""
    L = validate_multipliers(L, budget)
    k, M = len(L), math.prod(L)
    rows, cols = [], []
    for i, Li in enumerate(L):
        for j in range(M):
            s = i * M + j
            # image of [j/M, (j+1)/M] is [Li j/M, Li (j+1)/M] mod 1, a union of Li cells
            lo, hi = Fraction(Li * j, M), Fraction(Li * (j + 1), M)
            for c in range(M):
                for lift in range(Li + 1):
                    a, b = Fraction(c, M) + lift, Fraction(c + 1, M) + lift
                    if lo <= a and b <= hi:
                        for i2 in range(k):
                            rows.append(s)
                            cols.append(i2 * M + c)
                        break
    A = sparse.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(k * M, k * M))
    return TransitionMatrix(A, L)


def is_irreducible(A) -> bool:
    """Strong connectivity via a forward and a backward BFS from node 0."""
    if isinstance(A, TransitionMatrix):
        mat = A.A
    elif sparse.issparse(A):
        mat = sparse.csr_matrix(A != 0)
    else:
        mat = sparse.csr_matrix(np.asarray(A) != 0)
    n = mat.shape[0]
    if n == 0:
        return False
    fwd = breadth_first_order(mat, 0, directed=True, return_predecessors=False)
    if len(fwd) != n:
        return False
    bwd = breadth_first_order(mat.T.tocsr(), 0, directed=True, return_predecessors=False)
    return len(bwd) == n


@dataclass(frozen=True)
class PerronData:
    rho: float
    right_vec: np.ndarray
    left_vec: np.ndarray
    residual: float
    iterations: int
    converged: bool = True


def _power(mat, tol: float, max_iter: int):
    n = mat.shape[0]
    v = np.ones(n) / n
    prev = None
    rho = 0.0
    for it in range(1, max_iter + 1):
        w = mat @ v
        rho = float(v @ w / (v @ v))
        ratios = w / v
        # Collatz-Wielandt bracket: min ratio <= rho(A) <= max ratio
        bracket = ratios.max() - ratios.min()
        s = w.sum()
        if s <= 0:
            raise ValueError("matrix annihilates the positive vector")
        w /= s
        # averaging with the previous iterate damps periodic oscillation
        w = 0.5 * (w + v)
        if prev is not None and abs(rho - prev) < tol and bracket < 1e-10 * max(rho, 1.0):
            return rho, w, it, True
        prev, v = rho, w
    return rho, v, max_iter, False


def perron_root(A, tol: float = 1e-12, max_iter: int = 100_000) -> PerronData:
    """Spectral radius and positive eigenvectors by power iteration from the all-ones vector."""
    mat = (A.A if isinstance(A, TransitionMatrix) else sparse.csr_matrix(A)).astype(float)
    if not is_irreducible(A if isinstance(A, TransitionMatrix) else mat):
        raise ValueError("Perron data needs an irreducible matrix")
    rho_r, v, it_r, ok_r = _power(mat, tol, max_iter)
    rho_l, u, it_l, ok_l = _power(mat.T.tocsr(), tol, max_iter)
    v, u = v / v.sum(), u / u.sum()
    # two-sided Rayleigh quotient: error quadratic in the eigenvector errors
    rho = float(u @ (mat @ v) / (u @ v))
    residual = float(max(np.abs(mat @ v - rho * v).max(), np.abs(mat.T @ u - rho * u).max()))
    data = PerronData(rho, v, u, residual, max(it_r, it_l), ok_r and ok_l)
    if not data.converged:
        raise NotConverged(f"power iteration did not converge in {max_iter} steps (residual {residual:.3g})", data)
    if np.any(v <= 0) or np.any(u <= 0):
        raise ValueError("Perron vectors are not entrywise positive")
    return data


def sft_entropy(L: Sequence[int], budget: int = DEFAULT_SFT_BUDGET) -> float:
    return math.log(perron_root(build_matrix_block(L, budget)).rho)


@dataclass(frozen=True)
class MarkovMeasure:
    P: sparse.csr_matrix
    stationary: np.ndarray
    rho: float
    A: TransitionMatrix | None = None

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def row_sum_error(self) -> float:
        return float(np.abs(np.asarray(self.P.sum(axis=1)).ravel() - 1.0).max())

    def stationary_residual(self) -> float:
        return float(np.abs(self.P.T @ self.stationary - self.stationary).max())

    def entropy_rate(self) -> float:
        coo = self.P.tocoo()
        terms = -self.stationary[coo.row] * coo.data * np.log(coo.data)
        return float(math.fsum(terms))


def parry_measure(A) -> MarkovMeasure:
    """The maximal-entropy Markov chain: P(s,t) = A(s,t) v_t / (rho v_s), mu ~ u * v."""
    tm = A if isinstance(A, TransitionMatrix) else None
    mat = (A.A if tm is not None else sparse.csr_matrix(A)).astype(float).tocsr()
    pd = perron_root(A)
    v, u, rho = pd.right_vec, pd.left_vec, pd.rho
    coo = mat.tocoo()
    data = coo.data * v[coo.col] / (rho * v[coo.row])
    P = sparse.csr_matrix((data, (coo.row, coo.col)), shape=mat.shape)
    # renormalize rows so that the floating rho error does not leak into stochasticity
    rs = np.asarray(P.sum(axis=1)).ravel()
    P = sparse.diags(1.0 / rs) @ P
    mu = u * v
    mu /= mu.sum()
    return MarkovMeasure(P.tocsr(), mu, rho, tm)


def sample_parry_path(m: MarkovMeasure, length: int, seed: int = 0) -> tuple:
    """A stationary chain path of the given length, as 1-based box labels."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    P = m.P
    cum = [np.cumsum(P.data[P.indptr[s]:P.indptr[s + 1]]) for s in range(m.size)]
    s = int(np.searchsorted(np.cumsum(m.stationary), rng.random() * m.stationary.sum(), side="right"))
    s = min(s, m.size - 1)
    path = [s]
    for _ in range(length - 1):
        c = cum[s]
        r = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        s = int(P.indices[P.indptr[s] + min(r, len(c) - 1)])
        path.append(s)
    return tuple(p + 1 for p in path)


@dataclass(frozen=True)
class PiTilde:
    """Image of a finite admissible path: the orbit point and its enclosing interval."""

    point: OrbitPoint
    interval: tuple
    path: tuple

    @property
    def width(self) -> Fraction:
        return self.interval[1] - self.interval[0]


def pi_tilde(path: Sequence[int], L: Sequence[int]) -> PiTilde:
    """Nested-interval image of an admissible box path, in exact rationals.

    x0 is the midpoint of I_m, the set of points whose orbit under the
    generators read off the path visits the listed intervals.  The itinerary
    has one symbol per transition, so the result has depth len(path).
    """
    L = validate_multipliers(L, budget=10**12)
    k, M = len(L), math.prod(L)
    path = tuple(int(p) for p in path)
    if not path:
        raise InadmissiblePath("empty path")
    boxes = [BoxLabel.from_linear(p, M, k) for p in path]
    for a, b in zip(boxes, boxes[1:]):
        if not _admissible(a, b, L[a.i - 1], M):
            raise InadmissiblePath(f"transition {a.l} -> {b.l} is not allowed")
    lo, hi = boxes[-1].interval()
    for box in reversed(boxes[:-1]):
        Li = L[box.i - 1]
        # lift the target cell into the real image of the box, then pull back
        lift = _lift(lo, Li, box.j, M)
        lo, hi = (lo + lift) / Li, (hi + lift) / Li
        blo, bhi = box.interval()
        if not (blo <= lo and hi <= bhi):
            raise InadmissiblePath("nested intervals left their box")
    x0 = (lo + hi) / 2
    T = circle_action(*L)
    point = OrbitPoint(T, x0, tuple(b.i for b in boxes[:-1]))
    return PiTilde(point, (lo, hi), path)


def _lift(lo: Fraction, Li: int, j: int, M: int) -> int:
    """Integer n with lo + n inside the real image [Li j / M, Li (j+1) / M)."""
    start = Fraction(Li * j, M)
    n = math.ceil(start - lo)
    if lo + n >= Fraction(Li * (j + 1), M):
        raise InadmissiblePath("target cell is outside the image")
    return n


def _admissible(a: BoxLabel, b: BoxLabel, Li: int, M: int) -> bool:
    return (b.j - Li * a.j) % M < Li


def images_coincide(a: PiTilde, b: PiTilde) -> bool:
    """Same itinerary and nested intervals overlapping in more than an endpoint.

    Intervals touching only at an endpoint lie on the cell grid {i/M}; those
    grid hits are the countable exceptional set and are not counted.
    """
    if a.point.itinerary != b.point.itinerary:
        return False
    lo = max(a.interval[0], b.interval[0])
    hi = min(a.interval[1], b.interval[1])
    return lo < hi


def injectivity_probe(m: MarkovMeasure, L: Sequence[int], samples: int, length: int, seed: int = 0) -> float:
    """Fraction of sampled path pairs (distinct seeds) with coinciding images."""
    if samples < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=samples)
    images = [pi_tilde(sample_parry_path(m, length, int(s)), L) for s in seeds]
    pairs = hits = 0
    for a in range(samples):
        for b in range(a + 1, samples):
            pairs += 1
            if images[a].path != images[b].path and images_coincide(images[a], images[b]):
                hits += 1
    return hits / pairs


def semiconjugacy_holds(path: Sequence[int], L: Sequence[int]) -> bool:
    """Check sigma_T(pi~(z)) = pi~(shift(z)) up to the width of the nested intervals.

    The two orbit points must share their itinerary, and x_1 of the first
    must lie in the interval that defines the second.
    """
    if len(path) < 2:
        raise ValueError("path must have length >= 2")
    whole = pi_tilde(path, L)
    tail = pi_tilde(path[1:], L)
    orbit = whole.point.orbit()
    if whole.point.itinerary[1:] != tail.point.itinerary:
        return False
    x1 = orbit[1]
    lo, hi = tail.interval
    return lo <= x1 <= hi and abs(x1 - tail.point.x0) <= tail.width
