"""Slow, independent reference implementations used to check the fast code paths."""

import itertools
import math
from fractions import Fraction

import numpy as np

from orbitentropy.orbit_space import shift
from orbitentropy.spaces import orbit_dist


def separated_pair(a, b, n, eps):
    """Separated at some shift s < n, with the tail handled by TruncatedDistance."""
    for _ in range(n):
        if orbit_dist(a, b).exceeds(eps):
            return True
        if a.depth < 2:
            break
        a, b = shift(a), shift(b)
    return False


def greedy_separated(points, n, eps):
    kept = []
    for p in points:
        if all(separated_pair(p, q, n, eps) for q in kept):
            kept.append(p)
    return kept


def exhaustive_max_separated(points, n, eps):
    m = len(points)
    sep = [[i != j and separated_pair(points[i], points[j], n, eps) for j in range(m)] for i in range(m)]
    for size in range(m, 0, -1):
        for subset in itertools.combinations(range(m), size):
            if all(sep[i][j] for i, j in itertools.combinations(subset, 2)):
                return size
    return 0


def torus_preimages_by_search(A, x):
    """All y on the grid of spacing 1/(q |det A|) with A y = x mod 1, q the common denominator of x.

    Any preimage is A^{-1}(x + v) with v integer, so its denominators divide q |det A|.
    """
    A = np.array(A, dtype=object)
    n = len(A)
    det = abs(int(round(np.linalg.det(np.array(A, dtype=float)))))
    x = tuple(Fraction(c) for c in x)
    q = math.lcm(*[c.denominator for c in x])
    N = q * det
    out = set()
    for idx in itertools.product(range(N), repeat=n):
        y = tuple(Fraction(i, N) for i in idx)
        img = tuple(sum(A[r][c] * y[c] for c in range(n)) % 1 for r in range(n))
        if img == x:
            out.add(y)
    return out


def dense_spectral_radius(M):
    return float(max(abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def dense_parry(M):
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eig(M)
    i = int(np.argmax(w.real))
    rho = w[i].real
    v = np.abs(V[:, i].real)
    wl, U = np.linalg.eig(M.T)
    u = np.abs(U[:, int(np.argmax(wl.real))].real)
    P = M * v[None, :] / (rho * v[:, None])
    mu = u * v / (u @ v)
    return rho, P, mu


def log_sum(L):
    return math.log(sum(L))
