"""Walk-matrix spectra, brute-force edge expansion, Cheeger and mixing checks.

Graphs are symmetric incidence matrices: A[i, j] counts edge endpoints from i
to j, so parallel edges add up and a self-loop adds 1 to its diagonal entry.
Row sums are degrees and the random-walk matrix is D^-1 A.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .pcycle import PCycle

DENSE_LIMIT = 512
RESIDUAL_TOL = 1e-8
MAX_POWER_ITERATIONS = 400_000
BRUTE_FORCE_LIMIT = 22


class NotConnected(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


class TooLarge(ValueError):
    pass


class NotRegular(ValueError):
    pass


@dataclass(frozen=True)
class Multigraph:
    adjacency: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]]) -> "Multigraph":
        a = np.zeros((n, n))
        for u, v in edges:
            if u == v:
                a[u, u] += 1
            else:
                a[u, v] += 1
                a[v, u] += 1
        return cls(a)

    @classmethod
    def from_neighbor_lists(cls, rows: Sequence[Sequence[int]]) -> "Multigraph":
        n = len(rows)
        a = np.zeros((n, n))
        for u, row in enumerate(rows):
            for v in row:
                a[u, v] += 1
        if not np.array_equal(a, a.T):
            raise ValueError("neighbour lists are not symmetric")
        return cls(a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def relabeled(self, perm: Sequence[int]) -> "Multigraph":
        """Vertex i of the result is vertex perm[i] of self."""
        idx = np.asarray(perm)
        return Multigraph(self.adjacency[np.ix_(idx, idx)])

    def is_connected(self) -> bool:
        n = self.n
        if n == 0:
            return False
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        nz = self.adjacency > 0
        while frontier:
            reached = nz[frontier].any(axis=0) & ~seen
            seen |= reached
            frontier = np.flatnonzero(reached).tolist()
        return bool(seen.all())


def pcycle_graph(cycle: PCycle) -> Multigraph:
    return Multigraph.from_neighbor_lists([cycle.neighbors(x) for x in range(cycle.p)])


def complete_graph(n: int) -> Multigraph:
    return Multigraph(np.ones((n, n)) - np.eye(n))


def cycle_graph(n: int) -> Multigraph:
    return Multigraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def hypercube_graph(dim: int) -> Multigraph:
    n = 1 << dim
    return Multigraph.from_edges(n, [(v, v ^ (1 << b)) for v in range(n) for b in range(dim) if v < v ^ (1 << b)])


@dataclass(frozen=True)
class WalkMatrixSpectrum:
    lambda2: float
    method: str
    residual: float

    @property
    def gap(self) -> float:
        return 1.0 - self.lambda2


def _normalized(g: Multigraph) -> Tuple[np.ndarray, np.ndarray]:
    deg = g.degrees
    if (deg <= 0).any():
        raise NotConnected("graph has an isolated vertex")
    s = 1.0 / np.sqrt(deg)
    return g.adjacency * s[:, None] * s[None, :], np.sqrt(deg)


def walk_spectrum(g: Multigraph) -> np.ndarray:
    """All eigenvalues of D^-1 A in ascending order (dense)."""
    n_mat, _ = _normalized(g)
    return np.linalg.eigvalsh(n_mat)


def _dense(g: Multigraph) -> WalkMatrixSpectrum:
    vals = walk_spectrum(g)
    return WalkMatrixSpectrum(float(vals[-2]), "Dense", abs(float(vals[-1]) - 1.0))


def _power(g: Multigraph, tol: float, max_iter: int) -> WalkMatrixSpectrum:
    n_mat, top = _normalized(g)
    top = top / np.linalg.norm(top)
    n = g.n
    # fixed start vector so results are reproducible
    x = np.cos(np.arange(n) * 1.618033988749895 + 0.5)
    x -= top * (top @ x)
    norm = np.linalg.norm(x)
    if norm == 0:
        x = np.zeros(n)
        x[0] = 1.0
        x -= top * (top @ x)
        norm = np.linalg.norm(x)
    x /= norm
    use_sparse = n > 64
    if use_sparse:
        from scipy.sparse import csr_matrix

        op = csr_matrix(n_mat)
    else:
        op = n_mat
    res = math.inf
    for _ in range(max_iter):
        y = op @ x
        mu = float(x @ y)
        res = float(np.linalg.norm(y - mu * x))
        if res <= tol:
            return WalkMatrixSpectrum(mu, "PowerIteration", res)
        # iterate on (N + I) / 2 so the largest remaining eigenvalue dominates
        x = y + x
        x -= top * (top @ x)
        x /= np.linalg.norm(x)
    raise ConvergenceFailure(f"residual {res:.3g} after {max_iter} iterations")


def second_eigenvalue(
    g: Multigraph,
    method: Optional[str] = None,
    tol: float = RESIDUAL_TOL,
    max_iter: int = MAX_POWER_ITERATIONS,
) -> WalkMatrixSpectrum:
    if g.n == 1:
        return WalkMatrixSpectrum(0.0, "Dense", 0.0)
    if g.n == 0 or not g.is_connected():
        raise NotConnected("graph is not connected")
    if method is None:
        method = "dense" if g.n <= DENSE_LIMIT else "power"
    if method == "dense":
        return _dense(g)
    if method == "power":
        return _power(g, tol, max_iter)
    raise ValueError(f"unknown method {method!r}")


def second_largest_magnitude(g: Multigraph) -> float:
    """max(|lambda_2|, |lambda_min|) of the walk matrix."""
    vals = walk_spectrum(g)
    return float(max(abs(vals[-2]), abs(vals[0])))


def _is_regular(g: Multigraph) -> int:
    deg = g.degrees
    if not np.all(deg == deg[0]):
        raise NotRegular("graph is not regular")
    return int(deg[0])


def edge_expansion_bruteforce(g: Multigraph) -> float:
    """min |E(S, S^c)| / |S| over non-empty S with |S| <= n/2."""
    n = g.n
    if n > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{n} vertices exceeds brute-force limit {BRUTE_FORCE_LIMIT}")
    if n < 2:
        raise ValueError("need at least two vertices")
    a = g.adjacency
    deg = g.degrees
    bits = np.arange(n)
    best = math.inf
    chunk = 1 << 15
    total = 1 << n
    for start in range(1, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        member = ((masks[:, None] >> bits[None, :]) & 1).astype(float)
        size = member.sum(axis=1)
        keep = size <= n / 2
        if not keep.any():
            continue
        member = member[keep]
        size = size[keep]
        inside = np.einsum("ij,jk,ik->i", member, a, member)
        cut = member @ deg - inside
        best = min(best, float((cut / size).min()))
    return best


@dataclass(frozen=True)
class CheegerReport:
    ok: bool
    lambda2: float
    h: float
    degree: int
    lower: float
    upper: float

    @property
    def h_normalized(self) -> float:
        return self.h / self.degree


def cheeger_check(g: Multigraph, slack: float = 1e-8) -> CheegerReport:
    """(1 - lambda)/2 <= h/d <= sqrt(2(1 - lambda)) for d-regular g.

    The walk-matrix lambda lives on the [-1, 1] scale, so the expansion is
    divided by the degree to put both sides on the same scale.
    """
    if g.n > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{g.n} vertices exceeds brute-force limit {BRUTE_FORCE_LIMIT}")
    d = _is_regular(g)
    lam = second_eigenvalue(g, method="dense").lambda2
    h = edge_expansion_bruteforce(g)
    lower = (1 - lam) / 2
    upper = math.sqrt(2 * max(0.0, 1 - lam))
    hn = h / d
    ok = lower - slack <= hn <= upper + slack
    return CheegerReport(ok, lam, h, d, lower, upper)


def mixing_violation(a: np.ndarray, d: int, lam: float, s: np.ndarray, t: np.ndarray) -> float:
    """LHS - RHS of the expander mixing lemma for indicator vectors s, t."""
    n = a.shape[0]
    e_st = float(s @ a @ t)
    ns, nt = float(s.sum()), float(t.sum())
    lhs = abs(e_st - d * ns * nt / n)
    rhs = lam * d * math.sqrt(ns * nt)
    return lhs - rhs


@dataclass(frozen=True)
class MixingReport:
    max_violation: float
    lambda_abs: float
    lambda2: float
    trials: int


def mixing_check(cycle: PCycle, trials: int, rng: np.random.Generator) -> MixingReport:
    g = pcycle_graph(cycle)
    d = _is_regular(g)
    vals = walk_spectrum(g)
    lam_abs = float(max(abs(vals[-2]), abs(vals[0])))
    a = g.adjacency
    worst = -math.inf
    for _ in range(trials):
        ps, pt = rng.random(2)
        s = (rng.random(g.n) < ps).astype(float)
        t = (rng.random(g.n) < pt).astype(float)
        worst = max(worst, mixing_violation(a, d, lam_abs, s, t))
    return MixingReport(worst, lam_abs, float(vals[-2]), trials)
