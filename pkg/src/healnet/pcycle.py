"""Prime-cycle expanders Z(p) and the integer maps used to grow and shrink them.

Z(p) has vertices 0..p-1.  Every vertex x is joined to x-1 and x+1 (mod p) and
to its multiplicative inverse; vertex 0 carries a self-loop instead, and so do
the two self-inverse vertices 1 and p-1.  Every vertex therefore has degree
exactly 3 when a self-loop counts once.

All arithmetic here is exact integer arithmetic.  Floating point never decides
which vertex lands in which cloud.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import List, Tuple, Union

import numpy as np

Number = Union[int, Fraction]


class NoPrimeInRange(ValueError):
    pass


class DomainError(ValueError):
    pass


class InvalidModulus(ValueError):
    pass


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def smallest_prime_in(lo: Number, hi: Number) -> int:
    """Least prime q with lo < q < hi (open interval, exact for rationals)."""
    start = math.floor(lo) + 1
    stop = math.ceil(hi) - 1
    for q in range(max(start, 2), stop + 1):
        if is_prime(q):
            return q
    raise NoPrimeInRange(f"no prime in ({lo}, {hi})")


def initial_prime(n0: int) -> int:
    return smallest_prime_in(4 * n0, 8 * n0)


def inflated_prime(p: int) -> int:
    return smallest_prime_in(4 * p, 8 * p)


def deflated_prime(p: int) -> int:
    return smallest_prime_in(Fraction(p, 8), Fraction(p, 4))


def mod_inverse(x: int, p: int) -> int:
    if x % p == 0:
        raise DomainError("0 has no multiplicative inverse")
    return pow(x, -1, p)


# Edge ids: cycle edge {x, x+1} has id x, inverse edge {x, x^-1} (x < x^-1) has
# id p + x.  Self-loops get no id because they never produce a network link.


class PCycle:
    def __init__(self, p: int):
        if p < 5 or not is_prime(p):
            raise InvalidModulus(f"{p} is not a prime >= 5")
        self.p = p

    def __repr__(self) -> str:
        return f"PCycle({self.p})"

    def __eq__(self, other) -> bool:
        return isinstance(other, PCycle) and other.p == self.p

    def __hash__(self) -> int:
        return hash(("PCycle", self.p))

    @cached_property
    def inverses(self) -> List[int]:
        p = self.p
        inv = [0] * p
        for x in range(1, p):
            inv[x] = pow(x, -1, p)
        return inv

    @cached_property
    def table(self) -> np.ndarray:
        """p x 3 array of neighbours (x-1, x+1, inverse or self)."""
        x = np.arange(self.p)
        return np.stack([(x - 1) % self.p, (x + 1) % self.p, np.array(self.inverses)], axis=1)

    def inverse(self, x: int) -> int:
        return mod_inverse(x, self.p)

    def neighbors(self, x: int) -> Tuple[int, int, int]:
        p = self.p
        return ((x - 1) % p, (x + 1) % p, self.inverses[x])

    def degree(self, x: int) -> int:
        return len(self.neighbors(x))

    def edges(self) -> List[Tuple[int, int]]:
        """Every virtual edge exactly once; self-loops appear as (x, x)."""
        p = self.p
        out = [(x, (x + 1) % p) for x in range(p)]
        for x in range(1, p):
            y = self.inverses[x]
            if x < y:
                out.append((x, y))
        out.extend([(0, 0), (1, 1), (p - 1, p - 1)])
        return out

    @property
    def edge_count(self) -> int:
        return (3 * self.p + 3) // 2

    # edge-id helpers used for incremental link bookkeeping
    @property
    def num_edge_ids(self) -> int:
        return 2 * self.p

    def incident_edge_ids(self, x: int) -> List[int]:
        p = self.p
        ids = [x, (x - 1) % p]
        y = self.inverses[x]
        if x != 0 and y != x:
            ids.append(p + min(x, y))
        return ids

    def edge_endpoints(self, eid: int) -> Tuple[int, int]:
        p = self.p
        if eid < p:
            return eid, (eid + 1) % p
        x = eid - p
        return x, self.inverses[x]

    def bfs_distances(self, src: int) -> np.ndarray:
        p = self.p
        dist = np.full(p, -1, dtype=np.int64)
        dist[src] = 0
        frontier = np.array([src])
        d = 0
        tab = self.table
        while frontier.size:
            d += 1
            nxt = np.unique(tab[frontier].ravel())
            nxt = nxt[dist[nxt] < 0]
            dist[nxt] = d
            frontier = nxt
        return dist

    @lru_cache(maxsize=256)
    def distances_to(self, b: int) -> np.ndarray:
        """Cached read-only BFS distances to b."""
        d = self.bfs_distances(b)
        d.setflags(write=False)
        return d

    def distance(self, a: int, b: int) -> int:
        return int(self.distances_to(b)[a])

    def path_with(self, a: int, dist_to_b: np.ndarray) -> List[int]:
        """Shortest path from a given distances to the target.

        Ties go to the smallest-index next hop at every step, so the path is the
        lexicographically least among all shortest paths.
        """
        path = [a]
        cur = a
        while dist_to_b[cur] > 0:
            want = dist_to_b[cur] - 1
            cur = min(y for y in self.neighbors(cur) if dist_to_b[y] == want)
            path.append(cur)
        return path

    def shortest_path(self, a: int, b: int) -> List[int]:
        return self.path_with(a, self.distances_to(b))

    @cached_property
    def diameter(self) -> int:
        """Exact diameter by breadth-first search from every vertex at once.

        Row s of `reach` holds the vertices within the current radius of s; one
        BFS level is a gather along the three neighbour columns.
        """
        p = self.p
        reach = np.eye(p, dtype=bool)
        tab = self.table
        radius = 0
        while not reach.all():
            reach = reach | reach[:, tab[:, 0]] | reach[:, tab[:, 1]] | reach[:, tab[:, 2]]
            radius += 1
        return radius


@lru_cache(maxsize=64)
def pcycle(p: int) -> PCycle:
    return PCycle(p)


def _check_pair(p_old: int, p_new: int) -> None:
    if p_old <= 0 or p_new <= 0:
        raise InvalidModulus("moduli must be positive")


def inflate_cloud(x: int, p_old: int, p_new: int) -> List[int]:
    """Vertices of Z(p_new) that replace x of Z(p_old), p_new > p_old."""
    _check_pair(p_old, p_new)
    if not 0 <= x < p_old:
        raise DomainError(f"{x} not a vertex of Z({p_old})")
    first = p_new * x // p_old
    last = p_new * (x + 1) // p_old
    return [(first + k) % p_new for k in range(last - first)]


def inflate_owner_of(y: int, p_old: int, p_new: int) -> int:
    """The x whose cloud contains y: the largest x with floor(p_new*x/p_old) <= y."""
    _check_pair(p_old, p_new)
    if not 0 <= y < p_new:
        raise DomainError(f"{y} not a vertex of Z({p_new})")
    return ((y + 1) * p_old - 1) // p_new


def deflate_image(x: int, p_old: int, p_new: int) -> int:
    if not 0 <= x < p_old:
        raise DomainError(f"{x} not a vertex of Z({p_old})")
    return x * p_new // p_old


def deflate_dominator_of(y: int, p_old: int, p_new: int) -> int:
    """Smallest x of Z(p_old) mapped onto y."""
    if not 0 <= y < p_new:
        raise DomainError(f"{y} not a vertex of Z({p_new})")
    return -(-y * p_old // p_new)


def dominators(p_old: int, p_new: int) -> List[int]:
    return [deflate_dominator_of(y, p_old, p_new) for y in range(p_new)]


@dataclass(frozen=True)
class InflationPlan:
    """Z(p_old) -> Z(p_new) by replacing every vertex with its cloud."""

    p_old: int
    p_new: int

    @property
    def kind(self) -> str:
        return "inflate"

    def anchor(self, y: int) -> int:
        return inflate_owner_of(y, self.p_old, self.p_new)

    def anchored(self, x: int) -> List[int]:
        return inflate_cloud(x, self.p_old, self.p_new)


@dataclass(frozen=True)
class DeflationPlan:
    """Z(p_old) -> Z(p_new), keeping only the smallest preimage of each new vertex."""

    p_old: int
    p_new: int

    @property
    def kind(self) -> str:
        return "deflate"

    def anchor(self, y: int) -> int:
        return deflate_dominator_of(y, self.p_old, self.p_new)

    def is_dominator(self, x: int) -> bool:
        y = deflate_image(x, self.p_old, self.p_new)
        return self.anchor(y) == x

    def anchored(self, x: int) -> List[int]:
        y = deflate_image(x, self.p_old, self.p_new)
        return [y] if self.anchor(y) == x else []
