import math
from collections import deque
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from healnet.pcycle import (
    DeflationPlan,
    DomainError,
    InflationPlan,
    InvalidModulus,
    NoPrimeInRange,
    PCycle,
    deflate_dominator_of,
    deflate_image,
    deflated_prime,
    dominators,
    inflate_cloud,
    inflate_owner_of,
    inflated_prime,
    initial_prime,
    is_prime,
    mod_inverse,
    pcycle,
    smallest_prime_in,
)

# max diameter(Z(p)) / log2(p) over primes 5..2003, from an independent all-pairs BFS
C_D = 1.7595272769128556
PRIMES = [p for p in range(5, 2004) if is_prime(p)]


def bfs_diameter(cycle):
    best = 0
    for s in range(cycle.p):
        dist = {s: 0}
        q = deque([s])
        while q:
            x = q.popleft()
            for y in cycle.neighbors(x):
                if y not in dist:
                    dist[y] = dist[x] + 1
                    q.append(y)
        best = max(best, max(dist.values()))
    return best


def test_smallest_prime_examples():
    assert smallest_prime_in(20, 40) == 23
    assert smallest_prime_in(2, 4) == 3
    assert smallest_prime_in(92, 184) == 97
    with pytest.raises(NoPrimeInRange):
        smallest_prime_in(24, 29)


def test_prime_intervals_are_exact_for_fractions():
    # (23/8, 23/4) = (2.875, 5.75): the least prime is 3
    assert deflated_prime(23) == 3
    assert smallest_prime_in(Fraction(9, 2), Fraction(7, 1)) == 5
    assert initial_prime(64) == 257
    assert inflated_prime(5) == 23


def test_mod_inverse_examples():
    assert mod_inverse(1, 23) == 1
    assert mod_inverse(2, 23) == 12
    assert mod_inverse(22, 23) == 22
    with pytest.raises(DomainError):
        mod_inverse(0, 23)


def test_constructor_rejects_non_primes():
    for bad in (4, 9, 3, 1):
        with pytest.raises(InvalidModulus):
            PCycle(bad)


def test_neighbor_examples():
    z = pcycle(23)
    assert sorted(z.neighbors(0)) == [0, 1, 22]
    assert sorted(z.neighbors(2)) == [1, 3, 12]
    assert sorted(z.neighbors(1)) == [0, 1, 2]


def test_shortest_path_examples():
    z = pcycle(23)
    assert z.shortest_path(0, 1) == [0, 1]
    assert z.shortest_path(2, 12) == [2, 12]
    assert z.shortest_path(7, 7) == [7]


def test_diameter_goldens():
    assert pcycle(5).diameter == 2
    assert pcycle(7).diameter == 3
    assert pcycle(23).diameter == 5
    for p in (5, 7, 11, 23, 101):
        assert pcycle(p).diameter == bfs_diameter(pcycle(p))


def test_diameter_growth_bound():
    for p in PRIMES:
        assert pcycle(p).diameter <= C_D * math.log2(p) + 1e-12


def test_inflation_examples():
    assert inflate_cloud(1, 5, 23) == [4, 5, 6, 7, 8]
    assert inflate_cloud(0, 5, 23)[0] == 0
    assert [len(inflate_cloud(x, 5, 23)) for x in range(5)] == [4, 5, 4, 5, 5]
    assert inflate_owner_of(6, 5, 23) == 1
    assert inflate_owner_of(0, 5, 23) == 0
    for y in range(23):
        assert y in inflate_cloud(inflate_owner_of(y, 5, 23), 5, 23)


def test_deflation_examples():
    assert deflate_image(8, 23, 3) == 1
    assert deflate_image(0, 23, 3) == 0
    assert deflate_image(22, 23, 3) == 2
    assert dominators(23, 3) == [0, 8, 16]
    plan = DeflationPlan(23, 3)
    assert [x for x in range(23) if plan.is_dominator(x)] == [0, 8, 16]
    assert plan.anchored(8) == [1] and plan.anchored(9) == []


def test_edges_count_once():
    for p in (5, 23, 101):
        z = pcycle(p)
        edges = z.edges()
        assert len(edges) == z.edge_count == (3 * p + 3) // 2
        # every vertex has degree 3 when a self-loop counts once
        deg = [0] * p
        for a, b in edges:
            deg[a] += 1
            if a != b:
                deg[b] += 1
        assert deg == [3] * p


def test_edge_ids_roundtrip():
    z = pcycle(29)
    for x in range(29):
        for eid in z.incident_edge_ids(x):
            assert x in z.edge_endpoints(eid)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(PRIMES[:120]), st.data())
def test_structure_properties(p, data):
    z = pcycle(p)
    x = data.draw(st.integers(0, p - 1))
    nb = z.neighbors(x)
    assert len(nb) == 3
    for y in nb:
        assert x in z.neighbors(y)  # symmetric
    if x:
        assert mod_inverse(mod_inverse(x, p), p) == x
    assert (z.bfs_distances(0) >= 0).all()


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([p for p in PRIMES if p <= 200]))
def test_inflation_partition(p_old):
    p_new = inflated_prime(p_old)
    seen = []
    for x in range(p_old):
        cloud = inflate_cloud(x, p_old, p_new)
        assert 1 <= len(cloud) <= 8
        assert all(inflate_owner_of(y, p_old, p_new) == x for y in cloud)
        seen += cloud
    assert sorted(seen) == list(range(p_new))


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([p for p in PRIMES if p >= 23]))
def test_deflation_surjection(p_old):
    p_new = deflated_prime(p_old)
    images = [deflate_image(x, p_old, p_new) for x in range(p_old)]
    assert sorted(set(images)) == list(range(p_new))
    sizes = [images.count(y) for y in range(p_new)]
    assert max(sizes) <= 8
    for y in range(p_new):
        assert images.index(y) == deflate_dominator_of(y, p_old, p_new)


def test_plan_anchors():
    ip = InflationPlan(5, 23)
    assert ip.kind == "inflate"
    assert all(ip.anchor(y) == inflate_owner_of(y, 5, 23) for y in range(23))
    dp = DeflationPlan(101, 17)
    for y in range(17):
        assert dp.anchored(dp.anchor(y)) == [y]
