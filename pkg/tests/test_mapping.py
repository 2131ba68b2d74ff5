import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from healnet.mapping import (
    NotOwner,
    QuotientGraph,
    UnknownNode,
    VirtualMapping,
    balanced_hosts,
    check_metric_map,
    contraction_check,
    mapping_from_snapshot,
    read_snapshot,
    verify_mapping,
)
from healnet.pcycle import pcycle
from healnet.simnet import Network

# 7 nodes over Z(23) with loads (4,4,3,3,3,3,3)
FIG_LOADS = (4, 4, 3, 3, 3, 3, 3)


def fig_hosts():
    out = []
    for u, k in enumerate(FIG_LOADS):
        out += [u] * k
    return out


def make(host, nodes=None):
    net = Network(sorted(set(host)) if nodes is None else nodes)
    m = VirtualMapping(pcycle(len(host)), host, sink=net.adjust, nodes=net.nodes)
    return m, net


def test_loads_and_sets():
    m, _ = make(fig_hosts())
    assert m.load(0) == 4 and m.load(6) == 3
    assert len(m.spare_set()) == 7 and len(m.low_set()) == 7
    ident, _ = make(list(range(23)))
    assert ident.spare_set() == set() and ident.low_set() == set(range(23))


def test_load_17_is_not_low():
    host = [0] * 17 + list(range(1, 7))
    m, _ = make(host)
    assert m.load(0) == 17 and 0 not in m.low_set()


def test_transfer_conserves_and_rewires():
    m, net = make(fig_hosts())
    before = (m.load(0), m.load(6))
    delta = m.transfer_vertex(2, 0, 6)
    assert (m.load(0), m.load(6)) == (before[0] - 1, before[1] + 1)
    assert sum(m.loads().values()) == 23
    # vertex 2 now lives at 6; its neighbours are 1, 3 and 12
    for y in (1, 3, 12):
        h = m.host[y]
        if h != 6:
            assert net.has_link(6, h)
    assert all(kind in ("add", "remove") for kind, _, _ in delta)


def test_transfer_to_self_is_noop():
    m, _ = make(fig_hosts())
    assert m.transfer_vertex(0, 0, 0) == []


def test_transfer_errors():
    m, _ = make(fig_hosts())
    with pytest.raises(NotOwner):
        m.transfer_vertex(0, 1, 2)
    with pytest.raises(UnknownNode):
        m.transfer_vertex(0, 0, 99)


def test_transfer_between_adjacent_nodes_keeps_link():
    m, net = make(fig_hosts())
    assert net.has_link(0, 1)
    delta = m.transfer_vertex(3, 0, 1)  # vertex 3 sits at the 0|1 boundary
    assert net.has_link(0, 1)
    assert all((a, b) != (0, 1) for _, a, b in delta)


def test_links_match_network():
    m, net = make(fig_hosts())
    assert m.links() == net.links()
    for a, b in m.links():
        assert net.multiplicity(a, b) == m.link_multiplicity(a, b)


def test_quotient_identity_is_the_cycle():
    m, _ = make(list(range(23)))
    q = m.quotient()
    z = pcycle(23)
    for a, b in z.edges():
        assert q.edge_multiplicity(a, b) >= 1
    assert all(q.degree(u) == 3 for u in range(23))


def test_quotient_single_node():
    m, _ = make([0] * 23)
    q = m.quotient()
    assert q.edge_multiplicity(0, 0) == (3 * 23 + 3) // 2
    assert q.degree(0) == 3 * 23


def test_quotient_degree_law():
    m, _ = make(fig_hosts())
    q = m.quotient()
    for u, k in enumerate(FIG_LOADS):
        assert q.degree(u) == 3 * k


def test_verify_examples():
    m, _ = make(list(range(23)))
    assert verify_mapping(m) == []
    orphan = VirtualMapping(pcycle(23), fig_hosts(), nodes=range(8))
    assert [v.kind for v in verify_mapping(orphan)] == ["surjectivity"]
    heavy = VirtualMapping(pcycle(37), [0] * 33 + [1, 2, 3, 4])
    kinds = [v.kind for v in verify_mapping(heavy)]
    assert kinds == ["load"]
    assert verify_mapping(heavy, "staggering") == []


def test_metric_map_and_contraction():
    m, net = make(balanced_hosts(101, list(range(20))))
    assert check_metric_map(m, net, 200, np.random.default_rng(0)) == []
    ok, lq, lz = contraction_check(m)
    assert ok and lq <= lz


def test_snapshot_roundtrip():
    m, _ = make(fig_hosts())
    text = m.snapshot(12)
    p, step, host = read_snapshot(text)
    assert (p, step, host) == (23, 12, fig_hosts())
    step, m2 = mapping_from_snapshot(text)
    assert m2.host == m.host


def test_detach_withdraws_links():
    m, net = make(fig_hosts())
    m.detach()
    assert net.link_count() == 0
    m.attach(net.adjust)
    assert m.links() == net.links()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 22), st.integers(0, 6)), max_size=40))
def test_conservation_under_random_transfers(moves):
    m, net = make(fig_hosts())
    for z, dst in moves:
        m.transfer_vertex(z, m.host[z], dst)
    assert sum(m.loads().values()) == 23
    for z, u in enumerate(m.host):
        assert z in m.sim[u]
    assert m.links() == net.links()
    fresh = VirtualMapping(pcycle(23), m.host)
    assert fresh.links() == m.links()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=53, max_size=53))
def test_contraction_lemma_random_hosts(host):
    nodes = sorted(set(host))
    m = VirtualMapping(pcycle(53), host, nodes=nodes)
    q = m.quotient()
    for u in nodes:
        assert q.degree(u) == 3 * m.load(u)
    ok, _, _ = contraction_check(m)
    assert ok


def test_from_pairs_loop_weights():
    q = QuotientGraph.from_pairs([(0, 0, True), (0, 0, False), (0, 1, False)])
    assert q.adjacency[0, 0] == 3
    assert q.degree(1) == 1
