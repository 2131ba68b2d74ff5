import pytest

from healnet.simnet import (
    CounterRng,
    Message,
    Network,
    NetworkWalkSpace,
    RecoveryStalled,
    RoundLedger,
    Route,
    RouteBroken,
    VirtualWalkSpace,
    WalkToken,
    broadcast,
    flood_aggregate,
    log2ceil,
    route_batch,
    run_walks,
    stall_cap,
)
from healnet.mapping import VirtualMapping
from healnet.pcycle import pcycle


def path_net(n):
    net = Network(range(n))
    for i in range(n - 1):
        net.adjust(i, i + 1, 1)
    return net


def test_counter_rng_is_order_free():
    rng = CounterRng(42)
    a = [rng.below(10, 7, s) for s in range(50)]
    b = [CounterRng(42).below(10, 7, s) for s in range(50)]
    assert a == b
    assert all(0 <= v < 10 for v in a)
    assert rng.u64(1, 2) != rng.u64(2, 1)
    assert 0 <= rng.uniform(3) < 1


def test_message_payload_bound():
    Message("x", (1,) * 8)
    with pytest.raises(AssertionError):
        Message("x", (1,) * 9)


def test_link_multiplicity_and_flips():
    net = Network([1, 2])
    net.begin_step()
    net.adjust(1, 2, 2)
    net.adjust(1, 2, -1)
    assert net.has_link(1, 2) and net.multiplicity(1, 2) == 1
    assert net.end_step() == (1, 0)
    with pytest.raises(ValueError):
        net.adjust(1, 2, -5)


def test_end_step_ignores_excluded_nodes():
    net = path_net(3)
    net.begin_step()
    net.remove_node(2)
    net.adjust(0, 1, -1)
    assert net.end_step(exclude={2}) == (0, 1)


def test_route_single_hop():
    net = path_net(2)
    led = RoundLedger()
    route_batch(net, [Route([0, 1], 0)], led)
    assert led.total_rounds == 1 and led.total_messages == 1


def test_route_contention_delays_one_round():
    net = path_net(3)
    led = RoundLedger()
    route_batch(net, [Route([0, 1, 2], 0, 0), Route([1, 2], 1, 0)], led)
    # both want 1->2 in round 1; the second in (sender, seq) order waits
    assert [r.messages for r in led.rounds] == [2, 1]


def test_route_over_missing_link():
    with pytest.raises(RouteBroken):
        route_batch(path_net(3), [Route([0, 2], 0)], RoundLedger())


def test_virtual_route_over_inverse_edge():
    # in Z(23) vertices 2 and 12 are adjacent, so their hosts are one hop apart
    host = [0] * 23
    host[12] = 1
    net = Network([0, 1])
    VirtualMapping(pcycle(23), host, sink=net.adjust, nodes=[0, 1])
    path = [host[z] for z in pcycle(23).shortest_path(2, 12)]
    led = RoundLedger()
    route_batch(net, [Route(path, 0)], led)
    assert led.total_rounds == 1


def test_walk_stops_when_predicate_holds():
    net = path_net(2)
    tok = WalkToken(1, "FindSpare", 0, 0, step_budget=10, round_budget=100, accept=lambda u: u == 1)
    run_walks([tok], NetworkWalkSpace(net), CounterRng(0), RoundLedger())
    assert tok.found and tok.steps == 1 and tok.position == 1


def test_walk_freezes_after_budget():
    net = path_net(4)
    tok = WalkToken(1, "FindLow", 0, 0, step_budget=7, round_budget=100, accept=lambda u: False)
    run_walks([tok], NetworkWalkSpace(net), CounterRng(0), RoundLedger())
    assert tok.done and not tok.found and tok.steps == 7


def test_walk_respects_exclusion():
    net = Network([0, 1, 2])
    net.adjust(0, 1, 1)
    net.adjust(0, 2, 1)
    tok = WalkToken(1, "FindSpare", 0, 0, 50, 500, accept=lambda u: False, excluded=frozenset({2}))
    seen = set()
    space = NetworkWalkSpace(net)

    class Spy(NetworkWalkSpace):
        def host(self, position):
            seen.add(position)
            return position

    run_walks([tok], Spy(net), CounterRng(5), RoundLedger())
    assert 2 not in seen


def test_virtual_walk_local_steps_are_free():
    # one node hosts everything: a virtual walk never crosses a link
    tok = WalkToken(1, "Rebalance", 0, 0, 30, 100)
    led = RoundLedger()
    run_walks([tok], VirtualWalkSpace(pcycle(23).neighbors, lambda z: 0), CounterRng(1), led, stop_early=False)
    assert tok.steps == 30 and led.total_messages == 0


def test_flood_counts():
    net = path_net(7)
    led = RoundLedger()
    res = flood_aggregate(net, 0, lambda u: u % 2 == 0, led)
    assert (res.n, res.count) == (7, 4)
    assert res.rounds == 2 * 6
    assert res.messages == 2 * net.link_count()
    assert led.total_messages == res.messages


def test_flood_single_node():
    res = flood_aggregate(Network([5]), 5, lambda u: True, RoundLedger())
    assert (res.n, res.count, res.rounds) == (1, 1, 0)


def test_broadcast_and_ledger_accounting():
    net = path_net(5)
    led = RoundLedger()
    res = broadcast(net, 2, led)
    assert res.n == 5
    assert sum(r.messages for r in led.rounds) == led.total_messages


def test_round_cap():
    led = RoundLedger(cap=3)
    led.extend([1, 1, 1])
    with pytest.raises(RecoveryStalled):
        led.tick(1)


def test_stall_cap_formula():
    assert log2ceil(1024) == 10
    assert stall_cap(1024) == 64 * 1000
    assert stall_cap(2) == 64 * 8
