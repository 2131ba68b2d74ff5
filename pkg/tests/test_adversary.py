import pytest

from healnet.adversary import (
    FLOOR,
    STRATEGIES,
    BatchChurn,
    BatchDelete,
    BatchInsert,
    Delete,
    IllegalAction,
    Insert,
    Scripted,
    format_action,
    make_strategy,
    parse_action,
    validate,
)
from healnet.protocol import SIMPLIFIED, STAGGERED_TICK, Overlay, ProtocolConfig


def test_registry_names():
    assert set(STRATEGIES) == {
        "uniform-churn",
        "insert-only",
        "delete-only",
        "max-degree-attack",
        "coordinator-attack",
        "spare-drain",
        "oscillator",
        "batch-churn",
    }
    with pytest.raises(ValueError):
        make_strategy("chaos")
    with pytest.raises(ValueError):
        make_strategy("insert-only:3")


@pytest.mark.parametrize("name", sorted(STRATEGIES))
def test_strategies_only_emit_legal_actions(name):
    ov = Overlay.bootstrap(16, seed=3)
    adv = make_strategy(name, seed=3)
    for _ in range(300):
        a = adv.next_action(ov)  # validates
        ov.apply(a)
        assert ov.n >= FLOOR


def test_validate_rejects_bad_actions():
    ov = Overlay.bootstrap(8)
    with pytest.raises(IllegalAction):
        validate(Insert(3, 0), ov)
    with pytest.raises(IllegalAction):
        validate(Insert(50, 99), ov)
    with pytest.raises(IllegalAction):
        validate(Delete(99), ov)
    with pytest.raises(IllegalAction):
        validate(BatchDelete((0, 1, 2, 3, 4)), ov)  # leaves 3 < floor


def test_insert_only_from_all_loads_one_inflates_at_once():
    ov = Overlay(list(range(23)), ProtocolConfig(type2_mode="Simplified"))
    rep = ov.apply(make_strategy("insert-only").next_action(ov))
    assert rep.recovery_type == SIMPLIFIED


def test_delete_only_forces_deflation_within_n_steps():
    ov = Overlay.bootstrap(600, ProtocolConfig(type2_mode="Simplified"), seed=1)
    adv = make_strategy("delete-only", seed=1)
    p0 = ov.p
    for _ in range(600):
        ov.apply(adv.next_action(ov))
        if ov.p < p0:
            break
    assert ov.p < p0


def test_coordinator_attack_targets_vertex_zero_host():
    ov = Overlay.bootstrap(32, seed=1)
    adv = make_strategy("coordinator-attack:0", seed=1)
    a = adv.next_action(ov)
    assert a == Delete(ov.coordinator_host())


def test_max_degree_attack_targets_highest_degree():
    ov = Overlay.bootstrap(32, seed=1)
    adv = make_strategy("max-degree-attack:0", seed=1)
    a = adv.next_action(ov)
    assert ov.net.degree(a.node) == max(ov.net.degree(u) for u in ov.nodes)


def test_batch_churn_respects_constraints():
    ov = Overlay.bootstrap(200, seed=2)
    adv = BatchChurn(eps=0.05, seed=2)
    for _ in range(20):
        a = adv.next_action(ov)
        if isinstance(a, BatchDelete):
            assert len(a.nodes) == max(1, int(0.05 * ov.n))
        else:
            assert isinstance(a, BatchInsert)
        ov.apply(a)
        assert ov.net.connected()


def test_oscillator_flips_direction():
    ov = Overlay.bootstrap(16, ProtocolConfig(type2_mode="Simplified"), seed=1)
    adv = make_strategy("oscillator", seed=1)
    kinds = []
    for _ in range(1500):
        a = adv.next_action(ov)
        kinds.append(a.kind)
        ov.apply(a)
    assert "insert" in kinds and "delete" in kinds
    assert kinds.index("delete") > 0


def test_script_roundtrip():
    lines = ["insert 10 1", "delete 3", "batch-insert 11:0 12:1", "batch-delete 4 5", "# comment", ""]
    s = Scripted(lines)
    assert [format_action(a) for a in s.actions] == lines[:4]
    assert parse_action("insert 7 2") == Insert(7, 2)
    with pytest.raises(IllegalAction):
        parse_action("teleport 3")
    with pytest.raises(IllegalAction):
        parse_action("insert x 2")


def test_script_exhaustion():
    s = Scripted(["insert 16 0"])
    ov = Overlay.bootstrap(16)
    ov.apply(s.next_action(ov))
    assert s.exhausted()
    with pytest.raises(IllegalAction):
        s.next_action(ov)
