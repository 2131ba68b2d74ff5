"""Adaptive adversaries that choose which node joins or leaves at every step.

A strategy sees the whole overlay (topology, mapping, coordinator) but draws
its own randomness from a separate seeded stream, so it never peeks at the
walks the protocol is about to make.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING, ClassVar, Dict, List, Optional, Sequence, Set, Tuple, Union

if TYPE_CHECKING:
    from .protocol import Overlay

log = logging.getLogger(__name__)

FLOOR = 4


class IllegalAction(ValueError):
    pass


@dataclass(frozen=True)
class Insert:
    node: int
    anchor: int
    kind: ClassVar[str] = "insert"


@dataclass(frozen=True)
class Delete:
    node: int
    kind: ClassVar[str] = "delete"


@dataclass(frozen=True)
class BatchInsert:
    pairs: Tuple[Tuple[int, int], ...]
    kind: ClassVar[str] = "batch-insert"


@dataclass(frozen=True)
class BatchDelete:
    nodes: Tuple[int, ...]
    kind: ClassVar[str] = "batch-delete"


Action = Union[Insert, Delete, BatchInsert, BatchDelete]


def _connected_without(ov: "Overlay", dead: Set[int]) -> bool:
    rest = [u for u in ov.net.adj if u not in dead]
    if not rest:
        return False
    seen = {rest[0]}
    stack = [rest[0]]
    while stack:
        x = stack.pop()
        for y in ov.net.adj[x]:
            if y not in dead and y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(rest)


def validate(action: Action, ov: "Overlay", floor: int = FLOOR) -> None:
    """Raise IllegalAction unless the action is legal in the current state."""
    live = ov.net.adj
    if isinstance(action, Insert):
        pairs: Sequence[Tuple[int, int]] = [(action.node, action.anchor)]
    elif isinstance(action, BatchInsert):
        pairs = action.pairs
    else:
        pairs = ()
    if pairs:
        ids = [u for u, _ in pairs]
        if len(set(ids)) != len(ids):
            raise IllegalAction("duplicate ids in insertion")
        for u, a in pairs:
            if u in live:
                raise IllegalAction(f"insert of live id {u}")
            if a not in live:
                raise IllegalAction(f"anchor {a} is not live")
        return
    dead = [action.node] if isinstance(action, Delete) else list(action.nodes)
    if len(set(dead)) != len(dead):
        raise IllegalAction("duplicate ids in deletion")
    for u in dead:
        if u not in live:
            raise IllegalAction(f"delete of absent node {u}")
    if len(live) - len(dead) < floor:
        raise IllegalAction(f"deletion would drop the network below {floor} nodes")
    gone = set(dead)
    for u in dead:
        if all(v in gone for v in live[u]):
            raise IllegalAction(f"node {u} keeps no surviving neighbour")
    if len(dead) > 1 and not _connected_without(ov, gone):
        raise IllegalAction("deletion batch disconnects the network")


class Strategy:
    """Base class; subclasses override choose()."""

    name = "strategy"

    def __init__(self, seed: int = 0, floor: int = FLOOR):
        self.rng = random.Random(seed)
        self.floor = floor

    def next_action(self, ov: "Overlay") -> Action:
        action = self.choose(ov)
        validate(action, ov, self.floor)
        return action

    def choose(self, ov: "Overlay") -> Action:
        raise NotImplementedError

    # helpers
    def _insert(self, ov: "Overlay", anchor: Optional[int] = None) -> Insert:
        if anchor is None:
            anchor = self.rng.choice(ov.nodes)
        return Insert(ov.next_id, anchor)

    def _can_delete(self, ov: "Overlay") -> bool:
        return ov.n - 1 >= self.floor


class UniformChurn(Strategy):
    name = "uniform-churn"

    def __init__(self, p_insert: float = 0.5, seed: int = 0, floor: int = FLOOR):
        super().__init__(seed, floor)
        self.p_insert = p_insert

    def choose(self, ov):
        if self.rng.random() < self.p_insert or not self._can_delete(ov):
            return self._insert(ov)
        return Delete(self.rng.choice(ov.nodes))


class InsertOnly(Strategy):
    name = "insert-only"

    def choose(self, ov):
        return self._insert(ov)


class DeleteOnly(Strategy):
    name = "delete-only"

    def choose(self, ov):
        if not self._can_delete(ov):
            return self._insert(ov)
        return Delete(self.rng.choice(ov.nodes))


class _TargetAttack(Strategy):
    """Deletes a chosen target; insertions anchor at it to grow its neighbourhood."""

    def __init__(self, p_insert: float = 0.5, seed: int = 0, floor: int = FLOOR):
        super().__init__(seed, floor)
        self.p_insert = p_insert

    def target(self, ov: "Overlay") -> int:
        raise NotImplementedError

    def choose(self, ov):
        t = self.target(ov)
        if self.rng.random() < self.p_insert or not self._can_delete(ov):
            return self._insert(ov, t)
        return Delete(t)


class MaxDegreeAttack(_TargetAttack):
    name = "max-degree-attack"

    def target(self, ov):
        return min(ov.nodes, key=lambda u: (-ov.net.degree(u), u))


class CoordinatorAttack(_TargetAttack):
    name = "coordinator-attack"

    def target(self, ov):
        return ov.coordinator_host()


class SpareDrain(Strategy):
    """Deletes only lightly loaded nodes, so absorbed vertices pile up on heavy ones."""

    name = "spare-drain"

    def __init__(self, p_insert: float = 0.0, seed: int = 0, floor: int = FLOOR):
        super().__init__(seed, floor)
        self.p_insert = p_insert

    def choose(self, ov):
        if self.rng.random() < self.p_insert or not self._can_delete(ov):
            return self._insert(ov)
        low = [u for u in ov.nodes if ov.combined_load(u) <= 2 * ov.cfg.zeta]
        return Delete(self.rng.choice(low or ov.nodes))


class Oscillator(Strategy):
    """Inserts until a rebuild grows the cycle, then deletes until one shrinks it.

    Memory: the current direction and the prime seen when it was chosen.
    """

    name = "oscillator"

    def __init__(self, seed: int = 0, floor: int = FLOOR):
        super().__init__(seed, floor)
        self.inserting = True
        self.seen_p: Optional[int] = None

    def choose(self, ov):
        p = ov.p if ov.window is None else None
        if self.seen_p is None:
            self.seen_p = p
        if p is not None and self.seen_p is not None and p != self.seen_p:
            self.inserting = p < self.seen_p
            self.seen_p = p
        if not self.inserting and not self._can_delete(ov):
            self.inserting = True
        if self.inserting:
            return self._insert(ov)
        return Delete(self.rng.choice(ov.nodes))


class BatchChurn(Strategy):
    """Alternating batches of max(1, floor(eps * n)) insertions or deletions."""

    name = "batch-churn"

    def __init__(self, eps: float = 0.05, p_insert: float = 0.5, seed: int = 0, floor: int = FLOOR):
        super().__init__(seed, floor)
        self.eps = eps
        self.p_insert = p_insert

    def choose(self, ov):
        k = max(1, int(self.eps * ov.n))
        if self.rng.random() < self.p_insert or ov.n - k < self.floor:
            anchors = self.rng.sample(ov.nodes, min(k, ov.n))
            while len(anchors) < k:
                anchors.append(self.rng.choice(ov.nodes))
            return BatchInsert(tuple((ov.next_id + i, a) for i, a in enumerate(anchors)))
        return BatchDelete(tuple(sorted(self.deletion_set(ov, k))))

    def deletion_set(self, ov: "Overlay", k: int) -> List[int]:
        """Greedy: add random candidates that keep the remainder connected."""
        order = list(ov.nodes)
        self.rng.shuffle(order)
        chosen: Set[int] = set()
        for u in order:
            if len(chosen) == k:
                break
            trial = chosen | {u}
            if any(all(v in trial for v in ov.net.adj[x]) for x in trial):
                continue
            if _connected_without(ov, trial):
                chosen = trial
        return sorted(chosen)


class Scripted(Strategy):
    """Replays `insert <id> <anchor>`, `delete <id>`, `batch-insert <id>:<anchor> ...`
    and `batch-delete <id> ...` lines; blank lines and `#` comments are skipped."""

    name = "scripted"

    def __init__(self, lines: Sequence[str], floor: int = FLOOR):
        super().__init__(0, floor)
        self.actions = [parse_action(ln) for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
        self.pos = 0

    def exhausted(self) -> bool:
        return self.pos >= len(self.actions)

    def choose(self, ov):
        if self.exhausted():
            raise IllegalAction("script exhausted")
        a = self.actions[self.pos]
        self.pos += 1
        return a


def parse_action(line: str) -> Action:
    parts = line.split()
    try:
        if parts[0] == "insert" and len(parts) == 3:
            return Insert(int(parts[1]), int(parts[2]))
        if parts[0] == "delete" and len(parts) == 2:
            return Delete(int(parts[1]))
        if parts[0] == "batch-insert" and len(parts) > 1:
            return BatchInsert(tuple(tuple(int(v) for v in tok.split(":")) for tok in parts[1:]))
        if parts[0] == "batch-delete" and len(parts) > 1:
            return BatchDelete(tuple(int(v) for v in parts[1:]))
    except ValueError as exc:
        raise IllegalAction(f"bad script line {line!r}") from exc
    raise IllegalAction(f"bad script line {line!r}")


def format_action(a: Action) -> str:
    if isinstance(a, Insert):
        return f"insert {a.node} {a.anchor}"
    if isinstance(a, Delete):
        return f"delete {a.node}"
    if isinstance(a, BatchInsert):
        return "batch-insert " + " ".join(f"{u}:{v}" for u, v in a.pairs)
    return "batch-delete " + " ".join(str(u) for u in a.nodes)


STRATEGIES: Dict[str, type] = {
    cls.name: cls
    for cls in (UniformChurn, InsertOnly, DeleteOnly, MaxDegreeAttack, CoordinatorAttack, SpareDrain, Oscillator, BatchChurn)
}


def make_strategy(text: str, seed: int = 0, floor: int = FLOOR) -> Strategy:
    """Build a strategy from `name` or `name:param`, e.g. `uniform-churn:0.5`."""
    name, _, arg = text.partition(":")
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}")
    cls = STRATEGIES[name]
    if arg:
        if cls is BatchChurn:
            return cls(eps=float(arg), seed=seed, floor=floor)
        if cls in (UniformChurn, MaxDegreeAttack, CoordinatorAttack, SpareDrain):
            return cls(p_insert=float(arg), seed=seed, floor=floor)
        raise ValueError(f"strategy {name!r} takes no parameter")
    return cls(seed=seed, floor=floor)
