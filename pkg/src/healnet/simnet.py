"""Synchronous round-based message passing over a dynamic simple graph.

The substrate owns the network's link multiplicities, the per-step round and
message ledger, and the three communication primitives the protocol is built
from: congestion-aware random walks, batched point-to-point routes, and
flood/echo aggregation.  Link capacity is one message per walk class per
direction per round; contention is served in (sender id, sequence) order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Set, Tuple

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
MAX_PAYLOAD = 8


class RouteBroken(RuntimeError):
    pass


class RecoveryStalled(RuntimeError):
    pass


def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class CounterRng:
    """Stateless generator: every draw is a pure function of (seed, keys...).

    A walk draws with keys (walk id, step number), so launching walks in a
    different order never shifts another walk's choices.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64

    def u64(self, *keys: int) -> int:
        acc = mix64(self.seed + GOLDEN64)
        for k in keys:
            acc = mix64(acc ^ ((k * GOLDEN64 + 0x632BE59BD9B4E019) & MASK64))
        return acc

    def below(self, n: int, *keys: int) -> int:
        return (self.u64(*keys) * n) >> 64

    def uniform(self, *keys: int) -> float:
        return (self.u64(*keys) >> 11) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class Message:
    kind: str
    payload: Tuple[int, ...] = ()

    def __post_init__(self):
        assert len(self.payload) <= MAX_PAYLOAD, "message payload exceeds O(log n) bits"


@dataclass
class RoundReport:
    round_index: int
    messages: int
    edges_added: int = 0
    edges_removed: int = 0


@dataclass
class StepReport:
    step_index: int
    event: str
    recovery_type: str
    rounds_used: int
    messages_used: int
    topology_changes: int
    n: int
    p: int
    max_load: int
    spare_count: int
    low_count: int
    lambda_quotient: Optional[float] = None
    lambda_virtual: Optional[float] = None
    rounds: List[RoundReport] = field(default_factory=list, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "rounds"}


def link_key(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a < b else (b, a)


class Network:
    """Simple undirected graph whose links carry multiplicities.

    A link is present while its multiplicity is positive.  Several virtual
    edges, from one or two overlay layers, may map onto the same link.
    """

    def __init__(self, nodes: Iterable[int] = ()):
        self.adj: Dict[int, Dict[int, int]] = {u: {} for u in nodes}
        self._sorted: Dict[int, List[int]] = {}
        self._touched: Optional[Dict[Tuple[int, int], bool]] = None
        self.flips: List[Tuple[int, int, int]] = []  # (+1/-1, a, b) since last drain

    @property
    def nodes(self) -> List[int]:
        return sorted(self.adj)

    def __len__(self) -> int:
        return len(self.adj)

    def __contains__(self, u: int) -> bool:
        return u in self.adj

    def add_node(self, u: int) -> None:
        if u in self.adj:
            raise ValueError(f"node {u} already present")
        self.adj[u] = {}

    def remove_node(self, u: int) -> None:
        for v, m in list(self.adj[u].items()):
            self.adjust(u, v, -m)
        del self.adj[u]
        self._sorted.pop(u, None)

    def multiplicity(self, a: int, b: int) -> int:
        return self.adj.get(a, {}).get(b, 0)

    def has_link(self, a: int, b: int) -> bool:
        return self.multiplicity(a, b) > 0

    def adjust(self, a: int, b: int, delta: int) -> None:
        if a == b or delta == 0:
            return
        before = self.adj[a].get(b, 0)
        after = before + delta
        if after < 0:
            raise ValueError(f"negative multiplicity on link {a}-{b}")
        if self._touched is not None:
            self._touched.setdefault(link_key(a, b), before > 0)
        if after:
            self.adj[a][b] = after
            self.adj[b][a] = after
        else:
            del self.adj[a][b]
            del self.adj[b][a]
        if (before > 0) != (after > 0):
            self._sorted.pop(a, None)
            self._sorted.pop(b, None)
            self.flips.append((1 if after else -1, a, b))

    def neighbors(self, u: int) -> List[int]:
        s = self._sorted.get(u)
        if s is None:
            s = sorted(self.adj[u])
            self._sorted[u] = s
        return s

    def degree(self, u: int) -> int:
        return len(self.adj[u])

    def links(self) -> Set[Tuple[int, int]]:
        return {(a, b) for a, nb in self.adj.items() for b in nb if a < b}

    def link_count(self) -> int:
        return sum(len(nb) for nb in self.adj.values()) // 2

    def bfs_levels(self, src: int) -> Dict[int, int]:
        level = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.adj[u]:
                    if v not in level:
                        level[v] = level[u] + 1
                        nxt.append(v)
            frontier = nxt
        return level

    def connected(self) -> bool:
        if not self.adj:
            return False
        start = next(iter(self.adj))
        return len(self.bfs_levels(start)) == len(self.adj)

    def bfs_path(self, a: int, b: int) -> List[int]:
        """Shortest path in the network, smallest-id next hop on ties."""
        level = self.bfs_levels(b)
        if a not in level:
            raise RouteBroken(f"no path {a} -> {b}")
        path = [a]
        cur = a
        while cur != b:
            want = level[cur] - 1
            cur = min(v for v in self.adj[cur] if level.get(v) == want)
            path.append(cur)
        return path

    # per-step change accounting
    def begin_step(self) -> None:
        self._touched = {}

    def end_step(self, exclude: Iterable[int] = ()) -> Tuple[int, int]:
        """Links added and removed since begin_step, ignoring links at `exclude`."""
        skip = set(exclude)
        added = removed = 0
        for (a, b), before in (self._touched or {}).items():
            if a in skip or b in skip:
                continue
            now = self.has_link(a, b)
            if now and not before:
                added += 1
            elif before and not now:
                removed += 1
        self._touched = None
        return added, removed

    def drain_flips(self) -> Tuple[int, int]:
        add = sum(1 for s, _, _ in self.flips if s > 0)
        rem = len(self.flips) - add
        self.flips.clear()
        return add, rem


class RoundLedger:
    """Rounds and messages spent in the current step."""

    def __init__(self, cap: Optional[int] = None):
        self.cap = cap
        self.rounds: List[RoundReport] = []
        self.net: Optional[Network] = None

    @property
    def total_rounds(self) -> int:
        return len(self.rounds)

    @property
    def total_messages(self) -> int:
        return sum(r.messages for r in self.rounds)

    def tick(self, messages: int) -> None:
        rep = RoundReport(len(self.rounds), messages)
        if self.net is not None:
            rep.edges_added, rep.edges_removed = self.net.drain_flips()
        self.rounds.append(rep)
        if self.cap is not None and len(self.rounds) > self.cap:
            raise RecoveryStalled(f"step exceeded the {self.cap}-round cap")

    def extend(self, per_round: Sequence[int]) -> None:
        for m in per_round:
            self.tick(m)

    def charge(self, messages: int) -> None:
        """Add messages to a single round; one round is opened if none exists yet."""
        if messages <= 0:
            return
        self.tick(messages)


# random walks


@dataclass
class WalkToken:
    walk_id: int
    purpose: str
    origin: int
    position: int
    step_budget: int
    round_budget: int
    accept: Optional[Callable[[int], bool]] = None
    excluded: frozenset = frozenset()
    seq: int = 0
    steps: int = 0
    rounds: int = 0
    done: bool = False
    found: bool = False
    pending: Optional[int] = None
    messages: int = 0


class WalkSpace:
    """Where a token lives and how it moves.

    Network walks sit on nodes and step to a uniform network neighbour.
    Virtual walks sit on virtual vertices and step along one of the three
    virtual edges; a step between two vertices of the same host is local.
    """

    def host(self, position: int) -> int:
        raise NotImplementedError

    def choose(self, token: WalkToken, rng: CounterRng) -> Optional[int]:
        raise NotImplementedError


class NetworkWalkSpace(WalkSpace):
    def __init__(self, net: Network):
        self.net = net

    def host(self, position: int) -> int:
        return position

    def choose(self, token: WalkToken, rng: CounterRng) -> Optional[int]:
        options = self.net.neighbors(token.position)
        if token.excluded:
            options = [v for v in options if v not in token.excluded]
        if not options:
            return None
        return options[rng.below(len(options), token.walk_id, token.steps)]


class VirtualWalkSpace(WalkSpace):
    def __init__(self, neighbors: Callable[[int], Sequence[int]], host: Callable[[int], int]):
        self._neighbors = neighbors
        self._host = host

    def host(self, position: int) -> int:
        return self._host(position)

    def choose(self, token: WalkToken, rng: CounterRng) -> Optional[int]:
        options = self._neighbors(token.position)
        return options[rng.below(len(options), token.walk_id, token.steps)]


def run_walks(
    tokens: Sequence[WalkToken],
    space: WalkSpace,
    rng: CounterRng,
    ledger: RoundLedger,
    stop_early: bool = True,
) -> None:
    """Advance all tokens in lockstep until each finishes or is frozen."""
    order = sorted(tokens, key=lambda t: (t.origin, t.seq, t.walk_id))
    while True:
        active = [t for t in order if not t.done]
        if not active:
            return
        used: Set[Tuple[str, int, int]] = set()
        sent = 0
        for t in active:
            while True:
                if t.steps >= t.step_budget:
                    t.done = True
                    break
                nxt = t.pending if t.pending is not None else space.choose(t, rng)
                if nxt is None:
                    t.done = True
                    break
                a, b = space.host(t.position), space.host(nxt)
                if a != b:
                    key = (t.purpose, a, b)
                    if key in used:
                        t.pending = nxt
                        break
                    used.add(key)
                    sent += 1
                    t.messages += 1
                t.position = nxt
                t.pending = None
                t.steps += 1
                if stop_early and t.accept is not None and t.accept(t.position):
                    t.found = True
                    t.done = True
                    break
                if a != b:
                    break
            if not t.done:
                t.rounds += 1
                if t.rounds >= t.round_budget:
                    t.done = True
        ledger.tick(sent)


# routing


@dataclass
class Route:
    path: List[int]
    sender: int
    seq: int = 0
    kind: str = "route"
    hop: int = 0

    @property
    def delivered(self) -> bool:
        return self.hop >= len(self.path) - 1


def compress(path: Iterable[int]) -> List[int]:
    out: List[int] = []
    for u in path:
        if not out or out[-1] != u:
            out.append(u)
    return out


def route_batch(net: Network, routes: Sequence[Route], ledger: RoundLedger) -> int:
    """Deliver every route hop by hop under link capacity; returns messages."""
    for r in routes:
        for a, b in zip(r.path, r.path[1:]):
            if not net.has_link(a, b):
                raise RouteBroken(f"route uses missing link {a}-{b}")
    pending = sorted((r for r in routes if not r.delivered), key=lambda r: (r.sender, r.seq))
    total = 0
    while pending:
        used: Set[Tuple[str, int, int]] = set()
        sent = 0
        for r in pending:
            a, b = r.path[r.hop], r.path[r.hop + 1]
            key = (r.kind, a, b)
            if key in used:
                continue
            used.add(key)
            r.hop += 1
            sent += 1
        total += sent
        ledger.tick(sent)
        pending = [r for r in pending if not r.delivered]
    return total


# flooding


@dataclass(frozen=True)
class FloodResult:
    n: int
    count: int
    rounds: int
    messages: int


def _flood_schedule(net: Network, origin: int) -> Tuple[Dict[int, int], List[List[int]]]:
    level = net.bfs_levels(origin)
    depth = max(level.values())
    layers: List[List[int]] = [[] for _ in range(depth + 1)]
    for u, l in level.items():
        layers[l].append(u)
    return level, layers


def flood_aggregate(
    net: Network, origin: int, indicator: Callable[[int], bool], ledger: RoundLedger
) -> FloodResult:
    """Echo-style flood from origin summing (1, indicator) over a BFS tree.

    Explore messages cross every link once in each direction except tree links,
    which carry one explore down and one echo up, for exactly 2|links| messages
    in 2 * eccentricity rounds.
    """
    level, layers = _flood_schedule(net, origin)
    if len(level) != len(net):
        raise RouteBroken("flood did not reach every node")
    ecc = len(layers) - 1
    per_round = [0] * (2 * ecc)
    for k in range(1, ecc + 1):
        per_round[k - 1] += sum(net.degree(w) - (w != origin) for w in layers[k - 1])
    if ecc:
        per_round[ecc] += sum(net.degree(w) - 1 for w in layers[ecc])
    for j in range(1, ecc + 1):
        per_round[ecc + j - 1] += len(layers[ecc - j + 1])
    ledger.extend(per_round)
    count = sum(1 for u in level if indicator(u))
    return FloodResult(len(level), count, len(per_round), sum(per_round))


def broadcast(net: Network, origin: int, ledger: RoundLedger) -> FloodResult:
    """One-way flood; every node forwards once to all neighbours but its parent."""
    level, layers = _flood_schedule(net, origin)
    ecc = len(layers) - 1
    per_round = [sum(net.degree(w) - (w != origin) for w in layer) for layer in layers]
    if not ecc:
        per_round = []
    ledger.extend(per_round)
    return FloodResult(len(level), len(level), len(per_round), sum(per_round))


def log2ceil(n: int) -> int:
    return max(1, math.ceil(math.log2(max(2, n))))


def stall_cap(n: int) -> int:
    """Harness bound on rounds per step: 64 * ceil(log2 n)^3 (at least 2^3)."""
    return 64 * max(2, log2ceil(n)) ** 3
