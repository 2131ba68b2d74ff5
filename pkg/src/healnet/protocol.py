"""Self-healing maintenance of a p-cycle overlay under adversarial churn.

Every adversary step is repaired by type-1 recovery when it can be: a single
random walk finds a node that can spare a virtual vertex (insertion) or a few
walks find lightly loaded nodes to take over a deleted node's vertices
(deletion).  When spare or light nodes run out, type-2 recovery rebuilds the
virtual graph on a larger or smaller prime, either all at once (simplified
mode) or spread over many steps (staggered mode).

During a staggered rebuild two mapping layers coexist.  The old layer is the
cycle being replaced.  The new layer is a PartialMapping: a new vertex that
has not been built yet is provisionally hosted by whoever hosts its anchor in
the old cycle (the old vertex whose cloud contains it, or its smallest
preimage when deflating), and a new edge is present once either endpoint is
built.
"""
from __future__ import annotations

import functools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .adversary import BatchDelete, BatchInsert, Delete, Insert
from .mapping import ZETA, QuotientGraph, VirtualMapping, Violation, balanced_hosts, is_low, is_spare
from .pcycle import (
    DeflationPlan,
    InflationPlan,
    NoPrimeInRange,
    deflated_prime,
    inflate_owner_of,
    inflated_prime,
    initial_prime,
    pcycle,
)
from .simnet import (
    CounterRng,
    Network,
    NetworkWalkSpace,
    RecoveryStalled,
    RoundLedger,
    Route,
    RouteBroken,
    StepReport,
    VirtualWalkSpace,
    WalkToken,
    broadcast,
    compress,
    flood_aggregate,
    log2ceil,
    route_batch,
    run_walks,
    stall_cap,
)
from .spectral import pcycle_graph, second_eigenvalue

log = logging.getLogger(__name__)

TYPE1 = "Type1"
SIMPLIFIED = "Type2Simplified"
STAGGERED_TICK = "Type2StaggeredTick"

Plan = Union[InflationPlan, DeflationPlan]
Action = Union[Insert, Delete, BatchInsert, BatchDelete]


class InvalidBatch(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    theta: Fraction = Fraction(1, 545)
    zeta: int = ZETA
    ell: int = 8
    c_T: int = 8
    c_rho: int = 16
    type2_mode: str = "Staggered"

    def __post_init__(self):
        if self.type2_mode not in ("Staggered", "Simplified"):
            raise ValueError(f"unknown type-2 mode {self.type2_mode!r}")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    def threshold(self, n: int) -> int:
        """ceil(theta * n), exact."""
        return max(1, math.ceil(Fraction(self.theta) * n))


@dataclass
class CoordinatorState:
    n: int
    spare_count: int
    low_count: int
    current_p: int
    rebuild: Optional[Tuple[str, int, int]] = None  # (kind, phase, next block)

    def copy(self) -> "CoordinatorState":
        return CoordinatorState(self.n, self.spare_count, self.low_count, self.current_p, self.rebuild)


@dataclass(frozen=True)
class NodeState:
    node_id: int
    sim: Tuple[int, ...]
    new_sim: Tuple[int, ...]
    full: bool
    contending: bool
    staggering_phase: Optional[int]
    is_coordinator: bool
    has_replica: bool


class PartialMapping(VirtualMapping):
    """New-cycle layer of a staggered rebuild; see the module docstring."""

    def __init__(self, plan: Plan, old: VirtualMapping, zeta: int):
        cycle = pcycle(plan.p_new)
        self.plan = plan
        self.old = old
        self.anchor_of = [plan.anchor(y) for y in range(cycle.p)]
        self.prov: Counter = Counter(old.host[a] for a in self.anchor_of)
        super().__init__(cycle, [-1] * cycle.p, zeta, nodes=old.nodes)

    def effective_host(self, z: int) -> int:
        h = self.host[z]
        return h if h >= 0 else self.old.host[self.anchor_of[z]]

    def edge_present(self, eid: int) -> bool:
        a, b = self.cycle.edge_endpoints(eid)
        return self.host[a] >= 0 or self.host[b] >= 0

    def _set_raw(self, z: int, u: int) -> None:
        if self.host[z] < 0 and u >= 0:
            self.prov[self.old.host[self.anchor_of[z]]] -= 1
        super()._set_raw(z, u)

    def future_load(self, u: int) -> int:
        return len(self.sim.get(u, ())) + self.prov.get(u, 0)

    def unbuilt_anchored(self, x: int) -> List[int]:
        return [y for y in self.plan.anchored(x) if self.host[y] < 0]

    def future_vertices(self, u: int) -> List[int]:
        out = list(self.sim.get(u, ()))
        for x in self.old.sim.get(u, ()):
            out.extend(self.unbuilt_anchored(x))
        return sorted(out)

    def shift_provisional(self, ys: Sequence[int], src: int, dst: int) -> None:
        self.prov[src] -= len(ys)
        self.prov[dst] += len(ys)
        for y in ys:
            for fn in self.listeners:
                fn(y, src, dst)

    def all_built(self) -> bool:
        return all(h >= 0 for h in self.host)


@dataclass
class Window:
    plan: Plan
    new: PartialMapping
    blocks: List[List[int]]
    phase: int = 1
    next_block: int = 0
    started_step: int = 0

    @property
    def kind(self) -> str:
        return self.plan.kind


class OverlayObserver:
    """Hooks for layers built on top of the overlay (the DHT uses them)."""

    def vertex_moved(self, mapping: VirtualMapping, z: int, old: int, new: int) -> None:
        pass

    def block_activated(self, node: int, old_vertices: Sequence[int]) -> None:
        pass

    def layer_switched(self, old: VirtualMapping, new: VirtualMapping) -> None:
        pass

    def window_started(self, window: Window) -> None:
        pass

    def window_completed(self, window: Window, final: VirtualMapping) -> None:
        pass


class Overlay:
    def __init__(
        self,
        host: Sequence[int],
        cfg: ProtocolConfig = ProtocolConfig(),
        seed: int = 0,
        nodes: Optional[Iterable[int]] = None,
    ):
        self.cfg = cfg
        self.rng = CounterRng(seed)
        node_list = sorted(set(host) if nodes is None else set(nodes))
        self.net = Network(node_list)
        self.cur = VirtualMapping(pcycle(len(host)), host, cfg.zeta, sink=self.net.adjust, nodes=node_list)
        self.window: Optional[Window] = None
        self.clouds: List[int] = list(range(self.cur.p))
        self.observers: List[OverlayObserver] = []
        self.trace: Optional[List[str]] = None
        self.step_index = 0
        self.newcomers: Set[int] = set()
        self._walk_ids = 0
        self._temp: Dict[int, int] = {}
        self._touched: Set[int] = set()
        self._transfers = 0
        self._deleted: Set[int] = set()
        self.ledger = RoundLedger()
        self.ledger.net = self.net
        self._hook(self.cur)
        self._member: Dict[int, Tuple[bool, bool]] = {u: self._membership(u) for u in node_list}
        self.coord = CoordinatorState(
            len(node_list),
            sum(1 for s, _ in self._member.values() if s),
            sum(1 for _, l in self._member.values() if l),
            self.cur.p,
        )
        self.coord_host = self.coordinator_host()
        self.replicas: Set[int] = set(self.net.neighbors(self.coord_host))
        self.next_id = max(node_list) + 1

    @classmethod
    def bootstrap(cls, n0: int, cfg: ProtocolConfig = ProtocolConfig(), seed: int = 0) -> "Overlay":
        if n0 < 2:
            raise ValueError("need at least two nodes")
        p = initial_prime(n0)
        nodes = list(range(n0))
        return cls(balanced_hosts(p, nodes), cfg, seed, nodes)

    # views

    @property
    def p(self) -> int:
        return self.cur.p

    @property
    def n(self) -> int:
        return len(self.net)

    @property
    def nodes(self) -> List[int]:
        return self.net.nodes

    def layers(self) -> List[VirtualMapping]:
        return [self.cur] if self.window is None else [self.cur, self.window.new]

    def combined_load(self, u: int) -> int:
        load = self.cur.load(u)
        if self.window is not None:
            load += self.window.new.load(u)
        return load

    def _membership(self, u: int) -> Tuple[bool, bool]:
        load = self.combined_load(u)
        return is_spare(load), is_low(load, self.cfg.zeta)

    def spare_count(self) -> int:
        return sum(1 for u in self.net.adj if is_spare(self.combined_load(u)))

    def low_count(self) -> int:
        return sum(1 for u in self.net.adj if is_low(self.combined_load(u), self.cfg.zeta))

    def max_load(self) -> int:
        return max(self.combined_load(u) for u in self.net.adj)

    def coordinator_host(self) -> int:
        h = self.cur.host[0]
        if h < 0 and self.window is not None:
            h = self.window.new.effective_host(0)
        return h

    def node_state(self, u: int) -> NodeState:
        w = self.window
        return NodeState(
            u,
            tuple(sorted(self.cur.sim.get(u, ()))),
            tuple(sorted(w.new.sim.get(u, ()))) if w else (),
            self.combined_load(u) > 2 * self.cfg.zeta,
            self.combined_load(u) == 0,
            w.phase if w else None,
            u == self.coord_host,
            u in self.replicas,
        )

    # bookkeeping

    def _hook(self, m: VirtualMapping) -> None:
        m.listeners.append(functools.partial(self._on_move, m))

    def _on_move(self, m: VirtualMapping, z: int, old: int, new: int) -> None:
        if old >= 0:
            self._touched.add(old)
        if new >= 0:
            self._touched.add(new)
        for obs in self.observers:
            obs.vertex_moved(m, z, old, new)

    def _note(self, node: int, event: str, *args) -> None:
        if self.trace is not None:
            extra = " ".join(str(a) for a in args)
            self.trace.append(f"round {self.ledger.total_rounds} node {node} {event} {extra}".rstrip())

    def _token(self, purpose: str, origin: int, pos: int, accept=None, excluded=frozenset(), seq=0, long=False) -> WalkToken:
        lg = log2ceil(self.n)
        steps = (self.cfg.c_T if long else self.cfg.ell) * lg
        self._walk_ids += 1
        return WalkToken(self._walk_ids, purpose, origin, pos, steps, self.cfg.c_rho * lg * lg, accept, excluded, seq)

    def _move_old(self, x: int, dst: int) -> None:
        """Move a vertex of the current (or, mid-rebuild, old) cycle."""
        w = self.window
        ys = w.new.unbuilt_anchored(x) if w is not None else []
        if not ys:
            self.cur.set_host(x, dst)
            return
        src = self.cur.host[x]
        with w.new.rewiring(ys):
            self.cur.set_host(x, dst)
            w.new.shift_provisional(ys, src, dst)

    def _give(self, layer: str, z: int, dst: int) -> None:
        if layer == "cur":
            src = self.cur.host[z]
            self._move_old(z, dst)
        else:
            src = self.window.new.effective_host(z)
            self.window.new.set_host(z, dst)
        self._transfers += 1
        self._note(src, "transfer", layer, z, "->", dst)

    # routing helpers

    def _layer_path(self, m: VirtualMapping, src: int, dst_vertex: int) -> Optional[List[int]]:
        verts = m.sim.get(src)
        if not verts:
            return None
        path = m.cycle.shortest_path(min(verts), dst_vertex)
        hosts = [m.effective_host(z) for z in path]
        if any(h < 0 for h in hosts):
            return None
        hosts = compress(hosts)
        if all(self.net.has_link(a, b) for a, b in zip(hosts, hosts[1:])):
            return hosts
        return None

    def _path_to(self, src: int, dst: int, target_vertex: Optional[int] = None) -> List[int]:
        """Virtual shortest path when the layers provide one, network BFS otherwise."""
        if src == dst:
            return [src]
        if target_vertex is not None:
            for m in self.layers():
                if target_vertex >= m.p or m.effective_host(target_vertex) != dst:
                    continue
                path = self._layer_path(m, src, target_vertex)
                if path is not None and path[-1] == dst:
                    return path
        return self.net.bfs_path(src, dst)

    def _route_all(self, pairs: Sequence[Tuple[int, int, Optional[int]]], kind: str = "route") -> None:
        routes = []
        for i, (src, dst, tv) in enumerate(pairs):
            path = self._path_to(src, dst, tv)
            if len(path) > 1:
                routes.append(Route(path, src, i, kind))
        if routes:
            route_batch(self.net, routes, self.ledger)

    # coordinator

    def _sync_counters(self, reporters: Iterable[int]) -> None:
        """Apply load-membership changes of touched nodes and report them."""
        for u in sorted(self._touched | self._deleted | set(self._member) ^ set(self.net.adj)):
            before = self._member.pop(u, None)
            if before is not None:
                self.coord.n -= 1
                self.coord.spare_count -= before[0]
                self.coord.low_count -= before[1]
            if u in self.net.adj:
                now = self._membership(u)
                self._member[u] = now
                self.coord.n += 1
                self.coord.spare_count += now[0]
                self.coord.low_count += now[1]
        self._touched.clear()
        self._move_coordinator()
        host = self.coord_host
        senders = sorted({r for r in reporters if r in self.net.adj})
        if senders:
            self._route_all([(r, host, 0) for r in senders], kind="coord")
            self._replicate()

    def _move_coordinator(self) -> None:
        host = self.coordinator_host()
        if host == self.coord_host:
            return
        src = self.coord_host
        if src not in self.net.adj:
            alive = sorted(r for r in self.replicas if r in self.net.adj)
            if not alive:
                raise RecoveryStalled("coordinator state lost: no surviving replica")
            src = alive[0]
        self._route_all([(src, host, 0)], kind="coord")
        self._note(host, "coordinator-handoff", "from", src)
        self.coord_host = host
        self._replicate()

    def _replicate(self) -> None:
        nb = self.net.neighbors(self.coord_host)
        self.replicas = set(nb)
        self.ledger.charge(len(nb))

    def _recount(self, origin: int) -> None:
        """Full flood/echo aggregation of (n, |Spare|, |Low|) after a rebuild."""
        flood_aggregate(self.net, origin, lambda u: True, self.ledger)
        self._member = {u: self._membership(u) for u in self.net.adj}
        self.coord.n = len(self._member)
        self.coord.spare_count = sum(1 for s, _ in self._member.values() if s)
        self.coord.low_count = sum(1 for _, l in self._member.values() if l)
        self.coord.current_p = self.cur.p
        self._touched.clear()
        self._move_coordinator()

    # predicates

    def _donor_ok(self, w: int) -> bool:
        if w in self.newcomers:
            return False
        if self.window is None:
            return self.cur.load(w) >= 2
        return self.window.new.future_load(w) >= 2

    def _recipient_pred(self, layer: str, relaxed: bool = False) -> Callable[[int], bool]:
        zeta = self.cfg.zeta
        if relaxed:
            return lambda w: self.combined_load(w) < 8 * zeta
        if self.window is None:
            return lambda w: self.cur.load(w) <= 2 * zeta
        if layer == "cur":
            return lambda w: self.cur.load(w) < 4 * zeta
        return lambda w: self.window.new.future_load(w) <= 2 * zeta

    def _donation(self, w: int) -> Tuple[str, int]:
        if self.window is None:
            return "cur", min(self.cur.sim[w])
        fut = self.window.new.future_vertices(w)
        if self.window.kind == "deflate":
            fut = fut[1:]  # the lowest vertex stays reserved for w itself
        return "new", fut[0]

    # adversary step

    def apply(self, action: Action) -> StepReport:
        self.step_index += 1
        self.ledger = RoundLedger(cap=stall_cap(max(2, self.n)))
        self.ledger.net = self.net
        self._transfers = 0
        self._deleted = set()
        if isinstance(action, (Insert, BatchInsert)):
            pairs = [(action.node, action.anchor)] if isinstance(action, Insert) else list(action.pairs)
            self._validate_insert(pairs)
            for u, a in pairs:
                self.net.add_node(u)
                self.net.adjust(u, a, +1)
                self._temp[u] = a
                for m in self.layers():
                    m.add_node(u)
                self.next_id = max(self.next_id, u + 1)
            self.net.begin_step()
            self.net.drain_flips()
            rtype = self._recover_insert(pairs)
            reporters = [a for _, a in pairs]
        else:
            victims = [action.node] if isinstance(action, Delete) else list(action.nodes)
            absorbers = self._validate_delete(victims)
            self.net.begin_step()
            self.net.drain_flips()
            rtype = self._recover_delete(victims, absorbers)
            reporters = sorted(set(absorbers.values()))
        if rtype == TYPE1:
            self._sync_counters(reporters)
        if self.cfg.type2_mode == "Staggered" and rtype == TYPE1:
            if self.window is None:
                self._maybe_start_window(action)
            if self.window is not None:
                self._tick()
                rtype = STAGGERED_TICK
        added, removed = self.net.end_step(exclude=self._deleted)
        self.newcomers.clear()
        self.coord.rebuild = (self.window.kind, self.window.phase, self.window.next_block) if self.window else None
        return StepReport(
            step_index=self.step_index,
            event=action.kind,
            recovery_type=rtype,
            rounds_used=self.ledger.total_rounds,
            messages_used=self.ledger.total_messages,
            topology_changes=added + removed + self._transfers,
            n=self.n,
            p=self.cur.p,
            max_load=self.max_load(),
            spare_count=self.coord.spare_count,
            low_count=self.coord.low_count,
            rounds=self.ledger.rounds,
        )

    def _validate_insert(self, pairs: Sequence[Tuple[int, int]]) -> None:
        ids = [u for u, _ in pairs]
        if len(set(ids)) != len(ids):
            raise InvalidBatch("duplicate node ids in insertion")
        for u, a in pairs:
            if u in self.net.adj:
                raise InvalidBatch(f"node {u} already exists")
            if a not in self.net.adj:
                raise InvalidBatch(f"anchor {a} is not a live node")

    def _validate_delete(self, victims: Sequence[int]) -> Dict[int, int]:
        dead = set(victims)
        if len(dead) != len(victims):
            raise InvalidBatch("duplicate node ids in deletion")
        if not dead <= set(self.net.adj):
            raise InvalidBatch("deleting a node that is not live")
        if len(dead) >= self.n:
            raise InvalidBatch("deletion would empty the network")
        absorbers = {}
        for u in sorted(dead):
            alive = [v for v in self.net.neighbors(u) if v not in dead]
            if not alive:
                raise InvalidBatch(f"node {u} has no surviving neighbour")
            absorbers[u] = alive[0]
        if len(dead) > 1:
            rest = set(self.net.adj) - dead
            start = min(rest)
            seen = {start}
            stack = [start]
            while stack:
                x = stack.pop()
                for y in self.net.adj[x]:
                    if y in rest and y not in seen:
                        seen.add(y)
                        stack.append(y)
            if seen != rest:
                raise InvalidBatch("deletion batch disconnects the network")
        return absorbers

    # type-1 recovery

    def _drop_temp(self, u: int) -> None:
        a = self._temp.pop(u, None)
        if a is not None and a in self.net.adj:
            self.net.adjust(u, a, -1)

    def _recover_insert(self, pairs: Sequence[Tuple[int, int]]) -> str:
        self.newcomers = {u for u, _ in pairs}
        pending = list(pairs)
        while pending:
            excluded = frozenset(self.newcomers)
            toks = [
                self._token("FindSpare", a, a, self._donor_ok, excluded, seq=i)
                for i, (u, a) in enumerate(pending)
            ]
            for t, (u, a) in zip(toks, pending):
                self._note(a, "walk-start", "FindSpare", "for", u)
            run_walks(toks, NetworkWalkSpace(self.net), self.rng, self.ledger)
            left = []
            for t, (u, a) in sorted(zip(toks, pending), key=lambda ta: (ta[0].origin, ta[0].seq)):
                w = t.position
                if t.found and self._donor_ok(w):
                    layer, z = self._donation(w)
                    self._give(layer, z, u)
                    self.newcomers.discard(u)
                    self._drop_temp(u)
                else:
                    left.append((u, a))
            pending = sorted(left, key=lambda ua: ua[0])
            if pending:
                init = min(a for _, a in pending)
                res = flood_aggregate(self.net, init, self._donor_ok, self.ledger)
                self._note(init, "flood", "Spare", res.count)
                if res.count < self.cfg.threshold(self.n):
                    if self.window is None:
                        if self.cfg.type2_mode == "Staggered" and self._open_window("inflate"):
                            continue
                        self._simplified_inflate(init, pending)
                        return SIMPLIFIED
                    if res.count == 0:
                        raise RecoveryStalled("no node can spare a vertex inside the rebuild window")
        return TYPE1

    def _recover_delete(self, victims: Sequence[int], absorbers: Dict[int, int]) -> str:
        coord_lost = self.coord_host in absorbers
        msgs = sum(self.net.degree(u) for u in victims)
        items: List[Tuple[str, int, int]] = []
        for u in sorted(victims):
            v = absorbers[u]
            self._note(v, "absorb", u)
            for x in sorted(self.cur.sim.get(u, ())):
                self._move_old(x, v)
                items.append(("cur", x, v))
            if self.window is not None:
                for y in sorted(self.window.new.sim.get(u, ())):
                    self.window.new.set_host(y, v)
                    items.append(("new", y, v))
        for u in victims:
            if self.net.adj[u]:
                raise AssertionError(f"node {u} still has links after absorption")
            self.net.remove_node(u)
            for m in self.layers():
                m.drop_node(u)
            if self.window is not None:
                self.window.new.prov.pop(u, None)
            self._temp.pop(u, None)
            self._deleted.add(u)
        self.ledger.charge(msgs)
        if coord_lost:
            self._note(self.coordinator_host(), "coordinator-restore")
        relaxed = False
        while items:
            toks = []
            for i, (layer, z, holder) in enumerate(items):
                toks.append(self._token("FindLow", holder, holder, self._recipient_pred(layer, relaxed), seq=i))
            run_walks(toks, NetworkWalkSpace(self.net), self.rng, self.ledger)
            left = []
            for t, item in sorted(zip(toks, items), key=lambda ti: (ti[0].origin, ti[0].seq)):
                layer, z, holder = item
                w = t.position
                if t.found and self._recipient_pred(layer, relaxed)(w):
                    if w != holder:
                        self._give(layer, z, w)
                else:
                    left.append(item)
            items = left
            if items:
                init = min(h for _, _, h in items)
                pred = self._recipient_pred(items[0][0], relaxed)
                res = flood_aggregate(self.net, init, pred, self.ledger)
                self._note(init, "flood", "Low", res.count)
                if res.count < self.cfg.threshold(self.n):
                    if self.window is None:
                        if self.cfg.type2_mode == "Staggered" and self._open_window("deflate"):
                            continue
                        self._simplified_deflate(init)
                        return SIMPLIFIED
                    if res.count == 0:
                        if relaxed:
                            raise RecoveryStalled("no node can take a vertex inside the rebuild window")
                        relaxed = True
        return TYPE1

    # simplified type-2 recovery

    def _switch_layer(self, new: VirtualMapping) -> None:
        old = self.cur
        new.attach(self.net.adjust)
        old.detach()
        self._hook(new)
        self.cur = new
        for obs in self.observers:
            obs.layer_switched(old, new)

    def _inverse_routes(self, old: VirtualMapping, anchors: Sequence[int], p_new: int) -> List[Tuple[int, int]]:
        """(anchor of y, anchor of y^-1) pairs that need a rendezvous message."""
        inv = pcycle(p_new).inverses
        out = []
        for y in range(1, p_new):
            iy = inv[y]
            if y < iy:
                a, b = anchors[y], anchors[iy]
                if old.host[a] != old.host[b]:
                    out.append((a, b))
        return out

    def _route_virtual(self, old: VirtualMapping, pairs: Sequence[Tuple[int, int]], kind: str) -> None:
        """Route one message per (a, b) along shortest paths of the old cycle."""
        by_target: Dict[int, List[int]] = {}
        for a, b in pairs:
            by_target.setdefault(b, []).append(a)
        routes = []
        seq = 0
        for b in sorted(by_target):
            dist = old.cycle.bfs_distances(b)
            for a in by_target[b]:
                hosts = compress(old.host[z] for z in old.cycle.path_with(a, dist))
                if len(hosts) > 1:
                    routes.append(Route(hosts, hosts[0], seq, kind))
                    seq += 1
        if routes:
            route_batch(self.net, routes, self.ledger)

    def _simplified_inflate(self, init: int, pending: Sequence[Tuple[int, int]]) -> None:
        old = self.cur
        p_old = old.p
        p_new = inflated_prime(p_old)
        plan = InflationPlan(p_old, p_new)
        self._note(init, "inflate", p_old, "->", p_new)
        broadcast(self.net, init, self.ledger)
        anchors = [((y + 1) * p_old - 1) // p_new for y in range(p_new)]
        host_new = [old.host[a] for a in anchors]
        crossing = sum(1 for x in range(p_old) if old.host[x] != old.host[(x + 1) % p_old])
        self.ledger.charge(2 * crossing)
        self._route_virtual(old, self._inverse_routes(old, anchors, p_new), "rendezvous")
        self._switch_layer(VirtualMapping(pcycle(p_new), host_new, self.cfg.zeta, nodes=old.nodes))
        self.clouds = anchors
        for u, a in sorted(pending):
            z = min(self.cur.sim[a])
            self._give("cur", z, u)
            self.newcomers.discard(u)
            self._drop_temp(u)
        self._balance_after_inflate()
        self._recount(self.coordinator_host())

    def _balance_after_inflate(self) -> None:
        zeta = self.cfg.zeta
        cur = self.cur
        full = {u for u in cur.sim if cur.load(u) > 2 * zeta}
        space = VirtualWalkSpace(cur.cycle.neighbors, cur.host.__getitem__)
        while True:
            contending = sorted(u for u in cur.sim if cur.load(u) > 4 * zeta)
            if not contending:
                return
            toks = []
            start: Dict[int, int] = {}
            for u in contending:
                surplus = sorted(cur.sim[u])[: cur.load(u) - 4 * zeta]
                for i, z in enumerate(surplus):
                    t = self._token("Rebalance", u, z, seq=i, long=True)
                    start[t.walk_id] = z
                    toks.append(t)
            run_walks(toks, space, self.rng, self.ledger, stop_early=False)
            ends = Counter(t.position for t in toks)
            for t in sorted(toks, key=lambda t: (t.origin, t.seq)):
                u = t.origin
                z_end = t.position
                w = cur.host[z_end]
                if (
                    t.steps >= t.step_budget
                    and ends[z_end] == 1
                    and w not in full
                    and w != u
                    and cur.load(u) > 4 * zeta
                ):
                    self._give("cur", start[t.walk_id], w)
                    if cur.load(w) > 2 * zeta:
                        full.add(w)

    def _simplified_deflate(self, init: int) -> None:
        old = self.cur
        p_old = old.p
        p_new = deflated_prime(p_old)
        if p_new < self.n:
            raise RecoveryStalled(f"deflation to {p_new} cannot host {self.n} nodes")
        self._note(init, "deflate", p_old, "->", p_new)
        broadcast(self.net, init, self.ledger)
        anchors = [-(-y * p_old // p_new) for y in range(p_new)]
        host_new = [old.host[a] for a in anchors]
        self._route_virtual(
            old, [(anchors[y], anchors[(y + 1) % p_new]) for y in range(p_new) if host_new[y] != host_new[(y + 1) % p_new]], "cycle"
        )
        self._route_virtual(old, self._inverse_routes(old, anchors, p_new), "rendezvous")
        lowest_old = {u: min(s) for u, s in old.sim.items() if s}
        self._switch_layer(VirtualMapping(pcycle(p_new), host_new, self.cfg.zeta, nodes=old.nodes))
        self.clouds = list(range(p_new))
        self._claim_after_deflate(lowest_old, p_old)
        self._recount(self.coordinator_host())

    def _claim_after_deflate(self, lowest_old: Dict[int, int], p_old: int) -> None:
        cur = self.cur
        p_new = cur.p
        reserved = {min(s) for s in cur.sim.values() if s}
        contending = sorted(u for u in cur.sim if not cur.sim[u])
        start: Dict[int, int] = {}
        temp: Dict[int, int] = {}
        for u in contending:
            y0 = lowest_old[u] * p_new // p_old
            start[u] = y0
            temp[u] = cur.host[y0]
            self.net.adjust(u, temp[u], +1)
        space = VirtualWalkSpace(cur.cycle.neighbors, cur.host.__getitem__)
        while contending:
            self.ledger.tick(len(contending))  # first hop: contender -> host of its start vertex
            toks = [self._token("ClaimVertex", u, start[u], seq=0, long=True) for u in contending]
            run_walks(toks, space, self.rng, self.ledger, stop_early=False)
            ends = Counter(t.position for t in toks)
            left = []
            for t in sorted(toks, key=lambda t: (t.origin, t.seq)):
                u = t.origin
                z = t.position
                w = cur.host[z]
                if ends[z] == 1 and z not in reserved and w >= 0 and cur.load(w) >= 2:
                    self._give("cur", z, u)
                    reserved.add(z)
                    self.net.adjust(u, temp.pop(u), -1)
                else:
                    left.append(u)
            contending = left

    # staggered type-2 recovery

    def _maybe_start_window(self, action: Action) -> None:
        thr = 3 * self.cfg.threshold(self.n)
        if isinstance(action, (Insert, BatchInsert)):
            # skipped when the larger cycle could not stay Low-balanced (tiny n only)
            if self.coord.spare_count < thr and inflated_prime(self.cur.p) <= 2 * self.cfg.zeta * self.n:
                self._open_window("inflate")
        elif self.coord.low_count < thr:
            self._open_window("deflate")

    def _open_window(self, kind: str) -> bool:
        p_old = self.cur.p
        if kind == "inflate":
            plan: Plan = InflationPlan(p_old, inflated_prime(p_old))
        else:
            try:
                p_new = deflated_prime(p_old)
            except NoPrimeInRange:
                return False
            if p_new < 5 or p_new <= self.n:
                return False
            plan = DeflationPlan(p_old, p_new)
        ticks = self.cfg.threshold(self.n)
        size = -(-p_old // ticks)
        order = list(range(1, p_old)) + [0]
        blocks = [order[i : i + size] for i in range(0, p_old, size)]
        new = PartialMapping(plan, self.cur, self.cfg.zeta)
        new.attach(self.net.adjust)
        self._hook(new)
        self.window = Window(plan, new, blocks, started_step=self.step_index)
        self._note(self.coord_host, "rebuild-start", plan.kind, plan.p_old, "->", plan.p_new)
        for obs in self.observers:
            obs.window_started(self.window)
        return True

    def _tick(self) -> None:
        w = self.window
        block = w.blocks[w.next_block]
        w.next_block += 1
        live = [x for x in block if self.cur.host[x] >= 0]
        if live:
            chain = compress([self.cur.host[x] for x in live])
            head = self._path_to(self.coord_host, chain[0], live[0])
            hops = compress(head + chain)
            broken = any(not self.net.has_link(a, b) for a, b in zip(hops, hops[1:]))
            if broken:
                self._route_all([(self.coord_host, h, None) for h in chain], kind="activate")
            else:
                route_batch(self.net, [Route(hops, self.coord_host, 0, "activate")], self.ledger)
        if w.phase == 1:
            reporters = self._activate(live)
        else:
            reporters = self._discard(live)
        if w.next_block == len(w.blocks):
            if w.phase == 1:
                w.phase = 2
                w.next_block = 0
            else:
                self._complete_window()
        self._sync_counters(reporters)

    def _activate(self, block: Sequence[int]) -> List[int]:
        w = self.window
        new = w.new
        active = sorted({self.cur.host[x] for x in block})
        # building at the provisional host leaves effective hosts unchanged, so
        # no move listener fires; the builders' loads change all the same
        self._touched.update(active)
        built: List[int] = []
        for u in active:
            xs = sorted(self.cur.sim[u])
            for x in xs:
                for y in new.unbuilt_anchored(x):
                    new.set_host(y, u)
                    built.append(y)
            self._note(u, "activate", w.kind, len(xs))
            for obs in self.observers:
                obs.block_activated(u, xs)
        # edge set-up: cycle neighbours in one round, inverse edges by rendezvous
        cyc = new.cycle
        local = sum(
            1 for y in built for nb in ((y - 1) % cyc.p, (y + 1) % cyc.p) if new.effective_host(nb) != new.host[y]
        )
        self.ledger.charge(local)
        built_set = set(built)
        pairs = []
        for y in built:
            iy = cyc.inverses[y]
            if y == 0 or iy == y or (iy in built_set and iy < y):
                continue
            a, b = new.anchor_of[y], new.anchor_of[iy]
            if self.cur.host[a] != self.cur.host[b]:
                pairs.append((a, b))
        self._route_virtual(self.cur, pairs, "rendezvous")
        reporters = list(active)
        zeta = self.cfg.zeta
        if w.kind == "inflate":
            for u in active:
                while new.load(u) > 4 * zeta:
                    target = self._walk_until(
                        "Rebalance",
                        u,
                        lambda x: x not in self.newcomers and new.future_load(x) <= 2 * zeta,
                        lambda x: x not in self.newcomers and new.future_load(x) < 4 * zeta,
                    )
                    self._give("new", min(new.sim[u]), target)
                    reporters.append(target)
        else:
            for u in active:
                if new.future_load(u) == 0:
                    target = self._walk_until("FindDominator", u, self._donor_ok)
                    _, y = self._donation(target)
                    self._give("new", y, u)
                    reporters.append(target)
        return reporters

    def _walk_until(self, purpose: str, origin: int, *accepts: Callable[[int], bool]) -> int:
        """Sequential walks from origin until one ends at an accepting node.

        When a flood finds no node satisfying the current predicate, the next
        (weaker) one is used instead.
        """
        preds = list(accepts)
        while True:
            accept = preds[0]
            tok = self._token(purpose, origin, origin, accept, long=True)
            run_walks([tok], NetworkWalkSpace(self.net), self.rng, self.ledger)
            if tok.found and accept(tok.position):
                return tok.position
            res = flood_aggregate(self.net, origin, accept, self.ledger)
            if res.count == 0:
                if len(preds) == 1:
                    raise RecoveryStalled(f"no node accepts a {purpose} walk")
                preds.pop(0)

    def _discard(self, block: Sequence[int]) -> List[int]:
        hosts = sorted({self.cur.host[x] for x in block})
        dropped = 0
        for x in block:
            if self.window.new.unbuilt_anchored(x):
                raise AssertionError("discarding an old vertex whose replacement is unbuilt")
            dropped += len(self.cur._links_at(x))
            self.cur.set_host(x, -1)
        self.ledger.charge(dropped)
        return hosts

    def _complete_window(self) -> None:
        w = self.window
        new = w.new
        if not new.all_built():
            raise AssertionError("rebuild finished with unbuilt vertices")
        final = VirtualMapping(new.cycle, new.host, self.cfg.zeta, nodes=new.nodes)
        final.attach(self.net.adjust)
        new.detach()
        self.cur.detach()
        self._hook(final)
        old_cycle_p = self.cur.p
        self.cur = final
        self.window = None
        if w.kind == "inflate":
            self.clouds = [inflate_owner_of(y, old_cycle_p, final.p) for y in range(final.p)]
        else:
            self.clouds = list(range(final.p))
        self.coord.current_p = final.p
        self._note(self.coordinator_host(), "rebuild-complete", final.p)
        for obs in self.observers:
            obs.window_completed(w, final)

    # audits

    def quotient(self) -> QuotientGraph:
        if self.window is None:
            return self.cur.quotient()
        pairs = []
        old = self.cur
        for a, b in old.cycle.edges():
            if old.host[a] >= 0 and old.host[b] >= 0:
                pairs.append((old.host[a], old.host[b], a == b))
        new = self.window.new
        for a, b in new.cycle.edges():
            if new.host[a] >= 0 or new.host[b] >= 0:
                pairs.append((new.effective_host(a), new.effective_host(b), a == b))
        return QuotientGraph.from_pairs(pairs)

    def reference_p(self) -> int:
        """Prime of the cycle that is fully present right now."""
        if self.window is not None and self.window.phase == 2:
            return self.window.plan.p_new
        return self.cur.p

    def check_invariants(self) -> List[Violation]:
        out: List[Violation] = []
        zeta = self.cfg.zeta
        if self.window is None:
            out += self.cur.verify("normal")
            if set(self.cur.sim) != set(self.net.adj):
                out.append(Violation("nodes", "mapping and network disagree on the node set"))
        else:
            bound = 8 * zeta
            for u in self.net.adj:
                c = self.combined_load(u)
                if c == 0:
                    out.append(Violation("surjectivity", f"node {u} hosts no vertex"))
                if c > bound:
                    out.append(Violation("load", f"node {u} load {c} > {bound}"))
            for m in self.layers():
                assigned = sum(1 for h in m.host if h >= 0)
                if sum(len(s) for s in m.sim.values()) != assigned:
                    out.append(Violation("conservation", f"layer Z({m.p}) loads disagree with its host map"))
                for z, h in enumerate(m.host):
                    if h >= 0 and h not in self.net.adj:
                        out.append(Violation("inverse", f"vertex {z} of Z({m.p}) hosted by dead node {h}"))
            built = sum(1 for h in self.window.new.host if h >= 0)
            live_old = sum(1 for h in self.cur.host if h >= 0)
            anchored_ok = all(
                self.cur.host[a] >= 0 for y, a in enumerate(self.window.new.anchor_of) if self.window.new.host[y] < 0
            )
            if not anchored_ok:
                out.append(Violation("conservation", "unbuilt vertex anchored at a discarded vertex"))
            if built + live_old == 0:
                out.append(Violation("conservation", "no vertex is simulated"))
        if not self.net.connected():
            out.append(Violation("connectivity", "network is disconnected"))
        want: Counter = Counter()
        for m in self.layers():
            want.update(m._links)
        for u, a in self._temp.items():
            want[(min(u, a), max(u, a))] += 1
        have = Counter({(a, b): m for a, nb in self.net.adj.items() for b, m in nb.items() if a < b})
        if want != have:
            out.append(Violation("links", "network links differ from the mapped virtual edges"))
        truth = (self.n, self.spare_count(), self.low_count())
        got = (self.coord.n, self.coord.spare_count, self.coord.low_count)
        if truth != got:
            out.append(Violation("coordinator", f"counters {got} != ground truth {truth}"))
        if self.coord_host != self.coordinator_host():
            out.append(Violation("coordinator", "coordinator is not the host of vertex 0"))
        if self.window is None and max(Counter(self.clouds).values()) > zeta:
            out.append(Violation("cloud", f"a cloud exceeds {zeta} vertices"))
        return out
