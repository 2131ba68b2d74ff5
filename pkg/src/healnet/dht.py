"""Key-value store on top of the overlay.

A key lives at the node hosting vertex hash_key(key, p).  Items follow their
home vertex whenever it moves.  While a staggered rebuild is running, an item
is re-homed onto the new cycle when the old vertex it lived on is activated;
until then the old host keeps it, and after activation the old host forwards
requests for it to the new home (a forwarding stub).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Set, Tuple

from .mapping import VirtualMapping
from .protocol import Overlay, OverlayObserver, Window
from .simnet import MASK64, compress, mix64

log = logging.getLogger(__name__)

MAX_VALUE = 256
P_TWEAK = 0xD6E8FEB86659FD93


class Missing(KeyError):
    pass


def p_tweak(p: int) -> int:
    """Per-modulus tweak every node derives from p alone."""
    return mix64(p * P_TWEAK)


def hash_key(key: int, p: int) -> int:
    return mix64((key & MASK64) ^ p_tweak(p)) % p


@dataclass
class DhtItem:
    key: int
    value: bytes
    layer_p: int
    home_vertex: int


@dataclass(frozen=True)
class OpStats:
    op: str
    key: int
    hops: int
    extra_hops: int
    messages: int


class Dht(OverlayObserver):
    def __init__(self, overlay: Overlay):
        self.ov = overlay
        self.store: Dict[int, Dict[int, DhtItem]] = {}  # node -> key -> item
        self.where: Dict[int, int] = {}  # key -> node
        self.by_home: Dict[Tuple[int, int], Set[int]] = {}
        self.activated: Set[int] = set()  # old vertices whose items moved to the new cycle
        self.handoff_messages = 0
        self.ops: List[OpStats] = []
        overlay.observers.append(self)

    # placement

    def _place(self, item: DhtItem, node: int) -> None:
        self.store.setdefault(node, {})[item.key] = item
        self.where[item.key] = node
        self.by_home.setdefault((item.layer_p, item.home_vertex), set()).add(item.key)

    def _take(self, key: int) -> DhtItem:
        node = self.where.pop(key)
        item = self.store[node].pop(key)
        if not self.store[node]:
            del self.store[node]
        home = (item.layer_p, item.home_vertex)
        self.by_home[home].discard(key)
        if not self.by_home[home]:
            del self.by_home[home]
        return item

    def _layer(self, p: int) -> VirtualMapping:
        for m in self.ov.layers():
            if m.p == p:
                return m
        raise KeyError(f"no layer with p={p}")

    def responsible(self, key: int) -> Tuple[VirtualMapping, int]:
        """(layer, vertex) that currently owns key."""
        w = self.ov.window
        if w is not None:
            x = hash_key(key, w.plan.p_old)
            if w.phase == 1 and x not in self.activated:
                return self.ov.cur, x
            return w.new, hash_key(key, w.plan.p_new)
        return self.ov.cur, hash_key(key, self.ov.p)

    def home_node(self, key: int) -> int:
        m, z = self.responsible(key)
        return m.effective_host(z)

    # routing

    def _route(self, origin: int, m: VirtualMapping, z: int) -> List[int]:
        """Hosts along the origin's shortest virtual path to z (network BFS if it has no vertex in m)."""
        target = m.effective_host(z)
        verts = m.sim.get(origin)
        if verts:
            hosts = compress(m.effective_host(v) for v in m.cycle.shortest_path(min(verts), z))
            if all(self.ov.net.has_link(a, b) for a, b in zip(hosts, hosts[1:])):
                return hosts
        return self.ov.net.bfs_path(origin, target)

    def _lookup_path(self, origin: int, key: int) -> Tuple[List[int], int]:
        """Path to the node holding key, and how many hops the stub added."""
        w = self.ov.window
        if w is not None and w.phase == 1:
            x = hash_key(key, w.plan.p_old)
            path = self._route(origin, self.ov.cur, x)
            if x in self.activated:
                y = hash_key(key, w.plan.p_new)
                stub = self._route(path[-1], w.new, y)
                return path + stub[1:], len(stub) - 1
            return path, 0
        m, z = self.responsible(key)
        return self._route(origin, m, z), 0

    def _record(self, op: str, key: int, path: List[int], extra: int) -> OpStats:
        hops = len(path) - 1
        st = OpStats(op, key, hops, extra, 2 * hops)
        self.ops.append(st)
        return st

    # API

    def put(self, origin: int, key: int, value: bytes) -> OpStats:
        if len(value) > MAX_VALUE:
            raise ValueError(f"value longer than {MAX_VALUE} bytes")
        path, extra = self._lookup_path(origin, key)
        if key in self.where:
            self._take(key)
        m, z = self.responsible(key)
        self._place(DhtItem(key, bytes(value), m.p, z), m.effective_host(z))
        return self._record("put", key, path, extra)

    def get(self, origin: int, key: int) -> Tuple[bytes, OpStats]:
        path, extra = self._lookup_path(origin, key)
        st = self._record("get", key, path, extra)
        node = path[-1]
        item = self.store.get(node, {}).get(key)
        if item is None:
            raise Missing(key)
        return item.value, st

    # overlay hooks

    def vertex_moved(self, mapping: VirtualMapping, z: int, old: int, new: int) -> None:
        keys = self.by_home.get((mapping.p, z))
        if not keys or new < 0:
            return
        for k in sorted(keys):
            item = self._take(k)
            self._place(item, new)
        self.handoff_messages += 1

    def block_activated(self, node: int, old_vertices) -> None:
        w = self.ov.window
        p_old, p_new = w.plan.p_old, w.plan.p_new
        for x in old_vertices:
            if x in self.activated:
                continue
            self.activated.add(x)
            for k in sorted(self.by_home.get((p_old, x), ())):
                item = self._take(k)
                y = hash_key(k, p_new)
                dst = w.new.effective_host(y)
                self.handoff_messages += len(self.ov._path_to(node, dst, y)) - 1
                self._place(DhtItem(k, item.value, p_new, y), dst)

    def layer_switched(self, old: VirtualMapping, new: VirtualMapping) -> None:
        for k in sorted(self.where):
            item = self._take(k)
            z = hash_key(k, new.p)
            self._place(DhtItem(k, item.value, new.p, z), new.host[z])
            self.handoff_messages += 1

    def window_started(self, window: Window) -> None:
        self.activated = set()

    def window_completed(self, window: Window, final: VirtualMapping) -> None:
        self.activated = set()

    # audit

    def audit(self, truth: Dict[int, bytes]) -> List[str]:
        """Compare against an omniscient ledger of everything ever put."""
        problems = []
        held: Dict[int, List[int]] = {}
        for node, items in self.store.items():
            if node not in self.ov.net.adj:
                problems.append(f"items stored at dead node {node}")
            for k in items:
                held.setdefault(k, []).append(node)
        for k, v in truth.items():
            nodes = held.get(k, [])
            if len(nodes) != 1:
                problems.append(f"key {k} held by {len(nodes)} nodes")
                continue
            if self.store[nodes[0]][k].value != v:
                problems.append(f"key {k} has the wrong value")
            if nodes[0] != self.home_node(k):
                problems.append(f"key {k} at node {nodes[0]}, owner is {self.home_node(k)}")
        extra = set(held) - set(truth)
        if extra:
            problems.append(f"{len(extra)} keys nobody stored")
        return problems
