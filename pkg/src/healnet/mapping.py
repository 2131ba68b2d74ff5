"""Assignment of virtual p-cycle vertices to real nodes.

A VirtualMapping records which node hosts each vertex of Z(p) and keeps the
multiplicity of every network link induced by the mapping: a virtual edge
whose endpoints live on different nodes contributes one to the link between
them.  Changes are pushed to an optional sink (the live Network), so several
mappings can share one network during a rebuild.
"""
from __future__ import annotations

import contextlib
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from .pcycle import PCycle, pcycle
from .simnet import Network, link_key
from .spectral import Multigraph, second_eigenvalue, pcycle_graph

ZETA = 8

LinkSink = Callable[[int, int, int], None]
MoveListener = Callable[[int, int, int], None]  # (vertex, old host, new host)


class NotOwner(ValueError):
    pass


class UnknownNode(KeyError):
    pass


def low_threshold(zeta: int = ZETA) -> int:
    return 2 * zeta


def is_low(load: int, zeta: int = ZETA) -> bool:
    return load <= 2 * zeta


def is_spare(load: int) -> bool:
    return load >= 2


def balanced_hosts(p: int, nodes: Sequence[int]) -> List[int]:
    """Contiguous blocks: vertex z goes to nodes[z * n // p]."""
    n = len(nodes)
    return [nodes[z * n // p] for z in range(p)]


class VirtualMapping:
    def __init__(
        self,
        cycle: PCycle,
        host: Sequence[int],
        zeta: int = ZETA,
        sink: Optional[LinkSink] = None,
        nodes: Iterable[int] = (),
    ):
        self.cycle = cycle
        self.p = cycle.p
        self.zeta = zeta
        self.host: List[int] = list(host)
        if len(self.host) != self.p:
            raise ValueError("host list must cover every vertex")
        self.sim: Dict[int, Set[int]] = {u: set() for u in nodes}
        self.listeners: List[MoveListener] = []
        self._links: Counter = Counter()
        self.sink = None
        for z, u in enumerate(self.host):
            if u >= 0:
                self.sim.setdefault(u, set()).add(z)
        for eid in range(cycle.num_edge_ids):
            if eid >= self.p and eid - self.p >= cycle.inverses[eid - self.p]:
                continue
            self._apply(eid, +1)
        if sink is not None:
            self.attach(sink)

    def attach(self, sink: LinkSink) -> None:
        """Start pushing link multiplicities into sink, beginning with all current ones."""
        self.sink = sink
        for (a, b), m in sorted(self._links.items()):
            sink(a, b, m)

    def detach(self) -> None:
        """Withdraw every link this mapping contributed to its sink."""
        if self.sink is not None:
            for (a, b), m in sorted(self._links.items()):
                self.sink(a, b, -m)
        self.sink = None

    # hooks overridden by layered views
    def effective_host(self, z: int) -> int:
        return self.host[z]

    def edge_present(self, eid: int) -> bool:
        a, b = self.cycle.edge_endpoints(eid)
        return self.host[a] >= 0 and self.host[b] >= 0

    def _edge_link(self, eid: int) -> Optional[Tuple[int, int]]:
        if not self.edge_present(eid):
            return None
        a, b = self.cycle.edge_endpoints(eid)
        ha, hb = self.effective_host(a), self.effective_host(b)
        if ha < 0 or hb < 0 or ha == hb:
            return None
        return link_key(ha, hb)

    def _apply(self, eid: int, sign: int) -> None:
        key = self._edge_link(eid)
        if key is None:
            return
        self._links[key] += sign
        if self._links[key] == 0:
            del self._links[key]
        if self.sink is not None:
            self.sink(key[0], key[1], sign)

    def _edge_ids(self, vertices: Iterable[int]) -> Set[int]:
        out: Set[int] = set()
        for z in vertices:
            out.update(self.cycle.incident_edge_ids(z))
        return out

    @contextlib.contextmanager
    def rewiring(self, vertices: Iterable[int]) -> Iterator[None]:
        """Retract the links of edges at `vertices`, run the body, reapply them."""
        eids = sorted(self._edge_ids(vertices))
        for e in eids:
            self._apply(e, -1)
        try:
            yield
        finally:
            for e in eids:
                self._apply(e, +1)

    # nodes and loads
    @property
    def nodes(self) -> List[int]:
        return sorted(self.sim)

    def add_node(self, u: int) -> None:
        self.sim.setdefault(u, set())

    def drop_node(self, u: int) -> None:
        if self.sim.get(u):
            raise ValueError(f"node {u} still hosts vertices")
        self.sim.pop(u, None)

    def load(self, u: int) -> int:
        return len(self.sim.get(u, ()))

    def loads(self) -> Dict[int, int]:
        return {u: len(s) for u, s in self.sim.items()}

    def low_set(self) -> Set[int]:
        return {u for u, s in self.sim.items() if is_low(len(s), self.zeta)}

    def spare_set(self) -> Set[int]:
        return {u for u, s in self.sim.items() if is_spare(len(s))}

    def max_load(self) -> int:
        return max((len(s) for s in self.sim.values()), default=0)

    def _set_raw(self, z: int, u: int) -> None:
        old = self.host[z]
        if old == u:
            return
        was = self.effective_host(z)
        if old >= 0:
            self.sim[old].discard(z)
        self.host[z] = u
        if u >= 0:
            self.sim.setdefault(u, set()).add(z)
        self._after_move(z, old, u)
        now = self.effective_host(z)
        if was != now:
            for fn in self.listeners:
                fn(z, was, now)

    def _after_move(self, z: int, old: int, new: int) -> None:
        pass

    def set_host(self, z: int, u: int) -> None:
        with self.rewiring([z]):
            self._set_raw(z, u)

    def set_hosts(self, moves: Dict[int, int]) -> None:
        with self.rewiring(moves):
            for z, u in moves.items():
                self._set_raw(z, u)

    def transfer_vertex(self, z: int, src: int, dst: int) -> List[Tuple[str, int, int]]:
        """Move z from src to dst; returns the link additions and removals."""
        if src not in self.sim:
            raise UnknownNode(src)
        if dst not in self.sim:
            raise UnknownNode(dst)
        if self.host[z] != src:
            raise NotOwner(f"node {src} does not host vertex {z}")
        before = self._links_at(z)
        had = {k: self._links.get(k, 0) > 0 for k in before}
        self.set_host(z, dst)
        after = self._links_at(z)
        for k in after:
            had.setdefault(k, False)
        delta = []
        for k in sorted(had):
            now = self._links.get(k, 0) > 0
            if now != had[k]:
                delta.append(("add" if now else "remove", k[0], k[1]))
        return delta

    def _links_at(self, z: int) -> Set[Tuple[int, int]]:
        out = set()
        for e in self.cycle.incident_edge_ids(z):
            key = self._edge_link(e)
            if key is not None:
                out.add(key)
        return out

    def links(self) -> Set[Tuple[int, int]]:
        return set(self._links)

    def link_multiplicity(self, a: int, b: int) -> int:
        return self._links.get(link_key(a, b), 0)

    def quotient(self) -> "QuotientGraph":
        return QuotientGraph.contract(self.cycle, self.effective_host)

    def verify(self, phase: str = "normal") -> List["Violation"]:
        return verify_mapping(self, phase)

    def snapshot(self, step: int) -> str:
        return write_snapshot(self.p, step, self.host)


# quotient multigraph


@dataclass
class QuotientGraph:
    """Contraction of Z(p) along the host map.

    `edges` counts virtual edges per unordered node pair, each virtual edge
    once.  The adjacency matrix is P^T A P: a virtual edge inside one node
    becomes a self-loop worth 2 on the diagonal, while a virtual self-loop stays
    worth 1, so every node's degree is 3 * load.
    """

    nodes: List[int]
    edges: Counter
    adjacency: np.ndarray

    @classmethod
    def contract(cls, cycle: PCycle, host: Callable[[int], int], extra: Iterable[Tuple[int, int, int]] = ()) -> "QuotientGraph":
        pairs: List[Tuple[int, int, bool]] = []
        for a, b in cycle.edges():
            pairs.append((host(a), host(b), a == b))
        for ha, hb, loop in extra:
            pairs.append((ha, hb, bool(loop)))
        return cls.from_pairs(pairs)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[int, int, bool]]) -> "QuotientGraph":
        nodes = sorted({h for a, b, _ in pairs for h in (a, b)})
        idx = {u: i for i, u in enumerate(nodes)}
        a_mat = np.zeros((len(nodes), len(nodes)))
        edges: Counter = Counter()
        for ha, hb, virtual_loop in pairs:
            i, j = idx[ha], idx[hb]
            edges[link_key(ha, hb)] += 1
            if i == j:
                a_mat[i, i] += 1 if virtual_loop else 2
            else:
                a_mat[i, j] += 1
                a_mat[j, i] += 1
        return cls(nodes, edges, a_mat)

    def degree(self, u: int) -> int:
        return int(self.adjacency[self.nodes.index(u)].sum())

    def edge_multiplicity(self, a: int, b: int) -> int:
        return self.edges.get(link_key(a, b), 0)

    def multigraph(self) -> Multigraph:
        return Multigraph(self.adjacency)


# verification


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


def SurjectivityViolation(u: int) -> Violation:
    return Violation("surjectivity", f"node {u} hosts no vertex")


def LoadViolation(u: int, load: int, bound: int) -> Violation:
    return Violation("load", f"node {u} load {load} > {bound}")


def load_bound(phase: str, zeta: int = ZETA) -> int:
    return 8 * zeta if phase == "staggering" else 4 * zeta


def verify_mapping(m: VirtualMapping, phase: str = "normal") -> List[Violation]:
    out: List[Violation] = []
    bound = load_bound(phase, m.zeta)
    total = 0
    for z, u in enumerate(m.host):
        if u < 0:
            out.append(Violation("unassigned", f"vertex {z} has no host"))
        elif z not in m.sim.get(u, ()):
            out.append(Violation("inverse", f"vertex {z} -> {u} missing from Sim({u})"))
    for u, s in m.sim.items():
        total += len(s)
        if not s:
            out.append(SurjectivityViolation(u))
        if len(s) > bound:
            out.append(LoadViolation(u, len(s), bound))
        for z in s:
            if m.host[z] != u:
                out.append(Violation("inverse", f"Sim({u}) lists {z} hosted by {m.host[z]}"))
    if total != m.p:
        out.append(Violation("conservation", f"sum of loads {total} != p {m.p}"))
    return out


def check_metric_map(
    m: VirtualMapping, net: Network, pairs: int, rng: np.random.Generator
) -> List[Violation]:
    """Network distance between hosts never exceeds the virtual distance."""
    out = []
    for _ in range(pairs):
        a, b = (int(v) for v in rng.integers(0, m.p, size=2))
        dv = m.cycle.distance(a, b)
        ha, hb = m.effective_host(a), m.effective_host(b)
        dn = net.bfs_levels(hb).get(ha)
        if dn is None or dn > dv:
            out.append(Violation("metric", f"d_net({ha},{hb})={dn} > d_Z({a},{b})={dv}"))
    return out


def contraction_check(m: VirtualMapping, tol: float = 1e-9) -> Tuple[bool, float, float]:
    lam_q = second_eigenvalue(m.quotient().multigraph()).lambda2
    lam_z = second_eigenvalue(pcycle_graph(m.cycle), method="dense").lambda2
    return lam_q <= lam_z + tol, lam_q, lam_z


# snapshots


def write_snapshot(p: int, step: int, host: Sequence[int]) -> str:
    lines = [f"p={p} step={step}"]
    lines += [f"{z}\t{u}" for z, u in enumerate(host)]
    return "\n".join(lines) + "\n"


def read_snapshot(text: str) -> Tuple[int, int, List[int]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = dict(tok.split("=", 1) for tok in lines[0].split())
    p, step = int(head["p"]), int(head["step"])
    host = [-1] * p
    for ln in lines[1:]:
        z, u = ln.split("\t")
        host[int(z)] = int(u)
    return p, step, host


def mapping_from_snapshot(text: str, zeta: int = ZETA) -> Tuple[int, VirtualMapping]:
    p, step, host = read_snapshot(text)
    return step, VirtualMapping(pcycle(p), host, zeta)
