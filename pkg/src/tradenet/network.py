"""Trading networks and the three abnormal two-node motifs.

Every trade is a directed edge from seller to buyer. The network of a stock
pools all of its trades over the sample period and keeps parallel edges and
self-loops.

Motif kinds:

* ``A`` -- self-loop. One instance per self-trading account; ``N_A`` counts
  self-loop edges, ``n_A`` counts accounts.
* ``B`` -- two-node loop. One instance per unordered pair with at least one
  edge in each direction.
* ``C`` -- two-node multiple arcs. One instance per ordered pair ``i -> j``,
  ``i != j``, with at least two parallel edges.

``n_B`` and ``n_C`` are half the number of distinct accounts involved, so
``n_M < N_M`` exactly when instances of kind ``M`` share an account.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .tape import Trade

KINDS = ("A", "B", "C")


@dataclass(frozen=True)
class TradingNetwork:
    nodes: frozenset[str]
    edges: tuple[Trade, ...]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_list(self) -> list[tuple[str, str, str, int]]:
        """``(seller, buyer, day, seq)`` rows for export."""
        return [(e.seller, e.buyer, e.day.isoformat(), e.seq) for e in self.edges]


@dataclass(frozen=True)
class MotifInstance:
    kind: str
    traders: tuple[str, ...]
    edges: tuple[Trade, ...]

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class MotifCensus:
    N_A: int = 0
    N_B: int = 0
    N_C: int = 0
    n_A: float = 0
    n_B: float = 0
    n_C: float = 0

    def as_dict(self) -> dict[str, float]:
        return {
            "N_A": self.N_A,
            "N_B": self.N_B,
            "N_C": self.N_C,
            "n_A": self.n_A,
            "n_B": self.n_B,
            "n_C": self.n_C,
        }


def build_network(trades: Iterable[Trade]) -> TradingNetwork:
    edges = tuple(trades)
    nodes = set()
    for t in edges:
        nodes.add(t.seller)
        nodes.add(t.buyer)
    return TradingNetwork(frozenset(nodes), edges)


def _by_ordered_pair(net: TradingNetwork) -> dict[tuple[str, str], list[Trade]]:
    pairs: dict[tuple[str, str], list[Trade]] = defaultdict(list)
    for e in net.edges:
        pairs[(e.seller, e.buyer)].append(e)
    return pairs


def census_of(instances: Sequence[MotifInstance]) -> MotifCensus:
    """Recompute the census from a list of instances."""
    counts = {k: 0 for k in KINDS}
    traders: dict[str, set[str]] = {k: set() for k in KINDS}
    for inst in instances:
        counts[inst.kind] += inst.n_edges if inst.kind == "A" else 1
        traders[inst.kind].update(inst.traders)
    return MotifCensus(
        N_A=counts["A"],
        N_B=counts["B"],
        N_C=counts["C"],
        n_A=len(traders["A"]),
        n_B=len(traders["B"]) / 2,
        n_C=len(traders["C"]) / 2,
    )


def detect_motifs(net: TradingNetwork) -> tuple[list[MotifInstance], MotifCensus]:
    """Find all A, B and C instances in one pass over the ordered-pair groups.

    Instances come out ordered by kind, then by their trader tuple.
    """
    pairs = _by_ordered_pair(net)
    a, b, c = [], [], []
    for (i, j), edges in pairs.items():
        if i == j:
            a.append(MotifInstance("A", (i,), tuple(edges)))
            continue
        if len(edges) >= 2:
            c.append(MotifInstance("C", (i, j), tuple(edges)))
        if i < j and (j, i) in pairs:
            b.append(MotifInstance("B", (i, j), tuple(edges) + tuple(pairs[(j, i)])))
    instances = sorted(a, key=lambda m: m.traders) + sorted(b, key=lambda m: m.traders) + sorted(c, key=lambda m: m.traders)
    return instances, census_of(instances)


def motif_subnetwork(net: TradingNetwork, kind: str, instances: Sequence[MotifInstance] | None = None) -> TradingNetwork:
    """Restrict ``net`` to the edges of its ``kind`` instances and their endpoints."""
    if kind not in KINDS:
        raise ValueError(f"unknown motif kind {kind!r}")
    if instances is None:
        instances, _ = detect_motifs(net)
    keep = set()
    for inst in instances:
        if inst.kind == kind:
            keep.update(id(e) for e in inst.edges)
    return build_network(e for e in net.edges if id(e) in keep)


class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self) -> None:
        self.parent: dict[str, str] = {}
        self.size: dict[str, int] = {}

    def add(self, x: str) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x: str) -> str:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, x: str, y: str) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        if self.size[rx] < self.size[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        self.size[rx] += self.size[ry]

    def component_sizes(self) -> list[int]:
        return [self.size[x] for x in self.parent if self.parent[x] == x]


def cluster_sizes(sub: TradingNetwork) -> list[int]:
    """Node counts of the weakly connected components, largest first."""
    uf = UnionFind()
    for n in sub.nodes:
        uf.add(n)
    for e in sub.edges:
        uf.union(e.seller, e.buyer)
    return sorted(uf.component_sizes(), reverse=True)


def edge_count_sample(instances: Sequence[MotifInstance], kind: str = "C") -> list[int]:
    """Parallel-edge multiplicities of the C instances."""
    if kind != "C":
        raise ValueError(f"edge counts are defined for C motifs only, got {kind!r}")
    return [inst.n_edges for inst in instances if inst.kind == "C"]


def motif_edges(instances: Iterable[MotifInstance]) -> list[Trade]:
    """Distinct trades that belong to any instance, ordered by ``(day, seq)``."""
    seen: dict[tuple, Trade] = {}
    for inst in instances:
        for e in inst.edges:
            seen.setdefault(e.key, e)
    return [seen[k] for k in sorted(seen)]
