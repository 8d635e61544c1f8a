"""Directed acyclic graphs, ground-truth supports, and the SHD metric."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def topological_order(d: int, edges: Iterable[tuple[int, int]]) -> tuple[int, ...] | None:
    """Kahn's algorithm. Returns a topological order, or None if the graph is cyclic.

    Ties are broken by smallest node id so the result is deterministic.
    """
    children: dict[int, list[int]] = {i: [] for i in range(d)}
    indeg = [0] * d
    for p, c in edges:
        children[p].append(c)
        indeg[c] += 1
    ready = sorted(i for i in range(d) if indeg[i] == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for c in sorted(children[node]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort()
    if len(order) != d:
        return None
    return tuple(order)


@dataclass(frozen=True)
class Dag:
    """A DAG over nodes 0..d-1 with a cached topological order.

    Edges are (parent, child) pairs. Construction validates acyclicity,
    absence of self-loops, and consistency of `order` with every edge.
    """

    d: int
    edges: frozenset[tuple[int, int]]
    order: tuple[int, ...]

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("need at least one node")
        if sorted(self.order) != list(range(self.d)):
            raise ValueError("order is not a permutation of the nodes")
        pos = {node: i for i, node in enumerate(self.order)}
        for p, c in self.edges:
            if p == c:
                raise ValueError(f"self-loop at node {p}")
            if not (0 <= p < self.d and 0 <= c < self.d):
                raise ValueError(f"edge ({p},{c}) out of range")
            if pos[p] >= pos[c]:
                raise ValueError(f"order violates edge {p}->{c}")

    @staticmethod
    def from_edges(d: int, edges: Iterable[tuple[int, int]]) -> "Dag":
        edges = frozenset((int(p), int(c)) for p, c in edges)
        order = topological_order(d, edges)
        if order is None:
            raise ValueError("edge set contains a cycle")
        return Dag(d=d, edges=edges, order=order)

    def parents(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(p for p, c in self.edges if c == node))

    def relabel(self, perm: Sequence[int]) -> "Dag":
        """Rename node i to perm[i]."""
        perm = list(perm)
        return Dag.from_edges(self.d, {(perm[p], perm[c]) for p, c in self.edges})


def single_edge_dag() -> Dag:
    """The bivariate graph 0 -> 1."""
    return Dag.from_edges(2, {(0, 1)})


def chain_dag(d: int) -> Dag:
    return Dag.from_edges(d, {(i, i + 1) for i in range(d - 1)})


def random_dag(d: int, rng: np.random.Generator, p_edge: float = 0.5) -> Dag:
    """Erdos-Renyi DAG: random causal order, each forward pair wired with p_edge."""
    order = rng.permutation(d)
    edges = set()
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p_edge:
                edges.add((int(order[a]), int(order[b])))
    return Dag.from_edges(d, edges)


def ground_truth_support(dag: Dag) -> np.ndarray:
    """Boolean d x d support of the inverse mixing Jacobian.

    Entry (i, j) is True iff i == j or j is a parent of i: the i-th inverse
    component recovers the i-th source from x_i and the parent coordinates
    only, so zeros mark absent edges.
    """
    supp = np.eye(dag.d, dtype=bool)
    for p, c in dag.edges:
        supp[c, p] = True
    return supp


def edges_from_support(support: np.ndarray) -> frozenset[tuple[int, int]]:
    """Off-diagonal True at (i, j) means an edge j -> i."""
    d = support.shape[0]
    return frozenset(
        (j, i) for i in range(d) for j in range(d) if i != j and support[i, j]
    )


def shd(estimate: Dag, truth: Dag) -> int:
    """Structural Hamming distance: edge additions + removals + direction flips.

    A flip counts as a single move.
    """
    if estimate.d != truth.d:
        raise ValueError("graphs have different node counts")
    dist = 0
    for i in range(truth.d):
        for j in range(i + 1, truth.d):
            a = _pair_state(estimate, i, j)
            b = _pair_state(truth, i, j)
            if a != b:
                dist += 1
    return dist


def _pair_state(dag: Dag, i: int, j: int) -> int:
    if (i, j) in dag.edges:
        return 1
    if (j, i) in dag.edges:
        return 2
    return 0
