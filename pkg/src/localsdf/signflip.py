"""Consistent inside/outside signs across subfields via a minimum spanning tree.

Works on any "field set": an object with ``centers`` (N, 3), ``extents``
(N,), ``signs`` (N,) and ``local_field(i, q) -> (m,)`` returning subfield
i's field in common (frame) units. FieldModel satisfies this; tests use
planted analytic fields.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NoOverlap

OVERLAP_GAP = 1e-12


@dataclass
class SignGraph:
    n_vertices: int
    edges: list[tuple[int, int]] = field(default_factory=list)
    w_same: dict[tuple[int, int], float] = field(default_factory=dict)  # w1: |f_i - f_j|
    w_flip: dict[tuple[int, int], float] = field(default_factory=dict)  # w0: |f_i + f_j|
    signs: np.ndarray | None = None
    tree: list[tuple[int, int]] = field(default_factory=list)

    def neighbors(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n_vertices)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def weight(self, i, j) -> float:
        key = (min(i, j), max(i, j))
        return min(self.w_same[key], self.w_flip[key])

    def to_json(self) -> str:
        return json.dumps({
            "vertices": self.n_vertices,
            "edges": [{"i": i, "j": j, "w1": self.w_same.get((i, j)), "w0": self.w_flip.get((i, j))}
                      for i, j in self.edges],
            "tree": [list(e) for e in self.tree],
            "signs": None if self.signs is None else [int(s) for s in self.signs],
        }, indent=1)


def cubes_overlap(c1, a1, c2, a2) -> bool:
    """Positive-volume intersection of two axis-aligned cubes."""
    c1, c2 = np.asarray(c1, dtype=np.float64), np.asarray(c2, dtype=np.float64)
    a1, a2 = max(a1, 0.0), max(a2, 0.0)
    side = np.minimum(c1 + a1, c2 + a2) - np.maximum(c1 - a1, c2 - a2)
    return bool(np.all(side > OVERLAP_GAP))


def build_overlap_graph(fields) -> SignGraph:
    C = np.asarray(fields.centers, dtype=np.float64)
    A = np.maximum(np.asarray(fields.extents, dtype=np.float64), 0.0)
    N = len(C)
    hi = np.minimum((C + A[:, None])[:, None, :], (C + A[:, None])[None, :, :])
    lo = np.maximum((C - A[:, None])[:, None, :], (C - A[:, None])[None, :, :])
    adj = np.all(hi - lo > OVERLAP_GAP, axis=2)
    ii, jj = np.nonzero(np.triu(adj, k=1))
    return SignGraph(N, edges=list(zip(ii.tolist(), jj.tolist())))


def intersection_box(fields, i, j):
    C = np.asarray(fields.centers)
    A = np.maximum(np.asarray(fields.extents), 0.0)
    lo = np.maximum(C[i] - A[i], C[j] - A[j])
    hi = np.minimum(C[i] + A[i], C[j] + A[j])
    return lo, hi


def edge_weights(fields, i: int, j: int, sample_count: int = 128, seed: int = 0) -> tuple[float, float]:
    """``(w1, w0) = (sum |f_i - f_j|, sum |f_i + f_j|)`` over uniform samples of the overlap box."""
    if not cubes_overlap(fields.centers[i], fields.extents[i], fields.centers[j], fields.extents[j]):
        raise NoOverlap(f"subfields {i} and {j} do not overlap")
    lo, hi = intersection_box(fields, i, j)
    rng = np.random.default_rng([seed, min(i, j), max(i, j)])
    q = rng.uniform(lo, hi, size=(sample_count, 3))
    fi = fields.local_field(i, q)
    fj = fields.local_field(j, q)
    return float(np.abs(fi - fj).sum()), float(np.abs(fi + fj).sum())


def compute_edge_weights(fields, graph: SignGraph, sample_count: int = 128, seed: int = 0) -> SignGraph:
    for i, j in graph.edges:
        graph.w_same[(i, j)], graph.w_flip[(i, j)] = edge_weights(fields, i, j, sample_count, seed)
    return graph


def assign_signs(graph: SignGraph) -> np.ndarray:
    """Prim's algorithm over the overlap graph, propagating signs along tree edges.

    Each component is rooted at its lowest-index vertex with sign +1. An
    edge's weight is ``min(w1, w0)``; a newly reached vertex keeps its
    parent's sign when ``w1 <= w0`` and flips otherwise. Ties in the heap
    resolve by (weight, parent, child) order.
    """
    N = graph.n_vertices
    adj = graph.neighbors()
    signs = np.zeros(N, dtype=np.int64)
    graph.tree = []
    for root in range(N):
        if signs[root] != 0:
            continue
        signs[root] = 1
        heap = [(graph.weight(root, j), root, j) for j in adj[root]]
        heapq.heapify(heap)
        while heap:
            _, i, j = heapq.heappop(heap)
            if signs[j] != 0:
                continue
            key = (min(i, j), max(i, j))
            same = graph.w_same[key] <= graph.w_flip[key]
            signs[j] = signs[i] if same else -signs[i]
            graph.tree.append((i, j))
            for k in adj[j]:
                if signs[k] == 0:
                    heapq.heappush(heap, (graph.weight(j, k), j, k))
    graph.signs = signs
    return signs


def flip_signs(fields, sample_count: int = 128, seed: int = 0) -> SignGraph:
    """Build the graph, weigh its edges, assign signs and store them on ``fields``."""
    graph = build_overlap_graph(fields)
    compute_edge_weights(fields, graph, sample_count, seed)
    fields.signs[:] = assign_signs(graph)
    return graph
