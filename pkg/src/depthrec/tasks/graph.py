"""Directed reachability instances with an exactly planted hop distance."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .sampling import balanced_labels

DEFAULT_NODES = 16
DEFAULT_ID_POOL = 32
INF = math.inf


@dataclass
class GraphInstance:
    n: int
    edges: list[tuple[int, int]]
    s: int
    t: int
    label: int
    hops: int  # planted path length; the shortest distance when label == 1
    ids: list[int] = field(default_factory=list)  # surface ids, 1-based into the id pool

    @property
    def distance(self) -> float:
        return self.hops if self.label else INF

    @property
    def complexity(self) -> int:
        return self.hops

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "edges": [list(e) for e in self.edges], "s": self.s, "t": self.t,
             "label": self.label, "hops": self.hops, "ids": self.ids}
        )

    @classmethod
    def from_dict(cls, rec: dict) -> "GraphInstance":
        ids = rec.get("ids") or list(range(1, rec["n"] + 1))
        return cls(rec["n"], [tuple(e) for e in rec["edges"]], rec["s"], rec["t"],
                   int(rec["label"]), int(rec["hops"]), list(ids))


def nodes_for(hops: int) -> int:
    return max(DEFAULT_NODES, 2 * hops)


def _adjacency(n: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
    return adj


def bfs_distances(n: int, adj: list[list[int]], src: int) -> list[float]:
    dist = [INF] * n
    dist[src] = 0
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] == INF:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def bfs_oracle(g: GraphInstance) -> tuple[bool, float]:
    d = bfs_distances(g.n, _adjacency(g.n, g.edges), g.s)[g.t]
    return d != INF, d


def k_hop_reach(n: int, edges: Iterable[tuple[int, int]], node: int, k: int) -> set[int]:
    """Nodes whose state can flow into ``node`` within ``k`` masked-attention steps.

    Row ``i`` of the adjacency mask opens the keys ``j`` with an edge ``i -> j``, so
    information travels against edge direction and this is the forward ``k``-ball.
    """
    dist = bfs_distances(n, _adjacency(n, edges), node)
    return {v for v in range(n) if dist[v] <= k}


class InfeasibleError(ValueError):
    pass


def gen_graph(
    hops: int,
    n: Optional[int] = None,
    rng: np.random.Generator | int | None = None,
    label: Optional[int] = None,
    id_pool: int = DEFAULT_ID_POOL,
    extra_edges: Optional[int] = None,
) -> GraphInstance:
    """Plant an ``s -> t`` path of ``hops`` edges, then add distractor edges.

    Positives keep the shortest ``s -> t`` distance at exactly ``hops``. Negatives cut one
    path edge and never let a distractor reconnect ``s`` to ``t``. In both cases ``s`` has
    an out-edge and ``t`` an in-edge.
    """
    if hops < 1:
        raise InfeasibleError("hops must be >= 1")
    n = nodes_for(hops) if n is None else n
    if n < hops + 1:
        raise InfeasibleError(f"{n} nodes cannot host a {hops}-hop path")
    if id_pool < n:
        raise InfeasibleError(f"id pool {id_pool} smaller than node count {n}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if label is None:
        label = int(rng.integers(2))

    while True:
        g = _try_graph(hops, n, rng, label, extra_edges)
        if g is not None:
            g.ids = (rng.permutation(id_pool)[:n] + 1).tolist()
            return g


def _try_graph(hops: int, n: int, rng: np.random.Generator, label: int,
               extra_edges: Optional[int]) -> Optional[GraphInstance]:
    order = rng.permutation(n).tolist()
    path = order[: hops + 1]
    s, t = path[0], path[-1]
    edges = list(zip(path[:-1], path[1:]))
    if not label:
        del edges[int(rng.integers(hops))]
    edge_set = set(edges)
    adj = _adjacency(n, edges)
    radj = _adjacency(n, ((v, u) for u, v in edges))

    def refresh():
        return bfs_distances(n, adj, s), bfs_distances(n, radj, t)

    from_s, to_t = refresh()
    target = extra_edges if extra_edges is not None else int(rng.integers(n // 2, n + 1))
    added = attempts = 0
    while added < target and attempts < 20 * target + 50:
        attempts += 1
        u, v = (int(x) for x in rng.integers(n, size=2))
        if u == v or (u, v) in edge_set:
            continue
        if label:
            if from_s[u] + 1 + to_t[v] < hops:
                continue
        elif from_s[u] != INF and to_t[v] != INF:
            continue
        edge_set.add((u, v))
        edges.append((u, v))
        adj[u].append(v)
        radj[v].append(u)
        added += 1
        from_s, to_t = refresh()
    if not adj[s] or not radj[t]:
        return None
    order_idx = rng.permutation(len(edges))
    edges = [edges[i] for i in order_idx]
    return GraphInstance(n, edges, s, t, label, hops)


def gen_graph_batch(hops: Iterable[int], rng: np.random.Generator, n: Optional[int] = None,
                    id_pool: int = DEFAULT_ID_POOL) -> list[GraphInstance]:
    hops = list(hops)
    labels = balanced_labels(len(hops), rng)
    return [gen_graph(h, n, rng, lab, id_pool) for h, lab in zip(hops, labels)]
