"""Brute-force reference for Personalized PageRank, used only by tests.

Solves the stationary system directly: p = (1-d)*s + d*T(p) where T is the
column-stochastic transition built from the (optionally symmetrized)
row-normalized weighted adjacency, and dangling rows move their mass to the
seed distribution. Rearranged, (I - d*C) p = (1-d) s with C[j,i] the
probability of stepping i -> j. A dense linear solve gives the exact answer
for small graphs.
"""

import random

import numpy as np

from toolweave.graph import Edge, EdgeDirection, FusedGraph, Node, NodeKind, Relation


def dense_ppr_solve(graph, seeds, damping, symmetrize=True):
    order = sorted(graph.nodes)
    n = len(order)
    index = {nid: i for i, nid in enumerate(order)}

    s = np.zeros(n)
    for nid, mass in seeds.items():
        s[index[nid]] = mass

    W = np.zeros((n, n))
    for edge in graph.edges:
        i, j = index[edge.src], index[edge.dst]
        W[i, j] += edge.weight
        if symmetrize:
            W[j, i] += edge.weight

    C = np.zeros((n, n))  # C[j, i]: probability of stepping i -> j
    for i in range(n):
        total = W[i].sum()
        if total > 0:
            C[:, i] = W[i] / total
        else:
            C[:, i] = s
    p = np.linalg.solve(np.eye(n) - damping * C, (1.0 - damping) * s)
    return {nid: float(p[index[nid]]) for nid in order}


def random_graph_case(rng: random.Random):
    """A small random graph, seed distribution, and PPR settings."""
    n = rng.randint(1, 12)
    ids = [f"n{i:02d}" for i in range(n)]
    nodes = [Node(id=nid, kind=NodeKind.ENTITY, label=nid) for nid in ids]

    edges = []
    seen = set()
    for _ in range(rng.randint(0, n * 3)):
        src, dst = rng.choice(ids), rng.choice(ids)
        if (src, dst) in seen:
            continue
        seen.add((src, dst))
        edges.append(
            Edge(
                src=src,
                dst=dst,
                relation=Relation.DOC_TRIPLE,
                predicate="r",
                weight=rng.uniform(0.1, 5.0),
            )
        )
    graph = FusedGraph(nodes, edges)

    n_seeds = rng.randint(1, n)
    chosen = rng.sample(ids, n_seeds)
    raw = [rng.uniform(0.1, 1.0) for _ in chosen]
    total = sum(raw)
    masses = [x / total for x in raw]
    masses[-1] = 1.0 - sum(masses[:-1])
    seeds = dict(zip(chosen, masses))

    damping = rng.uniform(0.1, 0.95)
    symmetrize = rng.random() < 0.5
    return graph, seeds, damping, symmetrize


def direction_of(symmetrize: bool) -> EdgeDirection:
    return EdgeDirection.SYMMETRIZE if symmetrize else EdgeDirection.AS_IS
