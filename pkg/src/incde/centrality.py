"""Graph-structure scores over the emerging subgraph of a time step.

The triples are viewed as an undirected multigraph: every triple ``(h, r, t)``
with ``h != t`` is one edge labelled ``r``. Parallel edges are distinct
edges, so they multiply shortest-path counts. Self-loops never lie on a
shortest path and are ignored for path counting.

Betweenness sums run over *unordered* entity pairs.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .kg import as_triple_array

#: Above this many entities, betweenness is estimated from sampled sources.
DEFAULT_PIVOT_THRESHOLD = 3000
DEFAULT_PIVOTS = 256


@dataclass
class CentralityScores:
    node_centrality: dict = field(default_factory=dict)
    entity_betweenness: dict = field(default_factory=dict)
    relation_betweenness: dict = field(default_factory=dict)
    sampled: bool = False


def _entities(triples: np.ndarray) -> list:
    return sorted(set(triples[:, 0].tolist()) | set(triples[:, 2].tolist()))


def _adjacency(triples: np.ndarray) -> dict:
    adj = defaultdict(list)
    for h, r, t in triples.tolist():
        if h == t:
            continue
        adj[h].append((t, r))
        adj[t].append((h, r))
    return adj


def node_centrality(triples) -> dict:
    """Distinct undirected neighbours of each entity divided by ``N - 1``."""
    triples = as_triple_array(triples)
    if len(triples) == 0:
        raise ValueError("node_centrality needs at least one triple")
    ents = _entities(triples)
    neighbours = {e: set() for e in ents}
    for h, _, t in triples.tolist():
        if h != t:
            neighbours[h].add(t)
            neighbours[t].add(h)
    n = len(ents)
    if n == 1:
        return {ents[0]: 0.0}
    return {e: len(neighbours[e]) / (n - 1) for e in ents}


def _single_source(adj, s):
    """BFS from ``s``; returns visit order, path counts and predecessor edges."""
    sigma = {s: 1}
    dist = {s: 0}
    preds = defaultdict(list)
    order = []
    queue = deque([s])
    while queue:
        v = queue.popleft()
        order.append(v)
        dv = dist[v]
        for w, label in adj.get(v, ()):
            if w not in dist:
                dist[w] = dv + 1
                sigma[w] = 0
                queue.append(w)
            if dist[w] == dv + 1:
                sigma[w] += sigma[v]
                preds[w].append((v, label))
    return order, sigma, preds


def _accumulate(adj, s, ent_bc, rel_bc, scale):
    order, sigma, preds = _single_source(adj, s)

    # paths_with[w][r]: shortest s-w paths using at least one r-labelled edge
    paths_with = {s: {}}
    for w in order[1:]:
        acc = defaultdict(int)
        for v, label in preds[w]:
            sv = sigma[v]
            for r, c in paths_with[v].items():
                if r != label:
                    acc[r] += c
            acc[label] += sv
        paths_with[w] = acc
        sw = sigma[w]
        for r, c in acc.items():
            rel_bc[r] += scale * c / sw

    delta = dict.fromkeys(order, 0.0)
    for w in reversed(order):
        coeff = (1.0 + delta[w]) / sigma[w]
        for v, _ in preds[w]:
            delta[v] += sigma[v] * coeff
        if w != s:
            ent_bc[w] += scale * delta[w]


def betweenness(triples, *, pivots: int | None = None, seed: int = 0) -> tuple[dict, dict]:
    """Entity and relation betweenness in one Brandes sweep.

    Relation attribution counts a shortest path once for a label even when
    the path crosses several edges with that label. With ``pivots`` set (and
    smaller than the entity count) only that many uniformly sampled sources
    are swept and the sums are rescaled by ``N / pivots``.
    """
    triples = as_triple_array(triples)
    if len(triples) == 0:
        raise ValueError("betweenness needs at least one triple")
    ents = _entities(triples)
    adj = _adjacency(triples)
    ent_bc = dict.fromkeys(ents, 0.0)
    rel_bc = dict.fromkeys(sorted(set(triples[:, 1].tolist())), 0.0)

    sources = ents
    scale = 0.5  # each unordered pair is reached from both ends
    if pivots is not None and 0 < pivots < len(ents):
        rng = np.random.default_rng(seed)
        sources = sorted(rng.choice(ents, size=pivots, replace=False).tolist())
        scale = 0.5 * len(ents) / pivots
    for s in sources:
        _accumulate(adj, s, ent_bc, rel_bc, scale)
    return ent_bc, rel_bc


def entity_betweenness(triples, **kwargs) -> dict:
    return betweenness(triples, **kwargs)[0]


def relation_betweenness(triples, **kwargs) -> dict:
    return betweenness(triples, **kwargs)[1]


def compute_centrality(triples, *, pivot_threshold: int = DEFAULT_PIVOT_THRESHOLD,
                       pivots: int = DEFAULT_PIVOTS, seed: int = 0) -> CentralityScores:
    """All scores for one emerging subgraph.

    Exact unless the subgraph has more than ``pivot_threshold`` entities.
    """
    triples = as_triple_array(triples)
    n_ent = len(_entities(triples))
    sample = pivot_threshold is not None and n_ent > pivot_threshold
    ent_bc, rel_bc = betweenness(triples, pivots=pivots if sample else None, seed=seed)
    return CentralityScores(
        node_centrality=node_centrality(triples),
        entity_betweenness=ent_bc,
        relation_betweenness=rel_bc,
        sampled=sample,
    )
