"""Hierarchical ordering of the triples that emerge at one time step.

Triples are first split into breadth-first layers growing out of the old
graph, then each layer is sorted by triple importance and cut into chunks
of at most ``max_layer_size`` triples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .centrality import DEFAULT_PIVOT_THRESHOLD, DEFAULT_PIVOTS, CentralityScores, compute_centrality
from .kg import Delta, as_triple_array


def triple_importance(triple, scores: CentralityScores) -> float:
    h, r, t = (int(x) for x in triple)
    try:
        nc_h = scores.node_centrality[h]
        nc_t = scores.node_centrality[t]
        bc_r = scores.relation_betweenness[r]
    except KeyError as exc:
        raise KeyError(f"no centrality score for id {exc.args[0]} of triple {(h, r, t)}; "
                       "scores were computed on a different subgraph") from None
    return max(nc_h, nc_t) + bc_r


def inter_hierarchical_layering(delta, old_entities) -> list:
    """Breadth-first layers of new triples, seeded by the old entities.

    Layer ``k`` holds every unassigned triple touching an entity seen so far;
    its entities then join the seen set. Triples never reached form one final
    remainder layer. Returns a list of ``(n_k, 3)`` arrays in input order.
    """
    triples = as_triple_array(delta.new_triples if isinstance(delta, Delta) else delta)
    seen = set(old_entities)
    remaining = list(range(len(triples)))
    rows = triples.tolist()
    layers = []
    while remaining:
        layer, rest = [], []
        for i in remaining:
            h, _, t = rows[i]
            (layer if h in seen or t in seen else rest).append(i)
        if not layer:
            break
        for i in layer:
            seen.add(rows[i][0])
            seen.add(rows[i][2])
        layers.append(triples[layer])
        remaining = rest
    if remaining:
        layers.append(triples[remaining])
    return layers


@dataclass
class LayerPlan:
    """Ordered partition of a time step's new triples into training layers."""

    layers: list
    importance: list
    source_layer: list
    max_layer_size: int
    n_raw_layers: int = 0
    has_remainder: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def n_triples(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def sizes(self) -> list:
        return [len(layer) for layer in self.layers]

    def all_triples(self) -> np.ndarray:
        if not self.layers:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate(self.layers)

    def to_dict(self) -> dict:
        return {
            "max_layer_size": self.max_layer_size,
            "n_raw_layers": self.n_raw_layers,
            "has_remainder": self.has_remainder,
            "meta": self.meta,
            "layers": [
                {"source_layer": int(src), "triples": layer.tolist(), "importance": [float(x) for x in imp]}
                for layer, imp, src in zip(self.layers, self.importance, self.source_layer)
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "LayerPlan":
        layers = data["layers"]
        return cls(
            layers=[as_triple_array(x["triples"]) for x in layers],
            importance=[np.asarray(x["importance"], dtype=float) for x in layers],
            source_layer=[int(x["source_layer"]) for x in layers],
            max_layer_size=int(data["max_layer_size"]),
            n_raw_layers=int(data.get("n_raw_layers", 0)),
            has_remainder=bool(data.get("has_remainder", False)),
            meta=dict(data.get("meta", {})),
        )


def _sort_by_importance(layer: np.ndarray, scores: CentralityScores):
    imp = np.array([triple_importance(t, scores) for t in layer], dtype=float)
    # lexsort: last key is primary -> descending importance, then ascending h, r, t
    order = np.lexsort((layer[:, 2], layer[:, 1], layer[:, 0], -imp))
    return layer[order], imp[order]


def build_layer_plan(delta, old_entities, max_layer_size: int, *, scores: CentralityScores | None = None,
                     pivot_threshold=DEFAULT_PIVOT_THRESHOLD, pivots=DEFAULT_PIVOTS, seed=0) -> LayerPlan:
    if max_layer_size < 1:
        raise ValueError(f"max_layer_size must be >= 1, got {max_layer_size}")
    triples = as_triple_array(delta.new_triples if isinstance(delta, Delta) else delta)
    old_entities = set(old_entities)
    if len(triples) == 0:
        return LayerPlan([], [], [], max_layer_size)
    if scores is None:
        scores = compute_centrality(triples, pivot_threshold=pivot_threshold, pivots=pivots, seed=seed)

    raw = inter_hierarchical_layering(triples, old_entities)
    has_remainder = _is_remainder(raw, old_entities)

    layers, importance, source = [], [], []
    for k, layer in enumerate(raw):
        ordered, imp = _sort_by_importance(layer, scores)
        for start in range(0, len(ordered), max_layer_size):
            layers.append(ordered[start:start + max_layer_size])
            importance.append(imp[start:start + max_layer_size])
            source.append(k)
    return LayerPlan(layers, importance, source, max_layer_size, n_raw_layers=len(raw),
                     has_remainder=has_remainder, meta={"sampled_betweenness": scores.sampled})


def _is_remainder(raw, old_entities) -> bool:
    seen = set(old_entities)
    for layer in raw[:-1]:
        seen.update(layer[:, 0].tolist())
        seen.update(layer[:, 2].tolist())
    return not any(int(h) in seen or int(t) in seen for h, _, t in raw[-1])


def shuffled_single_layer(delta, seed) -> LayerPlan:
    """Random-order plan used when hierarchical ordering is switched off.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    triples = as_triple_array(delta.new_triples if isinstance(delta, Delta) else delta)
    if len(triples) == 0:
        return LayerPlan([], [], [], 1)
    perm = np.random.default_rng(seed).permutation(len(triples))
    return LayerPlan([triples[perm]], [np.zeros(len(triples))], [0], len(triples), n_raw_layers=1)


class HierarchicalOrdering(BaseEstimator, TransformerMixin):
    """Transformer turning a time step's new triples into a :class:`LayerPlan`.

    ``fit`` computes centrality scores on the new triples ``X`` (an ``(n, 3)``
    id array); ``transform`` returns the plan. ``old_entities`` seeds the
    breadth-first layering.
    """

    def __init__(self, max_layer_size=1024, pivot_threshold=DEFAULT_PIVOT_THRESHOLD,
                 pivots=DEFAULT_PIVOTS, random_state=0):
        self.max_layer_size = max_layer_size
        self.pivot_threshold = pivot_threshold
        self.pivots = pivots
        self.random_state = random_state

    def fit(self, X, y=None, old_entities=()):
        X = as_triple_array(X)
        if len(X) == 0:
            raise ValueError("HierarchicalOrdering.fit needs at least one triple")
        self.scores_ = compute_centrality(X, pivot_threshold=self.pivot_threshold, pivots=self.pivots,
                                          seed=self.random_state)
        self.old_entities_ = frozenset(int(e) for e in old_entities)
        return self

    def transform(self, X):
        check_is_fitted(self, "scores_")
        return build_layer_plan(as_triple_array(X), self.old_entities_, self.max_layer_size,
                                scores=self.scores_)

    def fit_transform(self, X, y=None, old_entities=()):
        return self.fit(X, y, old_entities=old_entities).transform(X)
