"""Layer-by-layer TransE training with incremental distillation.

One call to :func:`train_time_step` learns the new training triples of a
time step. The time step's plan is walked layer by layer; every layer is
trained for ``epochs`` epochs on

    batch-mean margin loss + weighted distillation over the layer's entities

where the distillation target of an entity is its vector after the most
recent layer (or time step) it took part in. The first ``stage1_fraction``
of each layer's epochs keeps the rows inherited from the previous time step
frozen.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .centrality import DEFAULT_PIVOT_THRESHOLD, DEFAULT_PIVOTS, CentralityScores, compute_centrality
from .kg import GrowingDataset, as_triple_array
from .model import SparseGrad, distill_loss_grad, huber, merge, sigmoid, transe_margin_grad
from .optim import SparseAdam
from .ordering import LayerPlan, build_layer_plan, shuffled_single_layer

logger = logging.getLogger(__name__)

STAGE_MODES = ("per_layer", "per_timestep")
MAX_RESAMPLE = 50


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dim: int = 200
    margin: float = 8.0
    lr: float = 1e-4
    batch_size: int = 1024
    n_neg: int = 10
    epochs: int = 100
    stage1_fraction: float = 0.2
    max_layer_size: int = 1024
    norm: str = "L1"
    seed: int = 0
    no_ho: bool = False
    no_id: bool = False
    no_ts: bool = False
    stage_mode: str = "per_layer"
    eval_every: int = 10
    patience: int = 3
    normalize_entities: bool = False
    pivot_threshold: int = DEFAULT_PIVOT_THRESHOLD
    pivots: int = DEFAULT_PIVOTS

    def __post_init__(self):
        for name in ("dim", "batch_size", "n_neg", "max_layer_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.margin < 0 or self.lr < 0:
            raise ValueError("margin and lr must be non-negative")
        if not 0.0 <= self.stage1_fraction <= 1.0:
            raise ValueError(f"stage1_fraction must lie in [0, 1], got {self.stage1_fraction}")
        if self.norm not in ("L1", "L2"):
            raise ValueError(f"norm must be L1 or L2, got {self.norm!r}")
        if self.stage_mode not in STAGE_MODES:
            raise ValueError(f"stage_mode must be one of {STAGE_MODES}, got {self.stage_mode!r}")

    @property
    def stage1_epochs(self) -> int:
        if self.no_ts:
            return 0
        return int(math.floor(self.stage1_fraction * self.epochs + 1e-12))

    @property
    def is_finetune(self) -> bool:
        return self.no_ho and self.no_id and self.no_ts

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class EmbeddingTable:
    """Entity and relation vectors; row ``i`` belongs to id ``i``."""

    def __init__(self, dim, entity=None, relation=None):
        self.dim = int(dim)
        self.entity = np.zeros((0, self.dim)) if entity is None else np.asarray(entity, dtype=float)
        self.relation = np.zeros((0, self.dim)) if relation is None else np.asarray(relation, dtype=float)

    @property
    def n_entities(self):
        return self.entity.shape[0]

    @property
    def n_relations(self):
        return self.relation.shape[0]

    def extend(self, n_entities, n_relations, rng) -> None:
        """Append freshly initialised rows up to the requested sizes."""
        bound = 6.0 / math.sqrt(self.dim)
        if n_entities > self.n_entities:
            new = rng.uniform(-bound, bound, size=(n_entities - self.n_entities, self.dim))
            self.entity = np.concatenate([self.entity, new])
        if n_relations > self.n_relations:
            new = rng.uniform(-bound, bound, size=(n_relations - self.n_relations, self.dim))
            self.relation = np.concatenate([self.relation, new])

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.dim, self.entity.copy(), self.relation.copy())

    def params(self) -> dict:
        return {"entity": self.entity, "relation": self.relation}


class TeacherStore:
    """Frozen per-entity teacher vectors and the layer they were taken at.

    Layer 0 stands for the model of the previous time step.
    """

    def __init__(self, n_entities, dim):
        self.vectors = np.zeros((n_entities, dim))
        self.has = np.zeros(n_entities, dtype=bool)
        self.layer = np.full(n_entities, -1, dtype=np.int64)

    @classmethod
    def from_previous(cls, table: EmbeddingTable, old_entities, n_entities) -> "TeacherStore":
        store = cls(n_entities, table.dim)
        ids = np.fromiter(sorted(old_entities), dtype=np.int64)
        store.capture(ids, table, 0)
        return store

    def capture(self, ids, table: EmbeddingTable, layer: int) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        self.vectors[ids] = table.entity[ids]
        self.has[ids] = True
        self.layer[ids] = layer

    def __contains__(self, entity):
        return 0 <= entity < len(self.has) and bool(self.has[entity])


@dataclass
class DistillState:
    """Learnable distillation-weight logits, one per entity (``W = sigmoid(w)``)."""

    logits: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def extend(self, n_entities):
        if n_entities > len(self.logits):
            self.logits = np.concatenate([self.logits, np.zeros(n_entities - len(self.logits))])


def compute_distill_weights(entities, scores: CentralityScores, teacher: TeacherStore, logits):
    """Gate, preliminary and effective distillation weights for ``entities``.

    Returns ``(gate, base, effective)`` arrays aligned with ``entities``.
    """
    ids = np.asarray(entities, dtype=np.int64)
    gate = np.array([1.0 if int(e) in teacher else 0.0 for e in ids])
    centr = np.array([scores.entity_betweenness.get(int(e), 0.0) + scores.node_centrality.get(int(e), 0.0)
                      for e in ids])
    base = gate * centr
    eff = base * sigmoid(np.asarray(logits, float)[ids]) if len(ids) else np.zeros(0)
    return gate, base, eff


def layer_distill_loss(layer_entities, entity_matrix, teacher: TeacherStore, weights) -> float:
    ids = np.asarray(layer_entities, dtype=np.int64)
    if len(ids) == 0:
        return 0.0
    per = huber(teacher.vectors[ids] - entity_matrix[ids])
    return float((np.asarray(weights, float) * per).sum())


def triple_keys(triples, n_rel, n_ent):
    triples = as_triple_array(triples)
    return (triples[:, 0] * n_rel + triples[:, 1]) * n_ent + triples[:, 2]


class KnownTriples:
    """Membership test for true triples using sorted integer keys."""

    def __init__(self, triples, n_entities, n_relations):
        self.n_ent = max(int(n_entities), 1)
        self.n_rel = max(int(n_relations), 1)
        self.keys = np.unique(triple_keys(triples, self.n_rel, self.n_ent)) if len(triples) else np.zeros(0, np.int64)

    def contains(self, triples) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64)
        keys = (triples[..., 0] * self.n_rel + triples[..., 1]) * self.n_ent + triples[..., 2]
        if len(self.keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == keys


def sample_negatives(triples, n_neg, candidates, rng, known=None):
    """Corrupt head or tail (fair coin) with uniformly drawn candidate entities.

    ``candidates`` is either an entity count (ids ``0..n-1``) or an array of
    entity ids. Corruptions that are known true triples (``known`` is a
    :class:`KnownTriples` or a set of tuples) or equal to their positive are
    redrawn up to 50 times, then kept. Returns an ``(B, n_neg, 3)`` array.
    """
    pos = as_triple_array(triples)
    cand = np.arange(candidates) if np.isscalar(candidates) else np.asarray(candidates, dtype=np.int64)
    if len(cand) < 2:
        raise ValueError("negative sampling needs at least 2 candidate entities")
    B = len(pos)
    neg = np.repeat(pos[:, None, :], n_neg, axis=1)
    corrupt_tail = rng.random((B, n_neg)) < 0.5
    repl = cand[rng.integers(0, len(cand), size=(B, n_neg))]
    neg[..., 2] = np.where(corrupt_tail, repl, neg[..., 2])
    neg[..., 0] = np.where(corrupt_tail, neg[..., 0], repl)

    def bad(arr, positive):
        same = (arr == positive).all(-1)
        if known is None:
            return same
        if isinstance(known, KnownTriples):
            return same | known.contains(arr)
        flat = [tuple(x) in known for x in arr.reshape(-1, 3).tolist()]
        return same | np.array(flat, dtype=bool).reshape(arr.shape[:-1])

    mask = bad(neg, pos[:, None, :])
    for _ in range(MAX_RESAMPLE):
        if not mask.any():
            break
        bi, ki = np.nonzero(mask)
        repl = cand[rng.integers(0, len(cand), size=len(bi))]
        col = np.where(corrupt_tail[bi, ki], 2, 0)
        neg[bi, ki, col] = repl
        mask[bi, ki] = bad(neg[bi, ki], pos[bi])
    return neg


@dataclass
class ContinualState:
    """Everything carried from one time step to the next."""

    table: EmbeddingTable
    distill: DistillState
    optimizer: SparseAdam
    time: int = 0
    config_hash: str = ""

    @classmethod
    def empty(cls, config: TrainConfig) -> "ContinualState":
        return cls(EmbeddingTable(config.dim), DistillState(), SparseAdam(lr=config.lr), 0, config.config_hash())


def training_delta(dataset: GrowingDataset, time: int) -> np.ndarray:
    """New *training* triples of ``time``; valid/test triples are never fitted."""
    return dataset.snapshot(time).train


class _TimeStep:
    """Per-time-step context shared by the layers."""

    def __init__(self, state, dataset, time, config, rng, scores, evaluator=None):
        snap = dataset.snapshot(time)
        self.state = state
        self.config = config
        self.rng = rng
        self.time = time
        self.scores = scores
        n_ent = max(snap.entities) + 1 if snap.entities else 0
        n_rel = max(snap.relations) + 1 if snap.relations else 0
        self.candidates = np.fromiter(sorted(snap.entities), dtype=np.int64)
        self.known = KnownTriples(np.array(sorted(snap.cumulative_triples), dtype=np.int64).reshape(-1, 3),
                                  n_ent, n_rel)
        old_e = dataset.previous_entities(time)
        old_r = dataset.snapshots[time - 2].relations if time > 1 else frozenset()
        self.old_ent_mask = np.zeros(n_ent, dtype=bool)
        self.old_rel_mask = np.zeros(n_rel, dtype=bool)
        self.old_ent_mask[list(old_e)] = True
        self.old_rel_mask[list(old_r)] = True
        self.old_entities = old_e
        self.teacher = TeacherStore.from_previous(state.table, old_e, n_ent)
        self.evaluator = evaluator
        self.log = []


def _layer_entities(layer):
    return np.unique(np.concatenate([layer[:, 0], layer[:, 2]])) if len(layer) else np.zeros(0, np.int64)


def train_layer(ctx: _TimeStep, layer, layer_index, *, frozen_old: bool, epochs: int,
                refresh_teacher: bool = True, epoch_offset: int = 0, monitor=None):
    """Run ``epochs`` epochs of mini-batch Adam on one layer.

    ``monitor`` is an optional callable ``(epoch) -> bool`` asked after every
    epoch; returning True stops the layer early.
    """
    cfg, st = ctx.config, ctx.state
    table, logits, opt = st.table, st.distill.logits, st.optimizer
    layer = as_triple_array(layer)
    ents = _layer_entities(layer)
    use_distill = not cfg.no_id
    if use_distill:
        _, base, _ = compute_distill_weights(ents, ctx.scores, ctx.teacher, logits)
        keep = base > 0
        d_ids, d_base = ents[keep], base[keep]
        d_teacher = ctx.teacher.vectors[d_ids]
    else:
        d_ids = np.zeros(0, np.int64)

    params = {"entity": table.entity, "relation": table.relation, "logits": logits}
    opt.ensure("entity", table.entity.shape)
    opt.ensure("relation", table.relation.shape)
    opt.ensure("logits", logits.shape)

    stopped = False
    for epoch in range(epochs):
        t0 = _time.perf_counter()
        perm = ctx.rng.permutation(len(layer))
        ck_sum = ds_sum = 0.0
        n_batches = 0
        for start in range(0, len(layer), cfg.batch_size):
            pos = layer[perm[start:start + cfg.batch_size]]
            neg = sample_negatives(pos, cfg.n_neg, ctx.candidates, ctx.rng, ctx.known)
            l_ckge, g_ent, g_rel = transe_margin_grad(table.entity, table.relation, pos, neg, cfg.margin, cfg.norm)
            l_dist = 0.0
            g_log = None
            if len(d_ids):
                l_dist, gd_ent, g_log = distill_loss_grad(table.entity, d_ids, d_teacher, d_base, logits[d_ids])
                g_ent = merge(g_ent, gd_ent)
            if not (math.isfinite(l_ckge) and math.isfinite(l_dist)):
                raise TrainingError(f"non-finite loss at time {ctx.time}, layer {layer_index}, "
                                    f"epoch {epoch_offset + epoch}: ckge={l_ckge} distill={l_dist}")
            if frozen_old:
                g_ent = g_ent.drop(_pad(ctx.old_ent_mask, table.n_entities))
                g_rel = g_rel.drop(_pad(ctx.old_rel_mask, table.n_relations))
            opt.step(params, {"entity": g_ent, "relation": g_rel, "logits": g_log}, lr=cfg.lr)
            touched = g_ent.rows
            if cfg.normalize_entities and len(touched):
                norms = np.linalg.norm(table.entity[touched], axis=1, keepdims=True)
                table.entity[touched] /= np.maximum(norms, 1.0)
            if not (np.isfinite(table.entity[touched]).all() and np.isfinite(table.relation[g_rel.rows]).all()):
                raise TrainingError(f"non-finite parameters at time {ctx.time}, layer {layer_index}, "
                                    f"epoch {epoch_offset + epoch}")
            ck_sum += l_ckge
            ds_sum += l_dist
            n_batches += 1
        w = sigmoid(logits[d_ids]) if len(d_ids) else np.zeros(0)
        ctx.log.append({
            "time": ctx.time, "layer": layer_index, "epoch": epoch_offset + epoch,
            "frozen_old": bool(frozen_old),
            "l_ckge": ck_sum / max(n_batches, 1), "l_distill": ds_sum / max(n_batches, 1),
            "w_mean": float(w.mean()) if len(w) else None,
            "w_min": float(w.min()) if len(w) else None,
            "w_max": float(w.max()) if len(w) else None,
            "wall_time": _time.perf_counter() - t0,
        })
        if monitor is not None and monitor(epoch_offset + epoch + 1):
            stopped = True
            break
    if refresh_teacher:
        ctx.teacher.capture(ents, table, layer_index + 1)
    return stopped


def _pad(mask, n):
    if len(mask) >= n:
        return mask[:n]
    return np.concatenate([mask, np.zeros(n - len(mask), dtype=bool)])


class _EarlyStop:
    """Stop a layer once validation MRR has not improved for ``patience`` checks."""

    def __init__(self, ctx: _TimeStep):
        self.ctx = ctx
        self.best = -np.inf
        self.bad = 0

    def __call__(self, epoch) -> bool:
        cfg = self.ctx.config
        if self.ctx.evaluator is None or cfg.eval_every <= 0 or cfg.patience <= 0 or epoch % cfg.eval_every:
            return False
        mrr = self.ctx.evaluator(self.ctx.state.table)
        self.ctx.log.append({"time": self.ctx.time, "epoch": epoch, "valid_mrr": mrr})
        if mrr > self.best + 1e-12:
            self.best, self.bad = mrr, 0
            return False
        self.bad += 1
        return self.bad >= cfg.patience


def make_plan(dataset: GrowingDataset, time: int, config: TrainConfig, rng=None, scores=None) -> LayerPlan:
    triples = training_delta(dataset, time)
    if config.no_ho:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        return shuffled_single_layer(triples, rng)
    return build_layer_plan(triples, dataset.previous_entities(time), config.max_layer_size, scores=scores,
                            pivot_threshold=config.pivot_threshold, pivots=config.pivots, seed=config.seed)


def time_step_rng(seed, time):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(time)]))


def _check_partition(plan: LayerPlan, triples):
    got = sorted(map(tuple, plan.all_triples().tolist()))
    want = sorted(map(tuple, as_triple_array(triples).tolist()))
    if got != want:
        raise TrainingError("layer plan is not a partition of the time step's new training triples")


def train_time_step(state: ContinualState, dataset: GrowingDataset, time: int, config: TrainConfig,
                    plan: LayerPlan | None = None, evaluator=None) -> "TimeStepResult":
    """Advance ``state`` from time ``time - 1`` to ``time`` in place.

    Without an explicit ``plan`` one is built from the time step's new
    training triples (or a seeded shuffle when ``no_ho`` is set).
    ``evaluator`` maps the embedding table to a validation MRR and enables
    early stopping.
    """
    if state.time != time - 1:
        raise TrainingError(f"state is at time {state.time}, cannot train time {time}")
    rng = time_step_rng(config.seed, time)
    snap = dataset.snapshot(time)
    n_ent = max(snap.entities) + 1 if snap.entities else 0
    n_rel = max(snap.relations) + 1 if snap.relations else 0
    state.table.extend(n_ent, n_rel, rng)
    state.distill.extend(n_ent)
    state.optimizer.lr = config.lr

    triples = training_delta(dataset, time)
    scores = None
    if len(triples) and not (config.no_id and config.no_ho):
        scores = compute_centrality(triples, pivot_threshold=config.pivot_threshold,
                                    pivots=config.pivots, seed=config.seed)
    if plan is None:
        plan = make_plan(dataset, time, config, rng=rng, scores=scores)
    _check_partition(plan, triples)

    ctx = _TimeStep(state, dataset, time, config, rng, scores or CentralityScores(), evaluator)
    e1 = min(config.stage1_epochs, config.epochs)
    e2 = config.epochs - e1
    if config.stage_mode == "per_layer":
        for j, layer in enumerate(plan.layers):
            stop = _EarlyStop(ctx)
            if e1:
                train_layer(ctx, layer, j, frozen_old=True, epochs=e1, refresh_teacher=False)
            train_layer(ctx, layer, j, frozen_old=False, epochs=e2, epoch_offset=e1, monitor=stop)
    else:
        for frozen, n_ep, offset in ((True, e1, 0), (False, e2, e1)):
            if n_ep == 0:
                continue
            for j, layer in enumerate(plan.layers):
                train_layer(ctx, layer, j, frozen_old=frozen, epochs=n_ep, epoch_offset=offset,
                            monitor=None if frozen else _EarlyStop(ctx))
    state.time = time
    state.config_hash = config.config_hash()
    return TimeStepResult(ctx.log, plan)


@dataclass
class TimeStepResult:
    log: list
    plan: LayerPlan
