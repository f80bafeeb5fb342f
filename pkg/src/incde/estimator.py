"""scikit-learn style estimator for continual KG embedding."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .centrality import DEFAULT_PIVOT_THRESHOLD, DEFAULT_PIVOTS
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import FilterIndex, evaluate_ranks, evaluate_snapshot, time_averaged_metrics
from .model import transe_score
from .trainer import ContinualState, TrainConfig, train_time_step
from .validation import check_dataset, check_time, check_triples

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "seed"]


class IncDE(BaseEstimator):
    """Continual TransE embedding with hierarchical ordering and incremental distillation.

    ``fit`` walks every time step of a :class:`~incde.kg.GrowingDataset`;
    ``partial_fit`` advances one step, reusing the state of the previous one.
    The three ``no_*`` switches disable hierarchical ordering, incremental
    distillation and two-stage training; all three together give the
    fine-tuning baseline.

    Parameters mirror :class:`~incde.trainer.TrainConfig`; ``random_state``
    is its ``seed``.
    """

    def __init__(self, dim=200, margin=8.0, lr=1e-4, batch_size=1024, n_neg=10, epochs=100,
                 stage1_fraction=0.2, max_layer_size=1024, norm="L1", no_ho=False, no_id=False,
                 no_ts=False, stage_mode="per_layer", eval_every=10, patience=3,
                 normalize_entities=False, pivot_threshold=DEFAULT_PIVOT_THRESHOLD,
                 pivots=DEFAULT_PIVOTS, random_state=0):
        self.dim = dim
        self.margin = margin
        self.lr = lr
        self.batch_size = batch_size
        self.n_neg = n_neg
        self.epochs = epochs
        self.stage1_fraction = stage1_fraction
        self.max_layer_size = max_layer_size
        self.norm = norm
        self.no_ho = no_ho
        self.no_id = no_id
        self.no_ts = no_ts
        self.stage_mode = stage_mode
        self.eval_every = eval_every
        self.patience = patience
        self.normalize_entities = normalize_entities
        self.pivot_threshold = pivot_threshold
        self.pivots = pivots
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: TrainConfig) -> "IncDE":
        params = {k: getattr(config, k) for k in _CONFIG_FIELDS}
        return cls(random_state=config.seed, **params)

    def get_config(self) -> TrainConfig:
        params = {k: getattr(self, k) for k in _CONFIG_FIELDS}
        return TrainConfig(seed=int(self.random_state or 0), **params)

    def fit(self, dataset, y=None, until=None):
        dataset = check_dataset(dataset)
        until = check_time(dataset, until)
        self._reset()
        for t in range(1, until + 1):
            self.partial_fit(dataset, time=t)
        return self

    def _reset(self):
        config = self.get_config()
        self.state_ = ContinualState.empty(config)
        self.log_ = []
        self.plans_ = {}

    def partial_fit(self, dataset, y=None, time=None, plan=None):
        """Train the next time step (or ``time``, which must be the next one)."""
        dataset = check_dataset(dataset)
        config = self.get_config()
        if not hasattr(self, "state_"):
            self._reset()
        time = self.state_.time + 1 if time is None else int(time)
        check_time(dataset, time)
        result = train_time_step(self.state_, dataset, time, config, plan=plan,
                                 evaluator=self._valid_evaluator(dataset, time))
        self.log_.extend(result.log)
        self.plans_[time] = result.plan
        self.n_times_ = time
        return self

    def _valid_evaluator(self, dataset, time):
        snap = dataset.snapshot(time)
        if len(snap.valid) == 0 or self.eval_every <= 0 or self.patience <= 0:
            return None
        candidates = sorted(snap.entities)
        filt = FilterIndex(np.array(sorted(snap.cumulative_triples)).reshape(-1, 3))
        valid = snap.valid
        norm = self.norm

        def evaluator(table):
            return evaluate_snapshot(table.entity, table.relation, valid, candidates, filt, norm).mrr

        return evaluator

    @property
    def entity_embeddings_(self):
        check_is_fitted(self, "state_")
        return self.state_.table.entity

    @property
    def relation_embeddings_(self):
        check_is_fitted(self, "state_")
        return self.state_.table.relation

    def score_samples(self, X):
        """Negated TransE distance of each triple (higher is more plausible)."""
        check_is_fitted(self, "state_")
        X = check_triples(X, self.state_.table.n_entities, self.state_.table.n_relations)
        E, R = self.state_.table.entity, self.state_.table.relation
        return -transe_score(E[X[:, 0]], R[X[:, 1]], E[X[:, 2]], self.norm)

    def rank(self, X, dataset=None, raw=False, candidates=None):
        """Head and tail ranks of each triple in ``X`` (heads first, then tails).

        Filtering uses the known triples of the fitted time in ``dataset``.
        """
        check_is_fitted(self, "state_")
        X = check_triples(X, self.state_.table.n_entities, self.state_.table.n_relations)
        filt = None
        if dataset is not None:
            snap = dataset.snapshot(self.state_.time)
            candidates = sorted(snap.entities) if candidates is None else candidates
            if not raw:
                filt = FilterIndex(np.array(sorted(snap.cumulative_triples)).reshape(-1, 3))
        if candidates is None:
            candidates = np.arange(self.state_.table.n_entities)
        return evaluate_ranks(self.state_.table.entity, self.state_.table.relation, X, candidates, filt, self.norm)

    def evaluate(self, dataset, raw=False, split="test"):
        """Time-averaged metrics of the current model over the splits of times 1..now."""
        check_is_fitted(self, "state_")
        return time_averaged_metrics(self.state_.table.entity, self.state_.table.relation, dataset,
                                     self.state_.time, raw=raw, norm=self.norm, split=split)

    def score(self, dataset, y=None):
        """Time-averaged filtered test MRR."""
        return self.evaluate(dataset).mean.mrr

    def save(self, path):
        check_is_fitted(self, "state_")
        return save_checkpoint(self.state_, path, config=self.get_config().to_dict())

    @classmethod
    def load(cls, path) -> "IncDE":
        state, meta = load_checkpoint(path)
        config = TrainConfig(**meta["config"]) if meta.get("config") else TrainConfig(dim=state.table.dim)
        est = cls.from_config(config)
        est.state_ = state
        est.log_ = []
        est.plans_ = {}
        est.n_times_ = state.time
        return est
