import numpy as np
import pytest
from sklearn.base import clone

from incde import IncDE
from incde.centrality import compute_centrality
from incde.checkpoint import load_checkpoint, save_checkpoint
from incde.model import transe_margin_grad
from incde.optim import SparseAdam
from incde.ordering import LayerPlan
from incde.trainer import (
    ContinualState,
    EmbeddingTable,
    KnownTriples,
    TrainConfig,
    TrainingError,
    _TimeStep,
    compute_distill_weights,
    sample_negatives,
    time_step_rng,
    train_layer,
    train_time_step,
)

SMALL = dict(dim=8, margin=1.0, lr=0.01, batch_size=16, n_neg=2, epochs=4, max_layer_size=8, patience=0)


def _fit(dataset, until, **kw):
    config = TrainConfig(**{**SMALL, **kw})
    state = ContinualState.empty(config)
    results = [train_time_step(state, dataset, t, config) for t in range(1, until + 1)]
    return state, results


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(stage1_fraction=1.5)
    with pytest.raises(ValueError):
        TrainConfig(norm="L3")
    assert TrainConfig(epochs=10, stage1_fraction=0.25).stage1_epochs == 2
    assert TrainConfig(epochs=10, stage1_fraction=0.25, no_ts=True).stage1_epochs == 0
    assert TrainConfig(no_ho=True, no_id=True, no_ts=True).is_finetune


def test_table_extension_keeps_old_rows():
    rng = np.random.default_rng(0)
    table = EmbeddingTable(4)
    table.extend(3, 2, rng)
    old = table.entity.copy()
    table.extend(5, 2, rng)
    assert table.entity.shape == (5, 4)
    np.testing.assert_array_equal(table.entity[:3], old)
    assert np.abs(table.entity).max() <= 6.0 / 2.0


def test_zero_learning_rate_leaves_initialisation(toy_dataset):
    state, _ = _fit(toy_dataset, 1, lr=0.0, epochs=1)
    snap = toy_dataset.snapshot(1)
    ref = EmbeddingTable(SMALL["dim"])
    ref.extend(max(snap.entities) + 1, max(snap.relations) + 1, time_step_rng(0, 1))
    np.testing.assert_array_equal(state.table.entity, ref.entity)
    np.testing.assert_array_equal(state.table.relation, ref.relation)


def test_full_freeze_keeps_old_rows(toy_dataset):
    state, _ = _fit(toy_dataset, 1)
    before_e, before_r = state.table.entity.copy(), state.table.relation.copy()
    config = TrainConfig(**{**SMALL, "stage1_fraction": 1.0})
    train_time_step(state, toy_dataset, 2, config)
    n_e, n_r = before_e.shape[0], before_r.shape[0]
    np.testing.assert_array_equal(state.table.entity[:n_e], before_e)
    np.testing.assert_array_equal(state.table.relation[:n_r], before_r)
    assert state.table.entity.shape[0] > n_e


def test_stage_one_freezes_then_releases(toy_dataset):
    state, _ = _fit(toy_dataset, 1)
    before = state.table.entity.copy()
    config = TrainConfig(**{**SMALL, "stage1_fraction": 0.5})
    result = train_time_step(state, toy_dataset, 2, config)
    frozen = [row["frozen_old"] for row in result.log if "frozen_old" in row]
    per_layer = [frozen[i:i + 4] for i in range(0, len(frozen), 4)]
    assert all(chunk == [True, True, False, False] for chunk in per_layer)
    assert not np.array_equal(state.table.entity[:before.shape[0]], before)


def test_wrong_time_rejected(toy_dataset):
    state = ContinualState.empty(TrainConfig(**SMALL))
    with pytest.raises(TrainingError):
        train_time_step(state, toy_dataset, 2, TrainConfig(**SMALL))


def test_plan_must_partition_delta(toy_dataset):
    state = ContinualState.empty(TrainConfig(**SMALL))
    train = toy_dataset.snapshot(1).train
    bad = LayerPlan([train[:-1]], [np.zeros(len(train) - 1)], [0], len(train))
    with pytest.raises(TrainingError, match="partition"):
        train_time_step(state, toy_dataset, 1, TrainConfig(**SMALL), plan=bad)


def test_non_finite_parameters_abort(toy_dataset):
    state, _ = _fit(toy_dataset, 1)
    state.table.entity[0] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        train_time_step(state, toy_dataset, 2, TrainConfig(**SMALL))


def test_deterministic(toy_dataset):
    a, _ = _fit(toy_dataset, 3)
    b, _ = _fit(toy_dataset, 3)
    np.testing.assert_array_equal(a.table.entity, b.table.entity)
    np.testing.assert_array_equal(a.distill.logits, b.distill.logits)


def test_no_id_never_touches_logits(toy_dataset):
    state, results = _fit(toy_dataset, 3, no_id=True)
    assert not state.distill.logits.any()
    assert all(row["l_distill"] == 0.0 for r in results for row in r.log if "l_distill" in row)


def test_distillation_moves_logits(toy_dataset):
    state, _ = _fit(toy_dataset, 3)
    assert state.distill.logits.any()


def test_teacher_recency_and_gating(toy_dataset):
    state, _ = _fit(toy_dataset, 1)
    config = TrainConfig(**SMALL)
    rng = time_step_rng(0, 2)
    snap = toy_dataset.snapshot(2)
    state.table.extend(max(snap.entities) + 1, max(snap.relations) + 1, rng)
    state.distill.extend(max(snap.entities) + 1)
    scores = compute_centrality(snap.train)
    ctx = _TimeStep(state, toy_dataset, 2, config, rng, scores)
    old = toy_dataset.previous_entities(2)
    assert set(np.flatnonzero(ctx.teacher.has).tolist()) == set(old)
    layer = snap.train[:6]
    ents = np.unique(layer[:, [0, 2]])
    _, base, _ = compute_distill_weights(ents, scores, ctx.teacher, state.distill.logits)
    assert all(b == 0 for e, b in zip(ents, base) if e not in old)
    frozen_teacher = ctx.teacher.vectors.copy()
    train_layer(ctx, layer, 0, frozen_old=False, epochs=2)
    np.testing.assert_array_equal(ctx.teacher.vectors[ents], state.table.entity[ents])
    others = np.setdiff1d(np.arange(len(frozen_teacher)), ents)
    np.testing.assert_array_equal(ctx.teacher.vectors[others], frozen_teacher[others])
    assert (ctx.teacher.layer[ents] == 1).all()


def _reference_finetune(dataset, until, config):
    """Plain TransE fine-tuning loop written without the layer machinery."""
    table = EmbeddingTable(config.dim)
    opt = SparseAdam(lr=config.lr)
    losses = []
    for t in range(1, until + 1):
        rng = time_step_rng(config.seed, t)
        snap = dataset.snapshot(t)
        n_ent, n_rel = max(snap.entities) + 1, max(snap.relations) + 1
        table.extend(n_ent, n_rel, rng)
        known = KnownTriples(np.array(sorted(snap.cumulative_triples)), n_ent, n_rel)
        cands = np.array(sorted(snap.entities))
        data = snap.train[rng.permutation(len(snap.train))]
        params = {"entity": table.entity, "relation": table.relation}
        for _ in range(config.epochs):
            order = rng.permutation(len(data))
            epoch_losses = []
            for s in range(0, len(data), config.batch_size):
                pos = data[order[s:s + config.batch_size]]
                neg = sample_negatives(pos, config.n_neg, cands, rng, known)
                loss, ge, gr = transe_margin_grad(table.entity, table.relation, pos, neg, config.margin, config.norm)
                opt.step(params, {"entity": ge, "relation": gr})
                epoch_losses.append(loss)
            losses.append(np.mean(epoch_losses))
    return table, losses


def test_finetune_trace_matches_reference(toy_dataset):
    config = TrainConfig(**{**SMALL, "no_ho": True, "no_id": True, "no_ts": True})
    state = ContinualState.empty(config)
    trace = []
    for t in range(1, 4):
        trace += [row["l_ckge"] for row in train_time_step(state, toy_dataset, t, config).log]
    table, ref = _reference_finetune(toy_dataset, 3, config)
    assert trace == pytest.approx(ref, rel=0, abs=0)
    np.testing.assert_array_equal(state.table.entity, table.entity)


def test_checkpoint_resume_is_exact(toy_dataset, tmp_path):
    config = TrainConfig(**SMALL)
    straight, _ = _fit(toy_dataset, 2)
    half, _ = _fit(toy_dataset, 1)
    path = save_checkpoint(half, tmp_path / "t1.npz", config.to_dict())
    resumed, meta = load_checkpoint(path)
    assert meta["time"] == 1 and meta["config"]["dim"] == SMALL["dim"]
    train_time_step(resumed, toy_dataset, 2, config)
    np.testing.assert_array_equal(resumed.table.entity, straight.table.entity)
    np.testing.assert_array_equal(resumed.distill.logits, straight.distill.logits)
    assert resumed.optimizer.t == straight.optimizer.t


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, meta=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        load_checkpoint(path)


class TestEstimator:
    def test_params_round_trip(self):
        est = IncDE(dim=16, margin=2.0, random_state=4)
        params = est.get_params()
        assert params["dim"] == 16 and params["random_state"] == 4
        twin = clone(est)
        assert twin.get_params() == params
        assert est.set_params(lr=0.5).lr == 0.5
        assert IncDE.from_config(est.get_config()).get_params() == est.get_params()

    def test_fit_score_save_load(self, toy_dataset, tmp_path):
        est = IncDE(**SMALL).fit(toy_dataset, until=2)
        assert est.n_times_ == 2
        score = est.score(toy_dataset)
        assert 0.0 < score <= 1.0
        triples = toy_dataset.snapshot(1).test
        assert est.score_samples(triples).shape == (len(triples),)
        est.save(tmp_path / "m.npz")
        back = IncDE.load(tmp_path / "m.npz")
        np.testing.assert_array_equal(back.entity_embeddings_, est.entity_embeddings_)
        assert back.score(toy_dataset) == score

    def test_partial_fit_matches_fit(self, toy_dataset):
        a = IncDE(**SMALL).fit(toy_dataset, until=2)
        b = IncDE(**SMALL).partial_fit(toy_dataset).partial_fit(toy_dataset)
        np.testing.assert_array_equal(a.entity_embeddings_, b.entity_embeddings_)

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            IncDE().score_samples([(0, 0, 0)])
