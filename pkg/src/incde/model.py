"""TransE scoring, losses and their analytic gradients (numpy, float64)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORMS = ("L1", "L2")


def _check_norm(norm):
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def transe_score(h, r, t, norm="L1"):
    """Distance ``|h + r - t|`` along the last axis; lower is more plausible."""
    _check_norm(norm)
    h, r, t = np.asarray(h, float), np.asarray(r, float), np.asarray(t, float)
    if not (h.shape[-1] == r.shape[-1] == t.shape[-1]):
        raise ValueError(f"dimension mismatch: {h.shape[-1]}, {r.shape[-1]}, {t.shape[-1]}")
    x = h + r - t
    if norm == "L1":
        return np.abs(x).sum(axis=-1)
    return np.sqrt((x * x).sum(axis=-1))


def _score_grad(x, norm):
    """d score / d x for residuals ``x = h + r - t``."""
    if norm == "L1":
        return np.sign(x)
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def margin_loss(pos_scores, neg_scores, margin):
    """Mean hinge ``max(0, f(pos) - f(neg) + margin)`` over all pairs.

    ``pos_scores`` has shape ``(B,)`` and ``neg_scores`` ``(B,)`` or ``(B, K)``.
    """
    pos = np.asarray(pos_scores, float)
    neg = np.asarray(neg_scores, float)
    if neg.ndim == pos.ndim + 1:
        pos = pos[..., None]
    hinge = np.maximum(0.0, pos - neg + margin)
    return float(hinge.mean()) if hinge.size else 0.0


def huber(diff):
    """Per-coordinate Huber term summed over the last axis (knee at 1)."""
    a = np.abs(np.asarray(diff, float))
    return np.where(a <= 1.0, 0.5 * a * a, a - 0.5).sum(axis=-1)


def distill_entity_loss(current, teacher):
    return huber(np.asarray(teacher, float) - np.asarray(current, float))


def sigmoid(x):
    x = np.asarray(x, float)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


@dataclass
class SparseGrad:
    """Gradient rows for a subset of a parameter matrix."""

    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, width):
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, width)))

    @classmethod
    def from_scatter(cls, index, contrib):
        rows, inv = np.unique(index, return_inverse=True)
        values = np.zeros((len(rows),) + contrib.shape[1:])
        np.add.at(values, inv.ravel(), contrib)
        return cls(rows, values)

    def drop(self, mask_rows):
        """Remove the rows flagged in the boolean vector ``mask_rows``."""
        keep = ~mask_rows[self.rows]
        return SparseGrad(self.rows[keep], self.values[keep])

    def to_dense(self, n_rows):
        out = np.zeros((n_rows,) + self.values.shape[1:])
        out[self.rows] = self.values
        return out


def transe_margin_grad(entity, relation, pos, neg, margin, norm="L1"):
    """Batch hinge loss and its gradients.

    ``pos`` is ``(B, 3)`` and ``neg`` ``(B, K, 3)`` of id triples. Returns
    ``(loss, entity_grad, relation_grad)`` with sparse row gradients.
    """
    _check_norm(norm)
    d = entity.shape[1]
    if len(pos) == 0:
        return 0.0, SparseGrad.empty(d), SparseGrad.empty(d)
    B, K = neg.shape[0], neg.shape[1]
    xp = entity[pos[:, 0]] + relation[pos[:, 1]] - entity[pos[:, 2]]
    xn = entity[neg[..., 0]] + relation[neg[..., 1]] - entity[neg[..., 2]]
    fp = np.abs(xp).sum(-1) if norm == "L1" else np.sqrt((xp * xp).sum(-1))
    fn = np.abs(xn).sum(-1) if norm == "L1" else np.sqrt((xn * xn).sum(-1))
    hinge = fp[:, None] - fn + margin
    active = hinge > 0
    loss = float(np.maximum(hinge, 0.0).mean())

    coef = active / (B * K)
    gp = _score_grad(xp, norm) * coef.sum(1)[:, None]
    gn = -_score_grad(xn, norm) * coef[..., None]
    gn = gn.reshape(B * K, d)
    negf = neg.reshape(B * K, 3)

    ent_idx = np.concatenate([pos[:, 0], pos[:, 2], negf[:, 0], negf[:, 2]])
    ent_contrib = np.concatenate([gp, -gp, gn, -gn])
    rel_idx = np.concatenate([pos[:, 1], negf[:, 1]])
    rel_contrib = np.concatenate([gp, gn])
    return loss, SparseGrad.from_scatter(ent_idx, ent_contrib), SparseGrad.from_scatter(rel_idx, rel_contrib)


def distill_loss_grad(entity, ids, teacher, base_weight, logits):
    """Weighted distillation loss over ``ids`` and its gradients.

    ``teacher`` holds the teacher rows aligned with ``ids``; ``base_weight``
    is the preliminary weight per id (already zero for entities without a
    teacher) and ``logits`` the learnable weight logits for those ids.
    Returns ``(loss, entity_grad, logit_grad)``.
    """
    ids = np.asarray(ids, dtype=np.int64)
    d = entity.shape[1]
    if len(ids) == 0:
        return 0.0, SparseGrad.empty(d), SparseGrad(ids, np.zeros(0))
    cur = entity[ids]
    diff = cur - teacher
    per_entity = huber(diff)
    gate = sigmoid(logits)
    eff = base_weight * gate
    loss = float((eff * per_entity).sum())
    ent_grad = eff[:, None] * np.clip(diff, -1.0, 1.0)
    logit_grad = base_weight * per_entity * gate * (1.0 - gate)
    return loss, SparseGrad(ids, ent_grad), SparseGrad(ids, logit_grad)


def merge(a: SparseGrad, b: SparseGrad) -> SparseGrad:
    if len(a.rows) == 0:
        return b
    if len(b.rows) == 0:
        return a
    return SparseGrad.from_scatter(np.concatenate([a.rows, b.rows]), np.concatenate([a.values, b.values]))
