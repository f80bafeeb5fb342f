"""Filtered link-prediction ranking and time-averaged metrics."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .kg import GrowingDataset, as_triple_array
from .model import transe_score

MODES = ("head", "tail")
CSV_FIELDS = ("time", "dataset", "mrr", "h1", "h3", "h10", "n_queries")


class FilterIndex:
    """Known true answers for ``(?, r, t)`` and ``(h, r, ?)`` queries."""

    def __init__(self, triples=()):
        self.heads = defaultdict(set)
        self.tails = defaultdict(set)
        for h, r, t in as_triple_array(triples).tolist():
            self.heads[(r, t)].add(h)
            self.tails[(h, r)].add(t)

    def answers(self, triple, mode):
        h, r, t = triple
        return self.heads.get((r, t), ()) if mode == "head" else self.tails.get((h, r), ())


def _candidate_scores(entity, relation, triple, mode, candidates, norm):
    h, r, t = (int(x) for x in triple)
    if mode == "head":
        return transe_score(entity[candidates], relation[r], entity[t], norm)
    return transe_score(entity[h], relation[r], entity[candidates], norm)


def rank_triple(entity, relation, triple, mode, candidates, filter_index: FilterIndex | None = None,
                norm="L1") -> int:
    """Pessimistic filtered rank of the gold entity among ``candidates``.

    Rank is one plus the number of non-filtered candidates other than the
    gold entity scoring at least as well (distance <=) as the gold triple.
    With ``filter_index=None`` the ranking is raw.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be 'head' or 'tail', got {mode!r}")
    candidates = np.asarray(candidates, dtype=np.int64)
    gold = int(triple[0] if mode == "head" else triple[2])
    at = np.flatnonzero(candidates == gold)
    if gold < 0 or gold >= entity.shape[0] or len(at) == 0:
        raise ValueError(f"gold entity {gold} is outside the candidate vocabulary")
    scores = _candidate_scores(entity, relation, triple, mode, candidates, norm)
    better = scores <= scores[at[0]]
    better &= candidates != gold
    if filter_index is not None:
        known = filter_index.answers((int(triple[0]), int(triple[1]), int(triple[2])), mode)
        if known:
            better &= ~np.isin(candidates, np.fromiter(known, dtype=np.int64))
    return 1 + int(better.sum())


@dataclass
class MetricsReport:
    mrr: float
    h1: float
    h3: float
    h10: float
    n_queries: int
    time: int | None = None
    dataset: str = ""

    @classmethod
    def from_ranks(cls, ranks, **kw) -> "MetricsReport":
        ranks = np.asarray(ranks, dtype=float)
        if len(ranks) == 0:
            raise ValueError("cannot summarise an empty rank list")
        return cls(mrr=float(np.mean(1.0 / ranks)), h1=float(np.mean(ranks <= 1)),
                   h3=float(np.mean(ranks <= 3)), h10=float(np.mean(ranks <= 10)),
                   n_queries=len(ranks), **kw)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class AggregateReport:
    """Unweighted mean over test snapshots plus the per-snapshot breakdown."""

    model_time: int
    mean: MetricsReport
    per_snapshot: list = field(default_factory=list)
    mode: str = "filtered"

    def to_dict(self) -> dict:
        return {"model_time": self.model_time, "mode": self.mode, "mean": asdict(self.mean),
                "per_snapshot": [asdict(r) for r in self.per_snapshot]}

    @classmethod
    def from_dict(cls, data) -> "AggregateReport":
        return cls(data["model_time"], MetricsReport(**data["mean"]),
                   [MetricsReport(**r) for r in data["per_snapshot"]], data.get("mode", "filtered"))


def evaluate_ranks(entity, relation, test_triples, candidates, filter_index=None, norm="L1",
                   chunk=256) -> np.ndarray:
    """Head and tail ranks for every test triple (vectorised over candidates)."""
    test = as_triple_array(test_triples)
    candidates = np.asarray(sorted(set(np.asarray(candidates).tolist())), dtype=np.int64)
    pos_of = np.full(entity.shape[0], -1, dtype=np.int64)
    pos_of[candidates] = np.arange(len(candidates))
    ranks = []
    cand_vecs = entity[candidates]
    for mode in MODES:
        gold_col = 0 if mode == "head" else 2
        golds = test[:, gold_col]
        if np.any(golds >= entity.shape[0]) or np.any(pos_of[golds] < 0):
            raise ValueError("a gold entity is outside the candidate vocabulary")
        for start in range(0, len(test), chunk):
            part = test[start:start + chunk]
            # same operation order as transe_score: (h + r) - t
            if mode == "head":
                x = (cand_vecs[None, :, :] + relation[part[:, 1]][:, None, :]) - entity[part[:, 2]][:, None, :]
            else:
                base = entity[part[:, 0]] + relation[part[:, 1]]
                x = base[:, None, :] - cand_vecs[None, :, :]
            scores = np.abs(x).sum(-1) if norm == "L1" else np.sqrt((x * x).sum(-1))
            gpos = pos_of[part[:, gold_col]]
            gold_scores = scores[np.arange(len(part)), gpos]
            better = scores <= gold_scores[:, None]
            better[np.arange(len(part)), gpos] = False
            if filter_index is not None:
                for i, triple in enumerate(part.tolist()):
                    known = filter_index.answers(tuple(triple), mode)
                    if known:
                        idx = pos_of[np.fromiter(known, dtype=np.int64)]
                        better[i, idx[idx >= 0]] = False
            ranks.append(1 + better.sum(1))
    return np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)


def evaluate_snapshot(entity, relation, test_triples, candidates, filter_index=None, norm="L1",
                      **kw) -> MetricsReport:
    test = as_triple_array(test_triples)
    if len(test) == 0:
        raise ValueError("empty test set")
    return MetricsReport.from_ranks(evaluate_ranks(entity, relation, test, candidates, filter_index, norm), **kw)


def time_averaged_metrics(entity, relation, dataset: GrowingDataset, model_time: int, *, raw=False,
                          norm="L1", split="test", name="") -> AggregateReport:
    """Evaluate the model of ``model_time`` on the test sets of times 1..model_time."""
    if model_time < 1:
        raise ValueError("model_time must be >= 1")
    snap = dataset.snapshot(model_time)
    candidates = sorted(snap.entities)
    filt = None if raw else FilterIndex(np.array(sorted(snap.cumulative_triples)).reshape(-1, 3))
    per = []
    for k in range(1, model_time + 1):
        test = getattr(dataset.snapshot(k), split)
        if len(test) == 0:
            raise ValueError(f"{split} split of time {k} is empty")
        per.append(evaluate_snapshot(entity, relation, test, candidates, filt, norm, time=k, dataset=name))
    return AggregateReport(model_time, mean_report(per, time=model_time, dataset=name),
                           per, "raw" if raw else "filtered")


def mean_report(reports, **kw) -> MetricsReport:
    return MetricsReport(
        mrr=float(np.mean([r.mrr for r in reports])), h1=float(np.mean([r.h1 for r in reports])),
        h3=float(np.mean([r.h3 for r in reports])), h10=float(np.mean([r.h10 for r in reports])),
        n_queries=int(sum(r.n_queries for r in reports)), **kw)


def emit_report(reports, path, fmt="json", provenance=None) -> Path:
    """Write aggregate reports to ``path`` as JSON or CSV.

    CSV rows are the per-snapshot breakdowns followed by one ``mean`` row per
    report (``time`` column reads ``mean@<model_time>``).
    """
    path = Path(path)
    if isinstance(reports, AggregateReport):
        reports = [reports]
    provenance = dict(provenance or {})
    if fmt == "json":
        payload = {"provenance": provenance, "reports": [r.to_dict() for r in reports]}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(CSV_FIELDS), lineterminator="\n")
            writer.writeheader()
            for rep in reports:
                for r in rep.per_snapshot:
                    writer.writerow(_fmt_row(r.row()))
                row = rep.mean.row()
                row["time"] = f"mean@{rep.model_time}"
                writer.writerow(_fmt_row(row))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def _fmt_row(row):
    return {k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()}


def load_report(path) -> tuple[dict, list]:
    data = json.loads(Path(path).read_text())
    return data["provenance"], [AggregateReport.from_dict(r) for r in data["reports"]]
