"""Checkpoints as uncompressed ``.npz`` archives.

Layout (all arrays float64 unless noted):

==================  ==============================================
``entity``          ``(n_entities, dim)`` entity vectors
``relation``        ``(n_relations, dim)`` relation vectors
``logits``          ``(n_entities,)`` distillation-weight logits
``opt.t``           int64 scalar, Adam step counter
``opt.m.<name>``    first moments for ``entity``/``relation``/``logits``
``opt.v.<name>``    second moments, same shapes
``meta``            UTF-8 JSON (uint8 bytes): ``format``, ``time``,
                    ``dim``, ``n_entities``, ``n_relations``,
                    ``config_hash``, ``config``
==================  ==============================================
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import SparseAdam
from .trainer import ContinualState, DistillState, EmbeddingTable

FORMAT = "incde-checkpoint/1"


def save_checkpoint(state: ContinualState, path, config: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "format": FORMAT, "time": state.time, "dim": state.table.dim,
        "n_entities": state.table.n_entities, "n_relations": state.table.n_relations,
        "config_hash": state.config_hash, "config": config or {},
    }
    arrays = {
        "entity": state.table.entity, "relation": state.table.relation, "logits": state.distill.logits,
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
    }
    for key, value in state.optimizer.state_dict().items():
        arrays[f"opt.{key}"] = value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[ContinualState, dict]:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        table = EmbeddingTable(meta["dim"], data["entity"].copy(), data["relation"].copy())
        opt = SparseAdam()
        opt.load_state_dict({k[4:]: data[k] for k in data.files if k.startswith("opt.")})
        if meta.get("config"):
            opt.lr = meta["config"].get("lr", opt.lr)
        state = ContinualState(table, DistillState(data["logits"].copy()), opt, meta["time"], meta["config_hash"])
    return state, meta
