"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .kg import GrowingDataset


def check_triples(X, n_entities=None, n_relations=None, name="X") -> np.ndarray:
    """Return ``X`` as an ``(n, 3)`` int64 array of in-range ids."""
    try:
        arr = np.asarray(X)
    except Exception as exc:  # ragged input and the like
        raise ValueError(f"{name} is not array-like: {exc}") from None
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must contain integer ids")
    arr = arr.astype(np.int64)
    if (arr < 0).any():
        raise ValueError(f"{name} contains negative ids")
    if n_entities is not None and (arr[:, [0, 2]] >= n_entities).any():
        raise ValueError(f"{name} references entity ids >= {n_entities}")
    if n_relations is not None and (arr[:, 1] >= n_relations).any():
        raise ValueError(f"{name} references relation ids >= {n_relations}")
    return arr


def check_dataset(dataset) -> GrowingDataset:
    if not isinstance(dataset, GrowingDataset):
        raise TypeError(f"expected a GrowingDataset, got {type(dataset).__name__}")
    if len(dataset) == 0:
        raise ValueError("dataset has no snapshots")
    return dataset


def check_time(dataset: GrowingDataset, time) -> int:
    if time is None:
        return len(dataset)
    time = int(time)
    if not 1 <= time <= len(dataset):
        raise ValueError(f"time {time} outside 1..{len(dataset)}")
    return time
