"""Build growing-KG datasets from a static base KG."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import GrowingDataset, Vocabulary, as_triple_array, build_snapshots, save_dataset

PATTERNS = ("Equal", "Higher", "Lower", "Explicit")
ORDERS = ("shuffle", "emerge")


@dataclass(frozen=True)
class GrowthSchedule:
    pattern: str
    sizes: tuple
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown growth pattern {self.pattern!r}; expected one of {PATTERNS}")
        if any(int(s) < 1 for s in self.sizes):
            raise ValueError(f"every scheduled size must be >= 1, got {list(self.sizes)}")

    @property
    def steps(self) -> int:
        return len(self.sizes)

    @classmethod
    def make(cls, pattern: str, n_triples: int, steps: int = 5, seed: int = 0, sizes=None,
             unit: int | None = None) -> "GrowthSchedule":
        """Schedule ``n_triples`` over ``steps`` time steps.

        ``Equal`` splits evenly (earlier steps absorb the remainder),
        ``Higher`` doubles the increment every step starting from ``unit``
        (default: ``n_triples / (2**steps - 1)`` rounded down to one
        significant digit) with the last step taking the remainder,
        ``Lower`` is ``Higher`` reversed and
        ``Explicit`` takes ``sizes`` verbatim.
        """
        if pattern == "Explicit":
            if sizes is None:
                raise ValueError("Explicit schedules need sizes")
            sizes = tuple(int(s) for s in sizes)
        elif pattern == "Equal":
            q, rem = divmod(n_triples, steps)
            sizes = tuple(q + (1 if k < rem else 0) for k in range(steps))
        elif pattern in ("Higher", "Lower"):
            if unit is None:
                unit = _round_down_1sig(n_triples // (2 ** steps - 1))
            if unit < 1 or unit * (2 ** steps - 1) > n_triples:
                raise ValueError(f"{n_triples} triples cannot fill a doubling schedule of {steps} steps")
            head = [unit * 2 ** k for k in range(steps - 1)]
            sizes = tuple(head + [n_triples - sum(head)])
            if pattern == "Lower":
                sizes = _lower_from_higher(sizes)
        else:
            raise ValueError(f"unknown growth pattern {pattern!r}; expected one of {PATTERNS}")
        if sum(sizes) != n_triples:
            raise ValueError(f"schedule sums to {sum(sizes)}, base KG has {n_triples} triples")
        return cls(pattern, sizes, seed)

    def to_dict(self):
        return {"pattern": self.pattern, "sizes": list(self.sizes), "seed": self.seed}


def _round_down_1sig(n: int) -> int:
    if n < 10:
        return n
    scale = 10 ** (len(str(n)) - 1)
    return (n // scale) * scale


def _lower_from_higher(sizes):
    # 10,000/20,000/.../160,116 becomes 160,000/80,000/.../10,116
    rev = list(reversed(sizes))
    extra = sizes[-1] - 2 * sizes[-2] if len(sizes) > 1 else 0
    if len(sizes) > 1 and extra > 0:
        rev[0] -= extra
        rev[-1] += extra
    return tuple(rev)


def split_train_valid_test(triples, seed=0, rng=None):
    """Uniform 3:1:1 split; rounding remainder goes to train."""
    triples = as_triple_array(triples)
    n = len(triples)
    if n < 5:
        raise ValueError(f"need at least 5 triples for a 3:1:1 split, got {n}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_valid = n_test = n // 5
    n_train = n - n_valid - n_test
    shuffled = triples[perm]
    return shuffled[:n_train], shuffled[n_train:n_train + n_valid], shuffled[n_train + n_valid:]


def emergence_order(triples, rng) -> np.ndarray:
    """Permutation under which the KG grows outward from one entity.

    Entities are ranked by a breadth-first walk of the undirected graph
    (random start, random neighbour order, unreached components appended
    the same way); a triple arrives with the later of its two entities,
    ties in random order.
    """
    n_ent = int(triples[:, [0, 2]].max()) + 1
    nbrs = [[] for _ in range(n_ent)]
    for h, _, t in triples.tolist():
        nbrs[h].append(t)
        nbrs[t].append(h)
    arrival = np.full(n_ent, -1, dtype=np.int64)
    rank = 0
    for start in rng.permutation(n_ent):
        if arrival[start] >= 0:
            continue
        arrival[start] = rank
        rank += 1
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for u in rng.permutation(nbrs[v]) if nbrs[v] else ():
                if arrival[u] < 0:
                    arrival[u] = rank
                    rank += 1
                    queue.append(u)
    key = np.maximum(arrival[triples[:, 0]], arrival[triples[:, 2]])
    return np.lexsort((rng.random(len(triples)), key))


def build_growth_dataset(base_triples, schedule: GrowthSchedule, seed=None, vocab: Vocabulary | None = None,
                         order="shuffle"):
    """Cut the base KG into the scheduled per-time increments.

    ``order="shuffle"`` chunks a uniform shuffle, so nearly every entity is
    present from time 1 on; ``order="emerge"`` chunks :func:`emergence_order`
    so the entity set grows step by step.
    """
    if order not in ORDERS:
        raise ValueError(f"unknown order {order!r}; expected one of {ORDERS}")
    base = np.unique(as_triple_array(base_triples), axis=0)
    if len(base) < schedule.steps:
        raise ValueError(f"base KG has {len(base)} triples, fewer than {schedule.steps} steps")
    if sum(schedule.sizes) != len(base):
        raise ValueError(f"schedule sums to {sum(schedule.sizes)} but the base KG has {len(base)} distinct triples")
    seed = schedule.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(base)) if order == "shuffle" else emergence_order(base, rng)
    shuffled = base[perm]
    per_time = []
    start = 0
    for size in schedule.sizes:
        chunk = shuffled[start:start + size]
        start += size
        train, valid, test = split_train_valid_test(chunk, rng=rng)
        per_time.append({"train": train, "valid": valid, "test": test})
    snapshots = build_snapshots(per_time)
    if vocab is None:
        n_ent = int(base[:, [0, 2]].max()) + 1
        n_rel = int(base[:, 1].max()) + 1
        vocab = Vocabulary([f"e{i}" for i in range(n_ent)], [f"r{i}" for i in range(n_rel)])
    return _reindex(GrowingDataset(tuple(snapshots), vocab))


def _reindex(dataset: GrowingDataset) -> GrowingDataset:
    """Renumber ids by first appearance (time, then train/valid/test order)."""
    old = dataset.vocab
    vocab = Vocabulary()
    per_time = []
    for snap in dataset.snapshots:
        splits = {}
        for split in ("train", "valid", "test"):
            splits[split] = [vocab.encode(*old.decode(t)) for t in getattr(snap, split)]
        per_time.append(splits)
    return GrowingDataset(tuple(build_snapshots(per_time)), vocab)


def write_growth_dataset(dataset: GrowingDataset, schedule: GrowthSchedule, out_dir) -> Path:
    out = save_dataset(dataset, out_dir)
    (out / "schedule.json").write_text(json.dumps(schedule.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def make_translational_kg(n_triples=2000, grid=(10, 10), n_relations=30, max_offset=3, seed=0):
    """Synthetic KG that a translational model can represent exactly.

    Entities are the points of an integer lattice of shape ``grid``; every
    relation is a distinct non-zero lattice offset, and ``(h, r, t)`` holds
    when ``t = h + offset_r`` stays on the lattice. ``n_triples`` distinct
    facts are drawn uniformly from all that hold. Returns an ``(n, 3)`` id
    array; entity ids enumerate lattice points in C order.
    """
    rng = np.random.default_rng(seed)
    grid = tuple(int(g) for g in grid)
    points = np.array(np.unravel_index(np.arange(int(np.prod(grid))), grid)).T
    span = np.arange(-max_offset, max_offset + 1)
    offsets = np.array(np.meshgrid(*[span] * len(grid), indexing="ij")).reshape(len(grid), -1).T
    offsets = offsets[np.abs(offsets).sum(1) > 0]
    if n_relations > len(offsets):
        raise ValueError(f"only {len(offsets)} distinct offsets with max_offset={max_offset}")
    offsets = offsets[rng.choice(len(offsets), size=n_relations, replace=False)]
    facts = []
    for r, off in enumerate(offsets):
        tgt = points + off
        ok = np.all((tgt >= 0) & (tgt < np.array(grid)), axis=1)
        heads = np.flatnonzero(ok)
        tails = np.ravel_multi_index(tgt[ok].T, grid)
        facts.append(np.stack([heads, np.full(len(heads), r), tails], axis=1))
    facts = np.concatenate(facts)
    if n_triples > len(facts):
        raise ValueError(f"lattice only supports {len(facts)} facts, asked for {n_triples}")
    pick = np.sort(rng.choice(len(facts), size=n_triples, replace=False))
    return facts[pick].astype(np.int64)


def desk_benchmark(seed=0) -> GrowingDataset:
    """Five-step Equal dataset of 1,900 lattice facts whose entity set grows each step.

    Small enough to train on a CPU in minutes, large enough that plain
    fine-tuning forgets measurably. Pair it with :data:`DESK_CONFIG`.
    """
    base = make_translational_kg(n_triples=1900, grid=(10, 10), n_relations=40, seed=seed)
    return build_growth_dataset(base, GrowthSchedule.make("Equal", len(base), 5, seed=seed), order="emerge")


# training settings for desk_benchmark; the long per-layer budget lets the
# time-1 model converge, which is what the distillation teachers need
DESK_CONFIG = {"dim": 32, "lr": 1e-2, "epochs": 1000, "margin": 2.0, "batch_size": 32, "norm": "L2",
               "stage1_fraction": 0.5, "patience": 0}
