"""Growing knowledge-graph snapshots: loading, indexing and deltas.

A dataset lives on disk as one directory per time step::

    <root>/<time_k>/train.txt
    <root>/<time_k>/valid.txt
    <root>/<time_k>/test.txt

with ``head<TAB>relation<TAB>tail`` lines. Time directories are visited in
lexicographic order. Each time directory holds the triples that *emerge* at
that time; cumulative sets are unions over the preceding directories.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
ENTITY_VOCAB_FILE = "entity2id.txt"
RELATION_VOCAB_FILE = "relation2id.txt"


class DatasetError(Exception):
    """Base class for dataset problems."""


class TripleParseError(DatasetError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DatasetValidationError(DatasetError):
    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid dataset: {head}{more}")


def as_triple_array(triples) -> np.ndarray:
    """Coerce an iterable of (h, r, t) id triples to an ``(n, 3)`` int64 array."""
    arr = np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples,
                     dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected triples of shape (n, 3), got {arr.shape}")
    return arr


def triple_set(triples) -> frozenset:
    return frozenset(map(tuple, as_triple_array(triples).tolist()))


class Vocabulary:
    """Bijective name <-> id maps for entities and relations.

    Ids are dense and assigned in order of first appearance.
    """

    def __init__(self, entities: Sequence[str] = (), relations: Sequence[str] = ()):
        self.entity_names: list[str] = []
        self.relation_names: list[str] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}
        for name in entities:
            self.add_entity(name)
        for name in relations:
            self.add_relation(name)

    def add_entity(self, name: str) -> int:
        idx = self._entity_ids.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self._entity_ids[name] = idx
            self.entity_names.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self._relation_ids.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self._relation_ids[name] = idx
            self.relation_names.append(name)
        return idx

    def entity_id(self, name: str) -> int:
        return self._entity_ids[name]

    def relation_id(self, name: str) -> int:
        return self._relation_ids[name]

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def encode(self, head: str, relation: str, tail: str) -> tuple[int, int, int]:
        return self.add_entity(head), self.add_relation(relation), self.add_entity(tail)

    def decode(self, triple) -> tuple[str, str, str]:
        h, r, t = (int(x) for x in triple)
        return self.entity_names[h], self.relation_names[r], self.entity_names[t]

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.entity_names == other.entity_names
                and self.relation_names == other.relation_names)

    def __repr__(self):
        return f"Vocabulary(n_entities={self.n_entities}, n_relations={self.n_relations})"

    @classmethod
    def read(cls, entity_path, relation_path) -> "Vocabulary":
        return cls(_read_id_file(entity_path), _read_id_file(relation_path))

    def write(self, entity_path, relation_path) -> None:
        _write_id_file(entity_path, self.entity_names)
        _write_id_file(relation_path, self.relation_names)


def _read_id_file(path) -> list[str]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TripleParseError(path, lineno, f"expected 'name<TAB>id', got {len(parts)} fields")
            try:
                pairs.append((int(parts[1]), parts[0]))
            except ValueError:
                raise TripleParseError(path, lineno, f"non-integer id {parts[1]!r}") from None
    pairs.sort()
    ids = [i for i, _ in pairs]
    if ids != list(range(len(ids))):
        raise DatasetValidationError([f"{path}: ids are not dense 0..{len(ids) - 1}"])
    names = [n for _, n in pairs]
    if len(set(names)) != len(names):
        raise DatasetValidationError([f"{path}: duplicate names"])
    return names


def _write_id_file(path, names) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, name in enumerate(names):
            fh.write(f"{name}\t{i}\n")


@dataclass(frozen=True, eq=False)
class KgSnapshot:
    """Cumulative KG state at one time step (``time`` counts from 1)."""

    time: int
    entities: frozenset
    relations: frozenset
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    cumulative_triples: frozenset
    name: str = ""

    @property
    def triples(self) -> np.ndarray:
        """All triples listed for this time step (train, valid, test)."""
        return np.concatenate([self.train, self.valid, self.test])

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __repr__(self):
        return (f"KgSnapshot(time={self.time}, n_entities={self.n_entities}, "
                f"n_relations={self.n_relations}, n_triples={len(self.triples)})")


@dataclass(frozen=True, eq=False)
class Delta:
    new_triples: np.ndarray
    new_entities: frozenset
    new_relations: frozenset

    def is_empty(self) -> bool:
        return len(self.new_triples) == 0 and not self.new_entities and not self.new_relations


@dataclass(frozen=True, eq=False)
class GrowingDataset:
    snapshots: tuple
    vocab: Vocabulary
    deltas: tuple = field(default=())

    def __post_init__(self):
        if not self.deltas:
            deltas, prev = [], None
            for snap in self.snapshots:
                deltas.append(compute_delta(snap, prev))
                prev = snap
            object.__setattr__(self, "deltas", tuple(deltas))

    def __len__(self):
        return len(self.snapshots)

    def snapshot(self, time: int) -> KgSnapshot:
        if not 1 <= time <= len(self.snapshots):
            raise IndexError(f"time {time} outside 1..{len(self.snapshots)}")
        return self.snapshots[time - 1]

    def delta(self, time: int) -> Delta:
        self.snapshot(time)
        return self.deltas[time - 1]

    def previous_entities(self, time: int) -> frozenset:
        return self.snapshots[time - 2].entities if time > 1 else frozenset()

    def known_triples(self, time: int) -> frozenset:
        """True triples of times <= ``time`` over train, valid and test."""
        return self.snapshot(time).cumulative_triples

    def stats(self) -> list[dict]:
        """Per-time cumulative entity/relation counts and current triple count."""
        return [
            {"time": s.time, "n_entities": s.n_entities, "n_relations": s.n_relations,
             "n_triples": len(s.triples)}
            for s in self.snapshots
        ]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for s in self.snapshots:
            for split in (s.train, s.valid, s.test):
                h.update(np.ascontiguousarray(split).tobytes())
                h.update(b"|")
        h.update("\n".join(self.vocab.entity_names).encode())
        h.update("\n".join(self.vocab.relation_names).encode())
        return h.hexdigest()[:16]


def compute_delta(current: KgSnapshot, previous: KgSnapshot | None) -> Delta:
    """Set differences between ``current`` and ``previous`` (or everything if none)."""
    if previous is None:
        prev_e, prev_r, prev_t = frozenset(), frozenset(), frozenset()
    else:
        if current.time != previous.time + 1 and current.time != previous.time:
            raise ValueError(
                f"snapshots out of order: current time {current.time}, previous {previous.time}")
        prev_e, prev_r, prev_t = previous.entities, previous.relations, previous.cumulative_triples
    new = sorted(current.cumulative_triples - prev_t)
    return Delta(
        new_triples=as_triple_array(new),
        new_entities=frozenset(current.entities - prev_e),
        new_relations=frozenset(current.relations - prev_r),
    )


def build_snapshots(splits_per_time: Iterable[dict], names: Sequence[str] | None = None) -> list[KgSnapshot]:
    """Assemble cumulative snapshots from per-time ``{"train": arr, ...}`` id arrays."""
    snapshots = []
    ents: set = set()
    rels: set = set()
    cum: set = set()
    for k, splits in enumerate(splits_per_time, 1):
        arrays = {s: as_triple_array(splits.get(s, ())) for s in SPLITS}
        for arr in arrays.values():
            ents.update(arr[:, 0].tolist())
            ents.update(arr[:, 2].tolist())
            rels.update(arr[:, 1].tolist())
            cum.update(map(tuple, arr.tolist()))
        snapshots.append(KgSnapshot(
            time=k, entities=frozenset(ents), relations=frozenset(rels),
            train=arrays["train"], valid=arrays["valid"], test=arrays["test"],
            cumulative_triples=frozenset(cum),
            name=names[k - 1] if names else str(k),
        ))
    return snapshots


def _read_triples(path: Path):
    rows = []
    if not path.exists():
        return rows
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.endswith("\r"):
                line = line[:-1]
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            rows.append((lineno, parts))
    return rows


def time_dirs(root) -> list[Path]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and any((p / f"{s}.txt").exists() for s in SPLITS))
    if not dirs:
        raise DatasetError(f"no time directories with train/valid/test files under {root}")
    return dirs


def load_dataset(root, *, dedupe: bool = False, emit_vocab: bool = True) -> GrowingDataset:
    """Load a growing-KG dataset directory.

    A triple already seen at an earlier time is dropped from later files, so
    each triple belongs to exactly one delta. A triple repeated *within* one
    time step is a validation error unless ``dedupe`` is set.

    When the ``entity2id.txt``/``relation2id.txt`` sidecars exist they fix the
    id assignment; otherwise ids follow first appearance and the sidecars are
    written (``emit_vocab``).
    """
    root = Path(root)
    dirs = time_dirs(root)
    ent_path, rel_path = root / ENTITY_VOCAB_FILE, root / RELATION_VOCAB_FILE
    fixed_vocab = ent_path.exists() and rel_path.exists()
    vocab = Vocabulary.read(ent_path, rel_path) if fixed_vocab else Vocabulary()

    seen: set = set()
    per_time = []
    violations = []
    for d in dirs:
        current: set = set()
        splits = {}
        for split in SPLITS:
            path = d / f"{split}.txt"
            ids = []
            for lineno, (h, r, t) in _read_triples(path):
                if fixed_vocab:
                    try:
                        triple = (vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t))
                    except KeyError as exc:
                        raise TripleParseError(path, lineno, f"name {exc.args[0]!r} missing from vocabulary") from None
                else:
                    triple = vocab.encode(h, r, t)
                if triple in seen:
                    logger.debug("%s:%d: triple already present at an earlier time, dropped", path, lineno)
                    continue
                if triple in current:
                    if dedupe:
                        continue
                    violations.append(f"{path}:{lineno}: duplicate triple within time step {d.name}")
                    continue
                current.add(triple)
                ids.append(triple)
            splits[split] = ids
        seen |= current
        per_time.append(splits)
    if violations:
        raise DatasetValidationError(violations)

    snapshots = build_snapshots(per_time, names=[d.name for d in dirs])
    dataset = GrowingDataset(tuple(snapshots), vocab)
    report = validate_dataset(dataset)
    if report:
        raise DatasetValidationError(report.violations)
    if emit_vocab and not fixed_vocab:
        try:
            vocab.write(ent_path, rel_path)
        except OSError as exc:
            logger.warning("could not write vocabulary sidecars under %s: %s", root, exc)
    return dataset


def save_dataset(dataset: GrowingDataset, root) -> Path:
    """Write ``dataset`` in the directory layout understood by :func:`load_dataset`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = [s.name or str(s.time) for s in dataset.snapshots]
    if sorted(names) != names or len(set(names)) != len(names):
        width = len(str(len(names)))
        names = [str(s.time).zfill(width) for s in dataset.snapshots]
    for snap, name in zip(dataset.snapshots, names):
        d = root / name
        d.mkdir(exist_ok=True)
        for split in SPLITS:
            with open(d / f"{split}.txt", "w", encoding="utf-8", newline="\n") as fh:
                for triple in getattr(snap, split):
                    fh.write("\t".join(dataset.vocab.decode(triple)) + "\n")
    dataset.vocab.write(root / ENTITY_VOCAB_FILE, root / RELATION_VOCAB_FILE)
    return root


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_dataset(dataset: GrowingDataset) -> ValidationReport:
    """List every snapshot/delta invariant violation; empty iff valid."""
    out = []
    n_ent, n_rel = dataset.vocab.n_entities, dataset.vocab.n_relations
    prev = None
    union: set = set()
    for k, snap in enumerate(dataset.snapshots, 1):
        if snap.time != k:
            out.append(f"snapshot {k}: time index is {snap.time}, expected {k}")
        for split in SPLITS:
            arr = getattr(snap, split)
            if len(arr) == 0:
                continue
            for h, r, t in arr.tolist():
                if not (0 <= h < n_ent and 0 <= t < n_ent) or h not in snap.entities or t not in snap.entities:
                    out.append(f"time {k} {split}: triple ({h},{r},{t}) references an unknown entity")
                if not 0 <= r < n_rel or r not in snap.relations:
                    out.append(f"time {k} {split}: triple ({h},{r},{t}) references an unknown relation")
        for h, r, t in snap.cumulative_triples:
            if h not in snap.entities or t not in snap.entities or r not in snap.relations:
                out.append(f"time {k}: cumulative triple ({h},{r},{t}) has a dangling reference")
        if prev is not None:
            missing_e = prev.entities - snap.entities
            missing_r = prev.relations - snap.relations
            if missing_e:
                out.append(f"time {k}: entities {sorted(missing_e)[:10]} of time {k - 1} missing (non-monotone)")
            if missing_r:
                out.append(f"time {k}: relations {sorted(missing_r)[:10]} of time {k - 1} missing (non-monotone)")
            if not prev.cumulative_triples <= snap.cumulative_triples:
                out.append(f"time {k}: cumulative triples of time {k - 1} not carried over")
        if k <= len(dataset.deltas):
            delta = dataset.deltas[k - 1]
            new = delta.new_triples.tolist()
            if len(set(map(tuple, new))) != len(new):
                out.append(f"time {k}: delta contains duplicate triples")
            union.update(map(tuple, new))
        prev = snap
    if dataset.snapshots and union != set(dataset.snapshots[-1].cumulative_triples):
        out.append("union of deltas differs from the final cumulative triple set")
    return ValidationReport(out)


def read_triple_file(path, vocab: Vocabulary | None = None) -> tuple[np.ndarray, Vocabulary]:
    """Read a single ``head<TAB>relation<TAB>tail`` file into ids."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    vocab = vocab if vocab is not None else Vocabulary()
    triples = [vocab.encode(*parts) for _, parts in _read_triples(Path(path))]
    return as_triple_array(triples), vocab
