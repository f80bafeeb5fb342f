import numpy as np
import pytest

from incde import GrowthSchedule, build_growth_dataset, make_translational_kg

# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE = {}


def write_time_dirs(root, per_time):
    """Write ``[{"train": [("a","r","b"), ...], ...}, ...]`` as a dataset directory."""
    for k, splits in enumerate(per_time, 1):
        d = root / str(k)
        d.mkdir(parents=True)
        for split in ("train", "valid", "test"):
            lines = ["\t".join(t) for t in splits.get(split, [])]
            (d / f"{split}.txt").write_text("".join(line + "\n" for line in lines))
    return root


@pytest.fixture
def toy_dataset():
    """Small five-step lattice dataset used by the training and CLI tests."""
    base = make_translational_kg(n_triples=120, grid=(5, 5), n_relations=8, max_offset=1, seed=3)
    return build_growth_dataset(base, GrowthSchedule.make("Equal", len(base), 5, seed=1), order="emerge")


def random_triples(rng, n_ent, n_rel, n):
    h = rng.integers(0, n_ent, n)
    r = rng.integers(0, n_rel, n)
    t = rng.integers(0, n_ent, n)
    return np.unique(np.stack([h, r, t], axis=1), axis=0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
