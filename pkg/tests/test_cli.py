import csv
import json

import numpy as np
import pytest

from incde.cli import main
from incde.kg import load_dataset, save_dataset
from incde.pipeline import read_manifest

TRAIN = ["--dim", "8", "--epochs", "3", "--batch", "32", "--neg", "2", "--lr", "0.01", "--margin", "1",
         "--max-layer-size", "16", "--patience", "0"]


@pytest.fixture
def data_dir(toy_dataset, tmp_path):
    return save_dataset(toy_dataset, tmp_path / "data")


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestPrepare:
    def test_synthetic_equal(self, tmp_path, capsys):
        assert main(["prepare", "--synthetic", "100", "--out", str(tmp_path / "d"), "--seed", "1"]) == 0
        dirs = sorted(p.name for p in (tmp_path / "d").iterdir() if p.is_dir())
        assert dirs == ["1", "2", "3", "4", "5"]
        for k in dirs:
            assert {"train.txt", "valid.txt", "test.txt"} <= {p.name for p in (tmp_path / "d" / k).iterdir()}
        assert json.loads((tmp_path / "d" / "schedule.json").read_text())["sizes"] == [20] * 5
        assert "time 5" in capsys.readouterr().out

    def test_rerun_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["prepare", "--synthetic", "100", "--order", "emerge", "--out", str(tmp_path / name)]) == 0
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")

    def test_from_base_file(self, tmp_path):
        base = tmp_path / "base.txt"
        base.write_text("".join(f"e{i}\tr{i % 3}\te{i + 1}\n" for i in range(30)))
        assert main(["prepare", "--base", str(base), "--out", str(tmp_path / "d"), "--steps", "2"]) == 0
        ds = load_dataset(tmp_path / "d")
        assert [s["n_triples"] for s in ds.stats()] == [15, 15]

    def test_desk(self, tmp_path):
        assert main(["prepare", "--desk", "--out", str(tmp_path / "d")]) == 0
        assert [s["n_entities"] for s in load_dataset(tmp_path / "d").stats()] == [34, 51, 68, 84, 100]

    def test_invalid_pattern_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["prepare", "--synthetic", "100", "--pattern", "Sideways", "--out", str(tmp_path / "d")])
        assert exc.value.code == 1
        assert "Sideways" in capsys.readouterr().err

    def test_explicit_needs_sizes(self, tmp_path):
        assert main(["prepare", "--synthetic", "100", "--pattern", "Explicit", "--out", str(tmp_path / "d")]) == 1

    def test_unreadable_base_is_invalid_input(self, tmp_path):
        assert main(["prepare", "--base", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "d")]) == 2


def test_plan_json(data_dir, tmp_path):
    out = tmp_path / "plan.json"
    assert main(["plan", "--dataset", str(data_dir), "--time", "2", "--max-layer-size", "5", "--out", str(out)]) == 0
    plan = json.loads(out.read_text())
    assert max(len(layer) for layer in plan["layers"]) <= 5
    assert main(["plan", "--dataset", str(data_dir), "--time", "9"]) == 1


class TestTrainEval:
    def test_pipeline(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--dataset", str(data_dir), "--out", str(out), "--seed", "3", "--no-id", *TRAIN]) == 0
        run = out / "seed_3"
        manifest, _ = read_manifest(run)
        assert sorted(manifest.checkpoints) == [1, 2, 3, 4, 5]
        assert manifest.flags == {"no_ho": False, "no_id": True, "no_ts": False}
        assert manifest.seed == 3 and manifest.config["dim"] == 8
        assert len(manifest.wall_clock) == 5

        assert main(["eval", "--run", str(run), "--both"]) == 0
        assert main(["eval", "--run", str(run), "--time", "1"]) == 0
        manifest, _ = read_manifest(run)
        written = {p.relative_to(run).as_posix() for p in run.rglob("*") if p.is_file()}
        reachable = set(manifest.referenced_files()) | {"manifest.json"}
        assert written == reachable

        filt = json.loads((run / "reports" / "time_5_filtered.json").read_text())
        raw = json.loads((run / "reports" / "time_5_raw.json").read_text())
        agg = filt["reports"][0]
        assert [r["time"] for r in agg["per_snapshot"]] == [1, 2, 3, 4, 5]
        assert raw["reports"][0]["mean"]["mrr"] <= agg["mean"]["mrr"]
        assert filt["provenance"]["config_hash"] == manifest.config_hash
        first = json.loads((run / "reports" / "time_1_filtered.json").read_text())["reports"][0]
        assert first["mean"]["mrr"] == first["per_snapshot"][0]["mrr"]
        with open(run / "reports" / "time_5_filtered.csv") as fh:
            assert next(csv.reader(fh)) == ["time", "dataset", "mrr", "h1", "h3", "h10", "n_queries"]
        side = json.loads((run / "reports" / "time_5_filtered.csv.json").read_text())
        assert side["seed"] == 3 and side["mode"] == "filtered"

    def test_resume_retrains_only_later_times(self, data_dir, tmp_path):
        full, part = tmp_path / "full", tmp_path / "part"
        assert main(["train", "--dataset", str(data_dir), "--out", str(full), *TRAIN]) == 0
        assert main(["train", "--dataset", str(data_dir), "--out", str(part), "--until", "3", *TRAIN]) == 0
        run = part / "seed_0"
        before = {k: (run / f"checkpoints/time_{k}.npz").read_bytes() for k in (1, 2, 3)}
        assert main(["train", "--dataset", str(data_dir), "--out", str(part), "--resume",
                     str(run / "checkpoints" / "time_3.npz"), *TRAIN]) == 0
        manifest, _ = read_manifest(run)
        assert sorted(manifest.checkpoints) == [1, 2, 3, 4, 5]
        for k in (1, 2, 3):
            assert (run / f"checkpoints/time_{k}.npz").read_bytes() == before[k]
        times = [json.loads(line)["time"] for line in (run / "train_log.jsonl").read_text().splitlines()]
        assert sorted(set(times)) == [1, 2, 3, 4, 5]
        a = np.load(full / "seed_0" / "checkpoints" / "time_5.npz")
        b = np.load(run / "checkpoints" / "time_5.npz")
        np.testing.assert_array_equal(a["entity"], b["entity"])

    def test_resume_with_other_config_rejected(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--dataset", str(data_dir), "--out", str(out), "--until", "2", *TRAIN]) == 0
        ckpt = out / "seed_0" / "checkpoints" / "time_2.npz"
        code = main(["train", "--dataset", str(data_dir), "--out", str(out), "--resume", str(ckpt),
                     *TRAIN, "--dim", "16"])
        assert code == 2

    def test_determinism(self, data_dir, tmp_path):
        for name in ("a", "b"):
            assert main(["train", "--dataset", str(data_dir), "--out", str(tmp_path / name), *TRAIN]) == 0
            assert main(["eval", "--run", str(tmp_path / name / "seed_0")]) == 0
        for f in ("time_5_filtered.json", "time_5_filtered.csv"):
            assert ((tmp_path / "a/seed_0/reports" / f).read_bytes()
                    == (tmp_path / "b/seed_0/reports" / f).read_bytes())

    def test_config_file_and_override(self, data_dir, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text(f"# toy run\ndataset = {data_dir}\nout = {tmp_path / 'o'}\nseed = 4,5\n"
                        "dim = 6\nepochs = 2\nbatch-size = 64\nn_neg = 1\npatience = 0\nmax_layer_size = 16\n")
        assert main(["train", "--config", str(conf), "--dim", "4", "--until", "1"]) == 0
        for seed in (4, 5):
            manifest, _ = read_manifest(tmp_path / "o" / f"seed_{seed}")
            assert manifest.config["dim"] == 4 and manifest.config["epochs"] == 2 and manifest.seed == seed

    def test_bad_config(self, data_dir, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("colour = blue\n")
        assert main(["train", "--config", str(conf)]) == 2
        conf.write_text("dim = many\n")
        assert main(["train", "--config", str(conf), "--dataset", str(data_dir), "--out", str(tmp_path)]) == 2

    def test_missing_dataset_option(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == 1

    def test_broken_dataset(self, tmp_path):
        (tmp_path / "d" / "1").mkdir(parents=True)
        (tmp_path / "d" / "1" / "train.txt").write_text("only two\tcolumns\n")
        assert main(["train", "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 2

    def test_eval_missing_checkpoint(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--dataset", str(data_dir), "--out", str(out), "--until", "1", *TRAIN]) == 0
        assert main(["eval", "--run", str(out / "seed_0"), "--time", "4"]) == 2
        assert main(["eval", "--run", str(tmp_path / "nowhere")]) == 2


def test_ablate_and_report(data_dir, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--dataset", str(data_dir), "--out", str(out), "--seed", "0,1", *TRAIN]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["variant", "MRR", "H@1", "H@10"]
    with open(out / "ablation_runs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert {r["variant"] for r in rows} == {"full", "no_ho", "no_id", "no_ts", "fine-tune"}
    with open(out / "ablation.csv") as fh:
        summary = {r["variant"]: r for r in csv.DictReader(fh)}
    assert all(s["n_seeds"] == "2" for s in summary.values())
    assert float(summary["full"]["mrr_mean"]) >= 0
    manifest, _ = read_manifest(out / "fine-tune" / "seed_1")
    assert manifest.flags == {"no_ho": True, "no_id": True, "no_ts": True}

    runs = [str(p) for p in sorted(out.glob("*/seed_*"))]
    assert main(["report", *runs, "--out", str(tmp_path / "rep")]) == 0
    with open(tmp_path / "rep" / "report.csv") as fh:
        again = {r["variant"]: r for r in csv.DictReader(fh)}
    assert again["full"]["mrr_mean"] == summary["full"]["mrr_mean"]
    assert main(["ablate", "--dataset", str(data_dir), "--out", str(out), "--variants", "bogus"]) == 1
