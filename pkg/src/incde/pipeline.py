"""Run plumbing behind the command line: configs, manifests, train/eval/ablate drivers."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .estimator import IncDE
from .evaluation import AggregateReport, emit_report, time_averaged_metrics
from .kg import GrowingDataset
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "incde-manifest/1"
MANIFEST_NAME = "manifest.json"
LOG_NAME = "train_log.jsonl"

VARIANTS = {
    "full": {},
    "no_ho": {"no_ho": True},
    "no_id": {"no_id": True},
    "no_ts": {"no_ts": True},
    "fine-tune": {"no_ho": True, "no_id": True, "no_ts": True},
}

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
RUN_KEYS = ("dataset", "out", "seeds", "raw")


class ConfigError(ValueError):
    """Bad configuration file or option value."""


# -- configuration -----------------------------------------------------------

def _coerce(key, value, default):
    if isinstance(value, str):
        text = value.strip()
    else:
        return value
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    return text


def parse_seeds(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        seeds = [int(s) for s in text]
    else:
        try:
            seeds = [int(s) for s in str(text).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"seed list must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file (``#`` starts a comment).

    Keys are :class:`TrainConfig` field names plus ``dataset``, ``out``,
    ``seeds`` and ``raw``; dashes are accepted in place of underscores.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "seed":
            key = "seeds"
        if key not in _TRAIN_FIELDS and key not in RUN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


@dataclass
class RunConfig:
    train: TrainConfig
    dataset: Path | None = None
    out: Path | None = None
    seeds: list = field(default_factory=lambda: [0])
    raw: bool = False

    @classmethod
    def from_sources(cls, file_values: dict | None = None, overrides: dict | None = None) -> "RunConfig":
        """Merge config-file values with command-line overrides (overrides win)."""
        merged = dict(file_values or {})
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        kwargs = {}
        for name, f in _TRAIN_FIELDS.items():
            if name in merged and name != "seed":
                kwargs[name] = _coerce(name, merged[name], f.default)
        seeds = parse_seeds(merged.get("seeds", "0"))
        try:
            train = TrainConfig(seed=seeds[0], **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        dataset = Path(merged["dataset"]) if merged.get("dataset") else None
        out = Path(merged["out"]) if merged.get("out") else None
        return cls(train, dataset, out, seeds, _coerce("raw", merged.get("raw", False), False))

    def for_seed(self, seed) -> TrainConfig:
        return self.train.replace(seed=int(seed))


# -- manifest ----------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    config_hash: str
    dataset: str
    dataset_fingerprint: str
    seed: int
    flags: dict
    checkpoints: dict = field(default_factory=dict)
    plans: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)
    log: str = LOG_NAME

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["format"] = MANIFEST_FORMAT
        return data

    @classmethod
    def from_dict(cls, data) -> "RunManifest":
        if data.get("format") != MANIFEST_FORMAT:
            raise ConfigError(f"not a run manifest (format {data.get('format')!r})")
        data = {k: v for k, v in data.items() if k != "format"}
        for key in ("checkpoints", "plans", "wall_clock"):
            data[key] = {int(k): v for k, v in data.get(key, {}).items()}
        return cls(**data)

    @property
    def last_time(self) -> int:
        return max(self.checkpoints) if self.checkpoints else 0

    def write(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        missing = [p for p in self.referenced_files() if not (run_dir / p).exists()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing}")
        path = run_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def referenced_files(self) -> list:
        files = list(self.checkpoints.values()) + list(self.plans.values()) + list(self.reports)
        return files + ([self.log] if self.log else [])


def read_manifest(path) -> tuple[RunManifest, Path]:
    """Load a manifest given its path or its run directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise FileNotFoundError(f"cannot read manifest {path}: {exc.strerror}") from None
    return RunManifest.from_dict(data), path.parent


def variant_flags(config: TrainConfig) -> dict:
    return {"no_ho": config.no_ho, "no_id": config.no_id, "no_ts": config.no_ts}


# -- training ----------------------------------------------------------------

def train_run(dataset: GrowingDataset, config: TrainConfig, run_dir, *, dataset_path="", resume=None,
              until=None) -> RunManifest:
    """Train every time step (after ``resume``, if given) and write all artifacts.

    ``run_dir`` receives ``checkpoints/time_<k>.npz``, ``plans/time_<k>.json``,
    the JSON-lines training log and ``manifest.json``.
    """
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "plans").mkdir(exist_ok=True)
    until = len(dataset) if until is None else int(until)

    est = IncDE.from_config(config)
    manifest = RunManifest(config.to_dict(), config.config_hash(), str(dataset_path), dataset.fingerprint(),
                           config.seed, variant_flags(config))
    log_path = run_dir / LOG_NAME
    if resume is not None:
        state, meta = load_checkpoint(resume)
        if state.config_hash != config.config_hash():
            raise ConfigError(f"checkpoint {resume} was written under config {state.config_hash}, "
                              f"current config is {config.config_hash()}")
        if state.time >= until:
            raise ConfigError(f"checkpoint {resume} is already at time {state.time}")
        est.state_, est.log_, est.plans_ = state, [], {}
        manifest_path = run_dir / MANIFEST_NAME
        if manifest_path.exists():
            old, _ = read_manifest(manifest_path)
            keep = range(1, state.time + 1)
            manifest.checkpoints = {k: v for k, v in old.checkpoints.items() if k in keep}
            manifest.plans = {k: v for k, v in old.plans.items() if k in keep}
            manifest.wall_clock = {k: v for k, v in old.wall_clock.items() if k in keep}
        log_mode = "a"
        start = state.time + 1
    else:
        log_mode = "w"
        start = 1

    with open(log_path, log_mode) as log_fh:
        for t in range(start, until + 1):
            t0 = _time.perf_counter()
            n_before = len(getattr(est, "log_", []))
            est.partial_fit(dataset, time=t)
            elapsed = _time.perf_counter() - t0
            for record in est.log_[n_before:]:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()
            ckpt = Path("checkpoints") / f"time_{t}.npz"
            est.save(run_dir / ckpt)
            plan = Path("plans") / f"time_{t}.json"
            (run_dir / plan).write_text(est.plans_[t].to_json(indent=1) + "\n")
            manifest.checkpoints[t] = str(ckpt)
            manifest.plans[t] = str(plan)
            manifest.wall_clock[t] = round(elapsed, 3)
            logger.info("time %d trained in %.1fs", t, elapsed)
            manifest.write(run_dir)
    manifest.write(run_dir)
    return manifest


def seed_dir(out, seed) -> Path:
    return Path(out) / f"seed_{seed}"


# -- evaluation --------------------------------------------------------------

def evaluate_checkpoint(path, dataset: GrowingDataset, *, raw=False, name="", norm=None) -> AggregateReport:
    state, meta = load_checkpoint(path)
    norm = norm or meta.get("config", {}).get("norm", "L1")
    return time_averaged_metrics(state.table.entity, state.table.relation, dataset, state.time, raw=raw,
                                 norm=norm, name=name)


def eval_run(run_dir, dataset: GrowingDataset, *, time=None, modes=("filtered",), formats=("json", "csv"),
             name="") -> list:
    """Evaluate one checkpoint of a run and register the reports in its manifest."""
    manifest, run_dir = read_manifest(run_dir)
    time = manifest.last_time if time is None else int(time)
    if time not in manifest.checkpoints:
        raise FileNotFoundError(f"no checkpoint for time {time} in {run_dir}")
    if dataset.fingerprint() != manifest.dataset_fingerprint:
        logger.warning("dataset fingerprint differs from the one the run was trained on")
    (run_dir / "reports").mkdir(exist_ok=True)
    provenance = {"config_hash": manifest.config_hash, "seed": manifest.seed, "model_time": time,
                  "dataset_fingerprint": manifest.dataset_fingerprint, **manifest.flags}
    written = []
    for mode in modes:
        report = evaluate_checkpoint(run_dir / manifest.checkpoints[time], dataset, raw=(mode == "raw"),
                                     name=name, norm=manifest.config.get("norm"))
        for fmt in formats:
            rel = Path("reports") / f"time_{time}_{mode}.{fmt}"
            emit_report(report, run_dir / rel, fmt=fmt, provenance={**provenance, "mode": mode})
            written.append(rel)
            if str(rel) not in manifest.reports:
                manifest.reports.append(str(rel))
            if fmt == "csv":
                meta = rel.with_suffix(".csv.json")
                (run_dir / meta).write_text(json.dumps({**provenance, "mode": mode}, sort_keys=True) + "\n")
                if str(meta) not in manifest.reports:
                    manifest.reports.append(str(meta))
    manifest.write(run_dir)
    return [run_dir / p for p in written]


# -- ablation and summaries --------------------------------------------------

SUMMARY_FIELDS = ("variant", "dataset", "n_seeds", "mrr_mean", "mrr_std", "h1_mean", "h1_std",
                  "h10_mean", "h10_std", "delta_mrr")
ROW_FIELDS = ("variant", "dataset", "seed", "config_hash", "mrr", "h1", "h3", "h10", "n_queries")


def summarise(rows, dataset_name="") -> list[dict]:
    """Mean and (population) stddev per variant; ``delta_mrr`` is relative to ``full``."""
    by_variant: dict = {}
    for row in rows:
        by_variant.setdefault(row["variant"], []).append(row)
    out = []
    for variant, group in by_variant.items():
        entry = {"variant": variant, "dataset": dataset_name, "n_seeds": len(group)}
        for metric in ("mrr", "h1", "h10"):
            vals = np.array([r[metric] for r in group], dtype=float)
            entry[f"{metric}_mean"] = float(vals.mean())
            entry[f"{metric}_std"] = float(vals.std())
        out.append(entry)
    full = next((e for e in out if e["variant"] == "full"), None)
    for entry in out:
        entry["delta_mrr"] = entry["mrr_mean"] - full["mrr_mean"] if full else None
    return out


def format_table(summary) -> str:
    lines = [f"{'variant':<10} {'MRR':>15} {'H@1':>15} {'H@10':>15}"]
    for e in summary:
        cells = [f"{e[m + '_mean']:.3f} ± {e[m + '_std']:.3f}" for m in ("mrr", "h1", "h10")]
        lines.append(f"{e['variant']:<10} " + " ".join(f"{c:>15}" for c in cells))
    return "\n".join(lines)


def write_summary(rows, summary, out_dir, stem="ablation") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fields, data in ((f"{stem}.csv", SUMMARY_FIELDS, summary), (f"{stem}_runs.csv", ROW_FIELDS, rows)):
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
            writer.writeheader()
            for row in data:
                writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        paths.append(path)
    path = out_dir / f"{stem}.json"
    path.write_text(json.dumps({"runs": rows, "summary": summary}, indent=2, sort_keys=True) + "\n")
    paths.append(path)
    return paths


def run_row(variant, report: AggregateReport, config: TrainConfig, dataset_name="") -> dict:
    m = report.mean
    return {"variant": variant, "dataset": dataset_name, "seed": config.seed, "config_hash": config.config_hash(),
            "mrr": m.mrr, "h1": m.h1, "h3": m.h3, "h10": m.h10, "n_queries": m.n_queries}


def ablate(dataset: GrowingDataset, config: TrainConfig, seeds, out_dir, *, variants=tuple(VARIANTS),
           dataset_path="", dataset_name="", raw=False) -> tuple[list, list]:
    """Train and evaluate every variant under every seed; returns (rows, summary)."""
    rows = []
    for variant in variants:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}")
        for seed in seeds:
            flags = {"no_ho": False, "no_id": False, "no_ts": False, **VARIANTS[variant]}
            cfg = config.replace(seed=int(seed), **flags)
            run_dir = Path(out_dir) / variant / f"seed_{seed}"
            manifest = train_run(dataset, cfg, run_dir, dataset_path=dataset_path)
            mode = "raw" if raw else "filtered"
            eval_run(run_dir, dataset, modes=(mode,), name=dataset_name)
            report = evaluate_checkpoint(run_dir / manifest.checkpoints[manifest.last_time], dataset, raw=raw,
                                         name=dataset_name, norm=cfg.norm)
            rows.append({**run_row(variant, report, cfg, dataset_name),
                         "wall_clock": round(sum(manifest.wall_clock.values()), 3)})
            logger.info("%s seed %s: MRR %.4f", variant, seed, report.mean.mrr)
    summary = summarise(rows, dataset_name)
    write_summary(rows, summary, out_dir)
    return rows, summary


def collect_rows(run_dirs, dataset: GrowingDataset | None = None, raw=False, dataset_name="") -> list:
    """One summary row per run directory, from its latest report (or a fresh evaluation)."""
    rows = []
    mode = "raw" if raw else "filtered"
    for run_dir in run_dirs:
        manifest, run_dir = read_manifest(run_dir)
        cfg = TrainConfig(**manifest.config)
        report_path = run_dir / "reports" / f"time_{manifest.last_time}_{mode}.json"
        if report_path.exists():
            data = json.loads(report_path.read_text())
            report = AggregateReport.from_dict(data["reports"][0])
        elif dataset is not None:
            report = evaluate_checkpoint(run_dir / manifest.checkpoints[manifest.last_time], dataset, raw=raw,
                                         name=dataset_name, norm=cfg.norm)
        else:
            raise FileNotFoundError(f"{run_dir}: no {mode} report for time {manifest.last_time}; pass --dataset")
        rows.append(run_row(variant_name(cfg), report, cfg, dataset_name))
    return rows


def variant_name(config: TrainConfig) -> str:
    flags = variant_flags(config)
    for name, on in VARIANTS.items():
        if flags == {k: bool(on.get(k, False)) for k in flags}:
            return name
    return "+".join(k for k, v in flags.items() if v)
