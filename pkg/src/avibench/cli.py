"""``avibench`` command line: synth, prepare, train, search and evaluate stages.

Each stage writes to ``<out>/<stage>/<hash>/`` where the hash covers the
stage's own config section plus the hashes of the stages it reads, so a
changed upstream setting lands in a fresh directory.  Every stage finishes
by writing ``stage.json`` (hash, upstream hashes, seeds and file digests);
downstream stages refuse to start without it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from .dataset import SyntheticSpec, generate_synthetic, load_manifest, summarize, write_clip_store, write_manifest
from .dsp import DspConfig, read_store, write_store
from .errors import (AvibenchError, ConfigError, DatasetError, NumericError, SearchFailed, SpecError, StageError,
                     TrainingDiverged)
from .evalkit import aggregate_json, aggregate_runs, comparison_latex, comparison_table, confusion, f1_scores
from .nas import (Genome, SearchSpace, TrainEvaluator, build_model_config, derived_seed, lifespan_csv,
                  lifespan_report, retrain_best, run_search)
from .nnet import Model, ModelConfig, Splits, TrainConfig, TrainingRun, load_checkpoint, save_checkpoint, train
from .pipeline import directory_loader, prepare
from .splitkit import DEFAULT_RATIOS, split_json

log = logging.getLogger("avibench")

STAGES = ("synth", "prepare", "train", "search", "evaluate")
EXIT_CONFIG, EXIT_STAGE, EXIT_DIVERGED = 2, 3, 4

DEFAULT_GENOME = Genome(n_conv_blocks=2, filters=16, kernel=3, pool=True, dense_units=64,
                        lr=1e-3, optimizer="adam")


# -- config --------------------------------------------------------------------

@dataclass
class TrainSection:
    runs: int = 3
    epochs: int = 40
    batch_size: int = 32
    early_stop_patience: int | None = None
    class_weights: bool = True
    dtype: str = "float32"
    from_search: bool = False
    genome: dict | None = None
    model: dict | None = None


@dataclass
class NasSection:
    space: SearchSpace = field(default_factory=SearchSpace)
    strategy: str = "bo"
    budget: int = 20
    k_init: int = 5
    batch: int = 1
    n_random: int = 64
    epochs: int = 10
    patience: int | None = 5
    batch_size: int = 32
    retrain: int = 5
    retrain_epochs: int = 30


@dataclass
class EvaluateSection:
    source: str = "train"
    name: str | None = None
    reference: float | None = None
    reference_label: str = "Reference F1-score"


@dataclass
class PipelineConfig:
    dataset: dict
    dsp: DspConfig = field(default_factory=DspConfig)
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    train: TrainSection = field(default_factory=TrainSection)
    nas: NasSection = field(default_factory=NasSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    seed: int = 0
    out: str | None = None
    base_dir: Path = Path(".")

    @property
    def synthetic(self) -> SyntheticSpec | None:
        spec = self.dataset.get("synthetic")
        if spec is None:
            return None
        spec = dict(spec)
        spec.setdefault("seed", self.seed)
        return SyntheticSpec.from_dict(spec)

    def manifest_path(self) -> Path:
        return self.base_dir / self.dataset["manifest"]

    def audio_root(self) -> Path:
        root = self.dataset.get("audio_root")
        return self.base_dir / root if root else self.manifest_path().parent

    def genome(self) -> Genome:
        g = self.train.genome
        return Genome(**g) if g else DEFAULT_GENOME


def schema() -> dict:
    text = resources.files("avibench").joinpath("data/pipeline.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def bundled_config_path() -> Path:
    return Path(str(resources.files("avibench").joinpath("data/bundled_synthetic.json")))


def apply_override(raw: dict, assignment: str) -> None:
    """``a.b.c=value``; the value is parsed as JSON, falling back to a plain string."""
    key, sep, text = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = value


def parse_config(raw: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    try:
        cfg = PipelineConfig(
            dataset=dict(raw["dataset"]),
            dsp=DspConfig(**raw.get("dsp", {})),
            ratios=tuple(raw.get("split", {}).get("ratios", DEFAULT_RATIOS)),
            train=TrainSection(**raw.get("train", {})),
            nas=NasSection(**{**raw.get("nas", {}),
                              "space": SearchSpace.from_dict(raw.get("nas", {}).get("space", {}))}),
            evaluate=EvaluateSection(**raw.get("evaluate", {})),
            seed=int(raw.get("seed", 0)),
            out=raw.get("out"),
            base_dir=base_dir,
        )
        cfg.dsp.validate()
        spec = cfg.synthetic
        if spec is not None:
            spec.validate()
            if spec.sample_rate != cfg.dsp.sample_rate:
                raise ConfigError(f"synthetic sample_rate {spec.sample_rate} differs from "
                                  f"dsp sample_rate {cfg.dsp.sample_rate}")
        if abs(sum(cfg.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {list(cfg.ratios)}")
        if cfg.train.genome is not None and cfg.train.model is not None:
            raise ConfigError("train: give at most one of genome and model")
        if cfg.train.model is not None:
            ModelConfig.from_dict(cfg.train.model)
        cfg.genome()
    except SpecError as exc:
        raise ConfigError(str(exc)) from None
    except (TypeError, ValueError, AvibenchError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from None
    return cfg


def load_config(path: str | os.PathLike | None, overrides=()) -> PipelineConfig:
    path = Path(path) if path else bundled_config_path()
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    for o in overrides:
        apply_override(raw, o)
    return parse_config(raw, path.parent)


# -- hashing and stage bookkeeping ----------------------------------------------

def stable_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Hashes:
    """Chained stage hashes for one config."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    def synth(self) -> str:
        spec = self.cfg.synthetic
        if spec is None:
            raise StageError("dataset is a manifest; there is no synth stage", "synth")
        return stable_hash({"stage": "synth", "spec": asdict(spec)})

    def source(self) -> str:
        if self.cfg.synthetic is not None:
            return self.synth()
        path = self.cfg.manifest_path()
        if not path.exists():
            raise DatasetError(f"manifest {path} not found")
        return file_digest(path)[:12]

    def prepare(self) -> str:
        return stable_hash({"stage": "prepare", "upstream": self.source(), "dsp": asdict(self.cfg.dsp),
                            "ratios": list(self.cfg.ratios)})

    def search(self) -> str:
        nas = asdict(self.cfg.nas)
        nas["space"] = self.cfg.nas.space.to_dict()
        return stable_hash({"stage": "search", "upstream": self.prepare(), "nas": nas, "seed": self.cfg.seed})

    def train(self) -> str:
        section = asdict(self.cfg.train)
        doc = {"stage": "train", "upstream": self.prepare(), "train": section, "seed": self.cfg.seed}
        if self.cfg.train.from_search:
            doc["search"] = self.search()
        return stable_hash(doc)

    def evaluate(self, source_hash: str) -> str:
        return stable_hash({"stage": "evaluate", "upstream": source_hash, "evaluate": asdict(self.cfg.evaluate)})


def stage_dir(root: Path, stage: str, h: str) -> Path:
    return root / stage / h


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def finish_stage(d: Path, stage: str, h: str, upstream: dict, seeds: dict) -> None:
    files = sorted(p for p in d.rglob("*") if p.is_file() and p.name != "stage.json")
    write_json(d / "stage.json", {
        "stage": stage,
        "config_hash": h,
        "upstream": upstream,
        "seeds": seeds,
        "version": __version__,
        "files": {p.relative_to(d).as_posix(): file_digest(p) for p in files},
    })


def require_stage(root: Path, stage: str, h: str, verify: bool = True) -> tuple[Path, dict]:
    d = stage_dir(root, stage, h)
    marker = d / "stage.json"
    if not marker.exists():
        raise StageError(f"no completed `{stage}` output at {d}; run `avibench {stage}` first", stage)
    meta = json.loads(marker.read_text(encoding="utf-8"))
    if meta.get("config_hash") != h:
        raise StageError(f"{marker} records hash {meta.get('config_hash')}, expected {h}; "
                         f"rerun `avibench {stage}`", stage)
    if verify:
        for rel, digest in meta["files"].items():
            p = d / rel
            if not p.exists() or file_digest(p) != digest:
                raise StageError(f"{p} is missing or modified since `{stage}` ran; rerun `avibench {stage}`", stage)
    return d, meta


# -- stage implementations --------------------------------------------------------

def run_synth(cfg: PipelineConfig, root: Path, jobs: int = 1) -> Path:
    spec = cfg.synthetic
    if spec is None:
        raise ConfigError("synth needs a dataset.synthetic section")
    h = Hashes(cfg).synth()
    d = stage_dir(root, "synth", h)
    manifest, store = generate_synthetic(spec)
    write_clip_store(store, d)
    write_manifest(manifest, d / "manifest.csv")
    _write_summary(manifest, d / "summary.csv")
    finish_stage(d, "synth", h, {}, {"synthetic": spec.seed})
    return d


def _write_summary(manifest, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["species", "sound_type", "total_seconds", "n_cuts"])
        for row in summarize(manifest):
            w.writerow([row.species, row.sound_type, f"{row.total_seconds:.3f}", row.n_cuts])


def _source_manifest(cfg: PipelineConfig, root: Path):
    if cfg.synthetic is not None:
        d, _ = require_stage(root, "synth", Hashes(cfg).synth())
        return load_manifest(d / "manifest.csv"), directory_loader(d)
    return load_manifest(cfg.manifest_path()), directory_loader(cfg.audio_root())


def run_prepare(cfg: PipelineConfig, root: Path, jobs: int = 1) -> Path:
    hashes = Hashes(cfg)
    h = hashes.prepare()
    manifest, loader = _source_manifest(cfg, root)
    data = prepare(manifest, loader, cfg.dsp, cfg.ratios, jobs=jobs)
    d = stage_dir(root, "prepare", h)
    d.mkdir(parents=True, exist_ok=True)
    for name in data.x:
        write_store(d / f"{name}.avb", data.x[name][:, 0], data.y[name], len(data.classes))
        write_json(d / f"{name}.json", {
            "config_hash": h, "split": name, "count": int(len(data.y[name])),
            "shape": list(cfg.dsp.shape), "dsp_config_id": cfg.dsp.config_id, "dsp": asdict(cfg.dsp),
            "classes": dict(enumerate(data.classes)),
        })
    (d / "split.json").write_text(split_json(data.assignment, data.weights, data.scaler, cfg.seed,
                                             classes=data.classes, config_hash=h), encoding="utf-8")
    (d / "split_report.csv").write_text(data.report.to_csv(), encoding="utf-8")
    finish_stage(d, "prepare", h, {"source": hashes.source()}, {"split": cfg.seed})
    return d


@dataclass
class Prepared:
    hash: str
    classes: list[str]
    weights: np.ndarray
    splits: Splits
    dir: Path


def load_prepared(cfg: PipelineConfig, root: Path) -> Prepared:
    """Train and validation splits only; the test store is read by evaluate alone."""
    h = Hashes(cfg).prepare()
    d, _ = require_stage(root, "prepare", h)
    split = json.loads((d / "split.json").read_text(encoding="utf-8"))
    classes = split["classes"]
    arrays = {}
    for name in ("train", "validation"):
        values, labels, _ = read_store(d / f"{name}.avb")
        arrays[name] = (values[:, None], labels)
    weights = np.array([split["class_weights"][c] for c in classes])
    splits = Splits(arrays["train"][0], arrays["train"][1], arrays["validation"][0], arrays["validation"][1])
    return Prepared(h, classes, weights, splits, d)


def _save_run(d: Path, result: TrainingRun, model_cfg: ModelConfig, input_shape, **meta) -> None:
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(d / "checkpoint.avck", model_cfg, result.params, input_shape,
                    best_epoch=result.best_epoch, epochs_trained=result.epochs_trained, **meta)
    (d / "curves.csv").write_text(result.curves_csv(), encoding="utf-8")


def _train_one(args) -> TrainingRun:
    model_cfg, splits, train_cfg = args
    return train(model_cfg, splits, train_cfg)


def _train_model_config(cfg: PipelineConfig, root: Path, prep: Prepared, seed: int) -> ModelConfig:
    if cfg.train.model is not None:
        mc = ModelConfig.from_dict(cfg.train.model)
        mc.init_seed = seed
        return mc
    if cfg.train.from_search:
        d, _ = require_stage(root, "search", Hashes(cfg).search())
        genome = Genome(**json.loads((d / "best_genome.json").read_text(encoding="utf-8"))["genome"])
    else:
        genome = cfg.genome()
    return build_model_config(genome, prep.splits.input_shape, len(prep.classes), seed, cfg.nas.space)


def run_train(cfg: PipelineConfig, root: Path, jobs: int = 1) -> Path:
    prep = load_prepared(cfg, root)
    hashes = Hashes(cfg)
    h = hashes.train()
    t = cfg.train
    seeds = [derived_seed(cfg.seed, "train", i) for i in range(t.runs)]
    weights = prep.weights if t.class_weights else None
    jobs_args = []
    for s in seeds:
        mc = _train_model_config(cfg, root, prep, s)
        Model(mc.layers, prep.splits.input_shape)
        tc = TrainConfig(epochs=t.epochs, batch_size=t.batch_size, class_weights=weights, seed=s,
                         early_stop_patience=t.early_stop_patience, dtype=t.dtype)
        jobs_args.append((mc, prep.splits, tc))
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(jobs_args))) as pool:
            runs = list(pool.map(_train_one, jobs_args))
    else:
        runs = [_train_one(a) for a in jobs_args]
    d = stage_dir(root, "train", h)
    entries = []
    for i, ((mc, _, _), run, s) in enumerate(zip(jobs_args, runs, seeds)):
        name = f"run_{i:02d}"
        _save_run(d / name, run, mc, prep.splits.input_shape, config_hash=h, seed=s, run=i)
        entries.append({"run": name, "seed": s, "best_val_f1": run.best_val_f1,
                        "best_epoch": run.best_epoch, "epochs_trained": run.epochs_trained})
    write_json(d / "runs.json", {"config_hash": h, "classes": prep.classes, "runs": entries})
    upstream = {"prepare": prep.hash}
    if t.from_search:
        upstream["search"] = hashes.search()
    finish_stage(d, "train", h, upstream, {"base": cfg.seed, "runs": seeds})
    return d


def run_search_stage(cfg: PipelineConfig, root: Path, jobs: int = 1) -> Path:
    prep = load_prepared(cfg, root)
    h = Hashes(cfg).search()
    n = cfg.nas
    ev = TrainEvaluator(prep.splits, len(prep.classes), n.space, epochs=n.epochs, batch_size=n.batch_size,
                        patience=n.patience, class_weights=prep.weights)
    result = run_search(n.space, ev, n.budget, seed=cfg.seed, k_init=n.k_init, strategy=n.strategy,
                        batch=n.batch, jobs=jobs, n_random=n.n_random)
    if n.retrain:
        retrain_best(result, ev, n.retrain, cfg.seed, epochs=n.retrain_epochs, jobs=jobs)
    d = stage_dir(root, "search", h)
    d.mkdir(parents=True, exist_ok=True)
    (d / "search_log.jsonl").write_text(result.search_log(), encoding="utf-8")
    (d / "incumbent.csv").write_text(result.incumbent_csv(), encoding="utf-8")
    note = (f"lifespan = epochs trained before early stopping (patience {n.patience}, "
            f"cap {n.epochs}); a stand-in stopping policy")
    (d / "lifespan.csv").write_text(lifespan_csv(lifespan_report(result.trials), note), encoding="utf-8")
    best = result.best
    write_json(d / "best_genome.json", {"config_hash": h, "trial": best.trial, "genome": best.genome.to_dict(),
                                        "best_val_f1": best.best_val_f1, "summary": best.genome.summary()})
    entries = []
    for i, (run, s) in enumerate(zip(result.retrain_runs, result.retrain_seeds)):
        name = f"run_{i:02d}"
        mc = ev.model_config(best.genome, s)
        _save_run(d / name, run, mc, prep.splits.input_shape, config_hash=h, seed=s, run=i)
        entries.append({"run": name, "seed": s, "best_val_f1": run.best_val_f1,
                        "best_epoch": run.best_epoch, "epochs_trained": run.epochs_trained})
    write_json(d / "runs.json", {"config_hash": h, "classes": prep.classes, "runs": entries,
                                 "epochs_consumed": result.epochs_consumed, "complete": result.complete})
    finish_stage(d, "search", h, {"prepare": prep.hash},
                 {"base": cfg.seed, "trials": [t.seed for t in result.trials], "retrain": result.retrain_seeds})
    return d


def _curve_csv(median, top3) -> str:
    lines = ["epoch,median_val_macro_f1," + ",".join(f"top{i + 1}_val_macro_f1" for i in range(len(top3)))]
    for e in range(len(median)):
        cells = [str(e + 1), _num(median[e])] + [_num(c[e]) if e < len(c) else "" for c in top3]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def run_evaluate(cfg: PipelineConfig, root: Path, jobs: int = 1, run_dir: str | None = None) -> Path:
    hashes = Hashes(cfg)
    prep_hash = hashes.prepare()
    if run_dir is not None:
        src = Path(run_dir)
        marker = src / "stage.json"
        if not marker.exists():
            raise StageError(f"{src} is not a completed train or search output; run `avibench train` first", "train")
        meta = json.loads(marker.read_text(encoding="utf-8"))
        stage = meta.get("stage")
        if stage not in ("train", "search"):
            raise StageError(f"{src} holds `{stage}` output, expected train or search", "train")
        src, meta = require_stage(src.parent.parent, stage, meta["config_hash"])
    else:
        stage = cfg.evaluate.source
        h = hashes.train() if stage == "train" else hashes.search()
        src, meta = require_stage(root, stage, h)
    source_hash = meta["config_hash"]
    if meta["upstream"].get("prepare") != prep_hash:
        raise StageError(f"{src} was trained on prepare output {meta['upstream'].get('prepare')}, "
                         f"but this config prepares {prep_hash}; rerun `avibench {stage}`", stage)
    pdir, _ = require_stage(root, "prepare", prep_hash)
    runs_doc = json.loads((src / "runs.json").read_text(encoding="utf-8"))
    if not runs_doc["runs"]:
        raise StageError(f"{src} has no trained runs; rerun `avibench {stage}` with retrain > 0", stage)
    classes = runs_doc["classes"]
    x, y, _ = read_store(pdir / "test.avb")
    x = x[:, None]
    h = hashes.evaluate(source_hash)
    d = stage_dir(root, "evaluate", h)
    d.mkdir(parents=True, exist_ok=True)
    test_f1, curves, per_run = [], [], []
    for entry in runs_doc["runs"]:
        mc, params, header = load_checkpoint(src / entry["run"] / "checkpoint.avck")
        if header.get("config_hash") != source_hash:
            raise StageError(f"{entry['run']} checkpoint carries hash {header.get('config_hash')}, "
                             f"expected {source_hash}; rerun `avibench {stage}`", stage)
        model = Model(mc.layers, header["input_shape"])
        preds = model.predict(params, x).argmax(axis=1) if len(x) else np.zeros(0, dtype=int)
        cm = confusion(preds, y, len(classes), classes)
        metrics = f1_scores(cm)
        (d / f"confusion_{entry['run']}.csv").write_text(cm.to_csv(), encoding="utf-8")
        test_f1.append(metrics.macro_f1)
        curves.append(_read_val_curve(src / entry["run"] / "curves.csv"))
        per_run.append({"run": entry["run"], "seed": entry["seed"], **metrics.to_dict(classes)})
    agg = aggregate_runs(curves, test_f1)
    name = cfg.evaluate.name or ("searched" if stage == "search" else "model")
    reference = {name: cfg.evaluate.reference} if cfg.evaluate.reference is not None else None
    label = cfg.evaluate.reference_label
    write_json(d / "metrics.json", {"config_hash": h, "source": {stage: source_hash}, "classes": classes,
                                    "test_count": int(len(y)), "runs": per_run})
    (d / "aggregate.json").write_text(
        aggregate_json({name: agg}, {"config_hash": h, "source": {stage: source_hash}}), encoding="utf-8")
    (d / "comparison.md").write_text(comparison_table({name: agg}, reference, label), encoding="utf-8")
    (d / "comparison.tex").write_text(comparison_latex({name: agg}, reference, label), encoding="utf-8")
    top = [curves[i] for i in agg.top3]
    (d / "val_curves.csv").write_text(_curve_csv(agg.median_curve, top), encoding="utf-8")
    finish_stage(d, "evaluate", h, {stage: source_hash, "prepare": prep_hash}, {"runs": [r["seed"] for r in per_run]})
    print(f"test macro-F1 over {agg.n_runs} run(s): max {agg.max:.4f}  avg {agg.avg:.4f}  min {agg.min:.4f}")
    return d


def _read_val_curve(path: Path) -> list[float]:
    lines = path.read_text(encoding="utf-8").splitlines()[1:]
    return [float(line.split(",")[3]) for line in lines if line]


RUNNERS = {
    "synth": run_synth,
    "prepare": run_prepare,
    "train": run_train,
    "search": run_search_stage,
    "evaluate": run_evaluate,
}


# -- entry point -------------------------------------------------------------------

def output_root(flag: str | None, cfg: PipelineConfig) -> Path:
    if flag:
        return Path(flag)
    if cfg.out:
        return cfg.base_dir / cfg.out
    return Path(os.environ.get("AVIBENCH_OUT", "out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avibench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"avibench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="pipeline JSON (default: the bundled synthetic config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("--seed", type=int, help="override the config's base seed")
        p.add_argument("--out", help="output root (default: config 'out', then $AVIBENCH_OUT, then ./out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config scalar, e.g. train.epochs=20 (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--run-dir", help="train or search output directory to evaluate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
        root = output_root(args.out, cfg)
        kwargs = {"run_dir": args.run_dir} if args.command == "evaluate" else {}
        d = RUNNERS[args.command](cfg, root, args.jobs, **kwargs)
    except ConfigError as exc:
        print(f"avibench: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"avibench: dataset error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"avibench: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (TrainingDiverged, NumericError, SearchFailed) as exc:
        print(f"avibench: numeric failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(d)
    return 0


if __name__ == "__main__":
    sys.exit(main())
