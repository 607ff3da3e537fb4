"""Session-aware stratified splitting, class weights, min-max scaling and shuffling."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Manifest
from .errors import SplitError

SETS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.70, 0.20, 0.10)


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    ratios: tuple[float, float, float]
    warnings: list[str] = field(default_factory=list)

    def sessions_in(self, which: str) -> list[str]:
        return [sid for sid, s in self.assignment.items() if s == which]


@dataclass(frozen=True)
class ReportRow:
    label: str
    which: str
    count: int
    percent: float


@dataclass
class SplitReport:
    rows: list[ReportRow]
    class_totals: dict[str, int]
    set_totals: dict[str, int]
    # achieved fraction minus target ratio, per class and set
    deviation: dict[str, dict[str, float]]

    def count(self, label: str, which: str) -> int:
        for r in self.rows:
            if r.label == label and r.which == which:
                return r.count
        raise KeyError((label, which))

    def percentages(self, label: str) -> tuple[float, float, float]:
        return tuple(r.percent for r in self.rows if r.label == label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "set", "count", "percent"])
        for r in self.rows:
            w.writerow([r.label, r.which, r.count, f"{r.percent:.2f}"])
        return buf.getvalue()


@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float
    fitted_on: str = "train"


def _exact_ratios(ratios: Sequence[float]) -> tuple[Fraction, ...]:
    if len(ratios) != 3:
        raise SplitError("ratios must give (train, validation, test) fractions")
    exact = tuple(Fraction(str(r)) for r in ratios)
    if any(r <= 0 for r in exact):
        raise SplitError("ratios must be positive")
    if sum(exact) != 1:
        raise SplitError(f"ratios must sum to 1, got {sum(exact)}")
    return exact


def stratified_session_split(manifest: Manifest, ratios: Sequence[float] = DEFAULT_RATIOS) -> SplitAssignment:
    """Greedy per-class assignment of whole sessions.

    Within each class, sessions are visited longest first (ties by
    session_id).  A session goes to train while the class's train count is
    below ``ratio_train * total``, then to validation while that count is
    below ``ratio_val * total``; everything left goes to test.
    """
    if manifest is None or not manifest.sessions:
        raise SplitError("cannot split an empty manifest")
    r_train, r_val, _ = _exact_ratios(ratios)
    assignment: dict[str, str] = {}
    warnings = []
    for label in manifest.classes:
        sessions = sorted(manifest.sessions_of(label), key=lambda s: (-s.sample_count, s.session_id))
        total = sum(s.sample_count for s in sessions)
        if len(sessions) == 1:
            warnings.append(f"class {label!r} has a single session; it cannot appear in every set")
        n_train = n_val = 0
        for s in sessions:
            if n_train < r_train * total:
                assignment[s.session_id] = "train"
                n_train += s.sample_count
            elif n_val < r_val * total:
                assignment[s.session_id] = "validation"
                n_val += s.sample_count
            else:
                assignment[s.session_id] = "test"
        if n_train + n_val == total and len(sessions) > 1:
            warnings.append(f"class {label!r} has no test sessions")
    # keep manifest order for stable serialization
    ordered = {s.session_id: assignment[s.session_id] for s in manifest.sessions}
    return SplitAssignment(ordered, tuple(float(r) for r in ratios), warnings)


def split_report(assignment: SplitAssignment, manifest: Manifest) -> SplitReport:
    missing = [s.session_id for s in manifest.sessions if s.session_id not in assignment.assignment]
    if missing:
        raise SplitError(f"assignment does not cover sessions {missing[:5]}")
    rows = []
    class_totals = {}
    set_totals = dict.fromkeys(SETS, 0)
    deviation = {}
    for label in manifest.classes:
        counts = dict.fromkeys(SETS, 0)
        for s in manifest.sessions_of(label):
            counts[assignment.assignment[s.session_id]] += s.sample_count
        total = sum(counts.values())
        class_totals[label] = total
        deviation[label] = {}
        for which, target in zip(SETS, assignment.ratios):
            rows.append(ReportRow(label, which, counts[which], 100.0 * counts[which] / total))
            set_totals[which] += counts[which]
            deviation[label][which] = counts[which] / total - target
    return SplitReport(rows, class_totals, set_totals, deviation)


@dataclass
class ClassWeights:
    weights: dict[str, float]

    def vector(self, classes: Sequence[str]) -> np.ndarray:
        return np.array([self.weights[c] for c in classes], dtype=np.float64)


def class_weights(train_counts: Mapping[str, int], classes: Sequence[str] | None = None) -> ClassWeights:
    """Balanced weights ``N / (K * n_c)``.

    ``classes`` lists every class the model predicts; any of them missing
    from ``train_counts`` (or with a zero count) is an error.
    """
    classes = list(classes) if classes is not None else list(train_counts)
    if not classes:
        raise SplitError("no classes given")
    absent = [c for c in classes if train_counts.get(c, 0) < 1]
    if absent:
        raise SplitError(f"classes {absent} have no training samples; regenerate the split")
    n = sum(train_counts[c] for c in classes)
    k = len(classes)
    return ClassWeights({c: n / (k * train_counts[c]) for c in classes})


def fit_minmax(train: np.ndarray | Sequence[np.ndarray]) -> ScalerParams:
    if isinstance(train, np.ndarray):
        if train.size == 0:
            raise SplitError("need at least one training spectrogram")
        return ScalerParams(float(train.min()), float(train.max()))
    items = list(train)
    if not items:
        raise SplitError("need at least one training spectrogram")
    return ScalerParams(min(float(np.min(s)) for s in items), max(float(np.max(s)) for s in items))


def apply_minmax(params: ScalerParams, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    span = params.max - params.min
    if span == 0:
        return np.zeros_like(s)
    return np.clip((s - params.min) / span, 0.0, 1.0)


def epoch_seed(seed: int, epoch: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{epoch}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def shuffle_training(order: Sequence, seed: int) -> list:
    if len(order) == 0:
        raise SplitError("nothing to shuffle")
    perm = np.random.default_rng(seed).permutation(len(order))
    return [order[i] for i in perm]


def split_json(assignment: SplitAssignment, weights: ClassWeights, scaler: ScalerParams, seed: int, **extra) -> str:
    doc = {
        "ratios": list(assignment.ratios),
        "assignment": assignment.assignment,
        "class_weights": weights.weights,
        "scaler": {"min": scaler.min, "max": scaler.max},
        "seed": seed,
    }
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def load_split_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
