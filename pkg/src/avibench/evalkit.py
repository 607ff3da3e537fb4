"""Raw-count confusion matrices, F1 scores and multi-run reporting."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    labels: list[str] | None = None

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        names = self.labels or [str(i) for i in range(self.k)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, self.counts):
            w.writerow([name, *(int(c) for c in row)])
        return buf.getvalue()


def confusion(preds: Sequence[int], truth: Sequence[int], k: int,
              labels: Sequence[str] | None = None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if preds.shape != truth.shape:
        raise ValueError(f"preds and truth differ in length ({preds.size} vs {truth.size})")
    for name, arr in (("preds", preds), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} contains a label index outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    return ConfusionMatrix(counts, list(labels) if labels is not None else None)


@dataclass
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    weighted_f1: float

    def to_dict(self, labels: Sequence[str] | None = None) -> dict:
        names = list(labels) if labels is not None else [str(i) for i in range(len(self.f1))]
        return {
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class": {
                n: {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for n, p, r, f, s in zip(names, self.precision, self.recall, self.f1, self.support)
            },
        }


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f1_scores(cm: ConfusionMatrix) -> ClassMetrics:
    """Per-class precision/recall/F1 with 0/0 treated as 0.

    The macro mean is taken over classes that have support; the weighted
    mean weights each class by its support.
    """
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    support = cm.counts.sum(axis=1)
    precision = _ratio(tp, c.sum(axis=0))
    recall = _ratio(tp, c.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    present = support > 0
    macro = float(f1[present].mean()) if present.any() else 0.0
    weighted = float((f1 * support).sum() / support.sum()) if support.sum() else 0.0
    return ClassMetrics(precision, recall, f1, support, macro, weighted)


def macro_f1(preds, truth, k: int) -> float:
    return f1_scores(confusion(preds, truth, k)).macro_f1


# -- multi-run aggregation ---------------------------------------------------

@dataclass
class RunAggregate:
    max: float
    avg: float
    min: float
    median_curve: list[float] = field(default_factory=list)
    top3: list[int] = field(default_factory=list)
    n_runs: int = 0

    def to_dict(self) -> dict:
        return {
            "max": self.max, "avg": self.avg, "min": self.min, "n_runs": self.n_runs,
            "median_val_f1": self.median_curve, "top3_runs": self.top3,
        }


def aligned_curves(curves: Sequence[Sequence[float]]) -> np.ndarray:
    """Stack curves by epoch, padding missing epochs with NaN."""
    length = max(len(c) for c in curves)
    out = np.full((len(curves), length), np.nan)
    for i, c in enumerate(curves):
        out[i, :len(c)] = c
    return out


def aggregate_runs(val_curves: Sequence[Sequence[float]], test_f1: Sequence[float]) -> RunAggregate:
    """Summarize repeated runs of one model.

    ``val_curves[i]`` is run i's per-epoch validation macro-F1 (early-stopped
    runs may be shorter); ``test_f1[i]`` is its test macro-F1.
    """
    if not test_f1 or len(val_curves) != len(test_f1):
        raise ValueError("need one validation curve per test score, at least one run")
    scores = np.asarray(test_f1, dtype=np.float64)
    median: list[float] = []
    if any(len(c) for c in val_curves):
        stacked = aligned_curves(val_curves)
        median = [float(v) for v in np.nanmedian(stacked, axis=0)]
    best = [max(c) if len(c) else float("-inf") for c in val_curves]
    top3 = sorted(range(len(best)), key=lambda i: (-best[i], i))[:3]
    return RunAggregate(float(scores.max()), float(scores.mean()), float(scores.min()),
                        median, top3, len(scores))


def _fmt(x: float | None, digits: int) -> str:
    return "-" if x is None else f"{x:.{digits}f}"


def comparison_table(models: Mapping[str, RunAggregate], reference: Mapping[str, float | None] | None = None,
                     reference_label: str = "Reference F1-score", digits: int = 4,
                     reference_digits: int = 3) -> str:
    """Plain-text (markdown pipe) table of max/avg/min test F1, best average in bold.

    Rows keep the input order.  When ``reference`` is given, a leading
    column carries externally reported scores; models missing from it show ``-``.
    """
    if not models:
        raise ValueError("need at least one model")
    best = max(models, key=lambda m: models[m].avg)
    header = ["", "Max test_f1_score", "Avg test_f1_score", "Min test_f1_score"]
    if reference is not None:
        header.insert(1, reference_label)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for name, agg in models.items():
        cells = [name, _fmt(agg.max, digits), _fmt(agg.avg, digits), _fmt(agg.min, digits)]
        if reference is not None:
            cells.insert(1, _fmt(reference.get(name), reference_digits))
        if name == best:
            cells = [f"**{c}**" for c in cells]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _tex(s: str) -> str:
    return s.replace("\\", "\\textbackslash{}").replace("_", "\\_").replace("&", "\\&").replace("%", "\\%")


def comparison_latex(models: Mapping[str, RunAggregate], reference: Mapping[str, float | None] | None = None,
                     reference_label: str = "Reference F1-score", digits: int = 4,
                     reference_digits: int = 3) -> str:
    """The same table as a LaTeX ``tabular`` with ruled rows."""
    if not models:
        raise ValueError("need at least one model")
    best = max(models, key=lambda m: models[m].avg)
    header = ["", "Max test_f1_score", "Avg test_f1_score", "Min test_f1_score"]
    if reference is not None:
        header.insert(1, reference_label)
    lines = [
        "\\begin{tabular}{|" + "c|" * len(header) + "}",
        "\\hline",
        " & ".join(f"\\textbf{{{_tex(h)}}}" for h in header) + " \\\\",
        "\\hline",
    ]
    for name, agg in models.items():
        cells = [_tex(name), _fmt(agg.max, digits), _fmt(agg.avg, digits), _fmt(agg.min, digits)]
        if reference is not None:
            cells.insert(1, _fmt(reference.get(name), reference_digits))
        if name == best:
            cells = [f"\\textbf{{{c}}}" for c in cells]
        lines += [" & ".join(cells) + " \\\\", "\\hline"]
    lines.append("\\end{tabular}%")
    return "\n".join(lines) + "\n"


def aggregate_json(models: Mapping[str, RunAggregate], extra: Mapping | None = None) -> str:
    doc = {"models": {name: agg.to_dict() for name, agg in models.items()}}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2) + "\n"
