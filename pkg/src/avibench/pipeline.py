"""Manifest -> normalized spectrogram splits, shared by the CLI and tests."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .dataset import AudioClip, Manifest, decode_audio
from .dsp import DspConfig, mel_spectrogram, segment_clip
from .errors import DatasetError
from .nnet import Splits
from .splitkit import (SETS, ClassWeights, ScalerParams, SplitAssignment, SplitReport, apply_minmax,
                       class_weights, fit_minmax, split_report, stratified_session_split)

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    classes: list[str]
    x: dict[str, np.ndarray]
    y: dict[str, np.ndarray]
    assignment: SplitAssignment
    report: SplitReport
    weights: ClassWeights
    scaler: ScalerParams
    dsp: DspConfig

    def splits(self) -> Splits:
        """Train and validation arrays; the test split is deliberately left out."""
        return Splits(self.x["train"], self.y["train"], self.x["validation"], self.y["validation"])


def store_loader(store: Mapping[str, bytes]) -> Callable[[str], AudioClip]:
    def load(path: str) -> AudioClip:
        clip = decode_audio(store[path])
        clip.source_path = path
        return clip
    return load


def directory_loader(root) -> Callable[[str], AudioClip]:
    root = Path(root)

    def load(path: str) -> AudioClip:
        try:
            clip = decode_audio(root / path)
        except OSError as exc:
            raise DatasetError(f"cannot read clip {path!r} under {root}: {exc.strerror or exc}") from None
        clip.source_path = path
        return clip
    return load


def clip_spectrograms(clip: AudioClip, cfg: DspConfig) -> np.ndarray:
    """All window spectrograms of one clip, in window order."""
    return np.stack([mel_spectrogram(w, cfg).values for w in segment_clip(clip, cfg)])


class _ClipJob:
    def __init__(self, loader, cfg):
        self.loader = loader
        self.cfg = cfg

    def __call__(self, path):
        return clip_spectrograms(self.loader(path), self.cfg)


def prepare(manifest: Manifest, loader: Callable[[str], AudioClip], cfg: DspConfig,
            ratios=(0.7, 0.2, 0.1), jobs: int = 1) -> PreparedData:
    """Split by session, compute spectrograms, fit min-max on train and scale every split.

    Windows are ordered by manifest row, then window index, whatever the
    worker count.
    """
    cfg.validate()
    assignment = stratified_session_split(manifest, ratios)
    for w in assignment.warnings:
        log.warning(w)
    report = split_report(assignment, manifest)
    index = manifest.class_index()

    rows = [(s, c) for s in manifest.sessions for c in s.clips]
    job = _ClipJob(loader, cfg)
    paths = [c.path for _, c in rows]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            specs = list(pool.map(job, paths, chunksize=8))
    else:
        specs = [job(p) for p in paths]

    parts = {k: [] for k in SETS}
    labels = {k: [] for k in SETS}
    for (session, clip), spec in zip(rows, specs):
        if len(spec) != clip.n_cuts:
            log.warning("%s: manifest lists %d cuts, audio yields %d windows", clip.path, clip.n_cuts, len(spec))
        which = assignment.assignment[session.session_id]
        parts[which].append(spec)
        labels[which].extend([index[session.class_label]] * len(spec))

    shape = cfg.shape
    x = {k: np.concatenate(parts[k]) if parts[k] else np.zeros((0, *shape)) for k in SETS}
    y = {k: np.asarray(labels[k], dtype=np.int64) for k in SETS}
    if len(x["train"]) == 0:
        raise DatasetError("training split is empty")

    scaler = fit_minmax(x["train"])
    for k in SETS:
        # channel axis for the model input
        x[k] = apply_minmax(scaler, x[k])[:, None, :, :]
    counts = {c: int(np.sum(y["train"] == i)) for c, i in index.items()}
    weights = class_weights(counts, manifest.classes)
    return PreparedData(manifest.classes, x, y, assignment, report, weights, scaler, cfg)
