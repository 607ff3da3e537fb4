"""One-second windowing and log-mel spectrograms."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import AudioClip
from .errors import ConfigError, DatasetError, DecodeError

STORE_MAGIC = b"AVB1"


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 16000
    window_sec: float = 1.0
    n_fft: int = 512
    hop: int = 256
    n_mels: int = 64
    fmin: float = 50.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    def validate(self) -> None:
        if self.sample_rate <= 0 or self.window_sec <= 0:
            raise ConfigError("sample_rate and window_sec must be positive")
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 1 <= self.hop <= self.n_fft:
            raise ConfigError("hop must satisfy 1 <= hop <= n_fft")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.window_length < self.n_fft:
            raise ConfigError("window shorter than one FFT frame")

    @property
    def window_length(self) -> int:
        return int(round(self.window_sec * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return (self.window_length - self.n_fft) // self.hop + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_mels, self.n_frames

    @property
    def config_id(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d) -> "DspConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class Window:
    samples: np.ndarray
    clip_id: str
    index: int


@dataclass
class MelSpectrogram:
    values: np.ndarray
    config_id: str

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def segment_clip(clip: AudioClip, cfg: DspConfig) -> list[Window]:
    """Cut a clip into ``ceil(duration / window_sec)`` windows.

    A window that runs past the end of the clip (including every window of
    a sub-window clip) is completed by repeating the clip from its start.
    """
    if clip.sample_rate != cfg.sample_rate:
        raise DatasetError(
            f"{clip.source_path}: sample rate {clip.sample_rate} Hz does not match "
            f"pipeline rate {cfg.sample_rate} Hz")
    x = clip.samples
    if x.size == 0:
        raise DatasetError(f"{clip.source_path}: empty clip")
    L = cfg.window_length
    count = -(-x.size // L)
    return [
        Window(np.take(x, np.arange(i * L, (i + 1) * L), mode="wrap"), clip.source_path, i)
        for i in range(count)
    ]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(cfg: DspConfig) -> np.ndarray:
    """The ``n_mels + 2`` triangle corner frequencies in Hz."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    # pin the outer corners so the mel round trip cannot leak past fmin/fmax
    edges[0], edges[-1] = cfg.fmin, cfg.fmax
    return edges


def mel_centers(cfg: DspConfig) -> np.ndarray:
    return mel_edges(cfg)[1:-1]


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    cfg.validate()
    edges = mel_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"n_mels={cfg.n_mels} too large for n_fft={cfg.n_fft}: "
            f"filters {empty.tolist()} cover no FFT bin")
    return fb


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_FB_CACHE: dict[DspConfig, np.ndarray] = {}


def _filterbank_cached(cfg: DspConfig) -> np.ndarray:
    fb = _FB_CACHE.get(cfg)
    if fb is None:
        fb = _FB_CACHE[cfg] = mel_filterbank(cfg)
    return fb


def power_spectrogram(x: np.ndarray, cfg: DspConfig) -> np.ndarray:
    frames = sliding_window_view(x, cfg.n_fft)[::cfg.hop][:cfg.n_frames]
    spec = np.fft.rfft(frames * hann(cfg.n_fft), axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def mel_spectrogram(window: Window | np.ndarray, cfg: DspConfig) -> MelSpectrogram:
    """Log-mel spectrogram, shifted so that silence maps to exactly zero."""
    x = np.asarray(window.samples if isinstance(window, Window) else window, dtype=np.float64)
    if x.shape != (cfg.window_length,):
        raise DatasetError(f"window has {x.shape[0]} samples, expected {cfg.window_length}")
    mel = _filterbank_cached(cfg) @ power_spectrogram(x, cfg)
    # log(p + floor) - log(floor), computed without cancellation
    return MelSpectrogram(np.log1p(mel / cfg.log_floor), cfg.config_id)


# -- spectrogram store -------------------------------------------------------

def write_store(path, values: np.ndarray, labels: Sequence[int], n_classes: int) -> None:
    """Write ``values`` of shape (count, n_mels, n_frames) with label indices."""
    values = np.asarray(values, dtype="<f4")
    labels = np.asarray(labels, dtype="<u4")
    if values.ndim != 3 or values.shape[0] != labels.shape[0]:
        raise ValueError("values must be (count, n_mels, n_frames) matching labels")
    count, n_mels, n_frames = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<4I", count, n_mels, n_frames, n_classes))
        for i in range(count):
            fh.write(struct.pack("<I", int(labels[i])))
            fh.write(values[i].tobytes(order="C"))


def read_store(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (values float32 (count, n_mels, n_frames), labels int64, n_classes)."""
    data = Path(path).read_bytes()
    if data[:4] != STORE_MAGIC:
        raise DecodeError(f"{path}: bad magic")
    if len(data) < 20:
        raise DecodeError(f"{path}: truncated header")
    count, n_mels, n_frames, n_classes = struct.unpack_from("<4I", data, 4)
    rec = 4 + 4 * n_mels * n_frames
    if len(data) != 20 + count * rec:
        raise DecodeError(f"{path}: size does not match header")
    body = np.frombuffer(data, dtype=np.uint8, offset=20).reshape(count, rec)
    labels = body[:, :4].copy().view("<u4").reshape(count).astype(np.int64)
    values = body[:, 4:].copy().view("<f4").reshape(count, n_mels, n_frames)
    return values, labels, n_classes


def write_pgm(path, values: np.ndarray) -> None:
    """Dump one spectrogram as a binary PGM, min-max scaled to 0-255, low bands at the bottom."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    img = np.round(scaled[::-1] * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def iter_spectrograms(windows: Iterable[Window], cfg: DspConfig):
    for w in windows:
        yield mel_spectrogram(w, cfg)


def expected_window_count(duration_sec: float, cfg: DspConfig) -> int:
    return max(1, math.ceil(round(duration_sec * cfg.sample_rate) / cfg.window_length))
