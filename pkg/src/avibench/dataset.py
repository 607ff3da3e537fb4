"""Dataset manifests, WAV decoding and synthetic desk-scale datasets."""

from __future__ import annotations

import csv
import io
import math
import struct
import wave
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DatasetError, DecodeError, ManifestParseError, SpecError

MANIFEST_COLUMNS = ("session_id", "class_label", "clip_path", "duration_sec", "n_cuts")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_path: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DatasetError(f"clip {self.source_path!r} has no samples")
        if self.sample_rate <= 0:
            raise DatasetError(f"clip {self.source_path!r}: sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ClipRef:
    path: str
    duration_sec: float
    n_cuts: int


@dataclass
class SessionRecord:
    session_id: str
    class_label: str
    clips: list[ClipRef] = field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return sum(c.n_cuts for c in self.clips)

    @property
    def total_seconds(self) -> float:
        return sum(c.duration_sec for c in self.clips)


@dataclass
class Manifest:
    sessions: list[SessionRecord]

    def __post_init__(self):
        if not self.sessions:
            raise DatasetError("manifest has no sessions")
        seen = set()
        for s in self.sessions:
            if s.session_id in seen:
                raise DatasetError(f"duplicate session_id {s.session_id!r}")
            seen.add(s.session_id)
            if s.sample_count < 1:
                raise DatasetError(f"session {s.session_id!r} yields no cuts")

    @property
    def classes(self) -> list[str]:
        return sorted({s.class_label for s in self.sessions})

    def class_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.classes)}

    def sessions_of(self, label: str) -> list[SessionRecord]:
        return [s for s in self.sessions if s.class_label == label]

    def total_cuts(self) -> int:
        return sum(s.sample_count for s in self.sessions)


def split_label(class_label: str) -> tuple[str, str]:
    """Split ``"species:sound type"`` into its two parts (sound type may be empty)."""
    species, _, sound = class_label.partition(":")
    return species.strip(), sound.strip()


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        return parse_manifest(fh, str(path))


def parse_manifest(fh, name: str = "<manifest>") -> Manifest:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestParseError(f"{name}: empty file", line=1) from None
    if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
        raise ManifestParseError(f"{name}: header must be {','.join(MANIFEST_COLUMNS)}", line=1)

    sessions: OrderedDict[str, SessionRecord] = OrderedDict()
    seen_clips = set()
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(MANIFEST_COLUMNS):
            raise ManifestParseError(
                f"{name}: expected {len(MANIFEST_COLUMNS)} columns, got {len(row)}", line=line)
        sid, label, clip_path, dur, cuts = (cell.strip() for cell in row)
        try:
            duration = float(dur)
        except ValueError:
            raise ManifestParseError(f"{name}: non-numeric duration_sec {dur!r}", line=line) from None
        try:
            n_cuts = int(cuts)
        except ValueError:
            raise ManifestParseError(f"{name}: non-integer n_cuts {cuts!r}", line=line) from None
        if not math.isfinite(duration) or duration <= 0:
            raise ManifestParseError(f"{name}: duration_sec must be positive", line=line)
        if n_cuts < 1:
            raise ManifestParseError(f"{name}: n_cuts must be >= 1", line=line)
        if not sid or not label:
            raise ManifestParseError(f"{name}: empty session_id or class_label", line=line)

        if (sid, clip_path) in seen_clips:
            raise DatasetError(f"{name}:{line}: duplicate clip {clip_path!r} in session {sid!r}")
        seen_clips.add((sid, clip_path))
        session = sessions.get(sid)
        if session is None:
            session = sessions[sid] = SessionRecord(sid, label)
        elif session.class_label != label:
            raise DatasetError(
                f"{name}:{line}: session {sid!r} mixes labels "
                f"{session.class_label!r} and {label!r}")
        session.clips.append(ClipRef(clip_path, duration, n_cuts))

    if not sessions:
        raise DatasetError(f"{name}: manifest has no rows")
    return Manifest(list(sessions.values()))


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for s in manifest.sessions:
            for c in s.clips:
                writer.writerow([s.session_id, s.class_label, c.path, f"{c.duration_sec:.6f}", c.n_cuts])


# -- WAV ---------------------------------------------------------------------

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def decode_audio(source) -> AudioClip:
    """Decode a PCM WAV file (or its bytes) into a mono clip scaled to [-1, 1].

    Supported encodings are 8/16/24/32-bit integer PCM and 32-bit float.
    Stereo input is reduced to mono by averaging the channels.
    """
    if isinstance(source, (bytes, bytearray)):
        data, name = bytes(source), "<bytes>"
    else:
        name = str(source)
        data = Path(source).read_bytes()

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError(f"{name}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise DecodeError(f"{name}: truncated {chunk_id.decode('latin-1')!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise DecodeError(f"{name}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == _EXTENSIBLE:
                if size < 40:
                    raise DecodeError(f"{name}: truncated extensible fmt chunk")
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            pcm = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise DecodeError(f"{name}: missing fmt chunk")
    if pcm is None:
        raise DecodeError(f"{name}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise DecodeError(f"{name}: unsupported channel count {channels}")
    if rate <= 0:
        raise DecodeError(f"{name}: invalid sample rate {rate}")
    width = bits // 8
    if block_align != width * channels:
        raise DecodeError(f"{name}: inconsistent block alignment")
    if len(pcm) % block_align:
        raise DecodeError(f"{name}: truncated sample data")

    if tag == _PCM and bits == 8:
        x = (np.frombuffer(pcm, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif tag == _PCM and bits == 16:
        x = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _PCM and bits == 24:
        raw = np.frombuffer(pcm, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints & 0x800000, ints - (1 << 24), ints)
        x = ints.astype(np.float64) / float(1 << 23)
    elif tag == _PCM and bits == 32:
        x = np.frombuffer(pcm, dtype="<i4").astype(np.float64) / float(1 << 31)
    elif tag == _FLOAT and bits == 32:
        x = np.frombuffer(pcm, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise DecodeError(f"{name}: non-finite float samples")
        x = np.clip(x, -1.0, 1.0)
    else:
        raise DecodeError(f"{name}: unsupported encoding (format {tag}, {bits} bits)")

    if x.size == 0:
        raise DecodeError(f"{name}: no samples")
    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return AudioClip(x, rate, name)


def encode_wav(samples: np.ndarray, sample_rate: int) -> bytes:
    """16-bit mono PCM; the inverse of ``decode_audio`` within one quantization step."""
    q = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(q.astype("<i2").tobytes())
    return buf.getvalue()


# -- synthetic data ----------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Tone-burst dataset description.

    Per-class session sizes (in one-second cuts) come either from
    ``sessions`` (explicit lists) or from ``class_cuts`` totals partitioned
    into sessions whose sizes are drawn from ``session_cuts`` (inclusive range).
    """

    frequencies: Sequence[float]
    class_cuts: Sequence[int] | None = None
    sessions: Sequence[Sequence[int]] | None = None
    session_cuts: tuple[int, int] = (1, 4)
    max_clip_cuts: int = 3
    noise_amplitude: float = 0.1
    tone_amplitude: float = 0.5
    sample_rate: int = 16000
    seed: int = 0
    class_names: Sequence[str] | None = None

    @property
    def n_classes(self) -> int:
        return len(self.frequencies)

    def validate(self) -> None:
        k = self.n_classes
        if k < 2:
            raise SpecError("synthetic spec needs at least 2 classes")
        if len(set(self.frequencies)) != k:
            raise SpecError("class frequencies must be distinct")
        nyquist = self.sample_rate / 2
        for f in self.frequencies:
            if not 0 < f < nyquist:
                raise SpecError(f"tone frequency {f} Hz must lie in (0, {nyquist}) Hz")
        if (self.class_cuts is None) == (self.sessions is None):
            raise SpecError("give exactly one of class_cuts or sessions")
        if self.class_cuts is not None:
            if len(self.class_cuts) != k or any(c < 1 for c in self.class_cuts):
                raise SpecError("class_cuts needs one positive total per class")
            lo, hi = self.session_cuts
            if not 1 <= lo <= hi:
                raise SpecError("session_cuts must satisfy 1 <= lo <= hi")
        else:
            if len(self.sessions) != k:
                raise SpecError("sessions needs one list per class")
            for sizes in self.sessions:
                if not sizes or any(int(n) < 1 for n in sizes):
                    raise SpecError("every class needs sessions with >= 1 cut")
        if self.class_names is not None and len(set(self.class_names)) != k:
            raise SpecError("class_names must be distinct, one per class")
        if self.max_clip_cuts < 1:
            raise SpecError("max_clip_cuts must be >= 1")
        if self.noise_amplitude < 0 or self.tone_amplitude < 0:
            raise SpecError("amplitudes must be non-negative")
        if self.noise_amplitude + self.tone_amplitude > 1:
            raise SpecError("tone plus noise amplitude must not exceed 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        d = dict(d)
        if "session_cuts" in d:
            d["session_cuts"] = tuple(d["session_cuts"])
        return cls(**d)


def _partition(total: int, lo: int, hi: int, rng: np.random.Generator) -> list[int]:
    sizes = []
    left = total
    while left > 0:
        n = int(rng.integers(lo, hi + 1))
        n = min(n, left)
        sizes.append(n)
        left -= n
    return sizes


def _tone_burst(n: int, freq: float, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / spec.sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    # 0.25 s on/off cycle with 60% duty keeps tone energy in every window
    period = 0.25
    offset = rng.uniform(0, period)
    gate = (((t + offset) % period) < 0.6 * period).astype(np.float64)
    tone = spec.tone_amplitude * gate * np.sin(2 * np.pi * freq * t + phase)
    noise = spec.noise_amplitude * rng.uniform(-1.0, 1.0, size=n) if spec.noise_amplitude else 0.0
    return tone + noise


def generate_synthetic(spec: SyntheticSpec) -> tuple[Manifest, dict[str, bytes]]:
    """Build a deterministic tone-burst dataset.

    Returns the manifest and a clip store mapping clip paths to 16-bit WAV
    bytes.  Each session is split into clips of at most ``max_clip_cuts``
    cuts; a clip covering ``n`` cuts lasts between ``n - 0.5`` and ``n``
    seconds (single-cut clips may be as short as 0.3 s), so its cut count is
    ``ceil(duration)``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = list(spec.class_names) if spec.class_names else [f"class_{i:02d}" for i in range(spec.n_classes)]

    sessions: list[SessionRecord] = []
    store: dict[str, bytes] = {}
    for ci, (name, freq) in enumerate(zip(names, spec.frequencies)):
        if spec.sessions is not None:
            sizes = [int(n) for n in spec.sessions[ci]]
        else:
            sizes = _partition(int(spec.class_cuts[ci]), *spec.session_cuts, rng)
        for si, size in enumerate(sizes):
            sid = f"c{ci:02d}_s{si:03d}"
            record = SessionRecord(sid, name)
            left, clip_i = size, 0
            while left > 0:
                n_cuts = min(left, int(rng.integers(1, spec.max_clip_cuts + 1)))
                left -= n_cuts
                short = 0.7 if n_cuts == 1 else 0.5
                duration = round(n_cuts - rng.uniform(0.0, short), 3)
                n = int(round(duration * spec.sample_rate))
                path = f"audio/{sid}_{clip_i:02d}.wav"
                store[path] = encode_wav(_tone_burst(n, freq, spec, rng), spec.sample_rate)
                record.clips.append(ClipRef(path, n / spec.sample_rate, n_cuts))
                clip_i += 1
            sessions.append(record)
    return Manifest(sessions), store


def write_clip_store(store: Mapping[str, bytes], root) -> None:
    root = Path(root)
    for rel, data in store.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)


# -- summary -----------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    species: str
    sound_type: str
    total_seconds: float
    n_cuts: int

    def format(self) -> str:
        return f"{self.species}, {self.total_seconds:,.0f} s, {self.n_cuts:,} cuts"


def summarize(manifest: Manifest) -> list[SummaryRow]:
    """One row per class (manifest order) followed by a ``Total`` row."""
    rows = []
    for label in manifest.classes:
        sessions = manifest.sessions_of(label)
        species, sound = split_label(label)
        rows.append(SummaryRow(
            species, sound,
            sum(s.total_seconds for s in sessions),
            sum(s.sample_count for s in sessions)))
    rows.append(SummaryRow(
        "Total", "-",
        sum(r.total_seconds for r in rows),
        sum(r.n_cuts for r in rows)))
    return rows
