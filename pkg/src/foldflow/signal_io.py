"""Audio loading, manifest handling and fixed-length framing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

LABELS = ("positive", "negative", "unknown")


class SignalIoError(Exception):
    pass


class UnreadableFileError(SignalIoError):
    pass


class UnsupportedEncodingError(SignalIoError):
    pass


class EmptyAudioError(SignalIoError):
    pass


@dataclass(frozen=True)
class Recording:
    """Mono speech recording, peak-normalized to [-1, 1]."""

    id: str
    speaker_id: str
    label: str
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"bad label {self.label!r}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.size == 0:
            raise EmptyAudioError(f"recording {self.id}: no samples")
        peak = np.max(np.abs(self.samples))
        if peak > 1.0 + 1e-9:
            raise ValueError("samples not normalized to [-1, 1]")


@dataclass(frozen=True)
class FrameSequence:
    """Contiguous fixed-length analysis windows of one recording.

    frames[i] starts at sample i * hop; every frame is mean-removed.
    """

    recording_id: str
    window_len: int
    hop: int
    frames: np.ndarray  # (n_frames, window_len)
    start_indices: np.ndarray
    too_short: bool = field(default=False)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_wav(path, recording_id: str | None = None,
             speaker_id: str = "unknown", label: str = "unknown") -> Recording:
    """Read a PCM WAV file into a peak-normalized mono Recording."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            sample_rate, data = wavfile.read(fh)
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UnsupportedEncodingError(f"{path}: {exc}") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        x = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample format {data.dtype}")

    if x.size == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")
    if x.ndim > 1:
        x = x.mean(axis=1)

    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    return Recording(
        id=recording_id or path.stem,
        speaker_id=speaker_id,
        label=label,
        sample_rate=int(sample_rate),
        samples=x,
    )


def frame_signal(recording: Recording, window_ms: float = 50.0,
                 hop_ms: float = 25.0) -> FrameSequence:
    """Slice a recording into mean-removed windows (defaults 50 ms / 25 ms)."""
    if window_ms <= 0 or hop_ms <= 0:
        raise ValueError("window_ms and hop_ms must be positive")
    if window_ms < hop_ms:
        raise ValueError("window_ms must be >= hop_ms")

    fs = recording.sample_rate
    window_len = int(round(window_ms * 1e-3 * fs))
    hop = int(round(hop_ms * 1e-3 * fs))
    x = recording.samples
    n = len(x)

    if n < window_len:
        return FrameSequence(recording.id, window_len, hop,
                             np.empty((0, window_len)), np.empty(0, dtype=int),
                             too_short=True)

    count = (n - window_len) // hop + 1
    starts = np.arange(count) * hop
    frames = np.stack([x[s:s + window_len] for s in starts])
    frames = frames - frames.mean(axis=1, keepdims=True)
    return FrameSequence(recording.id, window_len, hop, frames, starts)


def load_manifest(manifest_path) -> list[Recording]:
    """Load a cohort manifest CSV: recording_path,speaker_id,label,vowel.

    Paths are resolved relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    recordings = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"recording_path", "speaker_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SignalIoError(
                f"{manifest_path}: manifest must have columns "
                "recording_path,speaker_id,label,vowel")
        for row in reader:
            label = row["label"].strip()
            if label not in ("positive", "negative"):
                raise SignalIoError(f"{manifest_path}: bad label {label!r}")
            wav = base / row["recording_path"]
            recordings.append(load_wav(wav, speaker_id=row["speaker_id"].strip(),
                                       label=label))
    return recordings
