"""Mono WAV input/output (PCM16 and 32-bit float)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional (mono)")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def require_rate(w: Waveform, rate: int = SAMPLE_RATE) -> None:
    if w.sample_rate != rate:
        raise ValueError(f"expected sample rate {rate} Hz, got {w.sample_rate} Hz")


def read_wav(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV file, scaled to [-1, 1]."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported encoding {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    """Write ``w`` as PCM16 (``fmt="pcm16"``) or float32.

    Samples outside [-1, 1] are rejected; clipping is the caller's job.
    """
    x = w.samples
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        raise ValueError(f"sample magnitude {peak:.4g} exceeds full scale")
    if fmt == "pcm16":
        data = np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype("<i2")
    elif fmt == "float32":
        data = x.astype("<f4")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        wavfile.write(Path(path), w.sample_rate, data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
