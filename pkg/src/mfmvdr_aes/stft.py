"""Short-time Fourier transform with Hann analysis/synthesis windows.

Synthesis divides by the overlap-added squared window, so analysis followed
by synthesis reconstructs the input exactly wherever frames fully overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .signal_io import SAMPLE_RATE, Waveform

_ENVELOPE_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 128
    hop: int = 64
    fft_size: int | None = None
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.frame_len)
        if self.frame_len < 1 or self.hop < 1:
            raise ValueError("frame_len and hop must be positive")
        if self.frame_len % self.hop:
            raise ValueError("hop must divide frame_len")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return (num_samples - self.frame_len) // self.hop + 1

    def num_samples(self, num_frames: int) -> int:
        return (num_frames - 1) * self.hop + self.frame_len


# 20 ms frames, 10 ms stride, 320-point transform for the mask baseline
BASELINE_STFT = StftConfig(frame_len=320, hop=160)


def window(cfg: StftConfig) -> np.ndarray:
    n = np.arange(cfg.frame_len)
    if cfg.window == "rect":
        return np.ones(cfg.frame_len)
    # periodic Hann
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / cfg.frame_len))


@dataclass(frozen=True)
class Spectrogram:
    bins: np.ndarray  # complex, (K, M)
    config: StftConfig
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 2 or bins.shape[0] != self.config.num_bins:
            raise ValueError(
                f"expected {self.config.num_bins} x M bins, got shape {bins.shape}")
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectrogram contains non-finite entries")
        object.__setattr__(self, "bins", bins)

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[0]


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    m = cfg.num_frames(len(x))
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(m)[:, None]
    return x[idx]


def analyze(w: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    x = w.samples
    if len(x) < cfg.frame_len:
        raise ValueError(
            f"signal of {len(x)} samples is shorter than one frame ({cfg.frame_len})")
    frames = frame_signal(x, cfg) * window(cfg)
    bins = np.fft.rfft(frames, n=cfg.fft_size, axis=1).T
    return Spectrogram(bins, cfg, w.sample_rate)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    m, n = frames.shape
    out = np.zeros((m - 1) * hop + n)
    for i in range(n // hop):
        seg = frames[:, i * hop:(i + 1) * hop].reshape(-1)
        out[i * hop:i * hop + m * hop] += seg
    return out


def synthesis_envelope(cfg: StftConfig, num_frames: int) -> np.ndarray:
    win2 = np.tile(window(cfg) ** 2, (num_frames, 1))
    return _overlap_add(win2, cfg.hop)


def synthesize(spec: Spectrogram) -> Waveform:
    cfg = spec.config
    frames = np.fft.irfft(spec.bins.T, n=cfg.fft_size, axis=1)[:, :cfg.frame_len]
    out = _overlap_add(frames * window(cfg), cfg.hop)
    env = synthesis_envelope(cfg, spec.num_frames)
    return Waveform(out / np.maximum(env, _ENVELOPE_FLOOR), spec.sample_rate)


class TorchSynthesizer:
    """Differentiable counterpart of :func:`synthesize` on paired real tensors.

    The inverse real DFT is a fixed real matrix product, so gradients flow
    through ordinary real-valued autodiff.
    """

    def __init__(self, cfg: StftConfig, dtype=torch.float32):
        self.cfg = cfg
        n = cfg.fft_size
        k = np.arange(cfg.num_bins)
        t = np.arange(cfg.frame_len)
        # irfft weights: DC and Nyquist counted once, the rest twice
        scale = np.full(cfg.num_bins, 2.0)
        scale[0] = 1.0
        if n % 2 == 0:
            scale[-1] = 1.0
        arg = 2.0 * np.pi * np.outer(k, t) / n
        win = window(cfg)
        self.cos = torch.tensor(scale[:, None] * np.cos(arg) / n * win, dtype=dtype)
        self.sin = torch.tensor(-scale[:, None] * np.sin(arg) / n * win, dtype=dtype)
        self.dtype = dtype
        self._env_cache: dict[int, torch.Tensor] = {}

    def _envelope(self, num_frames: int) -> torch.Tensor:
        if num_frames not in self._env_cache:
            env = synthesis_envelope(self.cfg, num_frames)
            self._env_cache[num_frames] = torch.tensor(
                1.0 / np.maximum(env, _ENVELOPE_FLOOR), dtype=self.dtype)
        return self._env_cache[num_frames]

    def __call__(self, re: torch.Tensor, im: torch.Tensor) -> torch.Tensor:
        """``re``/``im`` have shape (K, M); returns the time signal."""
        frames = re.T @ self.cos + im.T @ self.sin  # (M, frame_len)
        m = frames.shape[0]
        hop, n = self.cfg.hop, self.cfg.frame_len
        out = frames.new_zeros((m - 1) * hop + n)
        for i in range(n // hop):
            seg = frames[:, i * hop:(i + 1) * hop].reshape(-1)
            out = out + torch.nn.functional.pad(
                seg, (i * hop, out.shape[0] - i * hop - seg.shape[0]))
        return out * self._envelope(m)
