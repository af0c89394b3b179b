import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mfmvdr_aes.signal_io import Waveform
from mfmvdr_aes.stft import (BASELINE_STFT, Spectrogram, StftConfig, TorchSynthesizer, analyze,
                             synthesize, window)

CFG = StftConfig()


def interior_error(x, y, n):
    a, b = x[n:-n], y[n:-n]
    return np.linalg.norm(a - b) / np.linalg.norm(a)


def test_config_defaults_and_validation():
    assert CFG.fft_size == 128 and CFG.num_bins == 65 and CFG.hop == 64
    assert BASELINE_STFT.num_bins == 161
    with pytest.raises(ValueError):
        StftConfig(frame_len=128, hop=48)
    with pytest.raises(ValueError):
        StftConfig(frame_len=128, fft_size=64)


def test_periodic_hann():
    w = window(CFG)
    assert w[0] == 0.0
    assert w[64] == pytest.approx(1.0)
    # squared Hann is not constant at 50% overlap, but it never vanishes
    env = w[:64] ** 2 + w[64:] ** 2
    assert env.min() == pytest.approx(0.5) and env.max() == pytest.approx(1.0)


def test_zero_signal():
    spec = analyze(Waveform(np.zeros(1000)), CFG)
    assert spec.bins.shape == (65, (1000 - 128) // 64 + 1)
    assert not spec.bins.any()


def test_frame_count_4s():
    assert analyze(Waveform(np.zeros(64000)), CFG).num_frames == 999


def test_too_short():
    with pytest.raises(ValueError, match="shorter"):
        analyze(Waveform(np.zeros(100)), CFG)


def test_cosine_bin_against_direct_dft():
    n = np.arange(1600)
    x = np.cos(2 * np.pi * 1000 * n / 16000)
    spec = analyze(Waveform(x), CFG)
    w = window(CFG)
    k = np.arange(65)[:, None]
    t = np.arange(128)[None, :]
    basis = np.exp(-2j * np.pi * k * t / 128)
    for m in (0, 5, spec.num_frames - 1):
        frame = x[m * 64:m * 64 + 128] * w
        direct = basis @ frame
        assert np.allclose(spec.bins[:, m], direct, atol=1e-9)
        assert np.argmax(np.abs(direct)) == 8


def test_roundtrip_white_noise(rng):
    x = rng.standard_normal(16000)
    y = synthesize(analyze(Waveform(x), CFG)).samples
    assert len(y) == (CFG.num_frames(16000) - 1) * 64 + 128
    assert interior_error(x[:len(y)], y, 128) < 1e-6


def test_zero_spectrogram():
    y = synthesize(Spectrogram(np.zeros((65, 10)), CFG))
    assert len(y) == 9 * 64 + 128 and not y.samples.any()


def test_single_frame_against_inverse_dft(rng):
    x = rng.standard_normal(128)
    spec = analyze(Waveform(x), CFG)
    k = np.arange(128)
    full = np.concatenate([spec.bins[:, 0], np.conj(spec.bins[-2:0:-1, 0])])
    direct = np.real(np.exp(2j * np.pi * np.outer(k, k) / 128) @ full) / 128
    w = window(CFG)
    y = synthesize(spec).samples
    inner = w > 1e-3
    assert np.allclose(y[inner], (direct * w)[inner] / w[inner] ** 2, atol=1e-6)
    assert np.allclose(y[inner], x[inner], atol=1e-6)


def test_parseval_per_frame(rng):
    x = rng.standard_normal(2000)
    spec = analyze(Waveform(x), CFG)
    w = window(CFG)
    for m in range(spec.num_frames):
        frame = x[m * 64:m * 64 + 128] * w
        full = np.concatenate([spec.bins[:, m], np.conj(spec.bins[-2:0:-1, m])])
        assert np.sum(frame ** 2) == pytest.approx(np.sum(np.abs(full) ** 2) / 128, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(700), r.standard_normal(700)
    lhs = analyze(Waveform(a * x + b * y), CFG).bins
    rhs = a * analyze(Waveform(x), CFG).bins + b * analyze(Waveform(y), CFG).bins
    assert np.max(np.abs(lhs - rhs)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(600, 3000))
def test_roundtrip_property(seed, n):
    x = np.random.default_rng(seed).standard_normal(n)
    y = synthesize(analyze(Waveform(x), CFG)).samples
    assert interior_error(x[:len(y)], y, 128) < 1e-6


@pytest.mark.parametrize("cfg", [CFG, BASELINE_STFT])
def test_torch_synthesizer_matches_numpy(rng, cfg):
    x = rng.standard_normal(5000)
    spec = analyze(Waveform(x), cfg)
    ref = synthesize(spec).samples
    synth = TorchSynthesizer(cfg, torch.float64)
    out = synth(torch.tensor(spec.bins.real), torch.tensor(spec.bins.imag)).numpy()
    assert np.allclose(out, ref, atol=1e-10)
