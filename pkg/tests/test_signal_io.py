import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from mfmvdr_aes.signal_io import Waveform, read_wav, write_wav


def test_zero_file(tmp_path):
    path = tmp_path / "z.wav"
    wavfile.write(path, 16000, np.zeros(16000, dtype=np.int16))
    w = read_wav(path)
    assert len(w) == 16000 and w.sample_rate == 16000
    assert not w.samples.any()


def test_pcm16_scaling(tmp_path):
    path = tmp_path / "max.wav"
    wavfile.write(path, 16000, np.array([32767, -32768, 0], dtype=np.int16))
    w = read_wav(path)
    assert w.samples[0] == 32767 / 32768
    assert w.samples[1] == -1.0


def test_header_rate_passthrough(tmp_path):
    path = tmp_path / "cd.wav"
    wavfile.write(path, 44100, np.zeros(100, dtype=np.int16))
    assert read_wav(path).sample_rate == 44100


def test_rejects_stereo(tmp_path):
    path = tmp_path / "st.wav"
    wavfile.write(path, 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(ValueError, match="mono"):
        read_wav(path)


def test_rejects_unsupported_encoding(tmp_path):
    path = tmp_path / "i32.wav"
    wavfile.write(path, 16000, np.zeros(100, dtype=np.int32))
    with pytest.raises(ValueError, match="unsupported"):
        read_wav(path)


def test_unreadable(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a wav file")
    with pytest.raises(ValueError):
        read_wav(path)


def test_pcm16_sine_roundtrip(tmp_path):
    t = np.arange(16000) / 16000
    w = Waveform(0.5 * np.sin(2 * np.pi * 440 * t))
    write_wav(tmp_path / "s.wav", w, fmt="pcm16")
    back = read_wav(tmp_path / "s.wav")
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32768


def test_float_roundtrip_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, 1000).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "f.wav", Waveform(x))
    assert np.array_equal(read_wav(tmp_path / "f.wav").samples, x)


def test_out_of_range_write(tmp_path):
    with pytest.raises(ValueError, match="full scale"):
        write_wav(tmp_path / "bad.wav", Waveform(np.array([0.0, 1.5])))


def test_invalid_waveforms():
    with pytest.raises(ValueError):
        Waveform(np.array([np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.zeros(3), sample_rate=0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0 - 1 / 32768), min_size=1, max_size=200))
def test_pcm16_roundtrip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "x.wav"
    x = np.array(values)
    write_wav(path, Waveform(x), fmt="pcm16")
    assert np.max(np.abs(read_wav(path).samples - x)) <= 1 / 32768
