"""Synthetic echo scenes: near-end talker, loudspeaker echo, sensor noise.

Each scene is fully determined by its seed. The microphone signal is the
sum of the centered near-end clip, the (optionally distorted) far-end signal
convolved with an impulse response, and white Gaussian noise. SER and SNR
are measured over the near-end support.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .signal_io import SAMPLE_RATE, Waveform, read_wav, write_wav

HEADROOM = 0.99


def db_ratio(num_energy: float, den_energy: float) -> float:
    return 10.0 * np.log10(num_energy / den_energy)


# ---------------------------------------------------------------- impulse responses

def synth_rir(decay_t60_ms: float, len_samples: int, seed: int,
              fs: int = SAMPLE_RATE) -> np.ndarray:
    """Unit leading tap followed by an exponentially decaying Gaussian tail,
    normalized to unit energy."""
    if decay_t60_ms <= 0 or len_samples < 1:
        raise ValueError("decay_t60_ms and len_samples must be positive")
    rng = np.random.default_rng(seed)
    h = np.empty(len_samples)
    h[0] = 1.0
    n = np.arange(1, len_samples)
    h[1:] = rng.standard_normal(len_samples - 1) * rir_envelope(n, decay_t60_ms, fs)
    return h / np.sqrt(np.sum(h ** 2))


def rir_envelope(n, decay_t60_ms: float, fs: int = SAMPLE_RATE):
    # 60 dB amplitude decay (factor 1000) over t60
    return np.exp(-np.asarray(n) * np.log(1000.0) / (decay_t60_ms * fs / 1000.0))


def load_rir(path) -> np.ndarray:
    h = read_wav(path).samples
    energy = np.sum(h ** 2)
    if energy == 0:
        raise ValueError(f"{path}: impulse response is silent")
    return h / np.sqrt(energy)


# ---------------------------------------------------------------- loudspeaker model

@dataclass(frozen=True)
class Nonlinearity:
    enabled: bool = True
    clip_ratio: float = 0.8
    gain: float = 1.0


def apply_nonlinearity(x: Waveform, params: Nonlinearity = Nonlinearity()) -> Waveform:
    """Hard clipping at ``clip_ratio * max|x|`` followed by a sigmoidal stage."""
    s = x.samples
    if not params.enabled:
        return x
    c = params.clip_ratio * (np.max(np.abs(s)) if s.size else 0.0)
    if c == 0.0:
        return Waveform(np.zeros_like(s), x.sample_rate)
    xc = np.clip(s, -c, c)
    b = 1.5 * xc - 0.3 * xc ** 2
    a = np.where(b > 0, 4.0, 0.5)
    out = params.gain * (2.0 / (1.0 + np.exp(-a * b)) - 1.0)
    return Waveform(out, x.sample_rate)


# ---------------------------------------------------------------- source clips

class SyntheticSpeech:
    """Speech-like clip provider: voiced syllables with drifting pitch and
    formant shaping, occasional unvoiced bursts and short pauses."""

    name = "synthetic"

    def __init__(self, fs: int = SAMPLE_RATE, peak: float = 0.5):
        self.fs = fs
        self.peak = peak

    def _resonate(self, x, freq, bw):
        r = np.exp(-np.pi * bw / self.fs)
        theta = 2.0 * np.pi * freq / self.fs
        return signal.lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], x)

    def _syllable(self, n, rng):
        t = np.arange(n) / self.fs
        env = np.sin(np.pi * np.arange(n) / n) ** 0.7
        if rng.random() < 0.2:
            burst = rng.standard_normal(n)
            burst = self._resonate(burst, rng.uniform(2500, 5000), 1500.0)
            return 0.3 * env * burst / (np.std(burst) + 1e-12)
        f0 = rng.uniform(90, 240) * (1.0 + rng.uniform(-0.2, 0.2) * t / t[-1])
        phase = 2.0 * np.pi * np.cumsum(f0) / self.fs
        n_harm = int(4000 / f0.max())
        src = sum(np.sin(h * phase) / h for h in range(1, n_harm + 1))
        out = np.zeros(n)
        for lo, hi, bw in ((300, 900, 90), (900, 2500, 120), (2400, 3500, 200)):
            out += self._resonate(src, rng.uniform(lo, hi), bw)
        return env * out / (np.std(out) + 1e-12)

    def clip(self, num_samples: int, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros(num_samples)
        pos = int(rng.uniform(0, 0.05) * self.fs)
        while pos < num_samples:
            n = int(rng.uniform(0.08, 0.3) * self.fs)
            seg = self._syllable(n, rng)[:num_samples - pos]
            out[pos:pos + len(seg)] += seg
            pos += n + int(rng.uniform(0.0, 0.12) * self.fs)
        return self.peak * out / np.max(np.abs(out))


class WavDirectory:
    """Clip provider drawing random excerpts from the mono WAVs under ``root``."""

    def __init__(self, root, peak: float = 0.5):
        self.root = Path(root)
        self.files = sorted(self.root.rglob("*.wav"))
        if not self.files:
            raise ValueError(f"empty clip provider: no .wav files under {self.root}")
        self.peak = peak
        self.name = f"wavdir:{self.root}"

    def clip(self, num_samples: int, rng: np.random.Generator) -> np.ndarray:
        x = read_wav(self.files[rng.integers(len(self.files))]).samples
        if len(x) > num_samples:
            start = rng.integers(len(x) - num_samples + 1)
            x = x[start:start + num_samples]
        else:
            x = np.pad(x, (0, num_samples - len(x)))
        peak = np.max(np.abs(x))
        return x if peak == 0 else self.peak * x / peak


def provider_from_name(name: str):
    if name == "synthetic":
        return SyntheticSpeech()
    if name.startswith("wavdir:"):
        return WavDirectory(name[len("wavdir:"):])
    raise ValueError(f"unknown clip provider {name!r}")


# ---------------------------------------------------------------- scenes

@dataclass(frozen=True)
class SceneConfig:
    ser_db: float = 0.0
    snr_db: float = 30.0
    far_len_s: float = 4.0
    near_len_s: float = 2.0
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    rir_t60_ms: float = 200.0
    rir_len: int = 2048
    rir_path: str | None = None
    seed: int = 0
    fs: int = SAMPLE_RATE

    def __post_init__(self):
        if self.far_len_s < self.near_len_s:
            raise ValueError("far_len_s must be >= near_len_s")

    @property
    def far_samples(self) -> int:
        return int(round(self.far_len_s * self.fs))

    @property
    def near_samples(self) -> int:
        return int(round(self.near_len_s * self.fs))


@dataclass
class Scene:
    near: Waveform
    far: Waveform
    echo: Waveform
    noise: Waveform
    mic: Waveform
    near_start: int
    near_stop: int

    @property
    def double_talk(self) -> slice:
        return slice(self.near_start, self.near_stop)

    def single_talk_mask(self) -> np.ndarray:
        mask = np.ones(len(self.mic), dtype=bool)
        mask[self.near_start:self.near_stop] = False
        return mask

    def ser_db(self) -> float:
        r = self.double_talk
        return db_ratio(np.sum(self.near.samples[r] ** 2), np.sum(self.echo.samples[r] ** 2))

    def snr_db(self) -> float:
        r = self.double_talk
        return db_ratio(np.sum(self.near.samples[r] ** 2), np.sum(self.noise.samples[r] ** 2))


def make_scene(near: Waveform, far: Waveform, cfg: SceneConfig) -> Scene:
    if near.sample_rate != cfg.fs or far.sample_rate != cfg.fs:
        raise ValueError(f"sources must be sampled at {cfg.fs} Hz")
    n = cfg.far_samples
    x = np.zeros(n)
    x[:min(n, len(far))] = far.samples[:n]
    if len(near) > n:
        raise ValueError("near-end clip longer than the scene")
    start = (n - len(near)) // 2
    stop = start + len(near)
    s = np.zeros(n)
    s[start:stop] = near.samples

    rir_seed, noise_seed = np.random.SeedSequence(cfg.seed).generate_state(2)
    if cfg.rir_path is not None:
        h = load_rir(cfg.rir_path)
    else:
        h = synth_rir(cfg.rir_t60_ms, cfg.rir_len, int(rir_seed), cfg.fs)
    driven = apply_nonlinearity(Waveform(x, cfg.fs), cfg.nonlinearity).samples
    d = signal.fftconvolve(driven, h)[:n]
    v = np.random.default_rng(int(noise_seed)).standard_normal(n)

    region = slice(start, stop)
    e_s = np.sum(s[region] ** 2)
    e_d = np.sum(d[region] ** 2)
    if e_s == 0:
        raise ValueError("near-end clip is silent; SER/SNR undefined")
    if e_d == 0:
        raise ValueError("echo is silent over the near-end support; SER undefined")
    d *= np.sqrt(e_s / (e_d * 10.0 ** (cfg.ser_db / 10.0)))
    v *= np.sqrt(e_s / (np.sum(v[region] ** 2) * 10.0 ** (cfg.snr_db / 10.0)))

    # common rescale keeps every stored component within full scale
    peak = max(np.max(np.abs(s + d + v)), np.max(np.abs(s)), np.max(np.abs(d)),
               np.max(np.abs(v)))
    if peak > HEADROOM:
        g = HEADROOM / peak
        s, d, v = s * g, d * g, v * g
    w = lambda a: Waveform(a, cfg.fs)  # noqa: E731
    return Scene(w(s), w(x), w(d), w(v), w(s + d + v), start, stop)


# ---------------------------------------------------------------- datasets

def scene_from_record(record: dict, provider=None) -> Scene:
    """Regenerate a scene from its manifest record."""
    if provider is None:
        provider = provider_from_name(record.get("source", "synthetic"))
    cfg = SceneConfig(
        ser_db=record["ser_db"], snr_db=record["snr_db"],
        far_len_s=record["far_len_s"], near_len_s=record["near_len_s"],
        nonlinearity=Nonlinearity(**record["nonlinearity"]),
        rir_t60_ms=record["rir_t60_ms"], rir_len=record["rir_len"],
        rir_path=record.get("rir_path"), seed=record["seed"])
    rng = np.random.default_rng(record["seed"])
    near = Waveform(provider.clip(cfg.near_samples, rng), cfg.fs)
    far = Waveform(provider.clip(cfg.far_samples, rng), cfg.fs)
    return make_scene(near, far, cfg)


COMPONENTS = ("near", "far", "echo", "noise", "mic")


def save_scene(scene: Scene, directory, stem: str) -> dict:
    directory = Path(directory)
    paths = {}
    for name in COMPONENTS:
        rel = f"{stem}_{name}.wav"
        write_wav(directory / rel, getattr(scene, name))
        paths[name] = rel
    return paths


def load_scene(record: dict, root) -> Scene:
    """Load a stored scene; the mixture is re-summed from its components."""
    root = Path(root)
    comp = {name: read_wav(root / record["paths"][name])
            for name in ("near", "far", "echo", "noise")}
    mic = Waveform(comp["near"].samples + comp["echo"].samples + comp["noise"].samples,
                   comp["near"].sample_rate)
    return Scene(comp["near"], comp["far"], comp["echo"], comp["noise"], mic,
                 record["near_start"], record["near_stop"])


def get_scene(record: dict, root=None) -> Scene:
    """Load a scene's stored audio when present, otherwise regenerate it."""
    if "paths" in record and root is not None:
        return load_scene(record, root)
    return scene_from_record(record)


def make_dataset(n_scenes: int, out_dir, *, ser_range=(-20.0, 10.0),
                 snr_range=(10.0, 40.0), conditions=None, provider=None, seed: int = 0,
                 far_len_s: float = 4.0, near_len_s: float = 2.0,
                 nonlinearity: Nonlinearity = Nonlinearity(), t60_range=(100.0, 400.0),
                 rir_len: int = 2048, write_audio: bool = True) -> list[dict]:
    """Generate ``n_scenes`` scenes and write ``manifest.jsonl`` under ``out_dir``.

    With ``conditions`` (a list of ``(ser_db, snr_db)`` pairs) SER/SNR are
    fixed and ``n_scenes`` scenes are made per condition; otherwise they are
    drawn uniformly from ``ser_range`` and ``snr_range``.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    if ser_range[0] > ser_range[1] or snr_range[0] > snr_range[1]:
        raise ValueError("invalid SER/SNR range")
    provider = provider or SyntheticSpeech()
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if conditions is None:
        plan = [(None, None)] * n_scenes
    else:
        plan = [tuple(c) for c in conditions for _ in range(n_scenes)]

    records = []
    for i, (ser, snr) in enumerate(plan):
        scene_seed = int(rng.integers(2 ** 31 - 1))
        ser_draw = float(rng.uniform(*ser_range))
        snr_draw = float(rng.uniform(*snr_range))
        t60 = float(rng.uniform(*t60_range))
        record = {
            "index": i,
            "seed": scene_seed,
            "ser_db": float(ser) if ser is not None else ser_draw,
            "snr_db": float(snr) if snr is not None else snr_draw,
            "rir_t60_ms": t60,
            "rir_len": rir_len,
            "far_len_s": far_len_s,
            "near_len_s": near_len_s,
            "nonlinearity": asdict(nonlinearity),
            "source": provider.name,
        }
        scene = scene_from_record(record, provider)
        record["near_start"] = scene.near_start
        record["near_stop"] = scene.near_stop
        if write_audio:
            record["paths"] = save_scene(scene, out_dir, f"scene{i:05d}")
        records.append(record)

    write_manifest(out_dir / "manifest.jsonl", records)
    return records


def write_manifest(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise ValueError(f"{path}: empty manifest")
    return records
