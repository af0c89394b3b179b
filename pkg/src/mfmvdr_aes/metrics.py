"""SI-SDR and ERLE, and the condition-by-method evaluation grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimator import ModelSource, baseline_forward, load_model
from .mvdr import OracleSource, enhance
from .scene import Scene, get_scene, read_manifest
from .signal_io import Waveform
from .stft import Spectrogram, StftConfig, analyze, synthesize

SI_SDR_EPS = 1e-8
ERLE_EPS = 1e-10
_TINY = 1e-30


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def si_sdr_metric(est, ref, eps: float = SI_SDR_EPS) -> float:
    est, ref = _samples(est), _samples(ref)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = ref @ ref
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    target = (est @ ref / ref_energy) * ref
    err = target - est
    return float(10.0 * np.log10((target @ target + _TINY) / (err @ err + eps)))


def erle(mic, est, region=slice(None), eps: float = ERLE_EPS) -> float:
    """Echo return loss enhancement in dB over ``region`` (slice or boolean mask)."""
    y, s = _samples(mic)[region], _samples(est)[region]
    if y.size == 0:
        raise ValueError("empty ERLE region")
    return float(10.0 * np.log10(np.sum(y ** 2) / (np.sum(s ** 2) + eps)))


# ---------------------------------------------------------------- methods

@dataclass
class Method:
    name: str
    run: callable  # Scene -> enhanced samples


def passthrough_method(name: str = "passthrough") -> Method:
    def run(scene: Scene):
        return scene.mic.samples
    return Method(name, run)


def oracle_method(L: int = 5, name: str | None = None) -> Method:
    cfg = StftConfig()

    def run(scene: Scene):
        src = OracleSource(analyze(scene.near, cfg), analyze(scene.echo, cfg),
                           analyze(scene.noise, cfg))
        return enhance(analyze(scene.mic, cfg), analyze(scene.far, cfg), src, L).samples
    return Method(name or f"oracle-L{L}", run)


def model_enhancer(model):
    """Return ``fn(mic, far) -> enhanced samples`` for a trained model."""
    model.eval()
    cfg = model.stft_config
    if model.kind == "mfmvdr":
        source = ModelSource(model)

        def run(mic, far):
            return enhance(analyze(mic, cfg), analyze(far, cfg), source, model.cfg.L).samples
    else:
        def run(mic, far):
            noisy = analyze(mic, cfg)
            mask = baseline_forward(noisy, analyze(far, cfg), model)
            return synthesize(Spectrogram(mask * noisy.bins, cfg, noisy.sample_rate)).samples
    return run


def model_method(model_or_path, name: str | None = None) -> Method:
    model = model_or_path
    if not hasattr(model_or_path, "kind"):
        model = load_model(model_or_path)[0]
    run = model_enhancer(model)
    default = f"mfmvdr-L{model.cfg.L}" if model.kind == "mfmvdr" else "baseline"
    return Method(name or default, lambda sc: run(sc.mic, sc.far))


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    rows: list = field(default_factory=list)       # per scene and method
    aggregate: list = field(default_factory=list)  # per condition and method

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "ser_db", "snr_db", "num_scenes",
                                               "si_sdr_db", "erle_db"])
            w.writeheader()
            w.writerows(self.aggregate)

    def write_scene_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "scene", "ser_db", "snr_db",
                                               "si_sdr_db", "erle_db"])
            w.writeheader()
            w.writerows(self.rows)

    def lookup(self, method: str, ser_db: float) -> dict:
        for row in self.aggregate:
            if row["method"] == method and row["ser_db"] == ser_db:
                return row
        raise KeyError((method, ser_db))

    def table(self) -> str:
        sers = sorted({r["ser_db"] for r in self.aggregate})
        methods = list(dict.fromkeys(r["method"] for r in self.aggregate))
        width = max(12, max(len(m) for m in methods) + 2)
        head1 = "SER(dB)".ljust(width) + "".join(f"{s:>+8g}dB".center(20) for s in sers)
        head2 = "Method".ljust(width) + "".join(f"{'SI-SDR':>10}{'ERLE':>10}" for _ in sers)
        lines = [head1, head2, "-" * len(head2)]
        for m in methods:
            cells = "".join(f"{self.lookup(m, s)['si_sdr_db']:>10.3f}"
                            f"{self.lookup(m, s)['erle_db']:>10.3f}" for s in sers)
            lines.append(m.ljust(width) + cells)
        return "\n".join(lines)


def evaluate(methods: list[Method], manifest, ser_conditions=(-10.0, -5.0, 0.0),
             snr_db: float = 30.0) -> EvalReport:
    """Enhance every scene of each condition with every method.

    SI-SDR is measured over the double-talk region and ERLE over the
    single-talk region of each scene.
    """
    if not methods:
        raise ValueError("no methods to evaluate")
    manifest = Path(manifest)
    records = read_manifest(manifest)
    report = EvalReport()
    for ser in ser_conditions:
        chosen = [r for r in records if np.isclose(r["ser_db"], ser)
                  and np.isclose(r["snr_db"], snr_db)]
        if not chosen:
            raise ValueError(f"manifest has no scenes at SER {ser} dB, SNR {snr_db} dB")
        scenes = [(r["index"], get_scene(r, manifest.parent)) for r in chosen]
        for method in methods:
            si, er = [], []
            for idx, scene in scenes:
                out = np.asarray(method.run(scene))
                n = len(out)
                dt = np.zeros(n, dtype=bool)
                dt[scene.double_talk] = True
                s_val = si_sdr_metric(out[dt], scene.near.samples[:n][dt])
                e_val = erle(scene.mic.samples[:n], out, ~dt)
                si.append(s_val)
                er.append(e_val)
                report.rows.append({"method": method.name, "scene": idx, "ser_db": ser,
                                    "snr_db": snr_db, "si_sdr_db": s_val, "erle_db": e_val})
            report.aggregate.append({"method": method.name, "ser_db": ser, "snr_db": snr_db,
                                     "num_scenes": len(scenes),
                                     "si_sdr_db": float(np.mean(si)),
                                     "erle_db": float(np.mean(er))})
    return report
