"""Parameter-estimation network for the multi-frame MVDR filter and the
recurrent spectral-mask baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .multiframe import stack_frames
from .mvdr import mvdr_from_inverse_torch
from .neuralnet import ComplexGRU, FullyConnected, GRULayer, TCN
from .neuralnet.checkpoint import load_checkpoint, save_checkpoint
from .stft import BASELINE_STFT, Spectrogram, StftConfig, TorchSynthesizer, analyze

LOG_EPS = 1e-10
HEAD_INIT_GAIN = 0.1


@dataclass(frozen=True)
class EstimatorConfig:
    L: int = 5
    num_bins: int = 65
    hidden: int = 32
    cgru_hidden: int = 16
    shared_blocks: int = 4
    task_blocks: int = 3
    kernel_size: int = 3

    @classmethod
    def full_scale(cls, L: int = 5, num_bins: int = 65) -> "EstimatorConfig":
        return cls(L=L, num_bins=num_bins, hidden=256, cgru_hidden=96)

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.hidden % 2:
            raise ValueError("hidden must be even (split into real/imaginary halves)")


@dataclass(frozen=True)
class BaselineConfig:
    num_bins: int = 161
    hidden: int = 32
    num_layers: int = 2

    @classmethod
    def full_scale(cls) -> "BaselineConfig":
        return cls(hidden=512)


class TaskBranch(nn.Module):
    """TCN -> complex GRU -> fully connected; emits ``out_complex`` complex values per frame."""

    def __init__(self, channels: int, cgru_hidden: int, num_blocks: int, kernel_size: int,
                 out_complex: int):
        super().__init__()
        self.tcn = TCN(channels, channels, num_blocks, kernel_size)
        self.cgru = ComplexGRU(channels // 2, cgru_hidden)
        self.fc = FullyConnected(2 * cgru_hidden, 2 * out_complex)
        self.out_complex = out_complex
        with torch.no_grad():
            self.fc.linear.weight.mul_(HEAD_INIT_GAIN)
            self.fc.linear.bias.zero_()

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.tcn(x).transpose(1, 2)  # (B, M, C)
        half = h.shape[-1] // 2
        f_r, f_i = self.cgru(h[..., :half], h[..., half:])
        out = self.fc(torch.cat([f_r, f_i], dim=-1))
        return out[..., :self.out_complex], out[..., self.out_complex:]


def mfmvdr_features(noisy_bins: np.ndarray, far_bins: np.ndarray) -> Tensor:
    """(1, 4K, M) input: real/imag parts of the noisy and far-end spectra."""
    if noisy_bins.shape != far_bins.shape:
        raise ValueError(f"noisy {noisy_bins.shape} and far-end {far_bins.shape} differ")
    feats = np.concatenate([noisy_bins.real, noisy_bins.imag, far_bins.real, far_bins.imag])
    return torch.tensor(feats[None], dtype=torch.float32)


class MFMVDREstimator(nn.Module):
    """Shared TCN trunk feeding two branches that predict, per bin and frame,
    the inverse undesired correlation matrix and the speech IFC vector."""

    kind = "mfmvdr"

    def __init__(self, cfg: EstimatorConfig = EstimatorConfig()):
        super().__init__()
        self.cfg = cfg
        K, L, H = cfg.num_bins, cfg.L, cfg.hidden
        self.shared = TCN(4 * K, H, cfg.shared_blocks, cfg.kernel_size)
        self.inverse_head = TaskBranch(H, cfg.cgru_hidden, cfg.task_blocks, cfg.kernel_size,
                                       K * L * L)
        self.ifc_head = TaskBranch(H, cfg.cgru_hidden, cfg.task_blocks, cfg.kernel_size,
                                   K * (L - 1)) if L > 1 else None

    def forward(self, feats: Tensor):
        """Return ``(a_re, a_im, g_re, g_im)`` with shapes (B, K, M, L, L) and (B, K, M, L).

        The inverse estimate is identity plus the head output, Hermitian-symmetrized;
        the IFC vector has its first entry pinned to 1.
        """
        K, L = self.cfg.num_bins, self.cfg.L
        if feats.shape[1] != 4 * K:
            raise ValueError(f"expected {4 * K} feature channels, got {feats.shape[1]}")
        h = self.shared(feats)
        B, M = feats.shape[0], feats.shape[2]
        a_re, a_im = self.inverse_head(h)
        a_re = a_re.reshape(B, M, K, L, L).transpose(1, 2)
        a_im = a_im.reshape(B, M, K, L, L).transpose(1, 2)
        a_re = a_re + torch.eye(L, dtype=a_re.dtype)
        a_re = 0.5 * (a_re + a_re.transpose(-1, -2))
        a_im = 0.5 * (a_im - a_im.transpose(-1, -2))
        one = feats.new_ones(B, K, M, 1)
        zero = feats.new_zeros(B, K, M, 1)
        if self.ifc_head is None:
            return a_re, a_im, one, zero
        g_re, g_im = self.ifc_head(h)
        g_re = g_re.reshape(B, M, K, L - 1).transpose(1, 2)
        g_im = g_im.reshape(B, M, K, L - 1).transpose(1, 2)
        return a_re, a_im, torch.cat([one, g_re], -1), torch.cat([zero, g_im], -1)

    # ------------------------------------------------------------ pipeline
    stft_config = StftConfig()

    def prepare(self, mic, far, near=None) -> dict:
        noisy = analyze(mic, self.stft_config).bins
        far_bins = analyze(far, self.stft_config).bins
        y = stack_frames(noisy, self.cfg.L)
        ex = {
            "feats": mfmvdr_features(noisy, far_bins),
            "y_re": torch.tensor(y.real, dtype=torch.float32),
            "y_im": torch.tensor(y.imag, dtype=torch.float32),
        }
        if near is not None:
            n = self.stft_config.num_samples(noisy.shape[1])
            ex["near"] = torch.tensor(near.samples[:n], dtype=torch.float32)
        return ex

    def enhance_torch(self, ex: dict) -> Tensor:
        a_re, a_im, g_re, g_im = self(ex["feats"])
        s_re, s_im = mvdr_from_inverse_torch(a_re[0], a_im[0], g_re[0], g_im[0],
                                             ex["y_re"], ex["y_im"])
        return _synth(self.stft_config, s_re.dtype)(s_re, s_im)


_SYNTHS: dict = {}


def _synth(cfg: StftConfig, dtype) -> TorchSynthesizer:
    key = (cfg, dtype)
    if key not in _SYNTHS:
        _SYNTHS[key] = TorchSynthesizer(cfg, dtype)
    return _SYNTHS[key]


def baseline_features(noisy_bins: np.ndarray, far_bins: np.ndarray) -> Tensor:
    """(1, M, 2K) log power spectra of the noisy and far-end signals."""
    feats = np.concatenate([np.log(np.abs(noisy_bins) ** 2 + LOG_EPS),
                            np.log(np.abs(far_bins) ** 2 + LOG_EPS)]).T
    return torch.tensor(feats[None], dtype=torch.float32)


class BaselineMask(nn.Module):
    """Stacked GRUs and a sigmoid output layer predicting a magnitude mask."""

    kind = "baseline"
    stft_config = BASELINE_STFT

    def __init__(self, cfg: BaselineConfig = BaselineConfig()):
        super().__init__()
        self.cfg = cfg
        K = cfg.num_bins
        self.grus = nn.ModuleList(
            GRULayer(2 * K if i == 0 else cfg.hidden, cfg.hidden) for i in range(cfg.num_layers))
        self.fc = FullyConnected(cfg.hidden, K, activation="sigmoid")

    def forward(self, feats: Tensor) -> Tensor:
        """(B, M, 2K) features -> (B, M, K) mask in (0, 1)."""
        if feats.shape[-1] != 2 * self.cfg.num_bins:
            raise ValueError(f"expected {2 * self.cfg.num_bins} features, got {feats.shape[-1]}")
        h = feats
        for gru in self.grus:
            h = gru(h)
        return self.fc(h)

    def prepare(self, mic, far, near=None) -> dict:
        noisy = analyze(mic, self.stft_config).bins
        far_bins = analyze(far, self.stft_config).bins
        ex = {
            "feats": baseline_features(noisy, far_bins),
            "y_re": torch.tensor(noisy.real, dtype=torch.float32),
            "y_im": torch.tensor(noisy.imag, dtype=torch.float32),
        }
        if near is not None:
            n = self.stft_config.num_samples(noisy.shape[1])
            ex["near"] = torch.tensor(near.samples[:n], dtype=torch.float32)
        return ex

    def enhance_torch(self, ex: dict) -> Tensor:
        mask = self(ex["feats"])[0].T  # (K, M)
        # mask * |Y| with the noisy phase is mask * Y
        return _synth(self.stft_config, mask.dtype)(mask * ex["y_re"], mask * ex["y_im"])


# ---------------------------------------------------------------- numpy-facing API

def estimator_forward(noisy_spec: Spectrogram, far_spec: Spectrogram,
                      model: MFMVDREstimator) -> tuple[np.ndarray, np.ndarray]:
    """Per-(k, m) inverse correlation estimate (K, M, L, L) and IFC vector (K, M, L)."""
    if noisy_spec.num_frames != far_spec.num_frames:
        raise ValueError("noisy and far-end spectrograms differ in frame count")
    with torch.no_grad():
        a_re, a_im, g_re, g_im = model(mfmvdr_features(noisy_spec.bins, far_spec.bins))
    phi_inv = a_re[0].double().numpy() + 1j * a_im[0].double().numpy()
    gamma = g_re[0].double().numpy() + 1j * g_im[0].double().numpy()
    return phi_inv, gamma


def baseline_forward(noisy_spec: Spectrogram, far_spec: Spectrogram,
                     model: BaselineMask) -> np.ndarray:
    """Suppression mask (K, M) with values in (0, 1)."""
    if noisy_spec.config != BASELINE_STFT or far_spec.config != BASELINE_STFT:
        raise ValueError("baseline expects 20 ms / 10 ms / 320-point spectrograms")
    with torch.no_grad():
        mask = model(baseline_features(noisy_spec.bins, far_spec.bins))
    return mask[0].T.double().numpy()


class ModelSource:
    """Adapter exposing a trained estimator to :func:`mvdr.enhance`."""

    kind = "inverse"

    def __init__(self, model: MFMVDREstimator):
        self.model = model

    def parameters(self, noisy_spec, far_spec, L: int):
        if L != self.model.cfg.L:
            raise ValueError(f"model was built for L={self.model.cfg.L}, got L={L}")
        return estimator_forward(noisy_spec, far_spec, self.model)


# ---------------------------------------------------------------- persistence

def build_model(kind: str, config: dict | None = None) -> nn.Module:
    config = config or {}
    if kind == "mfmvdr":
        return MFMVDREstimator(EstimatorConfig(**config))
    if kind == "baseline":
        return BaselineMask(BaselineConfig(**config))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, model: nn.Module, extra_tensors: dict | None = None,
               header: dict | None = None) -> None:
    tensors = {f"param.{k}": v for k, v in model.state_dict().items()}
    tensors.update(extra_tensors or {})
    head = {"kind": model.kind, "config": asdict(model.cfg)}
    head.update(header or {})
    save_checkpoint(path, tensors, head)


def load_model(path) -> tuple[nn.Module, dict, dict]:
    """Return ``(model, header, extra_tensors)``."""
    tensors, header = load_checkpoint(path)
    model = build_model(header["kind"], header["config"])
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    model.load_state_dict(params)
    extra = {k: v for k, v in tensors.items() if not k.startswith("param.")}
    return model, header, extra
