import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


def random_hpd(rng, L, cond=10.0):
    """Random Hermitian positive definite matrix."""
    a = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    return a @ a.conj().T + (np.trace(a @ a.conj().T).real / (L * cond)) * np.eye(L)


def random_gamma(rng, L):
    g = rng.standard_normal(L) + 1j * rng.standard_normal(L)
    g[0] = 1.0
    return g


def lagrangian_mvdr(phi, gamma):
    """Minimize w^H phi w subject to gamma^H w = 1 through the bordered KKT system."""
    L = len(gamma)
    kkt = np.zeros((L + 1, L + 1), dtype=np.complex128)
    kkt[:L, :L] = phi
    kkt[:L, L] = gamma
    kkt[L, :L] = np.conj(gamma)
    rhs = np.zeros(L + 1, dtype=np.complex128)
    rhs[L] = 1.0
    return np.linalg.solve(kkt, rhs)[:L]


def gradient_check(fn, tensors, step=1e-4, seed=0, max_per_tensor=None):
    """Largest relative error between autograd and central differences.

    ``fn`` maps the float64 leaf ``tensors`` to an output tensor; the check runs
    on a fixed random projection of that output. Per-element errors are
    normalized by max(|analytic|, |numeric|) floored at 1e-3 of the largest
    gradient magnitude. ``max_per_tensor`` limits the check to a random subset
    of entries in each tensor.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        probe = torch.randn(fn().shape, generator=gen, dtype=torch.float64)
    for t in tensors:
        t.grad = None
    (fn() * probe).sum().backward()
    analytic = [t.grad.detach().clone() for t in tensors]
    picks = []
    for t in tensors:
        n = t.numel()
        if max_per_tensor is None or n <= max_per_tensor:
            picks.append(torch.arange(n))
        else:
            picks.append(torch.randperm(n, generator=gen)[:max_per_tensor])
    numeric = []
    with torch.no_grad():
        for t, idx in zip(tensors, picks):
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in idx.tolist():
                old = flat[i].item()
                flat[i] = old + step
                up = (fn() * probe).sum().item()
                flat[i] = old - step
                down = (fn() * probe).sum().item()
                flat[i] = old
                gflat[i] = (up - down) / (2 * step)
            numeric.append(g)
    a = torch.cat([x.reshape(-1)[i] for x, i in zip(analytic, picks)])
    n = torch.cat([x.reshape(-1)[i] for x, i in zip(numeric, picks)])
    floor = 1e-3 * max(a.abs().max().item(), n.abs().max().item(), 1e-300)
    return ((a - n).abs() / torch.clamp(torch.maximum(a.abs(), n.abs()), min=floor)).max().item()


def pipeline_gradient_error(seed=0, K=5, L=3, hidden=8, frames=20, max_per_tensor=48):
    """Gradient check of loss(synth(filter(estimator(features)))) w.r.t. every parameter."""
    from mfmvdr_aes.estimator import EstimatorConfig, MFMVDREstimator
    from mfmvdr_aes.multiframe import stack_frames
    from mfmvdr_aes.mvdr import mvdr_from_inverse_torch
    from mfmvdr_aes.stft import StftConfig, TorchSynthesizer
    from mfmvdr_aes.training import si_sdr_loss

    torch.manual_seed(seed)
    model = MFMVDREstimator(EstimatorConfig(L=L, num_bins=K, hidden=hidden, cgru_hidden=4,
                                            shared_blocks=2, task_blocks=2)).double()
    cfg = StftConfig(frame_len=2 * (K - 1), hop=K - 1)
    synth = TorchSynthesizer(cfg, torch.float64)
    rng = np.random.default_rng(seed)
    noisy = rng.standard_normal((K, frames)) + 1j * rng.standard_normal((K, frames))
    far = rng.standard_normal((K, frames)) + 1j * rng.standard_normal((K, frames))
    feats = torch.tensor(np.concatenate([noisy.real, noisy.imag, far.real, far.imag])[None])
    y = stack_frames(noisy, L)
    y_re, y_im = torch.tensor(y.real), torch.tensor(y.imag)
    ref = torch.tensor(rng.standard_normal(cfg.num_samples(frames)))

    def loss():
        a_re, a_im, g_re, g_im = model(feats)
        s_re, s_im = mvdr_from_inverse_torch(a_re[0], a_im[0], g_re[0], g_im[0], y_re, y_im)
        return si_sdr_loss(synth(s_re, s_im), ref)

    return gradient_check(loss, list(model.parameters()), seed=seed,
                          max_per_tensor=max_per_tensor)
