"""Multi-frame stacking, recursive correlation estimates and oracle
parameters (undesired-signal correlation, speech interframe correlation)."""

from __future__ import annotations

import numpy as np

from .stft import Spectrogram

DEFAULT_SMOOTHING = 0.8
POWER_FLOOR = 1e-12


def stack_frames(spec, L: int) -> np.ndarray:
    """Return y with shape (K, M, L), ``y[k, m, l] = Y[k, m - l]`` (zero before m = 0)."""
    if L < 1:
        raise ValueError(f"filter length must be >= 1, got {L}")
    bins = spec.bins if isinstance(spec, Spectrogram) else np.asarray(spec)
    K, M = bins.shape
    y = np.zeros((K, M, L), dtype=np.complex128)
    for l in range(L):
        if l < M:
            y[:, l:, l] = bins[:, :M - l]
    return y


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def estimate_corr(stacks: np.ndarray, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Exponentially smoothed outer products along the frame axis.

    ``stacks`` has shape (..., M, L); the result has shape (..., M, L, L) with
    ``phi[m] = smoothing * phi[m-1] + (1 - smoothing) * y[m] y[m]^H``.
    """
    if not 0.0 < smoothing < 1.0:
        raise ValueError(f"smoothing must lie in (0, 1), got {smoothing}")
    stacks = np.asarray(stacks)
    outer = stacks[..., :, None] * np.conj(stacks[..., None, :])
    phi = np.empty_like(outer)
    acc = np.zeros_like(outer[..., 0, :, :])
    for m in range(stacks.shape[-2]):
        acc = hermitian_part(smoothing * acc + (1.0 - smoothing) * outer[..., m, :, :])
        phi[..., m, :, :] = acc
    return phi


def ifc_from_corr(phi_s: np.ndarray, power_floor: float | None = None) -> np.ndarray:
    """First column of ``phi_s`` over its (0, 0) entry, ``e`` where the power
    falls below ``power_floor`` (default: 1e-12 times the mean frame power)."""
    power = np.real(phi_s[..., 0, 0])
    if power_floor is None:
        power_floor = POWER_FLOOR * np.mean(power)
    L = phi_s.shape[-1]
    e = np.zeros(L, dtype=np.complex128)
    e[0] = 1.0
    ok = power > power_floor
    safe = np.where(ok, power, 1.0)
    gamma = phi_s[..., :, 0] / safe[..., None]
    gamma = np.where(ok[..., None], gamma, e)
    gamma[..., 0] = 1.0
    return gamma


def oracle_ifc(clean_spec, L: int, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Speech interframe-correlation vectors, shape (K, M, L), from clean speech."""
    phi_s = estimate_corr(stack_frames(clean_spec, L), smoothing)
    return ifc_from_corr(phi_s)


def oracle_undesired_corr(echo_spec, noise_spec, L: int,
                          smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Echo-plus-noise correlation matrices, shape (K, M, L, L)."""
    return (estimate_corr(stack_frames(echo_spec, L), smoothing)
            + estimate_corr(stack_frames(noise_spec, L), smoothing))
