"""Closed-form multi-frame MVDR filter.

``w = A gamma / (gamma^H A gamma)`` with ``A`` the inverse of the (loaded)
undesired-signal correlation matrix, or a direct estimate of that inverse.
Frames whose denominator vanishes fall back to single-frame passthrough
``w = e``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .multiframe import (DEFAULT_SMOOTHING, hermitian_part, oracle_ifc,
                         oracle_undesired_corr, stack_frames)
from .signal_io import Waveform
from .stft import Spectrogram, synthesize

DEFAULT_LOADING = 1e-3
ABS_LOADING = 1e-12
DENOM_TOL = 1e-12
_TINY = 1e-300


@dataclass
class FilterSolution:
    w: np.ndarray       # (..., L) complex
    solved: np.ndarray  # (...) bool; False marks passthrough fallback

    @property
    def status(self) -> np.ndarray:
        return np.where(self.solved, "solved", "fallback_passthrough")


def _unit(L: int) -> np.ndarray:
    e = np.zeros(L, dtype=np.complex128)
    e[0] = 1.0
    return e


def _check_inputs(mat: np.ndarray, gamma: np.ndarray) -> None:
    if mat.shape[-1] != mat.shape[-2] or mat.shape[-1] != gamma.shape[-1]:
        raise ValueError(f"shape mismatch: matrix {mat.shape}, vector {gamma.shape}")
    if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(gamma))):
        raise ValueError("non-finite MVDR input")


def _finish(num: np.ndarray, gamma: np.ndarray, denom: np.ndarray,
            threshold: np.ndarray) -> FilterSolution:
    solved = np.abs(denom) > threshold
    safe = np.where(solved, denom, 1.0)
    # conj: w^H gamma = gamma^H A^H gamma / conj(denom) = 1 for Hermitian A
    w = num / np.conj(safe)[..., None]
    w = np.where(solved[..., None], w, _unit(gamma.shape[-1]))
    return FilterSolution(w, solved)


def solve_mvdr(phi_u: np.ndarray, gamma: np.ndarray,
               loading: float = DEFAULT_LOADING) -> FilterSolution:
    """MVDR weights from an undesired correlation matrix (batched over leading axes)."""
    phi_u = np.asarray(phi_u, dtype=np.complex128)
    gamma = np.asarray(gamma, dtype=np.complex128)
    _check_inputs(phi_u, gamma)
    scale = np.max(np.abs(phi_u), axis=(-2, -1), keepdims=True)
    asym = np.max(np.abs(phi_u - np.conj(np.swapaxes(phi_u, -1, -2))), axis=(-2, -1),
                  keepdims=True)
    if np.any(asym > 1e-8 * scale + _TINY):
        raise ValueError("undesired correlation matrix is not Hermitian")
    L = phi_u.shape[-1]
    phi = hermitian_part(phi_u)
    trace_scale = np.real(np.trace(phi, axis1=-2, axis2=-1)) / L
    load = loading * (trace_scale + ABS_LOADING)
    phi = phi + load[..., None, None] * np.eye(L)
    num = np.linalg.solve(phi, gamma[..., None])[..., 0]
    denom = np.einsum("...l,...l->...", np.conj(gamma), num)
    gnorm2 = np.sum(np.abs(gamma) ** 2, axis=-1)
    threshold = DENOM_TOL * gnorm2 / (trace_scale + load + _TINY)
    return _finish(num, gamma, denom, threshold)


def solve_mvdr_from_inverse(phi_inv: np.ndarray, gamma: np.ndarray) -> FilterSolution:
    """MVDR weights from a (possibly estimated) inverse correlation matrix."""
    phi_inv = np.asarray(phi_inv, dtype=np.complex128)
    gamma = np.asarray(gamma, dtype=np.complex128)
    _check_inputs(phi_inv, gamma)
    a = hermitian_part(phi_inv)
    num = np.einsum("...ij,...j->...i", a, gamma)
    denom = np.einsum("...l,...l->...", np.conj(gamma), num)
    gnorm2 = np.sum(np.abs(gamma) ** 2, axis=-1)
    threshold = DENOM_TOL * gnorm2 * np.linalg.norm(a, axis=(-2, -1)) + _TINY
    return _finish(num, gamma, denom, threshold)


def apply_filter(w, y: np.ndarray) -> np.ndarray:
    """``w^H y`` over the last axis."""
    w = w.w if isinstance(w, FilterSolution) else np.asarray(w)
    y = np.asarray(y)
    if w.shape[-1] != y.shape[-1]:
        raise ValueError(f"length mismatch: w has {w.shape[-1]}, y has {y.shape[-1]}")
    return np.einsum("...l,...l->...", np.conj(w), y)


# ---------------------------------------------------------------- differentiable path

def mvdr_from_inverse_torch(a_re, a_im, g_re, g_im, y_re, y_im):
    """Filter output ``w^H y`` on paired real tensors.

    ``a_*`` have shape (..., L, L), ``g_*`` and ``y_*`` shape (..., L). ``a`` is
    symmetrized first. Returns (re, im) of the enhanced coefficient; frames with
    a vanishing denominator pass ``y[..., 0]`` through.
    """
    a_re = 0.5 * (a_re + a_re.transpose(-1, -2))
    a_im = 0.5 * (a_im - a_im.transpose(-1, -2))
    # num = A gamma
    n_re = (a_re @ g_re[..., None] - a_im @ g_im[..., None])[..., 0]
    n_im = (a_re @ g_im[..., None] + a_im @ g_re[..., None])[..., 0]
    # denom = gamma^H A gamma (real for Hermitian A)
    den = (g_re * n_re + g_im * n_im).sum(-1)
    # w^H y = num^H y / denom
    o_re = (n_re * y_re + n_im * y_im).sum(-1)
    o_im = (n_re * y_im - n_im * y_re).sum(-1)
    gnorm2 = (g_re ** 2 + g_im ** 2).sum(-1)
    anorm = torch.sqrt((a_re ** 2 + a_im ** 2).sum((-2, -1)))
    solved = den.abs() > DENOM_TOL * gnorm2 * anorm + 1e-30
    safe = torch.where(solved, den, torch.ones_like(den))
    out_re = torch.where(solved, o_re / safe, y_re[..., 0])
    out_im = torch.where(solved, o_im / safe, y_im[..., 0])
    return out_re, out_im


# ---------------------------------------------------------------- pipeline

class OracleSource:
    """Filter parameters computed from the true scene components."""

    kind = "corr"

    def __init__(self, clean_spec: Spectrogram, echo_spec: Spectrogram,
                 noise_spec: Spectrogram, smoothing: float = DEFAULT_SMOOTHING):
        self.clean = clean_spec
        self.echo = echo_spec
        self.noise = noise_spec
        self.smoothing = smoothing

    def parameters(self, noisy_spec, far_spec, L: int):
        phi_u = oracle_undesired_corr(self.echo, self.noise, L, self.smoothing)
        gamma = oracle_ifc(self.clean, L, self.smoothing)
        return phi_u, gamma


def enhance(noisy_spec: Spectrogram, far_spec: Spectrogram, source, L: int,
            loading: float = DEFAULT_LOADING) -> Waveform:
    """Filter the noisy spectrogram with parameters from ``source``.

    ``source.kind`` is ``"corr"`` (returns the undesired correlation) or
    ``"inverse"`` (returns its inverse directly).
    """
    if far_spec is not None and far_spec.num_frames != noisy_spec.num_frames:
        raise ValueError("noisy and far-end spectrograms differ in frame count")
    mat, gamma = source.parameters(noisy_spec, far_spec, L)
    if source.kind == "corr":
        sol = solve_mvdr(mat, gamma, loading)
    elif source.kind == "inverse":
        sol = solve_mvdr_from_inverse(mat, gamma)
    else:
        raise ValueError(f"unknown parameter kind {source.kind!r}")
    est = apply_filter(sol, stack_frames(noisy_spec, L))
    return synthesize(Spectrogram(est, noisy_spec.config, noisy_spec.sample_rate))
