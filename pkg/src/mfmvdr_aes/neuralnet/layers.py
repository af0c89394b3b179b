from __future__ import annotations

import math

import torch
from torch import Tensor, nn
from torch.nn import functional as F


def autodiff_backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable leaf."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if loss.requires_grad:
        loss.backward()


def _uniform_fan_in(t: Tensor, fan_in: int, gain: float = 1.0) -> None:
    bound = gain / math.sqrt(fan_in)
    nn.init.uniform_(t, -bound, bound)


class CausalConv1d(nn.Module):
    """Dilated 1-D convolution, left-padded so output frame t sees only frames <= t.

    Input (batch, channels, time) or (channels, time).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 dilation: int = 1, bias: bool = True):
        super().__init__()
        if kernel_size < 1 or dilation < 1:
            raise ValueError("kernel_size and dilation must be >= 1")
        self.in_channels = in_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        _uniform_fan_in(self.weight, in_channels * kernel_size)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x[None]
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        x = F.pad(x, ((self.kernel_size - 1) * self.dilation, 0))
        # conv1d correlates forward in time; flip taps so weight[..., j] hits x[t - j*d]
        out = F.conv1d(x, self.weight.flip(-1), self.bias, dilation=self.dilation)
        return out[0] if squeeze else out


class ChannelNorm(nn.Module):
    """Layer normalization over the channel axis of (batch, channels, time)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class TCNBlock(nn.Module):
    """Residual block ``x + norm(prelu(conv(x)))``.

    A 1x1 projection is used on the residual path when channel counts differ.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 dilation: int = 1):
        super().__init__()
        self.conv = CausalConv1d(in_channels, out_channels, kernel_size, dilation)
        self.act = nn.PReLU(num_parameters=1, init=0.25)
        self.norm = ChannelNorm(out_channels)
        self.skip = (None if in_channels == out_channels
                     else CausalConv1d(in_channels, out_channels, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        res = x if self.skip is None else self.skip(x)
        return res + self.norm(self.act(self.conv(x)))


class TCN(nn.Module):
    """Stack of residual blocks with dilations 1, 2, 4, ..."""

    def __init__(self, in_channels: int, hidden: int, num_blocks: int,
                 kernel_size: int = 3):
        super().__init__()
        self.kernel_size = kernel_size
        self.blocks = nn.ModuleList(
            TCNBlock(in_channels if i == 0 else hidden, hidden, kernel_size, 2 ** i)
            for i in range(num_blocks))

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def receptive_field(num_blocks: int, kernel_size: int = 3) -> int:
    return 1 + (kernel_size - 1) * sum(2 ** i for i in range(num_blocks))


class GRULayer(nn.Module):
    """Single GRU layer with zero initial state; (batch, time, features) in and out.

    Gate layout follows ``torch.nn.GRU``: its update gate ``z`` keeps the old
    state, ``h_t = (1 - z) * n_t + z * h_{t-1}``.
    """

    def __init__(self, input_size: int, hidden: int):
        super().__init__()
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        self.hidden = hidden
        self.gru = nn.GRU(input_size, hidden, batch_first=True)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x[None]
        out, _ = self.gru(x)
        return out[0] if squeeze else out


class ComplexGRU(nn.Module):
    """Two real GRUs combined by complex multiplication.

    ``F_r = GRU_r(x_r) - GRU_i(x_i)``, ``F_i = GRU_i(x_r) + GRU_r(x_i)``.
    """

    def __init__(self, input_size: int, hidden: int):
        super().__init__()
        self.gru_r = GRULayer(input_size, hidden)
        self.gru_i = GRULayer(input_size, hidden)

    @staticmethod
    def combine(f_rr: Tensor, f_ii: Tensor, f_ri: Tensor, f_ir: Tensor):
        return f_rr - f_ii, f_ri + f_ir

    def forward(self, x_r: Tensor, x_i: Tensor):
        if x_r.shape != x_i.shape:
            raise ValueError(f"real/imag shapes differ: {x_r.shape} vs {x_i.shape}")
        if x_r.dim() == 2:
            f_r, f_i = self(x_r[None], x_i[None])
            return f_r[0], f_i[0]
        n = x_r.shape[0]
        both = torch.cat([x_r, x_i], dim=0)
        out_r = self.gru_r(both)
        out_i = self.gru_i(both)
        f_rr, f_ir = out_r[:n], out_r[n:]
        f_ri, f_ii = out_i[:n], out_i[n:]
        return self.combine(f_rr, f_ii, f_ri, f_ir)


class FullyConnected(nn.Module):
    def __init__(self, in_features: int, out_features: int, activation: str = "none"):
        super().__init__()
        if out_features < 1:
            raise ValueError("out_features must be >= 1")
        if activation not in ("none", "sigmoid"):
            raise ValueError(f"unknown activation {activation!r}")
        self.linear = nn.Linear(in_features, out_features)
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        out = self.linear(x)
        return torch.sigmoid(out) if self.activation == "sigmoid" else out
