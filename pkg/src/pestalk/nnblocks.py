"""Neural building blocks: KAN layers, biased attention, conformer and transformer blocks, TCN."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import BadDims, FormatError, NumericalError, TooShort


def periodic_positional_encoding(T: int, d: int, period: int = 30, dtype=torch.float32) -> Tensor:
    """Sinusoidal encoding evaluated at ``t mod period``."""
    if d % 2:
        raise BadDims(f"encoding width must be even, got {d}")
    if period < 1:
        raise ValueError("period must be >= 1")
    pos = (torch.arange(T, dtype=torch.float64) % period)[:, None]
    div = torch.pow(10000.0, torch.arange(0, d, 2, dtype=torch.float64) / d)
    pe = torch.zeros(T, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos / div)
    pe[:, 1::2] = torch.cos(pos / div)
    return pe.to(dtype)


@dataclass(frozen=True)
class AttentionBias:
    bias: Tensor  # heads x T x T
    slopes: Tensor  # heads


def alibi_slopes(heads: int) -> Tensor:
    return torch.pow(2.0, -8.0 * torch.arange(1, heads + 1, dtype=torch.float64) / heads)


def build_attention_bias(T: int, heads: int, dtype=torch.float32) -> AttentionBias:
    """Symmetric linear distance penalty, ``-slope_h * |i - j|``."""
    if heads < 1:
        raise ValueError("heads must be >= 1")
    slopes = alibi_slopes(heads)
    idx = torch.arange(T, dtype=torch.float64)
    dist = (idx[None, :] - idx[:, None]).abs()
    bias = -slopes[:, None, None] * dist[None]
    return AttentionBias(bias.to(dtype), slopes.to(dtype))


def align_frames_torch(x: Tensor, T: int) -> Tensor:
    """Endpoint-preserving linear interpolation of a ``(..., F, d)`` tensor to ``T`` rows."""
    F_ = x.shape[-2]
    if F_ == T:
        return x
    if T == 1:
        return x[..., :1, :]
    if F_ == 1:
        return x.expand(*x.shape[:-2], T, x.shape[-1])
    lead = x.shape[:-2]
    y = x.reshape(-1, F_, x.shape[-1]).transpose(1, 2)
    y = F.interpolate(y, size=T, mode="linear", align_corners=True)
    return y.transpose(1, 2).reshape(*lead, T, x.shape[-1])


class KANLayer(nn.Module):
    """Dense layer whose edges carry learnable B-spline activations.

    ``y_j = sum_i w_base[j,i] silu(x_i) + w_spline[j,i] sum_m c[j,i,m] B_m(x_i)``
    with knots ``grid_size`` points uniformly on ``[-1, 1]``, extended by
    ``spline_order`` knots on each side. Inputs are clamped to ``[-1, 1]``
    before the spline branch.
    """

    def __init__(self, in_dim: int, out_dim: int, grid_size: int = 5, spline_order: int = 3):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.grid_size, self.spline_order = grid_size, spline_order
        h = 2.0 / (grid_size - 1)
        knots = torch.arange(-spline_order, grid_size + spline_order, dtype=torch.float64) * h - 1.0
        self.register_buffer("knots", knots)
        n_basis = grid_size + spline_order - 1
        self.coef = nn.Parameter(torch.randn(out_dim, in_dim, n_basis) * 0.1)
        self.base_weight = nn.Parameter(torch.empty(out_dim, in_dim))
        self.spline_weight = nn.Parameter(torch.ones(out_dim, in_dim))
        nn.init.kaiming_uniform_(self.base_weight, a=math.sqrt(5))

    @property
    def grid(self) -> Tensor:
        return self.knots[self.spline_order : self.spline_order + self.grid_size]

    def basis(self, x: Tensor) -> Tensor:
        """B-spline basis values, shape ``(..., in_dim, n_basis)`` (Cox-de Boor)."""
        t = self.knots.to(x.dtype)
        x = x.clamp(-1.0, 1.0).unsqueeze(-1)
        b = ((x >= t[:-1]) & (x < t[1:])).to(x.dtype)
        for k in range(1, self.spline_order + 1):
            left = (x - t[: -k - 1]) / (t[k:-1] - t[: -k - 1])
            right = (t[k + 1 :] - x) / (t[k + 1 :] - t[1:-k])
            b = left * b[..., :-1] + right * b[..., 1:]
        return b

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise BadDims(f"KAN layer expects {self.in_dim} inputs, got {x.shape[-1]}")
        base = F.linear(F.silu(x), self.base_weight)
        weighted = self.coef * self.spline_weight.unsqueeze(-1)
        spline = torch.einsum("...im,oim->...o", self.basis(x), weighted)
        return base + spline


def kan_forward(x, layer: KANLayer) -> Tensor:
    x = torch.as_tensor(x, dtype=layer.coef.dtype)
    return layer(x)


class BiasedSelfAttention(nn.Module):
    """Multi-head self-attention with an optional additive ``heads x T x T`` bias."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads:
            raise BadDims(f"width {d_model} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: Tensor, bias: Optional[Tensor] = None) -> Tensor:
        *lead, T, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        split = lambda t: t.reshape(*lead, T, self.heads, d // self.heads).transpose(-3, -2)
        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        if bias is not None:
            scores = scores + bias.to(scores.dtype)
        y = torch.softmax(scores, dim=-1) @ v
        return self.out(y.transpose(-3, -2).reshape(*lead, T, d))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(d_model, hidden), nn.GELU(), nn.Linear(hidden, d_model))

    def forward(self, x):
        return self.net(x)


class KANFeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, grid_size: int = 5, spline_order: int = 3):
        super().__init__()
        self.up = KANLayer(d_model, hidden, grid_size, spline_order)
        self.down = KANLayer(hidden, d_model, grid_size, spline_order)

    def forward(self, x):
        return self.down(self.up(x))


class TransformerBlock(nn.Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, d_model: int, heads: int, ff_hidden: Optional[int] = None):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = BiasedSelfAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff_hidden or 2 * d_model)

    def forward(self, x: Tensor, bias: Optional[Tensor] = None) -> Tensor:
        x = x + self.attn(self.norm1(x), bias)
        return x + self.ff(self.norm2(x))


class ConvModule(nn.Module):
    """Pointwise conv + GLU, depthwise temporal conv, SiLU, pointwise conv."""

    def __init__(self, d_model: int, kernel_size: int = 7):
        super().__init__()
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel_size, padding=kernel_size // 2, groups=d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, 1)

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        y = x.reshape(-1, *x.shape[-2:]).transpose(1, 2)
        y = F.glu(self.pointwise_in(y), dim=1)
        y = self.pointwise_out(F.silu(self.depthwise(y)))
        return y.transpose(1, 2).reshape(*lead, *x.shape[-2:])


class ConformerBlock(nn.Module):
    """Conformer block whose two half-step feed-forward modules are KAN layers."""

    def __init__(self, d_model: int, heads: int, ff_hidden: Optional[int] = None,
                 kernel_size: int = 7, grid_size: int = 5, spline_order: int = 3):
        super().__init__()
        ff_hidden = ff_hidden or d_model
        self.heads = heads
        self.ff1_norm = nn.LayerNorm(d_model)
        self.ff1 = KANFeedForward(d_model, ff_hidden, grid_size, spline_order)
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = BiasedSelfAttention(d_model, heads)
        self.conv_norm = nn.LayerNorm(d_model)
        self.conv = ConvModule(d_model, kernel_size)
        self.ff2_norm = nn.LayerNorm(d_model)
        self.ff2 = KANFeedForward(d_model, ff_hidden, grid_size, spline_order)
        self.final_norm = nn.LayerNorm(d_model)

    def residual_branches(self):
        return [self.ff1, self.attn, self.conv, self.ff2]

    def forward(self, x: Tensor, bias: Optional[Tensor] = None) -> Tensor:
        if bias is None:
            bias = build_attention_bias(x.shape[-2], self.heads, x.dtype).bias
        x = x + 0.5 * self.ff1(self.ff1_norm(x))
        x = x + self.attn(self.attn_norm(x), bias)
        x = x + self.conv(self.conv_norm(x))
        x = x + 0.5 * self.ff2(self.ff2_norm(x))
        out = self.final_norm(x)
        if not torch.isfinite(out).all():
            raise NumericalError("non-finite activation in conformer block")
        return out


def conformer_block(x, block: ConformerBlock) -> Tensor:
    return block(torch.as_tensor(x, dtype=block.final_norm.weight.dtype))


class TCN(nn.Module):
    """Stack of strided 1-D convolutions over the raw waveform.

    With kernels ``k_i`` and strides ``s_i`` the receptive field is
    ``k_1 + sum_i (k_{i+1} - 1) * prod_{j<=i} s_j`` and the output has
    ``floor((len - receptive_field) / hop) + 1`` frames, ``hop = prod s_i``.
    """

    def __init__(self, channels: int = 32, kernels: Sequence[int] = (10, 8, 4, 4),
                 strides: Sequence[int] = (5, 4, 4, 2)):
        super().__init__()
        if len(kernels) != len(strides):
            raise BadDims("kernels and strides must have equal length")
        layers, in_ch = [], 1
        for k, s in zip(kernels, strides):
            layers.append(nn.Conv1d(in_ch, channels, k, stride=s))
            in_ch = channels
        self.layers = nn.ModuleList(layers)
        self.kernels, self.strides = tuple(kernels), tuple(strides)
        self.out_channels = channels

    @property
    def hop(self) -> int:
        return int(np.prod(self.strides))

    @property
    def receptive_field(self) -> int:
        rf, jump = self.kernels[0], 1
        for k, s in zip(self.kernels[1:], self.strides[:-1]):
            jump *= s
            rf += (k - 1) * jump
        return rf

    def num_frames(self, n_samples: int) -> int:
        return (n_samples - self.receptive_field) // self.hop + 1

    def forward(self, waveform: Tensor) -> Tensor:
        """``(..., n_samples)`` -> ``(..., F, channels)``."""
        if waveform.shape[-1] < self.receptive_field:
            raise TooShort(f"{waveform.shape[-1]} samples < receptive field {self.receptive_field}")
        lead = waveform.shape[:-1]
        y = waveform.reshape(-1, 1, waveform.shape[-1])
        for conv in self.layers:
            y = F.gelu(conv(y))
        return y.transpose(1, 2).reshape(*lead, y.shape[-1], self.out_channels)


def tcn_forward(waveform, tcn: TCN) -> Tensor:
    return tcn(torch.as_tensor(waveform, dtype=tcn.layers[0].weight.dtype))


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_state(module: nn.Module, path, hyperparameters: dict) -> None:
    """Write ``<path>.npz`` (dotted name -> float32 array) and ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.ascontiguousarray(v.detach().cpu().numpy().astype(np.float32))
              for k, v in module.state_dict().items()}
    with open(path.with_suffix(".npz"), "wb") as fh:
        np.savez(fh, **arrays)
    meta = {"version": CHECKPOINT_VERSION, "hyperparameters": hyperparameters}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_state(path):
    """Return ``(state_dict, hyperparameters, version)`` from a checkpoint pair."""
    path = Path(path)
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt checkpoint sidecar: {exc.msg}", exc.pos) from exc
    try:
        with np.load(path.with_suffix(".npz")) as data:
            state = {k: torch.from_numpy(data[k].copy()) for k in data.files}
    except (ValueError, OSError) as exc:
        raise FormatError(f"corrupt checkpoint archive {path.with_suffix('.npz')}: {exc}") from exc
    return state, meta.get("hyperparameters", {}), meta.get("version")
