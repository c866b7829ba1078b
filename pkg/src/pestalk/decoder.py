"""Partitioned style-guided decoder: lower face from (C, S), upper face from (E, S)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .blendshapes import DEFAULT_PARTITION, BlendshapeSequence, Partition, assemble
from .errors import BadDims
from .nnblocks import FeedForward, TransformerBlock, build_attention_bias, periodic_positional_encoding

FEATURE_DIM = 256


@dataclass
class DecoderInputs:
    C: Tensor
    E: Tensor
    S: Tensor

    def __post_init__(self):
        if not (self.C.shape[-2] == self.E.shape[-2] == self.S.shape[-2]):
            raise BadDims(f"frame counts differ: C {self.C.shape}, E {self.E.shape}, S {self.S.shape}")


class RegionDecoder(nn.Module):
    """Fuse a driving feature with the style, add periodic positions, run
    ALiBi-biased self-attention blocks and map to sigmoid coefficients."""

    def __init__(self, out_channels: int, width: int = 256, heads: int = 4, blocks: int = 2,
                 period: int = 30, feature_dim: int = FEATURE_DIM):
        super().__init__()
        self.width, self.heads, self.period = width, heads, period
        self.fuse = nn.Linear(2 * feature_dim, width)
        self.blocks = nn.ModuleList(TransformerBlock(width, heads) for _ in range(blocks))
        self.norm = nn.LayerNorm(width)
        self.ff = FeedForward(width, 2 * width)
        self.head = nn.Linear(width, out_channels)

    def forward(self, feature: Tensor, style: Tensor) -> Tensor:
        if feature.shape[-2] != style.shape[-2]:
            raise BadDims(f"frame counts differ: {feature.shape} vs {style.shape}")
        T = feature.shape[-2]
        x = self.fuse(torch.cat([feature, style], dim=-1))
        x = x + periodic_positional_encoding(T, self.width, self.period, x.dtype)
        bias = build_attention_bias(T, self.heads, x.dtype).bias
        for block in self.blocks:
            x = block(x, bias)
        x = self.norm(x)
        x = x + self.ff(x)
        return torch.sigmoid(self.head(x))


class PartitionedDecoder(nn.Module):
    def __init__(self, partition: Partition = DEFAULT_PARTITION, width: int = 256, heads: int = 4,
                 blocks: int = 2, period: int = 30):
        super().__init__()
        self.partition = partition
        self.lower = RegionDecoder(len(partition.lower), width, heads, blocks, period)
        self.upper = RegionDecoder(len(partition.upper), width, heads, blocks, period)

    def forward(self, inputs: DecoderInputs) -> Tensor:
        """Full ``T x 52`` tensor (differentiable), channels in canonical order."""
        lower = self.lower(inputs.C, inputs.S)
        upper = self.upper(inputs.E, inputs.S)
        return scatter_halves(lower, upper, self.partition)


def scatter_halves(lower: Tensor, upper: Tensor, partition: Partition = DEFAULT_PARTITION) -> Tensor:
    order = torch.as_tensor(list(partition.lower) + list(partition.upper))
    inverse = torch.empty_like(order)
    inverse[order] = torch.arange(len(order))
    return torch.cat([lower, upper], dim=-1)[..., inverse]


def decode_lower(C: Tensor, S: Tensor, decoder: PartitionedDecoder) -> Tensor:
    return decoder.lower(C, S)


def decode_upper(E: Tensor, S: Tensor, decoder: PartitionedDecoder) -> Tensor:
    return decoder.upper(E, S)


def decode(inputs: DecoderInputs, decoder: PartitionedDecoder) -> BlendshapeSequence:
    lower = decode_lower(inputs.C, inputs.S, decoder).detach().cpu().numpy()
    upper = decode_upper(inputs.E, inputs.S, decoder).detach().cpu().numpy()
    return assemble(lower, upper, decoder.partition)
