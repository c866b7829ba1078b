"""Feature extractors: dual-stream emotion, content and voiceprint encoders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import signal
from .errors import TooShort
from .nnblocks import TCN, ConformerBlock, TransformerBlock, align_frames_torch, freeze

EMOTION_DIM = 256
CONTENT_DIM = 256
VOICEPRINT_DIM = 512


@dataclass
class EmotionFeatures:
    E: Tensor  # T x 256
    E_t_stream: Tensor  # T x d_t
    E_f_stream: Tensor  # T x d_f
    logits: Tensor  # M

    @property
    def pooled(self) -> Tensor:
        return self.E.mean(dim=-2)


@dataclass
class ContentFeatures:
    C: Tensor  # T x 256

    @property
    def pooled(self) -> Tensor:
        return self.C.mean(dim=-2)


@dataclass
class VoiceprintFeature:
    V: Tensor  # 512, unit norm


@dataclass
class ClipInputs:
    """Tensors derived from one clip, shared by all three extractors."""

    waveform: Tensor
    mel: Tensor
    T: int

    @classmethod
    def from_clip(cls, clip: signal.AudioClip, dtype=torch.float32, n_mels: int = signal.N_MELS):
        if len(clip.samples) < clip.samples_per_frame:
            raise TooShort(f"clip of {len(clip.samples)} samples is shorter than one video frame")
        if clip.sample_rate != signal.SAMPLE_RATE:
            clip = signal.resample_audio(clip, signal.SAMPLE_RATE)
        mel = signal.mel_spectrogram(clip, n_mels=n_mels).frames
        return cls(torch.tensor(clip.samples, dtype=dtype),
                   torch.as_tensor(mel, dtype=dtype), clip.num_frames)


def _mel_frontend(n_mels: int, width: int) -> nn.Sequential:
    return nn.Sequential(nn.LayerNorm(n_mels), nn.Linear(n_mels, width))


class EmotionExtractor(nn.Module):
    """Temporal stream (frozen TCN + transformer) and frequency stream
    (log-mel + KAN-conformer), concatenated and projected to 256 dims."""

    def __init__(self, num_emotions: int, width: int = 256, heads: int = 4, blocks: int = 2,
                 tcn_channels: int = 32, n_mels: int = signal.N_MELS, period: int = 30):
        super().__init__()
        self.tcn = freeze(TCN(tcn_channels))
        self.t_in = nn.Sequential(nn.LayerNorm(tcn_channels), nn.Linear(tcn_channels, width))
        self.t_blocks = nn.ModuleList(TransformerBlock(width, heads) for _ in range(blocks))
        self.f_in = _mel_frontend(n_mels, width)
        self.f_blocks = nn.ModuleList(ConformerBlock(width, heads) for _ in range(blocks))
        self.proj = nn.Linear(2 * width, EMOTION_DIM)
        self.classifier = nn.Linear(EMOTION_DIM, num_emotions)

    def forward(self, inputs: ClipInputs) -> EmotionFeatures:
        et = self.t_in(self.tcn(inputs.waveform))
        for block in self.t_blocks:
            et = block(et)
        et = align_frames_torch(et, inputs.T)
        ef = self.f_in(align_frames_torch(inputs.mel, inputs.T))
        for block in self.f_blocks:
            ef = block(ef)
        E = self.proj(torch.cat([et, ef], dim=-1))
        return EmotionFeatures(E, et, ef, self.classifier(E.mean(dim=-2)))


class ContentExtractor(nn.Module):
    """Frozen conv stack, trainable transformer encoder and projection to 256."""

    def __init__(self, width: int = 256, heads: int = 4, blocks: int = 2, tcn_channels: int = 32):
        super().__init__()
        self.conv = freeze(TCN(tcn_channels))
        self.feature_proj = nn.Sequential(nn.LayerNorm(tcn_channels), nn.Linear(tcn_channels, width))
        self.blocks = nn.ModuleList(TransformerBlock(width, heads) for _ in range(blocks))
        self.proj = nn.Linear(width, CONTENT_DIM)

    def forward(self, inputs: ClipInputs) -> ContentFeatures:
        x = self.feature_proj(self.conv(inputs.waveform))
        for block in self.blocks:
            x = block(x)
        return ContentFeatures(align_frames_torch(self.proj(x), inputs.T))


class VoiceprintExtractor(nn.Module):
    """Small speaker encoder over log-mel frames, mean-pooled and L2-normalised."""

    def __init__(self, width: int = 128, heads: int = 4, blocks: int = 1, n_mels: int = signal.N_MELS):
        super().__init__()
        self.f_in = nn.LayerNorm(n_mels)
        self.conv1 = nn.Conv1d(n_mels, width, 5, padding=2)
        self.conv2 = nn.Conv1d(width, width, 5, padding=2, stride=2)
        self.blocks = nn.ModuleList(TransformerBlock(width, heads) for _ in range(blocks))
        self.proj = nn.Linear(width, VOICEPRINT_DIM)

    def embed(self, inputs: ClipInputs) -> Tensor:
        """Unnormalised pooled embedding."""
        x = self.f_in(inputs.mel).transpose(-1, -2).unsqueeze(0)
        x = F.gelu(self.conv2(F.gelu(self.conv1(x))))
        x = x.squeeze(0).transpose(-1, -2)
        for block in self.blocks:
            x = block(x)
        return self.proj(x.mean(dim=-2))

    def forward(self, inputs: ClipInputs) -> VoiceprintFeature:
        return VoiceprintFeature(F.normalize(self.embed(inputs), dim=-1, eps=1e-12))


def _inputs(clip, like: nn.Module) -> ClipInputs:
    if isinstance(clip, ClipInputs):
        return clip
    dtype = next(like.parameters()).dtype
    return ClipInputs.from_clip(clip, dtype)


def extract_emotion(clip, extractor: EmotionExtractor) -> EmotionFeatures:
    return extractor(_inputs(clip, extractor))


def extract_content(clip, extractor: ContentExtractor) -> ContentFeatures:
    return extractor(_inputs(clip, extractor))


def extract_voiceprint(clip, extractor: VoiceprintExtractor) -> VoiceprintFeature:
    return extractor(_inputs(clip, extractor))
