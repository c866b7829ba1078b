"""The assembled speech-to-blendshape model and its checkpoint format."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .blendshapes import DEFAULT_PARTITION, Partition
from .decoder import PartitionedDecoder
from .encoders import ContentExtractor, EmotionExtractor, VoiceprintExtractor
from .errors import IncompatibleCheckpoint
from .esmm import STYLE_DIM
from .losses import Margin
from .nnblocks import CHECKPOINT_VERSION, load_state, save_state

STYLE_PROJ_DIM = 256


@dataclass
class ModelConfig:
    emotion_names: tuple = ("neutral", "angry")
    width: int = 256
    heads: int = 4
    blocks: int = 2
    tcn_channels: int = 32
    voice_width: int = 128
    period: int = 30
    margin_init: float = 1.0
    partition: dict = field(default_factory=DEFAULT_PARTITION.to_json)

    def __post_init__(self):
        self.emotion_names = tuple(self.emotion_names)
        if min(self.width, self.heads, self.blocks, self.tcn_channels, self.voice_width, self.period) < 1:
            raise ValueError("model hyperparameters must be positive")

    @property
    def num_emotions(self) -> int:
        return len(self.emotion_names)

    def to_json(self) -> dict:
        d = asdict(self)
        d["emotion_names"] = list(self.emotion_names)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


class PESTalkModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.emotion = EmotionExtractor(c.num_emotions, c.width, c.heads, c.blocks, c.tcn_channels, period=c.period)
        self.content = ContentExtractor(c.width, c.heads, c.blocks, c.tcn_channels)
        self.voiceprint = VoiceprintExtractor(c.voice_width, c.heads)
        self.style_proj = nn.Linear(STYLE_DIM, STYLE_PROJ_DIM)
        self.decoder = PartitionedDecoder(Partition.from_json(c.partition), c.width, c.heads, c.blocks, c.period)
        self.margin = Margin(c.margin_init)

    @property
    def partition(self) -> Partition:
        return self.decoder.partition

    def frozen_parameters(self) -> dict:
        return {n: p for n, p in self.named_parameters() if not p.requires_grad}

    def trainable_parameters(self) -> list:
        """Parameters updated by the main objective (voiceprint encoder excluded)."""
        return [p for n, p in self.named_parameters() if p.requires_grad and not n.startswith("voiceprint.")]

    def style_rows(self, S, T: int) -> torch.Tensor:
        """Project a 768-dim library entry and repeat it over ``T`` frames."""
        dtype = self.style_proj.weight.dtype
        s = self.style_proj(torch.as_tensor(np.asarray(S), dtype=dtype))
        return s.unsqueeze(0).expand(T, -1)

    def project_style(self, S) -> np.ndarray:
        with torch.no_grad():
            return self.style_rows(S, 1)[0].double().numpy()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.state_dict().items()):
            h.update(k.encode())
            h.update(v.detach().cpu().numpy().astype(np.float32).tobytes())
        return h.hexdigest()[:16]


def save_checkpoint(model: PESTalkModel, path) -> None:
    """Write ``model.npz`` and ``model.json`` into the directory ``path``."""
    path = Path(path) / "model"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_state(model, path, {"model": model.config.to_json(), "model_version": model.fingerprint()})


def load_checkpoint(path) -> PESTalkModel:
    path = Path(path)
    if path.is_dir():
        path = path / "model"
    try:
        state, hyper, version = load_state(path)
    except FileNotFoundError as exc:
        raise IncompatibleCheckpoint(f"no checkpoint at {path}: {exc}") from exc
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    model = PESTalkModel(ModelConfig.from_json(hyper["model"]))
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise IncompatibleCheckpoint(f"checkpoint does not match its configuration: {exc}") from exc
    model.eval()
    return model
