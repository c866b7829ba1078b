"""Training loop and inference pipeline."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import signal
from .blendshapes import BlendshapeSequence, assemble
from .decoder import DecoderInputs
from .encoders import ClipInputs
from .errors import IncompatibleCheckpoint, NumericalError
from .esmm import StyleLibrary, build_base_styles, persist_library, retrieve_style
from .losses import (LossWeights, classification_loss, disentanglement_loss, motion_loss,
                     pairwise_margin_loss, position_loss, total_loss)
from .model import ModelConfig, PESTalkModel, save_checkpoint
from .synthdata import Manifest, match_pairs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 2
    learning_rate: float = 1e-4
    epochs: int = 1
    max_steps: Optional[int] = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    dis_orientation: str = "corrected"
    voiceprint_steps: int = 300
    voiceprint_lr: float = 1e-3
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size counts clips and must be a positive even number (neutral/emotional pairs)")
        if self.learning_rate <= 0 or self.epochs < 1 or (self.max_steps is not None and self.max_steps < 1):
            raise ValueError("learning rate, epochs and max_steps must be positive")
        if self.dis_orientation not in ("corrected", "literal"):
            raise ValueError("dis_orientation must be 'corrected' or 'literal'")

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ClipData:
    record: object
    inputs: ClipInputs
    gt: torch.Tensor
    label: int
    voiceprint: Optional[np.ndarray] = None


@dataclass
class TrainResult:
    model: PESTalkModel
    library: StyleLibrary
    history: list
    voiceprint_history: list = field(default_factory=list)


def load_clips(manifest: Manifest, emotion_names, dtype=torch.float32) -> dict:
    """Read audio, features and targets for every record, keyed by clip id."""
    index = {e: i for i, e in enumerate(emotion_names)}
    out = {}
    for rec in manifest.records:
        clip = rec.audio(manifest.root)
        gt = rec.blendshapes(manifest.root).coeffs
        inputs = ClipInputs.from_clip(clip, dtype)
        if gt.shape[0] != inputs.T:
            raise ValueError(f"{rec.clip_id}: {gt.shape[0]} blendshape rows for {inputs.T} audio frames")
        out[rec.clip_id] = ClipData(rec, inputs, torch.as_tensor(gt, dtype=dtype), index[rec.emotion_id])
    return out


def pretrain_voiceprint(model: PESTalkModel, clips: list, steps: int, lr: float = 1e-3,
                        rng: Optional[np.random.Generator] = None, scale: float = 10.0) -> list:
    """Fit the voiceprint encoder as a speaker classifier with a cosine-softmax head.

    Stands in for a pretrained speaker-recognition model; afterwards the
    encoder is left untouched by the main objective.
    """
    rng = rng or np.random.default_rng(0)
    speakers = sorted({c.record.speaker_id for c in clips})
    if len(speakers) < 2 or steps <= 0:
        return []
    sid = {s: i for i, s in enumerate(speakers)}
    enc = model.voiceprint
    dtype = next(enc.parameters()).dtype
    centers = torch.nn.Parameter(torch.randn(len(speakers), enc.proj.out_features, dtype=dtype))
    opt = torch.optim.Adam(list(enc.parameters()) + [centers], lr=lr)
    enc.train()
    history = []
    for _ in range(steps):
        batch = [clips[k] for k in rng.choice(len(clips), size=min(4, len(clips)), replace=False)]
        V = torch.stack([enc(c.inputs).V for c in batch])
        logits = scale * V @ F.normalize(centers, dim=-1).T
        loss = F.cross_entropy(logits, torch.tensor([sid[c.record.speaker_id] for c in batch]))
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    enc.eval()
    return history


@torch.no_grad()
def build_library(model: PESTalkModel, clips: list) -> StyleLibrary:
    """Base styles from voiceprints, entries from time-pooled emotion features."""
    model.eval()
    by_speaker = {}
    for c in clips:
        if c.voiceprint is None:
            c.voiceprint = model.voiceprint(c.inputs).V.double().numpy()
        by_speaker.setdefault(c.record.speaker_id, []).append(c.voiceprint)
    library = StyleLibrary(build_base_styles(by_speaker), model.config.emotion_names)
    for c in clips:
        library.add(c.record.speaker_id, c.record.emotion_id, model.emotion(c.inputs).pooled.double().numpy())
    return library


def _clip_forward(model: PESTalkModel, c: ClipData, library: StyleLibrary):
    ef = model.emotion(c.inputs)
    cf = model.content(c.inputs)
    style = retrieve_style(ef.pooled.detach().double().numpy(), c.voiceprint, library)
    S = model.style_rows(style.S, c.inputs.T)
    pred = model.decoder(DecoderInputs(cf.C, ef.E, S))
    return ef, cf, pred


def _step_losses(model, batch, library, config: TrainConfig):
    preds, gts, logits, labels, pooled = [], [], [], [], {"E": [], "C": []}
    for c in batch:
        ef, cf, pred = _clip_forward(model, c, library)
        preds.append(pred)
        gts.append(c.gt)
        logits.append(ef.logits)
        labels.append(c.label)
        pooled["E"].append(ef.pooled)
        pooled["C"].append(cf.pooled)
    L_pos = position_loss(torch.cat(preds), torch.cat(gts))
    frames = sum(p.shape[0] - 1 for p in preds)
    L_mot = sum(motion_loss(p, g) * (p.shape[0] - 1) for p, g in zip(preds, gts)) / frames
    L_cls = classification_loss(torch.stack(logits), labels)
    half = len(batch) // 2
    E, C = torch.stack(pooled["E"]), torch.stack(pooled["C"])
    L_dis = disentanglement_loss(E[:half], E[half:], C[:half], C[half:], config.dis_orientation)
    comps = {"L_pos": L_pos, "L_mot": L_mot, "L_cls": L_cls, "L_dis": L_dis}
    if config.weights.margin > 0:
        comps["L_margin"] = pairwise_margin_loss(C[:half], C[half:], E[:half], E[half:], model.margin())
    return comps, pooled


def train(manifest: Manifest, config: TrainConfig = TrainConfig(), out_dir=None,
          clips: Optional[dict] = None, log_every: int = 0) -> TrainResult:
    """Optimise the model on content-matched neutral/emotional pairs of ``manifest``.

    Each step consumes ``batch_size // 2`` pairs. The style library is rebuilt
    from the current encoders at every epoch boundary and updated with each
    step's pooled emotion features in between. Retrieval is a constant lookup
    for gradient purposes.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    train_manifest = manifest.split("train") if any(r.split == "train" for r in manifest.records) else manifest
    emotions = manifest.emotion_names or tuple(sorted({r.emotion_id for r in train_manifest.records}))
    model = PESTalkModel(ModelConfig(emotion_names=emotions, **config.model))
    if clips is None:
        clips = load_clips(train_manifest, emotions)
    clips = {k: v for k, v in clips.items() if k in {r.clip_id for r in train_manifest.records}}
    pairs, _ = match_pairs(train_manifest)
    if not pairs:
        raise ValueError("manifest yields no neutral/emotional pairs")

    clip_list = [clips[k] for k in sorted(clips)]
    for c in clip_list:
        c.voiceprint = None
    vp_history = pretrain_voiceprint(model, clip_list, config.voiceprint_steps, config.voiceprint_lr, rng)
    library = build_library(model, clip_list)

    params = model.trainable_parameters()
    opt = torch.optim.Adam(params, lr=config.learning_rate, betas=(0.9, 0.999))
    per_batch = config.batch_size // 2
    steps_per_epoch = math.ceil(len(pairs) / per_batch)
    total_steps = config.max_steps or config.epochs * steps_per_epoch
    history, step = [], 0
    log_fh = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_fh = open(Path(out_dir) / "train_log.jsonl", "w")
    last_good = copy.deepcopy(model.state_dict())
    try:
        while step < total_steps:
            if step > 0:
                library = build_library(model, clip_list)
            model.train()
            order = rng.permutation(len(pairs))
            for start in range(0, len(order), per_batch):
                if step >= total_steps:
                    break
                chosen = [pairs[k] for k in order[start : start + per_batch]]
                batch = [clips[n.clip_id] for n, _ in chosen] + [clips[e.clip_id] for _, e in chosen]
                comps, pooled = _step_losses(model, batch, library, config)
                total, entry = total_loss(comps, config.weights)
                if not math.isfinite(float(total)):
                    model.load_state_dict(last_good)
                    if out_dir is not None:
                        save_checkpoint(model, Path(out_dir))
                    raise NumericalError(f"non-finite loss at step {step + 1}; restored last good parameters")
                last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
                opt.zero_grad()
                total.backward()
                opt.step()
                step += 1
                entry = {"step": step, **entry, "delta": float(model.margin())}
                history.append(entry)
                if log_fh:
                    log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                if log_every and step % log_every == 0:
                    log.info("step %d: %s", step, {k: round(v, 4) for k, v in entry.items()})
                for c, e in zip(batch, pooled["E"]):
                    library.add(c.record.speaker_id, c.record.emotion_id, e.detach().double().numpy())
    finally:
        if log_fh:
            log_fh.close()
    library = build_library(model, clip_list)
    model.eval()
    if out_dir is not None:
        save_checkpoint(model, Path(out_dir))
        persist_library(library, Path(out_dir) / "library.json")
    return TrainResult(model, library, history, vp_history)


def check_compatible(model: PESTalkModel, library: StyleLibrary) -> None:
    extra = set(library.emotion_names) - set(model.config.emotion_names)
    if extra:
        raise IncompatibleCheckpoint(f"library has emotions {sorted(extra)} unknown to the checkpoint")


@torch.no_grad()
def infer(clip, model: PESTalkModel, library: StyleLibrary, smooth: bool = False, return_style: bool = False):
    """Blendshape track for ``clip``; with ``return_style`` also the retrieved style entry."""
    check_compatible(model, library)
    model.eval()
    inputs = clip if isinstance(clip, ClipInputs) else ClipInputs.from_clip(clip, model.style_proj.weight.dtype)
    ef = model.emotion(inputs)
    V = model.voiceprint(inputs).V.double().numpy()
    style = retrieve_style(ef.pooled.double().numpy(), V, library, model.project_style)
    cf = model.content(inputs)
    S = model.style_rows(style.S, inputs.T)
    lower = model.decoder.lower(cf.C, S).double().numpy()
    upper = model.decoder.upper(ef.E, S).double().numpy()
    seq = assemble(lower, upper, model.partition)
    if smooth and seq.num_frames >= 5:
        seq = BlendshapeSequence(signal.savgol_smooth(seq.coeffs, 5, 2), partition=model.partition)
    return (seq, style) if return_style else seq


@torch.no_grad()
def classification_accuracy(model: PESTalkModel, clips) -> float:
    model.eval()
    clips = list(clips)
    hits = sum(int(model.emotion(c.inputs).logits.argmax()) == c.label for c in clips)
    return hits / len(clips)
