"""Blendshape metrics (LBE, PBE, MBE, BA) and vertex metrics (LVE, EVE, FDD)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import signal
from .blendshapes import FPS, JAW_INDICES, MOUTH_INDICES, NUM_BLENDSHAPES
from .errors import BadDims, BadMask


@dataclass
class RegionConfig:
    """Channel and vertex index sets the metrics are measured on.

    Vertex sets left as ``None`` are filled from a mesh's region masks by
    :meth:`with_mesh_masks`.
    """

    lip_channels: Sequence[int] = MOUTH_INDICES
    pronunciation_channels: Sequence[int] = tuple(sorted(MOUTH_INDICES + JAW_INDICES))
    lip_vertices: Optional[Sequence[int]] = None
    eye_forehead_vertices: Optional[Sequence[int]] = None
    upper_face_vertices: Optional[Sequence[int]] = None
    ba_sigma: float = 0.1

    def __post_init__(self):
        for name in ("lip_channels", "pronunciation_channels"):
            idx = _mask(getattr(self, name), NUM_BLENDSHAPES, name)
            setattr(self, name, tuple(int(i) for i in idx))
        if self.ba_sigma <= 0:
            raise ValueError("ba_sigma must be positive")

    def with_mesh_masks(self, masks: dict) -> "RegionConfig":
        out = RegionConfig(**asdict(self))
        for name, key in (("lip_vertices", "lip"), ("eye_forehead_vertices", "eye_forehead"),
                          ("upper_face_vertices", "upper_face")):
            if getattr(out, name) is None and key in masks:
                setattr(out, name, tuple(int(i) for i in masks[key]))
        return out

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, (tuple, list)) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "RegionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown region config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "RegionConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def _mask(idx, size, name):
    if idx is None:
        raise BadMask(f"region {name} is not configured")
    idx = np.asarray(idx, dtype=int).reshape(-1)
    if idx.size == 0:
        raise BadMask(f"region {name} is empty")
    if idx.min() < 0 or idx.max() >= size:
        raise BadMask(f"region {name} has indices outside [0, {size})")
    return idx


def _coeffs(x):
    return np.asarray(getattr(x, "coeffs", x), dtype=np.float64)


def blendshape_metrics(pred, gt, regions: RegionConfig = RegionConfig()):
    """Return ``(lbe, pbe, mbe)``.

    LBE and PBE average the per-frame L2 norm of the error on the lip and
    pronunciation channels. MBE averages the per-frame largest absolute
    channel error.
    """
    p, g = _coeffs(pred), _coeffs(gt)
    if p.shape != g.shape or p.ndim != 2:
        raise BadDims(f"prediction {p.shape} and target {g.shape} differ in shape")
    err = p - g
    lip = _mask(regions.lip_channels, p.shape[1], "lip_channels")
    pron = _mask(regions.pronunciation_channels, p.shape[1], "pronunciation_channels")
    lbe = np.linalg.norm(err[:, lip], axis=1).mean()
    pbe = np.linalg.norm(err[:, pron], axis=1).mean()
    mbe = np.abs(err).max(axis=1).mean()
    return float(lbe), float(pbe), float(mbe)


def onset_envelope(clip: signal.AudioClip) -> tuple:
    """Spectral flux of the log-mel spectrogram; returns ``(envelope, frame_times)``."""
    mel = signal.mel_spectrogram(clip)
    flux = np.zeros(mel.num_frames)
    flux[1:] = np.clip(np.diff(mel.frames, axis=0), 0.0, None).sum(axis=1)
    return flux, np.arange(mel.num_frames) * mel.hop / clip.sample_rate


def audio_beats(clip: signal.AudioClip) -> np.ndarray:
    """Times (s) of local maxima of the onset envelope that exceed its mean."""
    env, times = onset_envelope(clip)
    if len(env) < 3:
        return np.zeros(0)
    mid = env[1:-1]
    peak = (mid > env[:-2]) & (mid >= env[2:]) & (mid > env.mean())
    return times[1:-1][peak]


def motion_beats(motion, channels, fps: int = FPS) -> np.ndarray:
    """Times (s) of local minima of the lip-channel speed.

    Speed sample ``t`` is the norm of the change between frames ``t`` and
    ``t+1`` and is stamped at ``(t + 0.5) / fps``.
    """
    b = _coeffs(motion)[:, list(channels)]
    if len(b) < 4:
        return np.zeros(0)
    speed = np.linalg.norm(np.diff(b, axis=0), axis=1)
    mid = speed[1:-1]
    trough = (mid < speed[:-2]) & (mid <= speed[2:])
    return (np.arange(1, len(speed) - 1)[trough] + 0.5) / fps


def beat_alignment_score(audio_times, motion_times, sigma: float = 0.1) -> Optional[float]:
    """Mean over audio beats of ``exp(-d^2 / (2 sigma^2))``, ``d`` the distance to the nearest motion beat."""
    a = np.asarray(audio_times, dtype=np.float64)
    m = np.asarray(motion_times, dtype=np.float64)
    if a.size == 0:
        return None
    if m.size == 0:
        return 0.0
    d2 = ((a[:, None] - m[None, :]) ** 2).min(axis=1)
    return float(np.exp(-d2 / (2.0 * sigma**2)).mean())


def beat_alignment(clip: signal.AudioClip, motion, regions: RegionConfig = RegionConfig()) -> Optional[float]:
    return beat_alignment_score(audio_beats(clip), motion_beats(motion, regions.lip_channels), regions.ba_sigma)


def vertex_metrics(predV, gtV, regions: RegionConfig):
    """Return ``(lve, eve, fdd)`` for ``T x V x 3`` trajectories.

    FDD is signed: mean over upper-face vertices of the temporal standard
    deviation of the distance to the vertex's mean position, prediction minus
    ground truth.
    """
    p, g = np.asarray(predV, dtype=np.float64), np.asarray(gtV, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 3 or p.shape[2] != 3:
        raise BadDims(f"vertex trajectories {p.shape} and {g.shape} must match and be T x V x 3")
    V = p.shape[1]
    lip = _mask(regions.lip_vertices, V, "lip_vertices")
    eye = _mask(regions.eye_forehead_vertices, V, "eye_forehead_vertices")
    upper = _mask(regions.upper_face_vertices, V, "upper_face_vertices")
    dist = np.linalg.norm(p - g, axis=2)
    lve = dist[:, lip].max(axis=1).mean()
    eve = dist[:, eye].max(axis=1).mean()

    def dynamics(x):
        x = x[:, upper]
        return np.linalg.norm(x - x.mean(axis=0), axis=2).std(axis=0)

    fdd = (dynamics(p) - dynamics(g)).mean()
    return float(lve), float(eve), float(fdd)


@dataclass
class MetricReport:
    lbe: float
    pbe: float
    mbe: float
    ba: Optional[float] = None
    lve: Optional[float] = None
    eve: Optional[float] = None
    fdd: Optional[float] = None
    fdd_abs: Optional[float] = None
    name: str = ""

    def to_json(self) -> dict:
        return asdict(self)


METRIC_NAMES = ("lbe", "pbe", "mbe", "ba", "lve", "eve", "fdd", "fdd_abs")


def evaluate_clip(pred, gt, regions: RegionConfig = RegionConfig(), clip: Optional[signal.AudioClip] = None,
                  basis=None, name: str = "") -> MetricReport:
    """All metrics for one clip. BA needs ``clip``; vertex metrics need a blendshape ``basis``."""
    lbe, pbe, mbe = blendshape_metrics(pred, gt, regions)
    report = MetricReport(lbe, pbe, mbe, name=name)
    if clip is not None:
        report.ba = beat_alignment(clip, pred, regions)
    if basis is not None:
        from .mesh import apply_blendshapes

        regions = regions.with_mesh_masks(basis.neutral.region_masks)
        lve, eve, fdd = vertex_metrics(apply_blendshapes(basis, pred), apply_blendshapes(basis, gt), regions)
        report.lve, report.eve, report.fdd, report.fdd_abs = lve, eve, fdd, abs(fdd)
    return report


def summarize(reports: Sequence[MetricReport]) -> dict:
    """Corpus means; metrics absent for every clip are reported as ``None``."""
    out = {}
    for key in METRIC_NAMES:
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
    out["clips"] = len(reports)
    return out
