"""ARKit-style blendshape channels, the upper/lower face partition and track files."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadDims, BadPartition, FormatError, IoError

FPS = 30

BLENDSHAPE_NAMES = (
    "eyeBlinkLeft", "eyeLookDownLeft", "eyeLookInLeft", "eyeLookOutLeft", "eyeLookUpLeft",
    "eyeSquintLeft", "eyeWideLeft", "eyeBlinkRight", "eyeLookDownRight", "eyeLookInRight",
    "eyeLookOutRight", "eyeLookUpRight", "eyeSquintRight", "eyeWideRight",
    "jawForward", "jawLeft", "jawRight", "jawOpen",
    "mouthClose", "mouthFunnel", "mouthPucker", "mouthLeft", "mouthRight",
    "mouthSmileLeft", "mouthSmileRight", "mouthFrownLeft", "mouthFrownRight",
    "mouthDimpleLeft", "mouthDimpleRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthPressLeft", "mouthPressRight", "mouthLowerDownLeft", "mouthLowerDownRight",
    "mouthUpperUpLeft", "mouthUpperUpRight",
    "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "noseSneerLeft", "noseSneerRight",
    "tongueOut",
)
NUM_BLENDSHAPES = len(BLENDSHAPE_NAMES)
NAME_TO_INDEX = {name: i for i, name in enumerate(BLENDSHAPE_NAMES)}


def _indices(predicate):
    return tuple(i for i, n in enumerate(BLENDSHAPE_NAMES) if predicate(n))


UPPER_INDICES = _indices(lambda n: n.startswith(("brow", "eye")) or n == "cheekPuff")
LOWER_INDICES = tuple(i for i in range(NUM_BLENDSHAPES) if i not in UPPER_INDICES)
MOUTH_INDICES = _indices(lambda n: n.startswith("mouth"))
JAW_INDICES = _indices(lambda n: n.startswith("jaw"))


@dataclass(frozen=True)
class Partition:
    """Assignment of the 52 channels to the lower-face and upper-face decoders."""

    lower: tuple = LOWER_INDICES
    upper: tuple = UPPER_INDICES

    def __post_init__(self):
        lower, upper = tuple(int(i) for i in self.lower), tuple(int(i) for i in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if set(lower) & set(upper):
            raise BadPartition(f"channels in both halves: {sorted(set(lower) & set(upper))}")
        if len(set(lower)) != len(lower) or len(set(upper)) != len(upper):
            raise BadPartition("duplicate channel index in partition")
        if sorted(lower + upper) != list(range(NUM_BLENDSHAPES)):
            raise BadPartition(f"partition must cover channels 0..{NUM_BLENDSHAPES - 1} exactly")

    def to_json(self) -> dict:
        return {
            "lower": [BLENDSHAPE_NAMES[i] for i in self.lower],
            "upper": [BLENDSHAPE_NAMES[i] for i in self.upper],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Partition":
        return cls(
            tuple(NAME_TO_INDEX[n] for n in obj["lower"]),
            tuple(NAME_TO_INDEX[n] for n in obj["upper"]),
        )


DEFAULT_PARTITION = Partition()


@dataclass
class BlendshapeSequence:
    """``T x 52`` coefficient track at 30 fps, clamped to ``[0, 1]``."""

    coeffs: np.ndarray
    channel_names: tuple = BLENDSHAPE_NAMES
    partition: Partition = field(default_factory=lambda: DEFAULT_PARTITION)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[1] != NUM_BLENDSHAPES:
            raise BadDims(f"expected T x {NUM_BLENDSHAPES} coefficients, got {coeffs.shape}")
        self.coeffs = np.clip(coeffs, 0.0, 1.0)

    @property
    def num_frames(self) -> int:
        return self.coeffs.shape[0]

    def split(self):
        return split(self.coeffs, self.partition)


def assemble(lower, upper, partition: Partition = DEFAULT_PARTITION) -> BlendshapeSequence:
    """Scatter the lower (T x 32) and upper (T x 20) tracks into their named channels."""
    if not isinstance(partition, Partition):
        partition = Partition(*partition)
    lower, upper = np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)
    if lower.shape[1:] != (len(partition.lower),) or upper.shape[1:] != (len(partition.upper),):
        raise BadDims(f"half shapes {lower.shape} / {upper.shape} do not match the partition")
    if lower.shape[0] != upper.shape[0]:
        raise BadDims("lower and upper tracks differ in frame count")
    out = np.empty((lower.shape[0], NUM_BLENDSHAPES))
    out[:, list(partition.lower)] = lower
    out[:, list(partition.upper)] = upper
    return BlendshapeSequence(out, partition=partition)


def split(coeffs, partition: Partition = DEFAULT_PARTITION):
    coeffs = np.asarray(coeffs)
    return coeffs[:, list(partition.lower)], coeffs[:, list(partition.upper)]


def write_blendshape_csv(path, seq, fmt: str = "%.8f") -> None:
    """Header of 52 channel names, then one row per frame."""
    coeffs = seq.coeffs if isinstance(seq, BlendshapeSequence) else np.asarray(seq)
    buf = io.StringIO()
    buf.write(",".join(BLENDSHAPE_NAMES) + "\n")
    for row in coeffs:
        buf.write(",".join(fmt % v for v in row) + "\n")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_blendshape_csv(path) -> BlendshapeSequence:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError(f"{path}: empty blendshape file", 0)
    header = rows[0]
    if len(header) != NUM_BLENDSHAPES or set(header) != set(BLENDSHAPE_NAMES):
        raise FormatError(f"{path}: header must list the {NUM_BLENDSHAPES} channel names", 0)
    order = [header.index(n) for n in BLENDSHAPE_NAMES]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != NUM_BLENDSHAPES:
        raise FormatError(f"{path}: every row needs {NUM_BLENDSHAPES} values")
    return BlendshapeSequence(data[:, order])


def write_sidecar(path, partition: Partition = DEFAULT_PARTITION, model_version: str = "", **extra):
    meta = {"partition": partition.to_json(), "fps": FPS, "model_version": model_version}
    meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
