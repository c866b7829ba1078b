"""Procedural paired audio / blendshape corpus with speaker, emotion and content factors.

Speakers set the glottal pitch, a formant scale and a facial style (how
strongly and how asymmetrically they express each emotion). Emotions set the
spectral tilt of the voice, the syllable rate and a pitch factor, plus an
upper-face expression. Content is a token sequence shared across speakers and
emotions: each token drives two formants and a 150 ms lip gesture.
"""

from __future__ import annotations

import json
import math
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import scipy.signal

from . import signal
from .blendshapes import (BLENDSHAPE_NAMES, LOWER_INDICES, NAME_TO_INDEX, NUM_BLENDSHAPES,
                          UPPER_INDICES, BlendshapeSequence, read_blendshape_csv, write_blendshape_csv)
from .errors import BadPairing, FormatError, IoError

log = logging.getLogger(__name__)

EMOTIONS = ("angry", "disgust", "contempt", "fear", "happy", "sad", "surprise", "neutral")

# tilt (dB/octave), syllable period factor, pitch factor
EMOTION_VOICE = {
    "angry": (-2.0, 0.85, 1.20),
    "fear": (-4.0, 0.80, 1.30),
    "disgust": (-6.0, 1.15, 0.90),
    "happy": (-8.0, 0.90, 1.15),
    "contempt": (-10.0, 1.10, 0.95),
    "surprise": (-12.0, 0.95, 1.35),
    "neutral": (-14.0, 1.00, 1.00),
    "sad": (-16.0, 1.25, 0.85),
}

# upper-face expression per emotion (channel -> weight); lower-face emotion offsets likewise
EMOTION_UPPER = {
    "angry": {"browDownLeft": 0.6, "browDownRight": 0.6, "eyeSquintLeft": 0.3, "eyeSquintRight": 0.3},
    "disgust": {"browDownLeft": 0.35, "browDownRight": 0.35, "eyeSquintLeft": 0.45, "eyeSquintRight": 0.45},
    "contempt": {"browOuterUpLeft": 0.35, "eyeSquintRight": 0.3, "eyeLookDownLeft": 0.2, "eyeLookDownRight": 0.2},
    "fear": {"browInnerUp": 0.6, "eyeWideLeft": 0.5, "eyeWideRight": 0.5},
    "happy": {"eyeSquintLeft": 0.4, "eyeSquintRight": 0.4, "cheekPuff": 0.1, "browOuterUpLeft": 0.15,
              "browOuterUpRight": 0.15},
    "sad": {"browInnerUp": 0.55, "eyeLookDownLeft": 0.35, "eyeLookDownRight": 0.35, "eyeBlinkLeft": 0.2,
            "eyeBlinkRight": 0.2},
    "surprise": {"browInnerUp": 0.5, "browOuterUpLeft": 0.6, "browOuterUpRight": 0.6, "eyeWideLeft": 0.6,
                 "eyeWideRight": 0.6},
    "neutral": {},
}
EMOTION_LOWER = {
    "angry": {"mouthPressLeft": 0.3, "mouthPressRight": 0.3, "noseSneerLeft": 0.3, "noseSneerRight": 0.3},
    "disgust": {"noseSneerLeft": 0.5, "noseSneerRight": 0.5, "mouthUpperUpLeft": 0.3, "mouthUpperUpRight": 0.3},
    "contempt": {"mouthSmileRight": 0.35, "mouthDimpleRight": 0.3, "cheekSquintRight": 0.2},
    "fear": {"mouthStretchLeft": 0.4, "mouthStretchRight": 0.4},
    "happy": {"mouthSmileLeft": 0.55, "mouthSmileRight": 0.55, "cheekSquintLeft": 0.4, "cheekSquintRight": 0.4},
    "sad": {"mouthFrownLeft": 0.45, "mouthFrownRight": 0.45, "mouthShrugLower": 0.3},
    "surprise": {"jawOpen": 0.15, "mouthFunnel": 0.15},
    "neutral": {},
}

LOWER_REST = {"mouthClose": 0.05, "jawOpen": 0.04}
UPPER_REST = {"eyeBlinkLeft": 0.08, "eyeBlinkRight": 0.08, "eyeLookDownLeft": 0.05, "eyeLookDownRight": 0.05}

SYLLABLE_FRAMES = 6.0  # 200 ms at 30 fps
GESTURE_SECONDS = 0.150
SG_RESIDUAL_BOUND = 0.08


def default_emotions(C: int) -> tuple:
    """``neutral`` followed by the first ``C - 1`` other supported emotions."""
    if not 1 <= C <= len(EMOTIONS):
        raise ValueError(f"C must lie in [1, {len(EMOTIONS)}]")
    others = [e for e in EMOTIONS if e != "neutral"]
    return tuple(["neutral"] + others[: C - 1])


@dataclass
class CorpusSpec:
    speakers: int = 2
    emotions: Sequence[str] = field(default_factory=lambda: default_emotions(2))
    clips_per_key: int = 2
    heldout_per_key: int = 0
    vocab_size: int = 12
    frame_range: tuple = (30, 60)
    seed: int = 0
    style_offsets: bool = True
    sample_rate: int = signal.SAMPLE_RATE

    def __post_init__(self):
        if isinstance(self.emotions, int):
            self.emotions = default_emotions(self.emotions)
        self.emotions = tuple(self.emotions)
        self.frame_range = tuple(int(v) for v in self.frame_range)
        unknown = [e for e in self.emotions if e not in EMOTION_VOICE]
        if unknown:
            raise ValueError(f"unknown emotions {unknown}; choose from {EMOTIONS}")
        if min(self.speakers, len(self.emotions), self.clips_per_key, self.vocab_size) < 1:
            raise ValueError("speaker, emotion, clip and vocabulary counts must be >= 1")
        lo, hi = self.frame_range
        if not 15 <= lo <= hi:
            raise ValueError("frame_range must satisfy 15 <= lo <= hi")

    @property
    def C(self) -> int:
        return len(self.emotions)

    def to_json(self) -> dict:
        d = asdict(self)
        d["emotions"] = list(self.emotions)
        d["frame_range"] = list(self.frame_range)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusSpec":
        return cls(**obj)


@dataclass
class ClipRecord:
    clip_id: str
    speaker_id: str
    emotion_id: str
    content_token_ids: list
    sentence: int
    split: str
    wav_path: str
    blendshape_path: str
    T: int

    def audio(self, root) -> signal.AudioClip:
        return signal.read_wav(Path(root) / self.wav_path)

    def blendshapes(self, root) -> BlendshapeSequence:
        return read_blendshape_csv(Path(root) / self.blendshape_path)


@dataclass
class Manifest:
    records: list
    root: Path
    emotion_names: tuple = ()
    spec: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> "Manifest":
        return Manifest([r for r in self.records if r.split == name], self.root, self.emotion_names, self.spec)

    @property
    def speakers(self) -> list:
        return sorted({r.speaker_id for r in self.records})


@dataclass
class PairBatch:
    """Content-matched clips: ``neutral[i]`` and ``emotional[i]`` share speaker and tokens."""

    neutral: list
    emotional: list

    def __post_init__(self):
        if len(self.neutral) != len(self.emotional):
            raise BadPairing("pair batch needs as many neutral as emotional clips")

    def __len__(self):
        return len(self.neutral)


# -- generator ------------------------------------------------------------------

def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass(frozen=True)
class _Speaker:
    f0: float
    formant_scale: float
    lower_asym: np.ndarray  # per lower channel multiplicative gain
    upper_gain: dict  # emotion -> expression scale
    upper_asym: np.ndarray
    upper_rest: np.ndarray


@dataclass(frozen=True)
class _Token:
    f1: float
    f2: float
    gesture: np.ndarray  # 32 lower-face weights


def _speaker(spec: CorpusSpec, i: int) -> _Speaker:
    rng = _rng(spec.seed, 1, i)
    f0 = 95.0 + 130.0 * (i + rng.uniform(0.2, 0.8)) / max(spec.speakers, 1)
    n_low, n_up = len(LOWER_INDICES), len(UPPER_INDICES)
    return _Speaker(
        f0=f0,
        formant_scale=float(rng.uniform(0.85, 1.15)),
        lower_asym=1.0 + rng.uniform(-0.35, 0.35, n_low),
        upper_gain={e: float(rng.uniform(0.5, 1.5)) for e in EMOTIONS},
        upper_asym=1.0 + rng.uniform(-0.4, 0.4, n_up),
        upper_rest=rng.uniform(0.0, 0.12, n_up),
    )


def _vocabulary(spec: CorpusSpec) -> list:
    rng = _rng(spec.seed, 2)
    lower = {name: k for k, name in enumerate(BLENDSHAPE_NAMES[i] for i in LOWER_INDICES)}
    tokens = []
    for _ in range(spec.vocab_size):
        f1 = rng.uniform(300.0, 850.0)
        f2 = rng.uniform(900.0, 2400.0)
        g = np.zeros(len(LOWER_INDICES))
        g[lower["jawOpen"]] = 0.15 + 0.6 * (f1 - 300.0) / 550.0
        g[lower["mouthLowerDownLeft"]] = g[lower["mouthLowerDownRight"]] = 0.5 * g[lower["jawOpen"]]
        rounded = np.clip((1500.0 - f2) / 600.0, 0.0, 1.0)
        g[lower["mouthFunnel"]] = 0.5 * rounded
        g[lower["mouthPucker"]] = 0.4 * rounded
        spread = np.clip((f2 - 1700.0) / 700.0, 0.0, 1.0)
        g[lower["mouthStretchLeft"]] = g[lower["mouthStretchRight"]] = 0.35 * spread
        mouth = [lower[n] for n in lower if n.startswith("mouth")]
        extra = rng.choice(mouth, size=3, replace=False)
        g[extra] += rng.uniform(0.05, 0.25, size=3)
        tokens.append(_Token(float(f1), float(f2), g))
    return tokens


def _sentence(spec: CorpusSpec, x: int) -> tuple:
    """Token ids and lead-in silence (frames) of content sentence ``x``."""
    rng = _rng(spec.seed, 3, x)
    lo, hi = spec.frame_range
    slowest = max(EMOTION_VOICE[e][1] for e in spec.emotions)
    lead = float(rng.uniform(2.0, 6.0))
    step = SYLLABLE_FRAMES * slowest
    n_max = max(1, int((hi - lead - 4.0) // step))
    n_min = min(n_max, max(1, int(np.ceil((lo - lead - 4.0) / step))))
    n_tok = int(rng.integers(n_min, n_max + 1))
    tokens = rng.integers(0, spec.vocab_size, size=n_tok).tolist()
    return tokens, lead


def _timeline(tokens, lead, rate, lo):
    period = SYLLABLE_FRAMES * rate
    onsets = lead + period * np.arange(len(tokens))
    T = int(max(lo, np.ceil(lead + period * len(tokens) + 4.0)))
    return onsets / signal.FRAME_RATE, period / signal.FRAME_RATE, T


def _audio(spec, speaker, vocab, tokens, onsets, period, emotion, T, rng) -> np.ndarray:
    sr = spec.sample_rate
    D = math.ceil(sr / signal.FRAME_RATE)
    n = T * D
    t = np.arange(n) / sr
    tilt, _, f0_factor = EMOTION_VOICE[emotion]
    voiced = 0.7 * period
    env = np.zeros(n)
    f1 = np.full(n, vocab[tokens[0]].f1)
    f2 = np.full(n, vocab[tokens[0]].f2)
    for tok, on in zip(tokens, onsets):
        inside = (t >= on) & (t < on + voiced)
        env[inside] += np.sin(np.pi * (t[inside] - on) / voiced) ** 2
        after = t >= on
        f1[after] = vocab[tok].f1
        f2[after] = vocab[tok].f2
    f1, f2 = f1 * speaker.formant_scale, f2 * speaker.formant_scale
    f3 = 2700.0 * speaker.formant_scale
    f0 = speaker.f0 * f0_factor * (1.0 + 0.04 * np.sin(2 * np.pi * 3.0 * t + rng.uniform(0, 2 * np.pi)) - 0.05 * t / t[-1])
    phase = 2 * np.pi * np.cumsum(f0) / sr
    out = np.zeros(n)
    for h in range(1, int(7800.0 / f0.max()) + 1):
        fh = h * f0
        gain = 10.0 ** (tilt * np.log2(fh / 100.0) / 20.0)
        res = 1.0 + sum(g * np.exp(-((fh - F) ** 2) / (2.0 * bw**2))
                        for F, g, bw in ((f1, 6.0, 90.0), (f2, 4.0, 120.0), (f3, 2.0, 150.0)))
        out += gain * res * np.sin(h * phase)
    out *= env
    out += 0.002 * rng.standard_normal(n)
    return 0.5 * out / np.abs(out).max()


def _blendshapes(spec, speaker, vocab, tokens, onsets, emotion, T, rng, style=True) -> np.ndarray:
    frame_t = (np.arange(T) + 0.5) / signal.FRAME_RATE
    b = np.zeros((T, NUM_BLENDSHAPES))
    low, up = list(LOWER_INDICES), list(UPPER_INDICES)
    for name, v in LOWER_REST.items():
        b[:, NAME_TO_INDEX[name]] += v
    for name, v in UPPER_REST.items():
        b[:, NAME_TO_INDEX[name]] += v
    half = GESTURE_SECONDS / 2.0
    lower = np.zeros((T, len(low)))
    for tok, on in zip(tokens, onsets):
        centre = on + 0.05
        w = np.where(np.abs(frame_t - centre) < half, np.cos(np.pi * (frame_t - centre) / (2 * half)) ** 2, 0.0)
        lower += w[:, None] * vocab[tok].gesture[None, :]
    emo_low = np.zeros(NUM_BLENDSHAPES)
    for name, v in EMOTION_LOWER[emotion].items():
        emo_low[NAME_TO_INDEX[name]] = v
    emo_up = np.zeros(NUM_BLENDSHAPES)
    for name, v in EMOTION_UPPER[emotion].items():
        emo_up[NAME_TO_INDEX[name]] = v
    lower = lower + emo_low[low][None, :]
    upper = np.repeat(emo_up[up][None, :], T, axis=0)
    if style:
        lower = lower * speaker.lower_asym[None, :]
        upper = upper * speaker.upper_gain[emotion] * speaker.upper_asym[None, :] + speaker.upper_rest[None, :]
    sway = 0.03 * np.sin(2 * np.pi * 0.4 * frame_t + rng.uniform(0, 2 * np.pi))
    upper = upper + sway[:, None] * (upper > 0.05)
    b[:, low] += lower
    b[:, up] += upper
    b = np.clip(b, 0.0, 1.0)
    b = np.clip(signal.savgol_smooth(b, 5, 2), 0.0, 1.0)
    return b


def synthesize_clip(spec: CorpusSpec, speaker: int, emotion: str, sentence: int, style: Optional[bool] = None):
    """Return ``(AudioClip, T x 52 coefficients, token ids)`` for one clip."""
    style = spec.style_offsets if style is None else style
    vocab = _vocabulary(spec)
    spk = _speaker(spec, speaker)
    tokens, lead = _sentence(spec, sentence)
    _, rate, _ = EMOTION_VOICE[emotion]
    onsets, period, T = _timeline(tokens, lead, rate, spec.frame_range[0])
    rng = _rng(spec.seed, 4, speaker, EMOTIONS.index(emotion), sentence)
    audio = _audio(spec, spk, vocab, tokens, onsets, period, emotion, T, rng)
    coeffs = _blendshapes(spec, spk, vocab, tokens, onsets, emotion, T, rng, style)
    return signal.AudioClip(audio, spec.sample_rate), coeffs, tokens


def generate_corpus(spec: CorpusSpec, out_dir) -> Manifest:
    """Write WAV + blendshape CSV per clip and ``manifest.jsonl`` under ``out_dir``.

    Generator settings go to ``corpus.json`` beside the manifest.
    """
    out = Path(out_dir)
    try:
        (out / "wav").mkdir(parents=True, exist_ok=True)
        (out / "blendshapes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create corpus directory {out}: {exc}") from exc
    records = []
    n_sent = spec.clips_per_key + spec.heldout_per_key
    for i in range(spec.speakers):
        for emotion in spec.emotions:
            for x in range(n_sent):
                clip, coeffs, tokens = synthesize_clip(spec, i, emotion, x)
                cid = f"spk{i:02d}_{emotion}_{x:03d}"
                rec = ClipRecord(cid, f"spk{i:02d}", emotion, tokens, x,
                                 "train" if x < spec.clips_per_key else "test",
                                 f"wav/{cid}.wav", f"blendshapes/{cid}.csv", int(coeffs.shape[0]))
                signal.write_wav(out / rec.wav_path, clip)
                write_blendshape_csv(out / rec.blendshape_path, coeffs)
                records.append(rec)
    try:
        with open(out / "manifest.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        meta = {"spec": spec.to_json(), "emotion_names": list(spec.emotions),
                "constants": {"syllable_frames": SYLLABLE_FRAMES, "gesture_seconds": GESTURE_SECONDS,
                              "savgol": [5, 2], "sg_residual_bound": SG_RESIDUAL_BOUND,
                              "emotion_voice": EMOTION_VOICE}}
        (out / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest in {out}: {exc}") from exc
    return Manifest(records, out, tuple(spec.emotions), spec.to_json())


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    records, offset = [], 0
    for line in lines:
        if line.strip():
            try:
                records.append(ClipRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise FormatError(f"{path}: bad manifest record", offset) from exc
        offset += len(line.encode("utf-8")) + 1
    meta_path = path.parent / "corpus.json"
    emotions, spec = (), {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        emotions, spec = tuple(meta.get("emotion_names", ())), meta.get("spec", {})
    if not emotions:
        emotions = tuple(sorted({r.emotion_id for r in records}))
    return Manifest(records, path.parent, emotions, spec)


def match_pairs(manifest: Manifest):
    """All ``(neutral, emotional)`` record pairs plus the number of unpaired clips."""
    neutral = {}
    for r in sorted(manifest.records, key=lambda r: r.clip_id):
        if r.emotion_id == "neutral":
            neutral.setdefault((r.speaker_id, tuple(r.content_token_ids)), r)
    pairs, used = [], set()
    for r in sorted(manifest.records, key=lambda r: r.clip_id):
        if r.emotion_id == "neutral":
            continue
        partner = neutral.get((r.speaker_id, tuple(r.content_token_ids)))
        if partner is not None:
            pairs.append((partner, r))
            used.update((partner.clip_id, r.clip_id))
    unpaired = sum(1 for r in manifest.records if r.clip_id not in used)
    if unpaired:
        log.warning("%d clips have no content-matched partner", unpaired)
    return pairs, unpaired


def iterate_pairs(manifest: Manifest, pairs_per_batch: int = 1, rng: Optional[np.random.Generator] = None) -> Iterator[PairBatch]:
    """Yield content-matched neutral/emotional pair batches (shuffled if ``rng`` is given)."""
    pairs, _ = match_pairs(manifest)
    order = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    for start in range(0, len(order), pairs_per_batch):
        chunk = [pairs[k] for k in order[start : start + pairs_per_batch]]
        yield PairBatch([p[0] for p in chunk], [p[1] for p in chunk])


def spectral_tilt(clip: signal.AudioClip) -> float:
    """Slope (dB/octave) between mean power in 250-1000 Hz and 2-6 kHz."""
    f, p = scipy.signal.welch(clip.samples, clip.sample_rate, nperseg=1024)
    low = (f >= 250) & (f < 1000)
    high = (f >= 2000) & (f < 6000)
    db = 10 * np.log10(p[high].mean() / p[low].mean())
    return float(db / np.log2(np.sqrt(2000 * 6000) / np.sqrt(250 * 1000)))
