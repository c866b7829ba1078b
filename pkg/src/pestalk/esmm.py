"""Speaker x emotion style library and cosine-distance retrieval."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .errors import EmptyLibrary, EmptySpeaker, FormatError, MissingBase, ZeroVector

BASE_DIM = 512
EMOTION_DIM = 256
STYLE_DIM = BASE_DIM + EMOTION_DIM
LIBRARY_VERSION = 1


def cosine_distance(u, v) -> float:
    """``1 - u.v / (|u| |v|)``, in ``[0, 2]``."""
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - (u @ v) / (nu * nv), 0.0, 2.0))


def build_base_styles(clips_by_speaker: Mapping[str, Iterable]) -> dict:
    """Mean voiceprint per speaker."""
    base = {}
    for speaker, vectors in clips_by_speaker.items():
        vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
        if not vectors:
            raise EmptySpeaker(f"speaker {speaker!r} has no voiceprints")
        base[speaker] = np.mean(np.stack(vectors), axis=0)
    return base


@dataclass(frozen=True)
class StyleVector:
    key: tuple  # (speaker_id, emotion_id)
    S: np.ndarray  # 768, canonical [R || mean E] layout
    distance: float
    projected: Optional[np.ndarray] = None


class StyleLibrary:
    """Two-dimensional table of personalised style entries ``P = [R || mean E]``.

    Emotion means are kept as running means so clips can be added one at a
    time; adding the same clips incrementally or in one batch gives the same
    entries. Readers see a consistent snapshot while a writer is updating.
    """

    def __init__(self, base_styles: Mapping[str, np.ndarray], emotion_names: Optional[Iterable[str]] = None):
        self.base_styles = {str(k): np.asarray(v, dtype=np.float64).copy() for k, v in base_styles.items()}
        for k, R in self.base_styles.items():
            if R.shape != (BASE_DIM,):
                raise ValueError(f"base style for {k!r} must have {BASE_DIM} dims, got {R.shape}")
        self.emotion_names = list(emotion_names) if emotion_names is not None else []
        self._means: dict = {}
        self.counts: dict = {}
        self._lock = threading.RLock()
        self._snapshot = None

    def __len__(self):
        return len(self._means)

    @property
    def keys(self) -> list:
        return sorted(self._means)

    @property
    def speakers(self) -> list:
        return sorted(self.base_styles)

    def add(self, speaker_id, emotion_id, pooled_emotion) -> None:
        """Fold one clip-level (time-pooled) emotion feature into its entry."""
        speaker_id, emotion_id = str(speaker_id), str(emotion_id)
        e = np.asarray(pooled_emotion, dtype=np.float64)
        if e.ndim == 2:
            e = e.mean(axis=0)
        if e.shape != (EMOTION_DIM,):
            raise ValueError(f"pooled emotion feature must have {EMOTION_DIM} dims, got {e.shape}")
        if speaker_id not in self.base_styles:
            raise MissingBase(f"no base style for speaker {speaker_id!r}")
        with self._lock:
            key = (speaker_id, emotion_id)
            n = self.counts.get(key, 0) + 1
            mean = self._means.get(key)
            self._means[key] = e.copy() if mean is None else mean + (e - mean) / n
            self.counts[key] = n
            if emotion_id not in self.emotion_names:
                self.emotion_names.append(emotion_id)
            self._snapshot = None

    def entry(self, speaker_id, emotion_id) -> np.ndarray:
        key = (str(speaker_id), str(emotion_id))
        with self._lock:
            return np.concatenate([self.base_styles[key[0]], self._means[key]])

    def emotion_mean(self, speaker_id, emotion_id) -> np.ndarray:
        return self._means[(str(speaker_id), str(emotion_id))].copy()

    def matrix(self):
        """``(keys, P)`` with keys sorted lexicographically and P stacked row-wise."""
        with self._lock:
            if self._snapshot is None:
                keys = self.keys
                P = np.stack([np.concatenate([self.base_styles[s], self._means[(s, e)]]) for s, e in keys]) \
                    if keys else np.zeros((0, STYLE_DIM))
                self._snapshot = (keys, P)
            return self._snapshot

    def __eq__(self, other):
        if not isinstance(other, StyleLibrary):
            return NotImplemented
        if self.keys != other.keys or self.speakers != other.speakers:
            return False
        if any(not np.array_equal(self.base_styles[s], other.base_styles[s]) for s in self.speakers):
            return False
        return all(np.array_equal(self._means[k], other._means[k]) and self.counts[k] == other.counts[k]
                   for k in self.keys)


def build_style_library(features, base: Mapping[str, np.ndarray], library: Optional[StyleLibrary] = None,
                        emotion_names=None) -> StyleLibrary:
    """Build (or extend) a library from ``(speaker_id, emotion_id, emotion_feature)`` triples.

    Emotion features may be frame-level (``T x 256``, mean-pooled here) or
    already pooled.
    """
    if library is None:
        library = StyleLibrary(base, emotion_names)
    for speaker_id, emotion_id, feat in features:
        E = getattr(feat, "E", feat)
        if hasattr(E, "detach"):
            E = E.detach().cpu().numpy()
        library.add(speaker_id, emotion_id, E)
    return library


def retrieve_style(E_pooled, R, library: StyleLibrary,
                   projection: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> StyleVector:
    """Library entry closest in cosine distance to the query ``[E || R]``.

    Entries are stored R-first, so the query is compared in that same layout.
    Ties go to the lexicographically smallest ``(speaker_id, emotion_id)``.
    """
    keys, P = library.matrix()
    if not keys:
        raise EmptyLibrary("style library is empty")
    E_pooled = np.asarray(E_pooled, dtype=np.float64)
    if E_pooled.ndim == 2:
        E_pooled = E_pooled.mean(axis=0)
    query = np.concatenate([np.asarray(R, dtype=np.float64), E_pooled])
    qn = np.linalg.norm(query)
    pn = np.linalg.norm(P, axis=1)
    if qn == 0.0 or np.any(pn == 0.0):
        raise ZeroVector("zero vector in style retrieval")
    dist = 1.0 - (P @ query) / (pn * qn)
    best = int(np.argmin(dist))
    S = P[best].copy()
    projected = None if projection is None else np.asarray(projection(S))
    return StyleVector(keys[best], S, float(dist[best]), projected)


def library_to_json(library: StyleLibrary) -> dict:
    speakers = {}
    for s in library.speakers:
        entries = {e: {"P": library.entry(s, e).tolist(), "count": library.counts[(s, e)]}
                   for (sk, e) in library.keys if sk == s}
        speakers[s] = {"R": library.base_styles[s].tolist(), "entries": entries}
    return {"version": LIBRARY_VERSION, "emotion_names": list(library.emotion_names), "speakers": speakers}


def persist_library(library: StyleLibrary, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(library_to_json(library)) + "\n")


def load_library(path) -> StyleLibrary:
    raw = Path(path).read_bytes()
    try:
        obj = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text", exc.start) from exc
    except json.JSONDecodeError as exc:
        offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise FormatError(f"{path}: malformed library JSON ({exc.msg})", offset) from exc
    if not isinstance(obj, dict) or "version" not in obj:
        raise FormatError(f"{path}: missing version field", 0)
    if obj["version"] != LIBRARY_VERSION:
        raise FormatError(f"{path}: unsupported library version: expected {LIBRARY_VERSION}, found {obj['version']}")
    try:
        base = {s: np.array(v["R"], dtype=np.float64) for s, v in obj["speakers"].items()}
        library = StyleLibrary(base, obj.get("emotion_names", []))
        for s, v in obj["speakers"].items():
            for e, entry in v["entries"].items():
                P = np.array(entry["P"], dtype=np.float64)
                if P.shape != (STYLE_DIM,):
                    raise FormatError(f"{path}: entry ({s}, {e}) has {P.shape} dims, expected {STYLE_DIM}")
                if not np.array_equal(P[:BASE_DIM], base[s]):
                    raise FormatError(f"{path}: entry ({s}, {e}) does not start with its base style")
                library._means[(s, e)] = P[BASE_DIM:].copy()
                library.counts[(s, e)] = int(entry["count"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed library structure ({exc!r})") from exc
    return library
