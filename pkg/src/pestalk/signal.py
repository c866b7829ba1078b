"""Audio front end: clips, resampling, log-mel features, frame alignment, smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import BadDims, EmptyInput, IoError, TooShort

SAMPLE_RATE = 16000
FRAME_RATE = 30
N_MELS = 80
WINDOW = 400
HOP = 160


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform partitioned into 30 fps visual frames.

    Each visual frame owns ``samples_per_frame`` samples; the last frame is
    zero-padded so that ``T`` always matches the blendshape label length.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise BadDims(f"expected a mono waveform, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.frame_rate != FRAME_RATE:
            raise ValueError(f"frame_rate is fixed at {FRAME_RATE}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def samples_per_frame(self) -> int:
        # rounded up, so a clip of whole seconds gets exactly 30 frames per second
        return math.ceil(self.sample_rate / self.frame_rate)

    @property
    def num_frames(self) -> int:
        return math.ceil(len(self.samples) / self.samples_per_frame)

    T = num_frames

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def frames(self) -> np.ndarray:
        """Return the ``T x D`` matrix of per-frame snippets (last one zero-padded)."""
        D, T = self.samples_per_frame, self.num_frames
        out = np.zeros(D * T)
        out[: len(self.samples)] = self.samples
        return out.reshape(T, D)


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray
    hop: int
    n_mels: int
    window: int
    sample_rate: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def resample_audio(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if len(clip.samples) == 0:
        raise EmptyInput("cannot resample an empty waveform")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.frame_rate)
    ratio = Fraction(int(target_rate), int(clip.sample_rate))
    out = scipy.signal.resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    return AudioClip(out, int(target_rate), clip.frame_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each triangular band."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Peak-normalised triangular filters on the HTK mel scale, shape ``n_mels x (n_fft//2+1)``."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def mel_spectrogram(
    clip: AudioClip, n_mels: int = N_MELS, window: int = WINDOW, hop: int = HOP
) -> MelSpectrogram:
    """Log-compressed mel energies, ``log(1 + E)``, one row per ``hop`` samples.

    Frames are centred on ``k * hop`` with zero padding at both ends, so the
    frame count is ``ceil(len(samples) / hop)``.
    """
    if not (window >= hop > 0) or n_mels < 1:
        raise BadDims("need window >= hop > 0 and n_mels >= 1")
    x = clip.samples
    if window > len(x):
        raise TooShort(f"waveform of {len(x)} samples is shorter than the {window}-sample window")
    n_frames = math.ceil(len(x) / hop)
    n_fft = 1 << (window - 1).bit_length()
    half = window // 2
    padded = np.zeros(half + n_frames * hop + window)
    padded[half : half + len(x)] = x
    idx = np.arange(n_frames)[:, None] * hop + np.arange(window)[None, :]
    segments = padded[idx] * scipy.signal.get_window("hann", window, fftbins=True)
    power = np.abs(np.fft.rfft(segments, n=n_fft, axis=1)) ** 2
    energies = power @ mel_filterbank(n_mels, n_fft, clip.sample_rate).T
    return MelSpectrogram(np.log1p(energies), hop, n_mels, window, clip.sample_rate)


def align_frames(features: np.ndarray, T: int) -> np.ndarray:
    """Linearly resample an ``F x d`` sequence to ``T`` rows, keeping both endpoints."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise BadDims(f"expected a 2-D feature matrix, got shape {features.shape}")
    F = features.shape[0]
    if F < 1 or T < 1:
        raise BadDims("need F >= 1 and T >= 1")
    if F == T:
        return features.copy()
    if F == 1:
        return np.repeat(features, T, axis=0)
    if T == 1:
        return features[:1].copy()
    pos = np.arange(T) * (F - 1) / (T - 1)
    lo = np.minimum(np.floor(pos).astype(int), F - 2)
    frac = (pos - lo)[:, None]
    out = features[lo] * (1.0 - frac) + features[lo + 1] * frac
    out[0], out[-1] = features[0], features[-1]
    return out


def savgol_smooth(track: np.ndarray, window: int = 5, order: int = 2) -> np.ndarray:
    """Per-channel Savitzky-Golay smoothing with mirror padding at the edges."""
    track = np.asarray(track, dtype=np.float64)
    if window % 2 != 1 or order >= window:
        raise ValueError("window must be odd and larger than order")
    squeeze = track.ndim == 1
    if squeeze:
        track = track[:, None]
    if track.shape[0] < window:
        raise TooShort(f"track of {track.shape[0]} frames is shorter than window {window}")
    out = scipy.signal.savgol_filter(track, window, order, axis=0, mode="mirror")
    return out[:, 0] if squeeze else out


def read_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM WAV file."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise BadDims(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    else:
        samples = data.astype(np.float64)
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as mono 16-bit PCM."""
    pcm = np.round(np.clip(clip.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        scipy.io.wavfile.write(path, clip.sample_rate, pcm)
    except OSError as exc:
        raise IoError(f"cannot write WAV file {path}: {exc}") from exc
