"""Acoustic front-end: WAV I/O, resampling, log-mel filterbanks, SpecAugment,
and a seeded synthetic feature generator for experiments without real audio.

Features are extracted at a 10 ms hop by default; the model front-end
subsamples by 4, so the CTC head sees an effective 40 ms stride. All seeded
operations take their seed explicitly; nothing touches global RNG state.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import resample_poly

__all__ = [
    "Waveform",
    "FeatureSequence",
    "SpecAugmentConfig",
    "SynthAcousticModel",
    "UtteranceLayout",
    "read_wav",
    "write_wav",
    "resample",
    "log_mel",
    "spec_augment",
    "synth_features",
    "write_features",
    "read_features",
]

SUPPORTED_RATES = (8000, 16000)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # mono, float in [-1, 1]
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("Waveform holds a single channel")
        if self.sample_rate not in SUPPORTED_RATES:
            raise ValueError(f"sample_rate must be one of {SUPPORTED_RATES}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # T x F, float32
    frame_stride: float  # seconds

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ValueError("frames must be a T x F matrix")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain NaN or Inf")
        if self.frame_stride <= 0:
            raise ValueError("frame_stride must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# --------------------------------------------------------------------------
# WAV I/O (PCM-16 only)
# --------------------------------------------------------------------------


def read_wav(path: str, channel: int | str = "mix") -> Waveform:
    """Read PCM-16 WAV. channel: 0, 1, or "mix" (mean of channels)."""
    with wave.open(path, "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: only PCM-16 WAV is supported")
        n_channels = wf.getnchannels()
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels)
        if channel == "mix":
            data = data.mean(axis=1)
        else:
            if not isinstance(channel, int) or channel >= n_channels:
                raise ValueError(f"channel {channel!r} not available in {n_channels}-channel file")
            data = data[:, channel]
    return Waveform(data, rate)


def write_wav(path: str, w: Waveform) -> None:
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = (clipped * 32767.0).astype("<i2")
    with wave.open(path, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


# --------------------------------------------------------------------------
# Resampling and log-mel extraction
# --------------------------------------------------------------------------


def resample(w: Waveform, target: int) -> Waveform:
    """Polyphase resampling between the supported telephone/wideband rates."""
    if target not in SUPPORTED_RATES:
        raise ValueError(f"target rate must be one of {SUPPORTED_RATES}")
    if target == w.sample_rate:
        return w
    out = resample_poly(w.samples, target, w.sample_rate)
    want = int(round(len(w.samples) * target / w.sample_rate))
    if len(out) < want:
        out = np.pad(out, (0, want - len(out)))
    return Waveform(out[:want], target)


def _hz_to_mel(hz: np.ndarray) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def _mel_filterbank(n_mels: int, n_fft: int, rate: int, fmin: float, fmax: float) -> np.ndarray:
    mel_edges = np.linspace(_hz_to_mel(np.array(fmin)), _hz_to_mel(np.array(fmax)), n_mels + 2)
    hz_edges = _mel_to_hz(mel_edges)
    bins = np.floor((n_fft + 1) * hz_edges / rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, ctr, hi = bins[m], bins[m + 1], bins[m + 2]
        for k in range(lo, ctr):
            if ctr > lo:
                fb[m, k] = (k - lo) / (ctr - lo)
        for k in range(ctr, hi):
            if hi > ctr:
                fb[m, k] = (hi - k) / (hi - ctr)
    return fb


def log_mel(
    w: Waveform,
    n_mels: int = 80,
    window: float = 0.025,
    hop: float = 0.010,
) -> FeatureSequence:
    """Natural-log mel filterbank energies (HTK mel scale, 0..Nyquist, floor 1e-10).

    Frame count is 1 + floor((len - window*rate) / (hop*rate)); audio shorter
    than one window is an error.
    """
    if w.sample_rate != 16000:
        raise ValueError("log_mel expects 16 kHz audio; resample first")
    win_len = int(round(window * w.sample_rate))
    hop_len = int(round(hop * w.sample_rate))
    if len(w.samples) < win_len:
        raise ValueError("audio shorter than one analysis window")
    n_frames = 1 + (len(w.samples) - win_len) // hop_len
    n_fft = 1
    while n_fft < win_len:
        n_fft *= 2
    hann = np.hanning(win_len)
    fb = _mel_filterbank(n_mels, n_fft, w.sample_rate, 0.0, w.sample_rate / 2.0)
    frames = np.empty((n_frames, n_mels), dtype=np.float64)
    for t in range(n_frames):
        chunk = w.samples[t * hop_len : t * hop_len + win_len] * hann
        spectrum = np.abs(np.fft.rfft(chunk, n=n_fft)) ** 2
        frames[t] = np.log(np.maximum(fb @ spectrum, 1e-10))
    return FeatureSequence(frames.astype(np.float32), hop)


# --------------------------------------------------------------------------
# SpecAugment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpecAugmentConfig:
    freq_masks: int = 2
    max_freq_width: int = 10
    time_masks: int = 2
    max_time_width: int = 20
    seed: int = 0


def spec_augment(x: FeatureSequence, cfg: SpecAugmentConfig) -> FeatureSequence:
    """Mask random time/frequency bands, filling with the per-utterance mean.

    Deterministic given cfg.seed; unmasked cells are bit-identical to the
    input and the shape never changes.
    """
    n_frames, dim = x.frames.shape
    if cfg.max_freq_width > dim or cfg.max_time_width > n_frames:
        raise ValueError("mask widths exceed the feature axes")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    out = x.frames.copy()
    fill = np.float32(x.frames.mean())
    for _ in range(cfg.freq_masks):
        width = int(rng.integers(0, cfg.max_freq_width + 1))
        start = int(rng.integers(0, dim - width + 1))
        out[:, start : start + width] = fill
    for _ in range(cfg.time_masks):
        width = int(rng.integers(0, cfg.max_time_width + 1))
        start = int(rng.integers(0, n_frames - width + 1))
        out[start : start + width, :] = fill
    return FeatureSequence(out, x.frame_stride)


# --------------------------------------------------------------------------
# Synthetic features
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UtteranceLayout:
    """One utterance placed on a segment-relative timeline for synthesis."""

    symbol_ids: tuple[int, ...]
    speaker: str
    start: float  # seconds relative to the segment start
    end: float


@dataclass(frozen=True)
class SynthAcousticModel:
    """Fixed symbol embedding table plus per-speaker offsets.

    Each symbol has an F-dim pattern; an active utterance contributes
    pattern + its speaker's offset on every frame it occupies, token by token.
    Overlapping utterances sum their contributions. Built once per experiment
    so the mapping symbol -> pattern never changes.
    """

    patterns: np.ndarray  # n_symbols x F
    speaker_offsets: Mapping[str, np.ndarray]
    frame_stride: float = 0.01
    noise_scale: float = 0.1

    @staticmethod
    def create(
        n_symbols: int,
        speakers: Sequence[str],
        feature_dim: int = 80,
        seed: int = 0,
        frame_stride: float = 0.01,
        noise_scale: float = 0.1,
        speaker_scale: float = 1.0,
    ) -> "SynthAcousticModel":
        rng = np.random.Generator(np.random.PCG64(seed))
        patterns = rng.normal(0.0, 1.0, size=(n_symbols, feature_dim))
        offsets = {
            name: rng.normal(0.0, speaker_scale, size=feature_dim)
            for name in sorted(set(speakers))
        }
        return SynthAcousticModel(patterns, offsets, frame_stride, noise_scale)


def synth_features(
    layouts: Sequence[UtteranceLayout],
    duration: float,
    acoustic: SynthAcousticModel,
    noise_seed: int = 0,
) -> FeatureSequence:
    """Render a segment: token patterns over utterance spans, noise elsewhere.

    Each utterance's frames are split evenly across its symbols (earlier
    symbols absorb the remainder). Overlap regions add both utterances'
    contributions; silence carries noise only.
    """
    stride = acoustic.frame_stride
    n_frames = int(np.ceil(duration / stride - 1e-9))
    dim = acoustic.patterns.shape[1]
    rng = np.random.Generator(np.random.PCG64(noise_seed))
    frames = rng.normal(0.0, acoustic.noise_scale, size=(n_frames, dim)) if acoustic.noise_scale > 0 else np.zeros((n_frames, dim))

    for lay in layouts:
        first = int(round(lay.start / stride))
        last = min(int(round(lay.end / stride)), n_frames)
        span = last - first
        n_sym = len(lay.symbol_ids)
        if n_sym == 0 or span <= 0:
            continue
        if span < n_sym:
            raise ValueError(
                f"utterance span of {span} frames cannot carry {n_sym} symbols"
            )
        offset = acoustic.speaker_offsets[lay.speaker]
        base, extra = divmod(span, n_sym)
        pos = first
        for i, sym in enumerate(lay.symbol_ids):
            width = base + (1 if i < extra else 0)
            frames[pos : pos + width] += acoustic.patterns[sym] + offset
            pos += width
    return FeatureSequence(frames.astype(np.float32), stride)


# --------------------------------------------------------------------------
# Binary feature dump: magic "STFB", u32 T, u32 F, f32 stride, f32 rows (LE)
# --------------------------------------------------------------------------

_MAGIC = b"STFB"


def write_features(path: str, feat: FeatureSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIf", feat.num_frames, feat.dim, feat.frame_stride))
        fh.write(feat.frames.astype("<f4").tobytes())


def read_features(path: str) -> FeatureSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a feature dump (bad magic {magic!r})")
        n_frames, dim, stride = struct.unpack("<IIf", fh.read(12))
        data = np.frombuffer(fh.read(n_frames * dim * 4), dtype="<f4")
    return FeatureSequence(data.reshape(n_frames, dim), float(stride))
