"""MFCC and prosody front-end.

Turns an :class:`AudioClip` into a :class:`FeatureBundle`: one 16-dim MFCC
vector per frame plus a frame-synchronous F0 track and log-energy track.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

# Normalized autocorrelation peak needed to call a frame voiced.
VOICING_THRESHOLD = 0.3
# A doubled lag wins the octave check when its normalized correlation beats
# the first pick by this margin.
OCTAVE_MARGIN = 0.15

UNVOICED = np.nan


class FrontendError(ValueError):
    """Raised for invalid audio or front-end configuration."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise FrontendError("audio must be mono (1-D samples)")
        if samples.size == 0:
            raise FrontendError("audio clip is empty")
        if int(self.sample_rate) <= 0:
            raise FrontendError(f"sample_rate must be positive, got {self.sample_rate}")
        if np.max(np.abs(samples)) > 1.0 + 1e-12:
            raise FrontendError("samples must be normalized to [-1, 1]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    frame_length_ms: float = 25.0
    frame_hop_ms: float = 10.0
    preemphasis_coeff: float = 0.97
    window: str = "hamming"
    num_mel_channels: int = 24
    num_cepstra: int = 16
    f0_min: float = 80.0
    f0_max: float = 500.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if not self.frame_length_ms >= self.frame_hop_ms > 0:
            raise FrontendError("need frame_length_ms >= frame_hop_ms > 0")
        if not 0.0 <= self.preemphasis_coeff < 1.0:
            raise FrontendError("preemphasis_coeff must lie in [0, 1)")
        if self.window.lower() != "hamming":
            raise FrontendError(f"unsupported window {self.window!r}")
        if not 1 <= self.num_cepstra <= self.num_mel_channels - 1:
            raise FrontendError("need 1 <= num_cepstra <= num_mel_channels - 1")
        if not 0 < self.f0_min < self.f0_max:
            raise FrontendError("need 0 < f0_min < f0_max")
        if self.log_floor <= 0:
            raise FrontendError("log_floor must be positive")

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_length_ms * sample_rate / 1000.0))

    def frame_hop(self, sample_rate: int) -> int:
        return int(round(self.frame_hop_ms * sample_rate / 1000.0))

    def fft_size(self, sample_rate: int) -> int:
        return 1 << (self.frame_length(sample_rate) - 1).bit_length()

    def check_rate(self, sample_rate: int) -> None:
        if not self.f0_max < sample_rate / 2:
            raise FrontendError(
                f"f0_max={self.f0_max} must be below Nyquist for rate {sample_rate}"
            )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "FrontendConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise FrontendError(f"unknown front-end config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "FrontendConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


@dataclass(frozen=True)
class FeatureBundle:
    """Per-utterance observations.

    ``f0`` holds NaN for unvoiced frames.
    """

    mfcc: np.ndarray
    f0: np.ndarray
    log_energy: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        t = self.mfcc.shape[0]
        if t < 1 or not (len(self.f0) == len(self.log_energy) == len(self.frame_times) == t):
            raise FrontendError("feature tracks must share a length T >= 1")

    @property
    def num_frames(self) -> int:
        return self.mfcc.shape[0]

    @property
    def voiced(self) -> np.ndarray:
        return ~np.isnan(self.f0)


def read_wav(path) -> AudioClip:
    """Read a mono PCM (8/16-bit int) or 32-bit float WAV file."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise FrontendError(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim != 1:
        raise FrontendError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise FrontendError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write 16-bit PCM mono."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), clip.sample_rate, pcm)


def preemphasize(clip: AudioClip, coeff: float) -> AudioClip:
    if not 0.0 <= coeff < 1.0:
        raise FrontendError("pre-emphasis coefficient must lie in [0, 1)")
    x = clip.samples
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[1:] - coeff * x[:-1]
    # a full-scale alternating signal can leave [-1, 1] after filtering
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out = out / peak
    return AudioClip(out, clip.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_channels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters as an (M, fft_size//2 + 1) weight matrix.

    Edges are equally spaced on the mel scale over [0, Nyquist]; weights are
    evaluated at the exact bin frequencies so narrow low filters never vanish.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_channels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_filterbank_energies(power_spectrum, config: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Filterbank outputs Y(m), floored at ``config.log_floor``.

    Accepts one spectrum (bins,) or a stack (frames, bins).
    """
    spec = np.asarray(power_spectrum, dtype=np.float64)
    if np.any(spec < 0):
        raise FrontendError("power spectrum has negative entries")
    fft_size = 2 * (spec.shape[-1] - 1)
    weights = mel_filterbank(config.num_mel_channels, fft_size, sample_rate)
    return np.maximum(spec @ weights.T, config.log_floor)


def dct_basis(num_channels: int, num_cepstra: int) -> np.ndarray:
    n = np.arange(1, num_cepstra + 1)[:, None]
    m = np.arange(1, num_channels + 1)[None, :]
    return np.cos(np.pi * n / num_channels * (m - 0.5))


def mfcc_from_energies(energies, num_cepstra: int) -> np.ndarray:
    """C(n) = sum_m log Y(m) cos(pi n / M (m - 1/2)) for n = 1..num_cepstra.

    ``energies`` is (M,) or (frames, M); C(0) is not returned.
    """
    y = np.asarray(energies, dtype=np.float64)
    if np.any(~(y > 0)):
        raise FrontendError("filterbank energies must be strictly positive")
    basis = dct_basis(y.shape[-1], num_cepstra)
    return np.log(y) @ basis.T


def frame_signal(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    num_frames = (len(x) - frame_length) // hop + 1
    idx = np.arange(frame_length)[None, :] + hop * np.arange(num_frames)[:, None]
    return x[idx]


def num_frames(num_samples: int, config: FrontendConfig, sample_rate: int) -> int:
    length = config.frame_length(sample_rate)
    if num_samples < length:
        return 0
    return (num_samples - length) // config.frame_hop(sample_rate) + 1


def _normalized_xcorr(frame: np.ndarray, lag: int) -> float:
    a, b = frame[:-lag], frame[lag:]
    denom = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / denom if denom > 0 else 0.0


def estimate_f0(frame, sample_rate: int, config: FrontendConfig) -> float:
    """Autocorrelation pitch estimate for one frame; NaN when unvoiced.

    The lag is picked on the biased autocorrelation r(k)/r(0) (its taper
    suppresses spurious long-lag peaks in noise). An integer multiple of the
    pick replaces it when its length-normalized correlation is clearly
    stronger; that catches frames where a harmonic dominates the fundamental
    and partly voiced frames at segment edges.
    """
    x = np.asarray(frame, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    energy = float(x @ x)
    if energy <= 0.0 or not np.isfinite(energy):
        return UNVOICED
    lag_min = max(1, int(math.floor(sample_rate / config.f0_max)))
    lag_max = min(n - 2, int(math.ceil(sample_rate / config.f0_min)))
    if lag_max <= lag_min:
        return UNVOICED

    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, nfft)[:n] / energy

    # only interior local maxima count; the range edge is not a period
    lags = np.arange(lag_min, lag_max + 1)
    peaks = lags[(acf[lags] >= acf[lags - 1]) & (acf[lags] > acf[lags + 1])]
    if peaks.size == 0:
        return UNVOICED
    best = int(peaks[np.argmax(acf[peaks])])
    # a multiple of the pick replaces it when clearly more periodic
    base = _normalized_xcorr(x, best)
    top, top_score = best, base + OCTAVE_MARGIN
    for m in range(2, lag_max // best + 1):
        for cand in (m * best - 1, m * best, m * best + 1):
            if cand > lag_max:
                continue
            score = _normalized_xcorr(x, cand)
            if score > top_score:
                top, top_score = cand, score
    best = top

    left, mid, right = (_normalized_xcorr(x, k) for k in (best - 1, best, best + 1))
    if mid < VOICING_THRESHOLD:
        return UNVOICED
    curvature = left - 2.0 * mid + right
    lag = float(best)
    if curvature < 0:
        lag = best + 0.5 * (left - right) / curvature
    f0 = sample_rate / lag
    if not config.f0_min <= f0 <= config.f0_max:
        return UNVOICED
    return f0


def correct_harmonic_errors(f0: np.ndarray, radius: int = 2, tolerance: float = 0.1) -> np.ndarray:
    """Fold isolated harmonic/subharmonic errors back onto the local pitch.

    A voiced frame whose ratio to the median of its voiced neighbours (up to
    ``radius`` frames away) lies within ``tolerance`` of
    an integer k >= 2, or of 1/k, is divided or multiplied by k.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    out = f0.copy()
    for t in np.flatnonzero(~np.isnan(f0)):
        near = np.r_[f0[max(0, t - radius):t], f0[t + 1:t + radius + 1]]
        near = near[~np.isnan(near)]
        if near.size == 0:
            continue
        ratio = f0[t] / float(np.median(near))
        up, down = round(ratio), round(1.0 / ratio)
        if up >= 2 and abs(ratio / up - 1.0) <= tolerance:
            out[t] = f0[t] / up
        elif down >= 2 and abs(ratio * down - 1.0) <= tolerance:
            out[t] = f0[t] * down
    return out


def extract_features(clip: AudioClip, config: FrontendConfig | None = None) -> FeatureBundle:
    config = config or FrontendConfig()
    rate = clip.sample_rate
    config.check_rate(rate)
    length = config.frame_length(rate)
    hop = config.frame_hop(rate)
    if clip.samples.size < length:
        raise FrontendError(
            f"clip has {clip.samples.size} samples, shorter than one frame ({length})"
        )

    raw_frames = frame_signal(clip.samples, length, hop)
    emphasized = preemphasize(clip, config.preemphasis_coeff).samples
    frames = frame_signal(emphasized, length, hop) * np.hamming(length)

    nfft = config.fft_size(rate)
    spectrum = np.fft.rfft(frames, nfft)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    energies = mel_filterbank_energies(power, config, rate)
    mfcc = mfcc_from_energies(energies, config.num_cepstra)

    f0 = correct_harmonic_errors(
        np.array([estimate_f0(frame, rate, config) for frame in raw_frames])
    )
    # folding can push an edge frame out of range
    f0[(f0 < config.f0_min) | (f0 > config.f0_max)] = UNVOICED
    log_energy = np.log(np.sum(raw_frames ** 2, axis=1) + config.log_floor)
    frame_times = (np.arange(len(raw_frames)) * hop + length / 2.0) / rate
    return FeatureBundle(mfcc=mfcc, f0=f0, log_energy=log_energy, frame_times=frame_times)
