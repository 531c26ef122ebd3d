"""STFT analysis/synthesis, mel filterbank, logmel features, and ratio masks.

Fixed configuration: 16 kHz audio, 512-sample periodic Hann window,
257 frequency bins, 80 mel bands spanning 0..8000 Hz. Offline processing
uses hop 128 with centered framing; online uses hop 256 with left-only
padding so no frame looks ahead of its last input sample.

All functions here work in float64; the network layer casts to float32
at its own boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WIN_LEN = 512
N_FREQS = 257
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
EPS_OFFLINE = 1e-5
EPS_ONLINE = 1e-4
HOPS = (128, 256)

# Periodic Hann. The squared-window overlap-add in istft() is exact for any
# window as long as the accumulated w^2 stays positive, which holds at both
# hop sizes.
_HANN = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_LEN) / WIN_LEN)


@dataclass
class Spectrogram:
    """Complex STFT coefficients [257, T] plus the framing metadata."""

    data: np.ndarray
    hop: int
    centered: bool = True
    sample_rate: int = SAMPLE_RATE
    win_len: int = WIN_LEN

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != self.win_len // 2 + 1:
            raise ValueError(f"spectrogram shape {self.data.shape} inconsistent "
                             f"with win_len {self.win_len}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def stft(samples: np.ndarray, hop: int, centered: bool = True) -> Spectrogram:
    """Short-time Fourier transform with a 512-sample periodic Hann window.

    Centered framing pads win_len/2 zeros on both sides and yields
    T = 1 + floor(N / hop) frames. Non-centered (online) framing pads
    win_len/2 zeros on the left only, so frame m covers input samples
    [m*hop - 256, m*hop + 256) and T = 1 + floor((N - 256) / hop).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise ValueError("stft needs a non-empty 1-D signal")
    if not np.all(np.isfinite(samples)):
        raise ValueError("stft input has non-finite samples")
    if hop not in HOPS:
        raise ValueError(f"hop must be one of {HOPS}, got {hop}")
    half = WIN_LEN // 2
    if centered:
        padded = np.pad(samples, (half, half))
        n_frames = 1 + samples.size // hop
    else:
        if samples.size < half:
            raise ValueError(f"online framing needs at least {half} samples")
        padded = np.pad(samples, (half, 0))
        n_frames = 1 + (samples.size - half) // hop
    idx = np.arange(n_frames)[:, None] * hop + np.arange(WIN_LEN)
    frames = padded[idx] * _HANN
    data = np.fft.rfft(frames, axis=1).T
    return Spectrogram(np.ascontiguousarray(data), hop, centered)


def istft(spec: Spectrogram, n_samples: int | None = None) -> np.ndarray:
    """Inverse STFT by squared-window overlap-add; inverse of stft().

    n_samples selects the output length; defaults to hop*(T-1), the
    shortest input length that produces T frames.
    """
    if spec.data.shape[0] != spec.win_len // 2 + 1:
        raise ValueError("spectrogram F inconsistent with win_len")
    hop = spec.hop
    n_frames = spec.n_frames
    frames = np.fft.irfft(spec.data.T, n=WIN_LEN, axis=1) * _HANN
    total = (n_frames - 1) * hop + WIN_LEN
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(n_frames):
        start = t * hop
        out[start:start + WIN_LEN] += frames[t]
        wsum[start:start + WIN_LEN] += _HANN * _HANN
    covered = wsum > 1e-8
    out[covered] /= wsum[covered]
    out[~covered] = 0.0
    half = WIN_LEN // 2
    if n_samples is None:
        n_samples = (n_frames - 1) * hop
    return out[half:half + n_samples]


def hz_to_mel(freq_hz):
    """Mel value of a frequency in Hz: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mels):
    """Inverse of hz_to_mel."""
    return 700.0 * (10.0 ** (np.asarray(mels, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank() -> np.ndarray:
    """Triangular mel filterbank [80, 257] for 0..8000 Hz at 16 kHz / 512 FFT.

    82 breakpoints uniformly spaced on the mel scale; filter i is the
    peak-1 triangle over breakpoints (i, i+1, i+2) evaluated at the FFT
    bin centers k * 31.25 Hz. Adjacent filters sum to 1 between their
    centers; no area normalization.
    """
    breaks = mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2))
    bins = np.arange(N_FREQS) * (SAMPLE_RATE / WIN_LEN)
    lo = breaks[:-2, None]
    center = breaks[1:-1, None]
    hi = breaks[2:, None]
    rising = (bins - lo) / (center - lo)
    falling = (hi - bins) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


_FB_CACHE: dict[str, np.ndarray] = {}


def cached_filterbank() -> np.ndarray:
    """Shared read-only filterbank instance (construction is idempotent)."""
    if "fb" not in _FB_CACHE:
        fb = mel_filterbank()
        fb.setflags(write=False)
        _FB_CACHE["fb"] = fb
    return _FB_CACHE["fb"]


def power_mel(spec, fb: np.ndarray) -> np.ndarray:
    """Project squared STFT magnitudes through the filterbank: [80, T]."""
    data = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    if data.shape[0] != fb.shape[1]:
        raise ValueError(f"frequency axis mismatch: {data.shape[0]} vs {fb.shape[1]}")
    power = data.real.astype(np.float64) ** 2 + data.imag.astype(np.float64) ** 2
    return fb @ power


def log_mel(mel: np.ndarray, eps: float) -> np.ndarray:
    """Natural log of the mel power, clipped below at eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return np.log(np.maximum(mel, eps))


def mel_ratio_mask(clean: np.ndarray, noisy: np.ndarray) -> np.ndarray:
    """min(sqrt(clean / noisy), 1) elementwise, in [0, 1].

    Zero noisy bins map to 1 where clean > 0 and to 0 where clean == 0.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ValueError("mask inputs must share a shape")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = clean / noisy
    ratio = np.where(noisy == 0.0, np.where(clean > 0.0, 1.0, 0.0), ratio)
    return np.minimum(np.sqrt(ratio), 1.0)


def apply_mask(mask: np.ndarray, noisy_mel: np.ndarray, eps: float) -> np.ndarray:
    """Enhanced logmel from a ratio mask: ln(max(mask^2 * noisy, eps))."""
    mask = np.asarray(mask, dtype=np.float64)
    noisy_mel = np.asarray(noisy_mel, dtype=np.float64)
    if mask.shape != noisy_mel.shape:
        raise ValueError("mask and mel shapes differ")
    return log_mel(mask * mask * noisy_mel, eps)
