"""Waveform reconstruction from enhanced logMel frames.

The mel filterbank is short and fat, so going back to linear frequency is
a least-squares problem: apply the pseudo-inverse of the filterbank to
the mel power, clamp the inevitable small negatives at zero, and take the
square root. Phase comes from the noisy spectrogram by default (cheap,
deterministic, keeps timing intact) or from Griffin-Lim when no aligned
complex spectrogram exists. Online streams carry per-frame normalization
values mu(t) which are multiplied back onto the magnitudes before the
inverse STFT, so output loudness follows input loudness.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from . import dsp
from .dsp import Spectrogram

DEFAULT_GL_ITERS = 32
PEAK_LIMIT = 0.99

# id-keyed so the cached_filterbank() singleton never recomputes; the fb
# reference is stored to keep the id alive
_PINV_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _pinv(fb: np.ndarray) -> np.ndarray:
    hit = _PINV_CACHE.get(id(fb))
    if hit is not None and hit[0] is fb:
        return hit[1]
    p = scipy.linalg.pinv(fb)
    _PINV_CACHE[id(fb)] = (fb, p)
    return p


def mel_to_linear_magnitude(logmel: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Least-squares linear-frequency magnitudes [257, T] from logMel."""
    logmel = np.asarray(logmel, dtype=np.float64)
    fb = np.asarray(fb)
    if logmel.ndim != 2 or logmel.shape[0] != fb.shape[0]:
        raise ValueError(f"logmel shape {logmel.shape} does not match "
                         f"filterbank {fb.shape}")
    power = _pinv(fb) @ np.exp(logmel)
    return np.sqrt(np.maximum(power, 0.0))


def griffin_lim(magnitude: np.ndarray, hop: int, centered: bool,
                n_iter: int = DEFAULT_GL_ITERS,
                n_samples: int | None = None) -> np.ndarray:
    """Phase retrieval by alternating projections, zero-phase start.

    Deterministic; more iterations trade time for phase consistency.
    """
    if n_iter < 0:
        raise ValueError("n_iter must be non-negative")
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if n_samples is None:
        n_samples = _default_length(magnitude.shape[1], hop, centered)
    data = magnitude.astype(np.complex128)
    wave = dsp.istft(Spectrogram(data, hop, centered), n_samples)
    for _ in range(n_iter):
        spec = dsp.stft(wave, hop=hop, centered=centered)
        if spec.n_frames != magnitude.shape[1]:
            raise ValueError("signal too short for stable phase iteration")
        data = magnitude * _unit_phase(spec.data)
        wave = dsp.istft(Spectrogram(data, hop, centered), n_samples)
    return wave


def _unit_phase(data: np.ndarray) -> np.ndarray:
    mag = np.abs(data)
    safe = np.where(mag == 0.0, 1.0, mag)
    phase = data / safe
    return np.where(mag == 0.0, 1.0 + 0.0j, phase)


def _default_length(n_frames: int, hop: int, centered: bool) -> int:
    # shortest signal whose framing yields exactly n_frames
    extra = 0 if centered else dsp.WIN_LEN // 2
    return (n_frames - 1) * hop + extra


def waveform_from_logmel(logmel: np.ndarray, fb: np.ndarray | None = None,
                         phase_spec: Spectrogram | None = None,
                         mus: np.ndarray | None = None,
                         hop: int | None = None, centered: bool | None = None,
                         n_samples: int | None = None,
                         gl_iters: int = DEFAULT_GL_ITERS) -> np.ndarray:
    """Enhanced logMel -> waveform; the deterministic vocoder stand-in.

    Phase is taken from phase_spec (an aligned complex spectrogram, which
    also fixes the framing) when given, otherwise from Griffin-Lim with
    hop and centered passed explicitly. mus is required for non-centered
    (online) framing, where frames live in the normalized domain. The
    output peak is limited below 1 by rescaling when necessary.
    """
    logmel = np.asarray(logmel, dtype=np.float64)
    fb = dsp.cached_filterbank() if fb is None else fb
    if phase_spec is not None:
        if phase_spec.n_frames != logmel.shape[1]:
            raise ValueError(f"phase frames {phase_spec.n_frames} != "
                             f"logmel frames {logmel.shape[1]}")
        hop = phase_spec.hop
        centered = phase_spec.centered
    elif hop is None or centered is None:
        raise ValueError("griffin_lim reconstruction needs hop and centered")
    if not centered and mus is None:
        raise ValueError("online reconstruction needs the mu sequence")
    mag = mel_to_linear_magnitude(logmel, fb)
    if mus is not None:
        mus = np.asarray(mus, dtype=np.float64)
        if mus.shape != (logmel.shape[1],):
            raise ValueError("mus length does not match the frame count")
        mag = mag * mus[None, :]
    if n_samples is None:
        n_samples = _default_length(logmel.shape[1], hop, centered)
    if phase_spec is not None:
        spec = Spectrogram(mag * _unit_phase(phase_spec.data), hop, centered)
        wave = dsp.istft(spec, n_samples)
    else:
        wave = griffin_lim(mag, hop, centered, n_iter=gl_iters,
                           n_samples=n_samples)
    peak = float(np.max(np.abs(wave))) if wave.size else 0.0
    if peak > PEAK_LIMIT:
        wave = wave * (PEAK_LIMIT / peak)
    return wave
