"""WAV reading and writing at the fixed 16 kHz mono project rate.

Accepts 16-bit PCM and 32-bit float input; always writes 16-bit PCM.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000

# scipy emits WavFileWarning for some valid-but-odd headers; errors below
# cover the cases the pipeline actually rejects.


class AudioFormatError(ValueError):
    """Raised when a WAV file cannot be used by the pipeline."""


def read_wav(path) -> np.ndarray:
    """Read a WAV file, returning float64 samples scaled to [-1, 1].

    Raises FileNotFoundError for missing paths and AudioFormatError for
    wrong rate, non-mono layout, unsupported sample format, or
    non-finite data.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: sample rate {rate}, need {SAMPLE_RATE}")
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: {data.shape[1]} channels, need mono")
    if data.size == 0:
        raise AudioFormatError(f"{path}: empty audio")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    if not np.all(np.isfinite(samples)):
        raise AudioFormatError(f"{path}: non-finite samples")
    return samples


def write_wav(path, samples: np.ndarray) -> None:
    """Write float samples as 16-bit PCM, clipping to the representable range."""
    samples = np.asarray(samples, dtype=np.float64)
    clipped = np.clip(samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype(np.int16)
    wavfile.write(path, SAMPLE_RATE, pcm)
