"""Grayscale logMel spectrogram rendering.

One pixel per time-frequency bin: width T, height 80, low mel bins at
the bottom, intensity mapped linearly from the fixed range
[ln eps, max(logmel)] to 0..255. Silence (everything at the clip floor)
renders black rather than dividing by a zero range.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def logmel_pixels(logmel: np.ndarray, eps: float) -> np.ndarray:
    """-> uint8 image array [80, T]; row 0 is the highest mel bin."""
    logmel = np.asarray(logmel, dtype=np.float64)
    if logmel.ndim != 2:
        raise ValueError("logmel must be [n_mels, T]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    lo = np.log(eps)
    hi = float(logmel.max()) if logmel.size else lo
    span = hi - lo
    if span <= 0:
        scaled = np.zeros_like(logmel)
    else:
        scaled = np.clip((logmel - lo) / span, 0.0, 1.0)
    img = np.round(scaled * 255.0).astype(np.uint8)
    return img[::-1, :]


def write_png(path: str, logmel: np.ndarray, eps: float) -> tuple[int, int]:
    """Render to a PNG file; returns (width, height) = (T, n_mels)."""
    pixels = logmel_pixels(logmel, eps)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")
    return pixels.shape[1], pixels.shape[0]
