"""Signal-level alignment: offline dBFS gain and online recursive
STFT-magnitude normalization.

Offline mode scales the waveform so its peak sits at a target dBFS drawn
from [-6, -1]; the same gain must be reused on the paired clean signal.
Online mode divides each STFT frame by a running mean mu(t) of the
per-frame average magnitude:

    mu(t) = alpha * mu(t-1) + (1 - alpha) * mean_f |Y(f, t)|

with alpha = (K - 1) / (K + 1). mu(0) is seeded with the first frame's
own mean so the normalized stream is exactly invariant to input scale.
State is kept in float64; one OnlineNorm instance per stream.
"""

from __future__ import annotations

import numpy as np

DEFAULT_K = 200
MU_FLOOR = 1e-10
TARGET_DBFS_RANGE = (-6.0, -1.0)


def offline_gain(samples: np.ndarray, target_dbfs: float | None = None,
                 rng: np.random.Generator | None = None):
    """Gain that puts the waveform peak at target_dbfs; returns (gain, scaled).

    When target_dbfs is None it is drawn uniformly from [-6, -1] using rng.
    Raises ValueError on all-zero input.
    """
    samples = np.asarray(samples, dtype=np.float64)
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0.0:
        raise ValueError("offline_gain needs a non-silent signal")
    if target_dbfs is None:
        if rng is None:
            raise ValueError("need an rng when target_dbfs is not fixed")
        target_dbfs = rng.uniform(*TARGET_DBFS_RANGE)
    gain = 10.0 ** (target_dbfs / 20.0) / peak
    return gain, samples * gain


class OnlineNorm:
    """Recursive per-frame magnitude normalization state for one stream."""

    def __init__(self, K: int = DEFAULT_K):
        if K < 2:
            raise ValueError("K must be at least 2")
        self.alpha = (K - 1.0) / (K + 1.0)
        self.mu: float | None = None
        self.frames_seen = 0

    def step(self, frame: np.ndarray):
        """Consume one complex frame [F]; returns (frame / mu(t), mu(t))."""
        mean_mag = float(np.mean(np.abs(np.asarray(frame, dtype=np.complex128))))
        if self.mu is None:
            mu = mean_mag
        else:
            mu = self.alpha * self.mu + (1.0 - self.alpha) * mean_mag
        mu = max(mu, MU_FLOOR)
        self.mu = mu
        self.frames_seen += 1
        return frame / mu, mu

    def process(self, frames: np.ndarray):
        """Normalize complex frames [F, T] in order; returns (normalized, mus [T])."""
        frames = np.asarray(frames)
        out = np.empty_like(frames, dtype=np.complex128)
        mus = np.empty(frames.shape[1])
        for t in range(frames.shape[1]):
            out[:, t], mus[t] = self.step(frames[:, t])
        return out, mus


def denormalize(frames: np.ndarray, mus: np.ndarray) -> np.ndarray:
    """Multiply recorded mu(t) back onto normalized frames [F, T]."""
    return np.asarray(frames) * np.asarray(mus)[None, :]
