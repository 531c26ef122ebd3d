"""Objective quality metrics: logMel MAE, log-spectral distance, SI-SDR.

All three are pure float64 functions of numpy arrays. logmel_mae follows
the same contract as the mapping training loss so reported numbers are
comparable with training curves.
"""

from __future__ import annotations

import numpy as np

LSD_FLOOR = 1e-8
SI_SDR_CAP_DB = 60.0


def logmel_mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference between two logMel arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def lsd(mag_a: np.ndarray, mag_b: np.ndarray) -> float:
    """Log-spectral distance in dB between magnitude arrays [F, T].

    Per frame: rms over frequency of 20*log10(a/b); returned value is the
    mean over frames. Magnitudes are floored at 1e-8 first.
    """
    a = np.asarray(mag_a, dtype=np.float64)
    b = np.asarray(mag_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("lsd expects [F, T] magnitude arrays")
    r = 20.0 * np.log10(np.maximum(a, LSD_FLOOR) / np.maximum(b, LSD_FLOOR))
    return float(np.mean(np.sqrt(np.mean(r * r, axis=0))))


def si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at +60.

    The reference is rescaled by the least-squares projection coefficient
    before the energy ratio, so the value ignores any gain on the
    estimate. Raises on length mismatch or an all-zero reference.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError("si_sdr expects two equal-length 1-D signals")
    ref_pow = float(np.dot(ref, ref))
    if ref_pow == 0.0:
        raise ValueError("si_sdr reference is all zeros")
    alpha = float(np.dot(est, ref)) / ref_pow
    target = alpha * ref
    noise = est - target
    target_pow = float(np.dot(target, target))
    noise_pow = float(np.dot(noise, noise))
    if noise_pow == 0.0:
        return SI_SDR_CAP_DB
    if target_pow == 0.0:
        return float("-inf")
    return min(10.0 * np.log10(target_pow / noise_pow), SI_SDR_CAP_DB)
