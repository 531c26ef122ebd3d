"""Synthesis of (noisy, direct-path clean) training pairs.

A corpus is a manifest of WAV files with roles (speech, rir, noise).
Each pair is described by a seedable recipe: with probability 0.8 the
speech is convolved with a full RIR for the noisy side and with the
RIR's direct-path part for the clean target; noise is added at an SNR
drawn from [-5, 20] dB; the noisy signal's offline gain is applied to
both sides.

The module also provides deterministic speech-, noise-, and RIR-like
generators so a self-contained demo corpus can be synthesized without
any external data.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .audio import SAMPLE_RATE, read_wav, write_wav
from .normalize import TARGET_DBFS_RANGE, offline_gain

DIRECT_PRE = 8     # samples kept before the RIR peak (0.5 ms)
DIRECT_POST = 40   # samples kept after the RIR peak (2.5 ms)
REVERB_PROB = 0.8
SNR_RANGE = (-5.0, 20.0)
ROLES = ("speech", "rir", "noise")


# ------------------------------------------------------------ core ops

def extract_direct_path(rir: np.ndarray, pre: int = DIRECT_PRE,
                        post: int = DIRECT_POST) -> np.ndarray:
    """Zero the RIR outside [peak - pre, peak + post] around its absolute peak."""
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 0 or np.max(np.abs(rir)) == 0.0:
        raise ValueError("RIR has no energy")
    peak = int(np.argmax(np.abs(rir)))
    out = np.zeros_like(rir)
    lo = max(0, peak - pre)
    hi = min(rir.size, peak + post + 1)
    out[lo:hi] = rir[lo:hi]
    return out


def reverberate(speech: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """Full linear convolution truncated to the speech length."""
    speech = np.asarray(speech, dtype=np.float64)
    rir = np.asarray(rir, dtype=np.float64)
    if speech.size == 0 or rir.size == 0:
        raise ValueError("reverberate needs non-empty inputs")
    return fftconvolve(speech, rir)[:speech.size]


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """speech + g*noise with g chosen so the full-length power SNR is snr_db."""
    speech = np.asarray(speech, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if speech.shape != noise.shape:
        raise ValueError("speech and noise lengths differ")
    p_speech = float(np.mean(speech ** 2))
    p_noise = float(np.mean(noise ** 2))
    if p_speech == 0.0 or p_noise == 0.0:
        raise ValueError("mix_at_snr needs non-silent speech and noise")
    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    return speech + gain * noise


def fit_length(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded random crop when longer than n, seeded circular loop when shorter."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size >= n:
        start = int(rng.integers(0, noise.size - n + 1))
        return noise[start:start + n].copy()
    start = int(rng.integers(0, noise.size))
    reps = 2 + n // noise.size
    return np.tile(np.roll(noise, -start), reps)[:n].copy()


# ------------------------------------------------- deterministic generators

def speechlike(duration: float, seed: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Deterministic speech-like utterance: pitched harmonics shaped by
    drifting formant resonances, syllable envelopes with silent gaps, and
    occasional fricative-like bursts. Peak is about 0.9."""
    rng = np.random.default_rng([seed, 0x5133C4])
    n = int(round(duration * sr))
    t = np.arange(n) / sr

    # syllable on/off envelope with 10 ms raised-cosine edges
    env = np.zeros(n)
    edge = int(0.010 * sr)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    pos = int(rng.uniform(0, 0.02) * sr)
    gaps = []
    while pos < n:
        seg = int(rng.uniform(0.10, 0.25) * sr)
        hi = min(pos + seg, n)
        env[pos:hi] = 1.0
        if hi - pos > 2 * edge:
            env[pos:pos + edge] = ramp
            env[hi - edge:hi] = ramp[::-1]
        gap = int(rng.uniform(0.04, 0.12) * sr)
        gaps.append((hi, min(hi + gap, n)))
        pos = hi + gap

    # pitch contour and harmonic phases
    f0 = rng.uniform(105.0, 215.0)
    contour = f0 * (1.0 + 0.12 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t
                                        + rng.uniform(0, 2 * np.pi)))
    phase = np.cumsum(2 * np.pi * contour / sr)
    n_harm = min(int(7600.0 / np.max(contour)), 48)

    # formant envelope evaluated on a 10 ms grid per harmonic
    formants = np.array([rng.uniform(300, 800), rng.uniform(900, 2200),
                         rng.uniform(2300, 3200), rng.uniform(3400, 4600)])
    bws = rng.uniform(90, 260, 4)
    fgains = rng.uniform(0.5, 1.0, 4)
    grid = np.arange(0, n, 160)
    voiced = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * contour[grid]
        amp = np.zeros(grid.size)
        for fi, bw, g in zip(formants, bws, fgains):
            amp += g / (1.0 + ((fk - fi) / bw) ** 2)
        amp *= 1.0 / (1.0 + (fk / 3200.0) ** 2) / k ** 0.3
        amp_full = np.interp(np.arange(n), grid, amp)
        voiced += amp_full * np.cos(k * phase + rng.uniform(0, 2 * np.pi))
    x = voiced * env

    # fricative-like bursts in some inter-syllable gaps
    for lo, hi in gaps:
        if hi - lo > int(0.05 * sr) and rng.random() < 0.4:
            span = hi - lo
            noise = rng.standard_normal(span)
            shaped = np.fft.irfft(np.fft.rfft(noise) *
                                  _band_shape(span, sr, 2000.0, 6000.0), n=span)
            burst_env = np.sin(np.pi * np.arange(span) / span) ** 2
            x[lo:hi] += 0.12 * shaped / max(np.max(np.abs(shaped)), 1e-9) * burst_env

    # faint breath floor so no frame is digitally silent
    x += 1e-4 * rng.standard_normal(n)
    peak = np.max(np.abs(x))
    return 0.9 * x / peak


def _band_shape(n: int, sr: int, lo: float, hi: float) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    shape = np.exp(-0.5 * ((freqs - (lo + hi) / 2) / ((hi - lo) / 4)) ** 2)
    return shape


def noiselike(duration: float, seed: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Deterministic noise: white, pink-ish, or hum plus floor; peak about 0.9."""
    rng = np.random.default_rng([seed, 0x401513])
    n = int(round(duration * sr))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        x = rng.standard_normal(n)
    elif kind == 1:
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        spec /= np.sqrt(1.0 + freqs / 50.0)
        x = np.fft.irfft(spec, n=n)
    else:
        t = np.arange(n) / sr
        x = np.zeros(n)
        for h, a in ((50.0, 1.0), (100.0, 0.6), (150.0, 0.3)):
            x += a * np.sin(2 * np.pi * h * t + rng.uniform(0, 2 * np.pi))
        x += 0.15 * rng.standard_normal(n)
    return 0.9 * x / np.max(np.abs(x))


def rirlike(seed: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Deterministic room impulse response: unit direct peak after a random
    propagation delay, early reflections, and an exponentially decaying tail."""
    rng = np.random.default_rng([seed, 0x717])
    delay = int(rng.integers(40, 200))
    t60 = rng.uniform(0.15, 0.45)
    length = delay + int(1.1 * t60 * sr)
    rir = np.zeros(length)
    rir[delay] = 1.0
    for _ in range(int(rng.integers(5, 12))):
        at = delay + int(rng.uniform(0.001, 0.04) * sr)
        if at < length:
            rir[at] += rng.uniform(0.1, 0.55) * rng.choice([-1.0, 1.0])
    tail_at = delay + int(0.004 * sr)
    span = length - tail_at
    decay = np.exp(-6.9077553 * np.arange(span) / (t60 * sr))
    rir[tail_at:] += 0.3 * rng.standard_normal(span) * decay
    return rir


# ---------------------------------------------------- corpus and recipes

@dataclass(frozen=True)
class Recipe:
    """Seedable description of one noisy/clean pair."""
    speech_id: str
    rir_id: str | None
    noise_id: str
    snr_db: float
    target_dbfs: float
    seed: int


class Corpus:
    """Resolved manifest: role-tagged WAV paths relative to the manifest."""

    def __init__(self, speech: list[str], rir: list[str], noise: list[str],
                 root: str = "."):
        if not speech or not noise:
            raise ValueError("corpus needs at least one speech and one noise entry")
        self.speech = speech
        self.rir = rir
        self.noise = noise
        self.root = root

    @classmethod
    def from_manifest(cls, path) -> "Corpus":
        root = os.path.dirname(os.path.abspath(path))
        lists: dict[str, list[str]] = {r: [] for r in ROLES}
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                try:
                    role, rel = line.split("\t")
                except ValueError:
                    raise ValueError(f"{path}:{line_no}: expected 'role<TAB>path'")
                if role not in ROLES:
                    raise ValueError(f"{path}:{line_no}: unknown role {role!r}")
                full = os.path.join(root, rel)
                if not os.path.isfile(full):
                    raise FileNotFoundError(f"{path}:{line_no}: missing file {full}")
                lists[role].append(rel)
        return cls(lists["speech"], lists["rir"], lists["noise"], root)

    def load(self, rel_path: str) -> np.ndarray:
        return read_wav(os.path.join(self.root, rel_path))


def draw_recipe(seed: int, corpus: Corpus, reverb_prob: float = REVERB_PROB,
                snr_range=SNR_RANGE, dbfs_range=TARGET_DBFS_RANGE) -> Recipe:
    """Draw one recipe; all randomness comes from the seed."""
    rng = np.random.default_rng([seed, 0x21EC1BE])
    speech_id = corpus.speech[int(rng.integers(0, len(corpus.speech)))]
    noise_id = corpus.noise[int(rng.integers(0, len(corpus.noise)))]
    rir_id = None
    if corpus.rir and rng.random() < reverb_prob:
        rir_id = corpus.rir[int(rng.integers(0, len(corpus.rir)))]
    snr_db = float(rng.uniform(*snr_range))
    target_dbfs = float(rng.uniform(*dbfs_range))
    return Recipe(speech_id, rir_id, noise_id, snr_db, target_dbfs, seed)


def make_pair(recipe: Recipe, corpus: Corpus):
    """Render a recipe into (noisy, clean) float waveforms of equal length."""
    rng = np.random.default_rng([recipe.seed, 0xFA12])
    speech = corpus.load(recipe.speech_id)
    if recipe.rir_id is not None:
        rir = corpus.load(recipe.rir_id)
        wet = reverberate(speech, rir)
        clean = reverberate(speech, extract_direct_path(rir))
    else:
        wet = speech
        clean = speech.copy()
    noise = fit_length(corpus.load(recipe.noise_id), speech.size, rng)
    mixture = mix_at_snr(wet, noise, recipe.snr_db)
    gain, noisy = offline_gain(mixture, target_dbfs=recipe.target_dbfs)
    return noisy, clean * gain


# ----------------------------------------------------- demo corpus files

def make_demo_corpus(out_dir, seed: int = 0, n_speech: int = 12, n_rir: int = 8,
                     n_noise: int = 8, duration: float = 1.0) -> str:
    """Write a self-contained synthetic corpus plus manifest; returns the
    manifest path. Noise files vary in length around the speech duration so
    both the crop and the loop paths get exercised."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng([seed, 0xC0B905])
    lines = []
    for i in range(n_speech):
        rel = f"speech_{i:03d}.wav"
        write_wav(os.path.join(out_dir, rel), speechlike(duration, seed * 1000 + i))
        lines.append(("speech", rel))
    for i in range(n_rir):
        rel = f"rir_{i:03d}.wav"
        write_wav(os.path.join(out_dir, rel), rirlike(seed * 1000 + i))
        lines.append(("rir", rel))
    for i in range(n_noise):
        rel = f"noise_{i:03d}.wav"
        dur = duration * float(rng.uniform(0.6, 2.0))
        write_wav(os.path.join(out_dir, rel), noiselike(dur, seed * 1000 + i))
        lines.append(("noise", rel))
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        for role, rel in lines:
            fh.write(f"{role}\t{rel}\n")
    return manifest


def dump_one_pair(out_dir, corpus: Corpus, index: int, seed: int,
                  reverb_prob: float = REVERB_PROB, snr_range=SNR_RANGE,
                  dbfs_range=TARGET_DBFS_RANGE) -> str:
    """Write pair number `index` (seeded by seed+index); returns its stem.
    Independent of every other pair, so any fan-out order is fine."""
    recipe = draw_recipe(seed + index, corpus, reverb_prob=reverb_prob,
                         snr_range=snr_range, dbfs_range=dbfs_range)
    noisy, clean = make_pair(recipe, corpus)
    stem = f"{index:06d}"
    write_wav(os.path.join(out_dir, f"{stem}.noisy.wav"), noisy)
    write_wav(os.path.join(out_dir, f"{stem}.clean.wav"), clean)
    return stem


def dump_pairs(out_dir, corpus: Corpus, n: int, seed: int,
               reverb_prob: float = REVERB_PROB, snr_range=SNR_RANGE,
               dbfs_range=TARGET_DBFS_RANGE) -> list[str]:
    """Write n synthesized pairs as {id}.noisy.wav / {id}.clean.wav."""
    os.makedirs(out_dir, exist_ok=True)
    return [dump_one_pair(out_dir, corpus, i, seed, reverb_prob=reverb_prob,
                          snr_range=snr_range, dbfs_range=dbfs_range)
            for i in range(n)]
