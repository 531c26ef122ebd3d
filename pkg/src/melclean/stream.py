"""Frame-synchronous online enhancement and the one-shot batch entry point.

A StreamSession owns everything one audio stream needs: a sample buffer
for window assembly, the running-mean normalizer, and the model's causal
state. push() accepts chunks of any size (including zero) and emits a
frame the moment its 512-sample analysis window is complete, so the
algorithmic latency is exactly one window. The emitted stream is bitwise
identical for every chunking of the same signal and bitwise identical to
enhance_frames() run on the full signal, which is what makes the batch
path a valid oracle for the streaming one.

enhance_frames() is the mode-agnostic batch pipeline: features, forward
pass, and (for mask targets) mask application, returning enhanced logMel
frames plus the per-frame normalization values needed to undo the online
scaling downstream.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import Tensor
from .model import EnhancementModel
from .normalize import OnlineNorm
from .train import input_features


def masked_logmel(mask: np.ndarray, spec_data: np.ndarray, fb, eps: float):
    """Enhanced logMel from a ratio mask and the (normalized) noisy STFT.

    fb=None keeps linear frequency bins. The mel projection runs through
    einsum so each output frame depends only on its own column; the
    streaming path relies on that for bitwise chunking invariance.
    """
    power = (spec_data.real.astype(np.float64) ** 2
             + spec_data.imag.astype(np.float64) ** 2)
    if fb is not None:
        power = np.einsum("mf,ft->mt", fb, power, optimize=False)
    return dsp.apply_mask(mask.astype(np.float64), power, eps).astype(np.float32)


def enhance_frames(model: EnhancementModel, samples: np.ndarray):
    """Enhance a full waveform -> (logMel [F_out, T] float32, mus [T] | None).

    Online models produce frames in the normalized domain along with the
    mu sequence to undo the scaling; offline models return mus=None. The
    online path runs in the stable-ops lane so it is bitwise comparable
    to a StreamSession fed the same samples.
    """
    cfg = model.config
    x, mus = input_features(samples, cfg)
    ctx = ad.stable_ops() if cfg.online else contextlib.nullcontext()
    with ad.no_grad(), ctx:
        y = model.forward(Tensor(x)).data
    if cfg.target == "mapping":
        return y, mus
    spec = dsp.stft(samples, hop=cfg.hop, centered=not cfg.online)
    data = spec.data / mus if mus is not None else spec.data
    fb = dsp.cached_filterbank() if cfg.frequency_domain == "mel" else None
    return masked_logmel(y, data, fb, cfg.eps), mus


class StreamSession:
    """Single-owner incremental enhancement state for one audio stream.

    Sessions are independent; any number may share one model, which they
    never mutate. Samples left in the buffer when the stream ends are
    shorter than a window and are discarded (their frames never become
    emittable).
    """

    def __init__(self, model: EnhancementModel):
        if not model.config.online:
            raise ValueError("streaming requires an online-mode model")
        self.model = model
        self.hop = model.config.hop
        self.frames_emitted = 0
        # left pad of the causal framing: frame 0 covers [-256, 256)
        self._buf = np.zeros(dsp.WIN_LEN // 2)
        self._norm = OnlineNorm(model.config.norm_k)
        self._state = model.init_stream_state()
        self._fb = (dsp.cached_filterbank()
                    if model.config.frequency_domain == "mel" else None)
        self._finalized = False

    def _spectra(self, samples: np.ndarray) -> np.ndarray:
        """Append samples; return the newly completed frames [257, dT]."""
        buf = np.concatenate([self._buf, samples]) if samples.size else self._buf
        if buf.size < dsp.WIN_LEN:
            self._buf = buf
            return np.zeros((dsp.N_FREQS, 0), dtype=np.complex128)
        n_new = 1 + (buf.size - dsp.WIN_LEN) // self.hop
        idx = np.arange(n_new)[:, None] * self.hop + np.arange(dsp.WIN_LEN)
        frames = buf[idx] * dsp._HANN
        self._buf = buf[n_new * self.hop:]
        return np.fft.rfft(frames, axis=1).T

    def push(self, samples: np.ndarray):
        """Consume a chunk -> (logMel frames [F_out, dT] float32, mus [dT]).

        dT is however many analysis windows the chunk completed, possibly
        zero. Output frames never depend on samples pushed later.
        """
        if self._finalized:
            raise RuntimeError("session already finalized")
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("push takes a 1-D sample chunk")
        if not np.all(np.isfinite(samples)):
            raise ValueError("chunk has non-finite samples")
        spec = self._spectra(samples)
        n_new = spec.shape[1]
        if n_new == 0:
            return (np.zeros((self.model.config.n_out_freq, 0), np.float32),
                    np.zeros(0))
        # same operation order as input_features: magnitudes, chained
        # normalizer steps, one broadcast division
        mags = np.abs(spec)
        mus = np.empty(n_new)
        for t in range(n_new):
            _, mus[t] = self._norm.step(mags[:, t])
        norm = spec / mus
        x = np.stack([norm.real, norm.imag], axis=-1).astype(np.float32)
        with ad.no_grad(), ad.stable_ops():
            y = self.model.stream_step(Tensor(x), self._state).data
        if self.model.config.target == "mask":
            y = masked_logmel(y, norm, self._fb, self.model.config.eps)
        self.frames_emitted += n_new
        return y, mus

    def finalize(self) -> int:
        """Close the session; returns the total frame count. Idempotent;
        further pushes raise."""
        self._finalized = True
        return self.frames_emitted
