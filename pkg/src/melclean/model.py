"""Enhancement network: input conv, a full-resolution cross-band +
narrow-band pair, projection onto the mel axis, further pairs in the mel
domain (sharing one across-frequency linear), and a 1-d output head.

The mel projection is a fixed matrix, not a parameter. In the "linear"
frequency-domain variant the projection is skipped and every stage runs
at full resolution through the channel bottleneck, which keeps the
across-frequency linear comparably sized; masks then have 257 bins.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import Tensor
from .layers import CrossBand, FreqLinear, Linear, Module, NarrowBand, TimeConv

CHECKPOINT_MAGIC = "melclean-checkpoint"


class CheckpointMismatch(Exception):
    """Checkpoint contents do not fit the requested model."""


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "offline"            # offline | online
    target: str = "mapping"          # mapping | mask
    depth: int = 8                   # number of cross/narrow pairs
    hidden: int = 96
    d_state: int = 16
    n_mels: int = dsp.N_MELS
    compress_div: int = 12
    frequency_domain: str = "mel"    # mel | linear
    norm_k: int = 200                # online normalizer memory, frames

    def __post_init__(self):
        if self.mode not in ("offline", "online"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.target not in ("mapping", "mask"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.frequency_domain not in ("mel", "linear"):
            raise ValueError(
                f"unknown frequency_domain {self.frequency_domain!r}")
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.hidden % self.compress_div:
            raise ValueError("hidden must be divisible by compress_div")
        if self.hidden % CrossBand.GROUPS:
            raise ValueError("hidden must be divisible by the conv groups")
        if self.frequency_domain == "linear" and self.target != "mask":
            raise ValueError("linear frequency domain supports mask only")
        if self.norm_k < 2:
            raise ValueError("norm_k must be at least 2")

    @property
    def online(self) -> bool:
        return self.mode == "online"

    @property
    def hop(self) -> int:
        return 256 if self.online else 128

    @property
    def eps(self) -> float:
        return dsp.EPS_ONLINE if self.online else dsp.EPS_OFFLINE

    @property
    def n_out_freq(self) -> int:
        return self.n_mels if self.frequency_domain == "mel" else dsp.N_FREQS


class EnhancementModel(Module):
    def __init__(self, config: ModelConfig, seed: int):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        h = config.hidden
        causal = config.online
        compress = h // config.compress_div
        self.input_conv = self._c(
            "input_conv", TimeConv(rng, 5, 2, h, causal=causal))
        self.cross0 = self._c(
            "cross0", CrossBand(rng, dsp.N_FREQS, h, compress=compress))
        self.narrow0 = self._c(
            "narrow0", NarrowBand(rng, h, config.d_state, causal=causal))
        mel_domain = config.frequency_domain == "mel"
        self.fb = (np.asarray(dsp.cached_filterbank(), dtype=np.float32)
                   if mel_domain else None)
        n_freq = config.n_out_freq
        shared_args = ((n_freq, h) if mel_domain else (n_freq, compress))
        self.shared_flinear = self._c(
            "shared_flinear", FreqLinear(rng, *shared_args))
        stage_compress = None if mel_domain else compress
        self.crosses = []
        self.narrows = []
        for i in range(config.depth - 1):
            self.crosses.append(self._c(
                f"cross{i + 1}",
                CrossBand(rng, n_freq, h, compress=stage_compress,
                          flinear=self.shared_flinear)))
            self.narrows.append(self._c(
                f"narrow{i + 1}",
                NarrowBand(rng, h, config.d_state, causal=causal)))
        self.head = self._c("head", Linear(rng, h, 1))

    def param_count(self) -> int:
        return sum(t.data.size for _, t in self.named_params())

    def _apply_head(self, h: Tensor) -> Tensor:
        y = self.head(h)
        y = ad.reshape(y, y.data.shape[:-1])
        if self.config.target == "mask":
            y = ad.sigmoid(y)
        return y

    def forward(self, x: Tensor) -> Tensor:
        """[..., 257, T, 2] normalized re/im input -> [..., F_out, T]."""
        if x.data.shape[-3] != dsp.N_FREQS:
            raise ValueError("input must have 257 frequency rows")
        h = self.input_conv(x)
        h = self.narrow0(self.cross0(h))
        if self.fb is not None:
            h = ad.mel_project(h, self.fb)
        for cross, narrow in zip(self.crosses, self.narrows):
            h = narrow(cross(h))
        return self._apply_head(h)

    # ------------------------------------------------------- streaming

    def init_stream_state(self) -> dict:
        if not self.config.online:
            raise ValueError("streaming requires an online-mode model")
        n_freq = self.config.n_out_freq
        return {
            "input": self.input_conv.init_state((dsp.N_FREQS,)),
            "narrow0": self.narrow0.init_state(dsp.N_FREQS),
            "narrows": [nb.init_state(n_freq) for nb in self.narrows],
        }

    def stream_step(self, x: Tensor, state: dict) -> Tensor:
        """Process [257, dT, 2] new frames; mutates state. Emits the same
        frames the one-shot forward would, bitwise (stable-ops lane)."""
        h, state["input"] = self.input_conv.stream(x, state["input"])
        h = self.cross0(h)
        h, state["narrow0"] = self.narrow0.stream(h, state["narrow0"])
        if self.fb is not None:
            h = ad.mel_project(h, self.fb)
        for i, (cross, narrow) in enumerate(zip(self.crosses, self.narrows)):
            h, state["narrows"][i] = narrow.stream(cross(h),
                                                   state["narrows"][i])
        return self._apply_head(h)


def build(config: ModelConfig, seed: int) -> EnhancementModel:
    """Deterministically initialized model; same seed, same parameters."""
    return EnhancementModel(config, seed)


# ------------------------------------------------------------ checkpoints

def save_checkpoint(path, model: EnhancementModel) -> None:
    """One JSON index line, then the parameter records as raw
    little-endian float32 in index order."""
    records = [{"name": name, "shape": list(t.data.shape)}
               for name, t in model.named_params()]
    header = {"magic": CHECKPOINT_MAGIC, "version": 1,
              "config": dataclasses.asdict(model.config),
              "records": records}
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        for _, t in model.named_params():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def read_checkpoint(path):
    """-> (ModelConfig, {name: float32 array}). Raises CheckpointMismatch
    on malformed or truncated files."""
    with open(path, "rb") as f:
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointMismatch(f"bad checkpoint header: {exc}") from exc
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise CheckpointMismatch("not a checkpoint file")
        try:
            config = ModelConfig(**header["config"])
        except (TypeError, ValueError, KeyError) as exc:
            raise CheckpointMismatch(f"bad embedded config: {exc}") from exc
        params = {}
        for rec in header.get("records", []):
            shape = tuple(int(s) for s in rec["shape"])
            n_bytes = 4 * math.prod(shape)
            buf = f.read(n_bytes)
            if len(buf) != n_bytes:
                raise CheckpointMismatch("truncated checkpoint")
            params[rec["name"]] = (np.frombuffer(buf, dtype="<f4")
                                   .reshape(shape).copy())
    return config, params


def load_params(model: EnhancementModel, params: dict) -> None:
    """Copy arrays into the model, validating names and shapes."""
    own = dict(model.named_params())
    if set(own) != set(params):
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        raise CheckpointMismatch(
            f"parameter names differ (missing {missing}, extra {extra})")
    for name, t in own.items():
        if params[name].shape != t.data.shape:
            raise CheckpointMismatch(
                f"shape mismatch for {name}: checkpoint "
                f"{params[name].shape}, model {t.data.shape}")
        t.data = np.ascontiguousarray(params[name], dtype=np.float32)


def load_model(path) -> EnhancementModel:
    """Build the model described by a checkpoint and load its weights."""
    config, params = read_checkpoint(path)
    model = build(config, seed=0)
    load_params(model, params)
    return model
