import numpy as np
import pytest
from conftest import gradcheck

from melclean import autodiff as ad
from melclean.autodiff import Tensor
from melclean.layers import CrossBand, LayerNorm, MambaCore, NarrowBand, TimeConv


def _zero_params(module):
    for _, t in module.named_params():
        t.data = np.zeros_like(t.data)


def _block_gradcheck(block, x, max_coords=3):
    names = [n for n, _ in block.named_params()]
    tensors = [t for _, t in block.named_params()] + [x]

    def fn(*args):
        for name, t in zip(names, args[:-1]):
            block.rebind(name, t)
        return block(args[-1])

    gradcheck(fn, tensors, max_coords=max_coords)


def test_mamba_zero_params_passes_residual_through():
    rng = np.random.default_rng(0)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=True)
    _zero_params(block)
    x = Tensor(rng.standard_normal((3, 6, 8)).astype(np.float32))
    out = block(x)
    np.testing.assert_array_equal(out.data, x.data)


def test_narrow_band_causal_structure():
    rng = np.random.default_rng(1)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=True)
    x = rng.standard_normal((2, 10, 8)).astype(np.float32)
    base = block(Tensor(x)).data
    bumped = x.copy()
    bumped[:, 6:, 0] += 0.5  # single channel, survives layer norm
    out = block(Tensor(bumped)).data
    assert np.array_equal(out[:, :6], base[:, :6])
    assert not np.array_equal(out[:, 6:], base[:, 6:])


def test_narrow_band_bidirectional_uses_future():
    rng = np.random.default_rng(2)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=False)
    x = rng.standard_normal((2, 10, 8)).astype(np.float32)
    base = block(Tensor(x)).data
    bumped = x.copy()
    bumped[:, 9, 0] += 0.5  # single channel, survives layer norm
    out = block(Tensor(bumped)).data
    assert not np.array_equal(out[:, 0], base[:, 0])


def test_narrow_band_frequency_rows_independent():
    rng = np.random.default_rng(3)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=False)
    x = rng.standard_normal((5, 7, 8)).astype(np.float32)
    base = block(Tensor(x)).data
    bumped = x.copy()
    bumped[2] += 1.0
    out = block(Tensor(bumped)).data
    keep = [0, 1, 3, 4]
    assert np.array_equal(out[keep], base[keep])
    assert not np.array_equal(out[2], base[2])


def test_narrow_band_time_reversal_equivariance():
    # flipping time and swapping the two direction cores flips the output
    rng = np.random.default_rng(4)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=True)
    block2 = NarrowBand(np.random.default_rng(99), 8, 2, causal=False)
    for name, t in block.named_params():
        if name.startswith("fwd."):
            block2.rebind("bwd." + name[4:], t)
            block2.rebind(name, Tensor(t.data.copy(), requires_grad=True))
        else:
            block2.rebind(name, t)
    x = rng.standard_normal((3, 9, 8)).astype(np.float32)
    with ad.stable_ops():
        fwd_of_flip = block2(Tensor(x[:, ::-1].copy())).data
        flip_of_fwd = block2(Tensor(x)).data[:, ::-1]
    np.testing.assert_array_equal(fwd_of_flip, flip_of_fwd)


def test_mamba_block_gradcheck():
    rng = np.random.default_rng(5)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=True)
    x = Tensor(rng.standard_normal((1, 4, 8)).astype(np.float32),
               requires_grad=True)
    _block_gradcheck(block, x)


def test_bidirectional_block_gradcheck():
    rng = np.random.default_rng(6)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=False)
    x = Tensor(rng.standard_normal((2, 4, 8)).astype(np.float32),
               requires_grad=True)
    _block_gradcheck(block, x, max_coords=2)


def test_cross_band_frame_independence():
    rng = np.random.default_rng(7)
    block = CrossBand(rng, n_freq=9, hidden=8)
    x = rng.standard_normal((9, 5, 8)).astype(np.float32)
    base = block(Tensor(x)).data
    bumped = x.copy()
    bumped[:, 3, :] += 1.0
    out = block(Tensor(bumped)).data
    keep = [0, 1, 2, 4]
    assert np.array_equal(out[:, keep], base[:, keep])
    assert not np.array_equal(out[:, 3], base[:, 3])


def test_cross_band_zero_params_identity():
    rng = np.random.default_rng(8)
    block = CrossBand(rng, n_freq=9, hidden=8, compress=2)
    _zero_params(block)
    x = Tensor(rng.standard_normal((9, 5, 8)).astype(np.float32))
    np.testing.assert_array_equal(block(x).data, x.data)


def test_cross_band_gradcheck():
    rng = np.random.default_rng(9)
    block = CrossBand(rng, n_freq=7, hidden=8, compress=2)
    x = Tensor(rng.standard_normal((7, 3, 8)).astype(np.float32),
               requires_grad=True)
    _block_gradcheck(block, x, max_coords=2)


def test_cross_band_batch_matches_loop():
    rng = np.random.default_rng(10)
    block = CrossBand(rng, n_freq=7, hidden=8)
    x = rng.standard_normal((3, 7, 5, 8)).astype(np.float32)
    with ad.stable_ops():
        batched = block(Tensor(x)).data
        singles = np.stack([block(Tensor(x[i])).data for i in range(3)])
    np.testing.assert_array_equal(batched, singles)


# ------------------------------------------------------------- streaming

def test_time_conv_stream_matches_forward():
    rng = np.random.default_rng(11)
    conv = TimeConv(rng, kernel=5, c_in=2, c_out=6, causal=True)
    x = rng.standard_normal((9, 20, 2)).astype(np.float32)
    with ad.stable_ops(), ad.no_grad():
        whole = conv(Tensor(x)).data
        state = conv.init_state((9,))
        outs = []
        for lo, hi in [(0, 3), (3, 4), (4, 11), (11, 20)]:
            y, state = conv.stream(Tensor(x[:, lo:hi]), state)
            outs.append(y.data)
    np.testing.assert_array_equal(np.concatenate(outs, axis=1), whole)


def test_narrow_band_stream_matches_forward():
    rng = np.random.default_rng(12)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=True)
    x = rng.standard_normal((5, 17, 8)).astype(np.float32)
    with ad.stable_ops(), ad.no_grad():
        whole = block(Tensor(x)).data
        state = block.init_state(5)
        outs = []
        for lo, hi in [(0, 1), (1, 6), (6, 7), (7, 17)]:
            y, state = block.stream(Tensor(x[:, lo:hi].copy()), state)
            outs.append(y.data)
    np.testing.assert_array_equal(np.concatenate(outs, axis=1), whole)


def test_layer_norm_chunk_stable():
    # per-frame reduction order must not depend on how frames are batched
    rng = np.random.default_rng(13)
    ln = LayerNorm(24)
    ln.gamma.data = rng.standard_normal(24).astype(np.float32)
    ln.beta.data = rng.standard_normal(24).astype(np.float32)
    x = rng.standard_normal((9, 30, 24)).astype(np.float32)
    whole = ln(Tensor(x)).data
    parts = np.concatenate(
        [ln(Tensor(np.ascontiguousarray(x[:, i:i + 7]))).data
         for i in range(0, 30, 7)], axis=1)
    np.testing.assert_array_equal(whole, parts)


def test_mamba_stream_state_chains_exactly():
    rng = np.random.default_rng(14)
    core = MambaCore(rng, hidden=8, d_state=2)
    x = rng.standard_normal((4, 12, 8)).astype(np.float32)
    with ad.stable_ops(), ad.no_grad():
        whole = core(Tensor(x)).data
        state = core.init_state(4)
        a, state = core.stream(Tensor(x[:, :5].copy()), state)
        b, state = core.stream(Tensor(x[:, 5:].copy()), state)
    np.testing.assert_array_equal(np.concatenate([a.data, b.data], axis=1),
                                  whole)


def test_named_params_unique_and_rebind():
    rng = np.random.default_rng(15)
    block = NarrowBand(rng, hidden=8, d_state=2, causal=False)
    names = [n for n, _ in block.named_params()]
    assert len(names) == len(set(names))
    new = Tensor(np.zeros_like(block.fwd.dt_b.data), requires_grad=True)
    block.rebind("fwd.dt_b", new)
    assert block.fwd.dt_b is new
    assert dict(block.named_params())["fwd.dt_b"] is new


def test_init_scales():
    rng = np.random.default_rng(16)
    core = MambaCore(rng, hidden=16, d_state=3)
    # decay parameter recovers -(1..d_state) per channel
    np.testing.assert_allclose(-np.exp(core.a_log.data),
                               -np.tile(np.arange(1.0, 4.0), (32, 1)),
                               rtol=1e-6)
    np.testing.assert_array_equal(core.d_skip.data, np.ones(32))
    dt0 = np.logaddexp(0, core.dt_b.data)  # softplus at zero input
    assert np.all(dt0 >= 0.009) and np.all(dt0 <= 0.11)
    w = core.in_proj.w.data
    bound = 1.0 / np.sqrt(16)
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.5 * bound
