import math

import numpy as np
import pytest

from melclean import dsp


# ---------------------------------------------------------------- STFT

def test_stft_zero_input():
    spec = dsp.stft(np.zeros(512), hop=256)
    assert spec.data.shape == (257, 3)
    assert np.all(spec.data == 0)


def test_stft_frame_counts():
    assert dsp.stft(np.zeros(16000), hop=128).n_frames == 126
    assert dsp.stft(np.zeros(16000), hop=256).n_frames == 63
    assert dsp.stft(np.zeros(768), hop=256, centered=False).n_frames == 3


def test_stft_sinusoid_peaks_at_its_bin():
    k = 32
    n = np.arange(16000)
    x = np.cos(2 * np.pi * k / 512 * n)
    spec = dsp.stft(x, hop=128)
    mags = np.abs(spec.data)
    for t in range(20, spec.n_frames - 20):
        assert np.argmax(mags[:, t]) == k


def test_stft_rejects_bad_input():
    with pytest.raises(ValueError):
        dsp.stft(np.array([]), hop=128)
    with pytest.raises(ValueError):
        dsp.stft(np.array([np.nan, 0.0]), hop=128)
    with pytest.raises(ValueError):
        dsp.stft(np.zeros(100), hop=100)


def test_roundtrip_both_hops():
    rng = np.random.default_rng(7)
    for hop in (128, 256):
        for dur in (0.2, 0.73, 2.0):
            x = rng.standard_normal(int(16000 * dur))
            y = dsp.istft(dsp.stft(x, hop=hop), n_samples=x.size)
            assert np.max(np.abs(y - x)) < 1e-6


def test_roundtrip_online_framing():
    rng = np.random.default_rng(8)
    x = rng.standard_normal(8000)
    spec = dsp.stft(x, hop=256, centered=False)
    y = dsp.istft(spec, n_samples=(spec.n_frames - 1) * 256)
    # frame m covers [m*hop-256, m*hop+256); samples before the last frame
    # center are fully covered by the analysis
    n_ok = (spec.n_frames - 1) * 256
    assert np.max(np.abs(y - x[:n_ok])) < 1e-6


def test_istft_zero_and_single_frame():
    spec = dsp.Spectrogram(np.zeros((257, 3), dtype=complex), hop=128)
    assert np.all(dsp.istft(spec) == 0)
    one = dsp.Spectrogram(np.zeros((257, 1), dtype=complex), hop=128)
    out = dsp.istft(one)
    assert out.shape == (0,)


def test_istft_rejects_bad_shape():
    with pytest.raises(ValueError):
        dsp.Spectrogram(np.zeros((100, 3), dtype=complex), hop=128)


# ---------------------------------------------------------- filterbank

def _filterbank_oracle():
    """Direct scalar evaluation of the documented triangle construction."""
    top = 2595.0 * math.log10(1.0 + 8000.0 / 700.0)
    breaks = [700.0 * (10.0 ** (top * i / 81.0 / 2595.0) - 1.0) for i in range(82)]
    fb = np.zeros((80, 257))
    for i in range(80):
        lo, center, hi = breaks[i], breaks[i + 1], breaks[i + 2]
        for k in range(257):
            f = k * 16000.0 / 512.0
            w = min((f - lo) / (center - lo), (hi - f) / (hi - center))
            fb[i, k] = max(0.0, w)
    return fb


def test_mel_scale_endpoints():
    assert dsp.hz_to_mel(0.0) == 0.0
    # 2595 * log10(1 + 8000/700) evaluated directly
    assert dsp.hz_to_mel(8000.0) == pytest.approx(2840.023046708319, abs=1e-9)
    assert dsp.mel_to_hz(dsp.hz_to_mel(3456.0)) == pytest.approx(3456.0, rel=1e-12)


def test_filterbank_matches_direct_formula():
    fb = dsp.mel_filterbank()
    assert fb.shape == (80, 257)
    np.testing.assert_allclose(fb, _filterbank_oracle(), rtol=0, atol=1e-12)


def test_filterbank_rows_unimodal_and_bounded():
    fb = dsp.mel_filterbank()
    assert np.all(fb >= 0) and np.all(fb <= 1.0)
    for i in range(80):
        row = fb[i]
        support = np.nonzero(row)[0]
        assert support.size >= 1
        # single contiguous support
        assert np.all(np.diff(support) == 1)
        # rises then falls
        d = np.diff(row[support])
        if d.size:
            sign_changes = np.sum(np.diff(np.sign(d[d != 0])) != 0)
            assert sign_changes <= 1


def test_filterbank_adjacent_filters_sum_to_one():
    fb = dsp.mel_filterbank()
    breaks = dsp.mel_to_hz(np.linspace(0, dsp.hz_to_mel(8000.0), 82))
    bins = np.arange(257) * 31.25
    for i in range(79):
        inside = (bins > breaks[i + 1]) & (bins < breaks[i + 2])
        if np.any(inside):
            np.testing.assert_allclose(fb[i, inside] + fb[i + 1, inside], 1.0,
                                       rtol=0, atol=1e-12)


def test_filterbank_column_sums():
    fb = dsp.mel_filterbank()
    breaks = dsp.mel_to_hz(np.linspace(0, dsp.hz_to_mel(8000.0), 82))
    bins = np.arange(257) * 31.25
    interior = (bins > breaks[1]) & (bins < breaks[80])
    sums = fb.sum(axis=0)
    assert np.all(sums[interior] > 0)
    assert np.all(sums <= 2.0 + 1e-12)


# ------------------------------------------------------------ features

def test_power_mel_zero_and_onehot():
    fb = dsp.cached_filterbank()
    zero = np.zeros((257, 4), dtype=complex)
    assert np.all(dsp.power_mel(zero, fb) == 0)
    onehot = np.zeros((257, 4), dtype=complex)
    onehot[100, 2] = 1.0
    out = dsp.power_mel(onehot, fb)
    np.testing.assert_array_equal(out[:, 2], fb[:, 100])
    assert np.all(out[:, [0, 1, 3]] == 0)


def test_power_mel_matches_dense_matmul_oracle():
    rng = np.random.default_rng(11)
    fb = dsp.cached_filterbank()
    data = rng.standard_normal((257, 6)) + 1j * rng.standard_normal((257, 6))
    got = dsp.power_mel(data, fb)
    power = np.abs(data) ** 2
    want = np.zeros((80, 6))
    for m in range(80):
        for t in range(6):
            want[m, t] = float(np.dot(fb[m], power[:, t]))
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=0)


def test_power_mel_gain_quadratic():
    rng = np.random.default_rng(12)
    fb = dsp.cached_filterbank()
    x = rng.standard_normal(4000)
    g = 1.7
    a = dsp.power_mel(dsp.stft(x, hop=128), fb)
    b = dsp.power_mel(dsp.stft(g * x, hop=128), fb)
    np.testing.assert_allclose(b, g * g * a, rtol=1e-8, atol=1e-300)


def test_power_mel_shape_mismatch():
    with pytest.raises(ValueError):
        dsp.power_mel(np.zeros((100, 3), dtype=complex), dsp.cached_filterbank())


def test_log_mel_values():
    assert dsp.log_mel(np.array([1e-7]), 1e-5)[0] == pytest.approx(math.log(1e-5))
    assert dsp.log_mel(np.array([1.0]), 1e-5)[0] == 0.0
    assert dsp.log_mel(np.array([math.e]), 1e-5)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        dsp.log_mel(np.array([1.0]), 0.0)


def test_log_mel_floor_exact():
    rng = np.random.default_rng(13)
    mel = rng.uniform(0, 2e-5, (80, 7))
    out = dsp.log_mel(mel, 1e-5)
    assert np.all(out >= math.log(1e-5))


def test_mel_ratio_mask_values():
    one = np.ones((2, 2))
    np.testing.assert_array_equal(dsp.mel_ratio_mask(one, one), one)
    assert dsp.mel_ratio_mask(np.array([0.25]), np.array([1.0]))[0] == 0.5
    assert dsp.mel_ratio_mask(np.array([4.0]), np.array([1.0]))[0] == 1.0


def test_mel_ratio_mask_zero_noisy_convention():
    clean = np.array([0.5, 0.0])
    noisy = np.array([0.0, 0.0])
    np.testing.assert_array_equal(dsp.mel_ratio_mask(clean, noisy), [1.0, 0.0])


def test_mel_ratio_mask_range_property():
    rng = np.random.default_rng(14)
    for _ in range(20):
        clean = rng.uniform(0, 10, (80, 5))
        noisy = rng.uniform(0, 10, (80, 5))
        mask = dsp.mel_ratio_mask(clean, noisy)
        assert np.all(mask >= 0.0) and np.all(mask <= 1.0)


def test_apply_mask_identity_and_zero():
    rng = np.random.default_rng(15)
    noisy = rng.uniform(0, 3, (80, 4))
    ones = np.ones_like(noisy)
    np.testing.assert_array_equal(dsp.apply_mask(ones, noisy, 1e-5),
                                  dsp.log_mel(noisy, 1e-5))
    out = dsp.apply_mask(np.zeros_like(noisy), noisy, 1e-5)
    np.testing.assert_allclose(out, math.log(1e-5), rtol=0, atol=1e-12)


def test_apply_mask_unclamped_algebraic_oracle():
    rng = np.random.default_rng(16)
    noisy = rng.uniform(1e-4, 5, (80, 6))
    clean = noisy * rng.uniform(0, 1, (80, 6))
    mask = dsp.mel_ratio_mask(clean, noisy)
    got = dsp.apply_mask(mask, noisy, 1e-5)
    want = dsp.log_mel(clean, 1e-5)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)
