import math

import numpy as np
import pytest

from melclean.autodiff import Tensor
from melclean.metrics import SI_SDR_CAP_DB, logmel_mae, lsd, si_sdr
from melclean.train import loss_mae


def test_logmel_mae_trivia():
    a = np.random.default_rng(0).standard_normal((80, 9))
    assert logmel_mae(a, a) == 0.0
    assert logmel_mae(a + 0.37, a) == pytest.approx(0.37, rel=1e-12)


def test_logmel_mae_brute_force():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((7, 5))
    b = rng.standard_normal((7, 5))
    want = sum(abs(a[i, j] - b[i, j]) for i in range(7) for j in range(5)) / 35
    assert logmel_mae(a, b) == pytest.approx(want, abs=1e-7)


def test_logmel_mae_matches_training_loss():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((80, 6)).astype(np.float32)
    b = rng.standard_normal((80, 6)).astype(np.float32)
    assert logmel_mae(a, b) == pytest.approx(
        float(loss_mae(Tensor(a), b).data), rel=1e-6)


def test_logmel_mae_shape_mismatch():
    with pytest.raises(ValueError):
        logmel_mae(np.zeros((80, 3)), np.zeros((80, 4)))


def test_lsd_trivia():
    m = np.abs(np.random.default_rng(3).standard_normal((257, 8))) + 0.1
    assert lsd(m, m) == 0.0
    assert lsd(10.0 * m, m) == pytest.approx(20.0, rel=1e-12)


def test_lsd_brute_force():
    rng = np.random.default_rng(4)
    a = np.abs(rng.standard_normal((6, 4))) + 0.05
    b = np.abs(rng.standard_normal((6, 4))) + 0.05
    acc = 0.0
    for t in range(4):
        inner = 0.0
        for f in range(6):
            inner += (20.0 * math.log10(a[f, t] / b[f, t])) ** 2
        acc += math.sqrt(inner / 6)
    assert lsd(a, b) == pytest.approx(acc / 4, abs=1e-6)


def test_lsd_floor_guards_zeros():
    a = np.zeros((3, 2))
    b = np.full((3, 2), 1e-8)
    assert lsd(a, b) == 0.0


def test_lsd_shape_mismatch():
    with pytest.raises(ValueError):
        lsd(np.ones((3, 2)), np.ones((2, 3)))


def test_si_sdr_identical_hits_cap():
    x = np.random.default_rng(5).standard_normal(4000)
    assert si_sdr(x, x) == SI_SDR_CAP_DB
    assert si_sdr(3.0 * x, x) == SI_SDR_CAP_DB


def test_si_sdr_scale_invariant_exactly():
    # powers of two scale every float product exactly, so the pre-cap
    # value is bitwise identical
    rng = np.random.default_rng(6)
    ref = rng.standard_normal(4000)
    est = ref + 0.1 * rng.standard_normal(4000)
    base = si_sdr(est, ref)
    assert base < SI_SDR_CAP_DB
    assert si_sdr(2.0 * est, ref) == base
    assert si_sdr(0.25 * est, ref) == base
    assert si_sdr(3.0 * est, ref) == pytest.approx(base, abs=1e-9)


def test_si_sdr_orthogonal_noise_closed_form():
    rng = np.random.default_rng(7)
    ref = rng.standard_normal(8000)
    v = rng.standard_normal(8000)
    noise = v - (np.dot(v, ref) / np.dot(ref, ref)) * ref
    want = 10.0 * np.log10(np.dot(ref, ref) / np.dot(noise, noise))
    assert si_sdr(ref + noise, ref) == pytest.approx(want, abs=0.01)


def test_si_sdr_zero_reference_raises():
    with pytest.raises(ValueError):
        si_sdr(np.ones(100), np.zeros(100))
    with pytest.raises(ValueError):
        si_sdr(np.ones(100), np.ones(99))
