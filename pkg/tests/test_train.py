import csv

import numpy as np
import pytest

from melclean import synth
from melclean.autodiff import Tensor
from melclean.model import ModelConfig, build
from melclean.train import (AdamW, TrainConfig, average_checkpoints,
                            clip_gradients, evaluate, input_features,
                            learning_rate, loss_mae, loss_mrm,
                            prepare_example, train_model)
from melclean.model import save_checkpoint

TOY = ModelConfig(mode="offline", depth=2, hidden=24, d_state=4)


# ---------------------------------------------------------------- losses

def test_loss_mae_values():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7)).astype(np.float32)
    assert float(loss_mae(Tensor(a), a).data) == 0.0
    np.testing.assert_allclose(float(loss_mae(Tensor(a + 0.25), a).data),
                               0.25, rtol=1e-6)
    b = rng.standard_normal((5, 7)).astype(np.float32)
    brute = 0.0
    for i in range(5):
        for j in range(7):
            brute += abs(float(a[i, j]) - float(b[i, j]))
    brute /= 35
    np.testing.assert_allclose(float(loss_mae(Tensor(a), b).data), brute,
                               rtol=1e-7)


def test_loss_mrm_values():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (4, 6)).astype(np.float32)
    assert float(loss_mrm(Tensor(a), a).data) == 0.0
    zeros = np.zeros((4, 6), np.float32)
    ones = np.ones((4, 6), np.float32)
    np.testing.assert_allclose(float(loss_mrm(Tensor(zeros), ones).data),
                               1.0, rtol=1e-7)
    b = rng.uniform(0, 1, (4, 6)).astype(np.float32)
    brute = sum((float(a[i, j]) - float(b[i, j])) ** 2
                for i in range(4) for j in range(6)) / 24
    np.testing.assert_allclose(float(loss_mrm(Tensor(a), b).data), brute,
                               rtol=1e-7, atol=1e-10)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        loss_mae(Tensor(np.zeros((3, 4))), np.zeros((4, 3)))


# ------------------------------------------------------------- optimizer

def test_learning_rate_schedule():
    for epoch in range(60):
        np.testing.assert_allclose(learning_rate(1e-3, 0.99, epoch),
                                   0.001 * 0.99 ** epoch, atol=1e-12)


def test_clip_rescales_large_gradients():
    t1 = Tensor(np.zeros(4, np.float32), requires_grad=True)
    t2 = Tensor(np.zeros(3, np.float32), requires_grad=True)
    t1.grad = np.full(4, 8.0, np.float32)    # norm 16
    t2.grad = np.full(3, 12.0 / np.sqrt(3), np.float32)  # norm 12
    pre = clip_gradients([t1, t2], 10.0)     # joint norm 20
    np.testing.assert_allclose(pre, 20.0, rtol=1e-6)
    post = np.sqrt(np.sum(t1.grad.astype(np.float64) ** 2)
                   + np.sum(t2.grad.astype(np.float64) ** 2))
    np.testing.assert_allclose(post, 10.0, rtol=1e-6)
    np.testing.assert_allclose(t1.grad / t2.grad[0], 8.0 / (12.0 / np.sqrt(3)),
                               rtol=1e-6)


def test_clip_leaves_small_gradients():
    t = Tensor(np.zeros(4, np.float32), requires_grad=True)
    t.grad = np.ones(4, np.float32)
    before = t.grad
    clip_gradients([t], 10.0)
    assert t.grad is before


def test_adamw_zero_grad_no_decay_keeps_params():
    p = Tensor(np.array([1.0, -2.0], np.float32), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(2, np.float32)
    assert opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_skips_nonfinite():
    p = Tensor(np.array([1.0], np.float32), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    p.grad = np.array([np.nan], np.float32)
    assert not opt.step()
    assert opt.skipped == 1
    np.testing.assert_array_equal(p.data, [1.0])
    assert opt.t == 0


def test_adamw_quadratic_convergence():
    w = Tensor(np.array([-5.0], np.float32), requires_grad=True)
    opt = AdamW([w], lr=0.2, weight_decay=0.0)
    for _ in range(200):
        opt.zero_grad()
        loss = loss_mrm(w, np.array([3.0], np.float32))
        loss.backward()
        opt.step()
    np.testing.assert_allclose(w.data, [3.0], atol=1e-3)


# -------------------------------------------------------------- features

def _tiny_pair(seed=0, duration=0.3):
    clean = synth.speechlike(duration, seed=seed)
    noise = synth.noiselike(duration, seed=seed + 1000)
    noisy = synth.mix_at_snr(clean, noise, snr_db=5.0)
    return noisy, clean


def test_prepare_example_shapes():
    noisy, clean = _tiny_pair()
    cases = [
        (ModelConfig(mode="offline", depth=2, hidden=24, d_state=4), 80),
        (ModelConfig(mode="online", depth=2, hidden=24, d_state=4), 80),
        (ModelConfig(mode="offline", depth=2, hidden=24, d_state=4,
                     target="mask"), 80),
        (ModelConfig(mode="offline", depth=2, hidden=24, d_state=4,
                     target="mask", frequency_domain="linear"), 257),
    ]
    for config, n_out in cases:
        x, y = prepare_example(noisy, clean, config)
        assert x.shape[0] == 257 and x.shape[2] == 2
        assert y.shape == (n_out, x.shape[1])
        assert x.dtype == np.float32 and y.dtype == np.float32
        assert np.all(np.isfinite(x)) and np.all(np.isfinite(y))
        if config.target == "mask":
            assert np.all((y >= 0) & (y <= 1))


def test_online_input_scale_invariant():
    noisy, _ = _tiny_pair(seed=2)
    config = ModelConfig(mode="online", depth=2, hidden=24, d_state=4)
    x1, mu1 = input_features(noisy, config)
    x2, mu2 = input_features(100.0 * noisy, config)
    np.testing.assert_allclose(x2, x1, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(mu2, 100.0 * mu1, rtol=1e-9)


# ------------------------------------------------------------ train loop

def _fake_examples(rng, n, t=6, n_out=80):
    out = []
    for _ in range(n):
        x = rng.standard_normal((257, t, 2)).astype(np.float32) * 0.1
        y = rng.uniform(0, 1, (n_out, t)).astype(np.float32)
        out.append((x, y))
    return out


def test_train_loop_logs_and_checkpoints(tmp_path):
    rng = np.random.default_rng(3)
    examples = _fake_examples(rng, 6)
    model = build(TOY, seed=1)
    csv_path = tmp_path / "log.csv"
    result = train_model(model, examples, examples[:2],
                         TrainConfig(epochs=2, steps_per_epoch=3,
                                     batch_size=2, seed=0),
                         csv_path=csv_path, ckpt_dir=tmp_path)
    assert result.steps == 6
    assert (tmp_path / "epoch_000.ckpt").exists()
    assert (tmp_path / "epoch_001.ckpt").exists()
    rows = list(csv.reader(open(csv_path)))
    assert rows[0] == ["step", "epoch", "lr", "loss", "val_loss"]
    step_rows = [r for r in rows[1:] if r[3]]
    val_rows = [r for r in rows[1:] if r[4]]
    assert len(step_rows) == 6 and len(val_rows) == 2
    assert float(step_rows[1][2]) == 1e-3
    assert float(val_rows[-1][2]) == 1e-3 * 0.99


def test_train_deterministic():
    rng = np.random.default_rng(4)
    examples = _fake_examples(rng, 4, t=4)
    finals = []
    for _ in range(2):
        model = build(TOY, seed=2)
        train_model(model, examples, [], TrainConfig(
            epochs=1, steps_per_epoch=4, batch_size=2, seed=5))
        finals.append(dict((n, t.data.copy())
                           for n, t in model.named_params()))
    for name in finals[0]:
        np.testing.assert_array_equal(finals[0][name], finals[1][name])


def test_overfits_fixed_pairs():
    # small-capacity sanity: loss on 8 fixed pairs collapses quickly
    pairs = [_tiny_pair(seed=s, duration=0.25) for s in range(8)]
    for target in ("mapping", "mask"):
        config = ModelConfig(mode="offline", depth=2, hidden=24, d_state=4,
                             target=target)
        examples = [prepare_example(n, c, config) for n, c in pairs]
        model = build(config, seed=3)
        result = train_model(model, examples, [], TrainConfig(
            epochs=10, steps_per_epoch=50, batch_size=4, seed=6,
            stop_loss_ratio=0.1))
        assert result.final_loss < 0.1 * result.initial_loss, target
        assert result.steps <= 500, target


# ---------------------------------------------------- checkpoint average

def test_average_checkpoints(tmp_path):
    m = build(TOY, seed=7)
    single = tmp_path / "one.ckpt"
    save_checkpoint(single, m)
    same = average_checkpoints([single])
    for (n1, t1), (n2, t2) in zip(m.named_params(), same.named_params()):
        np.testing.assert_array_equal(t1.data, t2.data)

    a = build(TOY, seed=8)
    b = build(TOY, seed=8)
    for _, t in a.named_params():
        t.data = np.zeros_like(t.data)
    for _, t in b.named_params():
        t.data = np.full_like(t.data, 2.0)
    pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(pa, a)
    save_checkpoint(pb, b)
    mean = average_checkpoints([pa, pb])
    for _, t in mean.named_params():
        np.testing.assert_array_equal(t.data, np.ones_like(t.data))


def test_average_checkpoints_mismatch(tmp_path):
    pa = tmp_path / "a.ckpt"
    pb = tmp_path / "b.ckpt"
    save_checkpoint(pa, build(TOY, seed=0))
    save_checkpoint(pb, build(ModelConfig(mode="offline", depth=3, hidden=24,
                                          d_state=4), seed=0))
    with pytest.raises(ValueError):
        average_checkpoints([pa, pb])


def test_averaged_model_differs_from_parents(tmp_path):
    a = build(TOY, seed=9)
    b = build(TOY, seed=10)
    pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(pa, a)
    save_checkpoint(pb, b)
    mean = average_checkpoints([pa, pb])
    x = Tensor(np.random.default_rng(11).standard_normal(
        (257, 4, 2)).astype(np.float32))
    ya, yb, ym = a.forward(x).data, b.forward(x).data, mean.forward(x).data
    assert not np.array_equal(ym, ya) and not np.array_equal(ym, yb)


def test_evaluate_matches_loss():
    rng = np.random.default_rng(12)
    examples = _fake_examples(rng, 3, t=4)
    model = build(TOY, seed=13)
    val = evaluate(model, examples, batch_size=2)
    assert val > 0 and np.isfinite(val)
