import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from x3ecg import nncore as nn
from x3ecg.data import load_dataset, make_folds
from x3ecg.errors import DivergenceError, ParameterError
from x3ecg.model import BackboneConfig, X3Config, X3ECG
from x3ecg.train import (
    HISTORY_COLUMNS, AdamState, TrainConfig, adam_step, combined_loss, cosine_lr, fit, make_batches, predict,
    train_step, write_history,
)

TINY = dict(backbone=BackboneConfig.tiny(), demog_hidden=8)


# -- schedule -------------------------------------------------------------------

@pytest.mark.parametrize("epoch,lr", [(0, 1e-3), (20, 5.5e-4), (40, 1e-4), (69, 1e-4)])
def test_cosine_lr_values(epoch, lr):
    assert cosine_lr(epoch, TrainConfig()) == lr


def test_cosine_lr_midpoint_formula():
    assert cosine_lr(20, TrainConfig()) == 1e-4 + 0.5 * 9e-4 * (1 + math.cos(math.pi / 2))


def test_cosine_lr_monotone_and_continuous():
    cfg = TrainConfig()
    lrs = [cosine_lr(e, cfg) for e in range(cfg.epochs)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert lrs[39] > lrs[40] == 1e-4
    assert lrs[39] - 1e-4 < 2e-6  # approaches the floor from above


@pytest.mark.parametrize("epoch", [-1, 70, 100])
def test_cosine_lr_out_of_range(epoch):
    with pytest.raises(ParameterError):
        cosine_lr(epoch, TrainConfig())


@pytest.mark.parametrize("kw", [dict(batch_size=1), dict(lam=-1.0), dict(epochs=0), dict(task="x")])
def test_train_config_validation(kw):
    with pytest.raises(ParameterError):
        TrainConfig(**kw)


# -- Adam -------------------------------------------------------------------------

def _param(value, grad):
    t = nn.Tensor(np.array(value, dtype=float), True)
    t.grad = np.array(grad, dtype=float)
    return t


def test_zero_gradient_without_decay_leaves_param_unchanged():
    p = _param([1.5, -2.0], [0.0, 0.0])
    adam_step({"p": p}, AdamState(), 1e-3, TrainConfig(weight_decay=0.0))
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_zero_gradient_with_decay_pulls_toward_zero():
    p = _param([1.5, -2.0], [0.0, 0.0])
    adam_step({"p": p}, AdamState(), 1e-3, TrainConfig())
    assert abs(p.data[0]) < 1.5 and abs(p.data[1]) < 2.0


@given(st.floats(-100, 100).filter(lambda g: abs(g) > 1e-3), st.floats(1e-5, 1e-2))
def test_constant_gradient_moves_by_lr_sign(g, lr):
    # bias-corrected moments of a constant gradient are exactly g and g^2, so
    # every step is lr * g / (|g| + eps)
    cfg = TrainConfig(weight_decay=0.0)
    p, state = _param(0.0, g), AdamState()
    for _ in range(200):
        before = p.data.copy()
        adam_step({"p": p}, state, lr, cfg)
        p.grad = np.array(g)
    step = before - p.data
    assert step == pytest.approx(lr * g / (abs(g) + cfg.adam_eps), rel=1e-9)
    assert abs(step) == pytest.approx(lr, rel=1e-4)


def test_step_counter_and_moment_shapes():
    p, q = _param(np.zeros((2, 3)), np.ones((2, 3))), _param(np.zeros(4), np.ones(4))
    state = AdamState()
    for t in range(1, 4):
        adam_step({"p": p, "q": q}, state, 1e-3, TrainConfig())
        assert state.t == t
    assert state.m["p"].shape == (2, 3) and state.v["q"].shape == (4,)


def test_parameters_without_gradient_are_skipped():
    p = nn.Tensor(np.ones(3), True)
    adam_step({"p": p}, AdamState(), 1e-3, TrainConfig())
    np.testing.assert_array_equal(p.data, np.ones(3))


# -- combined loss ------------------------------------------------------------------

def _cls_logits(target_loss, n):
    # two-class logits whose cross-entropy equals target_loss for every row
    p = math.exp(-target_loss)
    return nn.Tensor(np.tile([math.log(p / (1 - p)), 0.0], (n, 1)), True)


def test_combined_loss_arithmetic():
    logits = _cls_logits(0.7, 4)
    n_gt = np.array([10.0, 12.0, 20.0, 7.0])
    n_pred = nn.Tensor(n_gt + np.array([5.0, -5.0, 5.0, -5.0]), True)
    loss, parts = combined_loss(logits, np.zeros(4, dtype=int), n_pred, n_gt, 0.02)
    assert parts["cls"] == pytest.approx(0.7, abs=1e-12)
    assert parts["hc"] == pytest.approx(5.0)
    assert loss.item() == pytest.approx(0.8, abs=1e-12)


def test_lambda_zero_is_classification_loss_exactly(rng):
    logits = nn.Tensor(rng.normal(size=(5, 4)), True)
    y = rng.integers(0, 4, 5)
    loss, _ = combined_loss(logits, y, nn.Tensor(rng.normal(size=5)), rng.normal(size=5), 0.0)
    assert loss.item() == nn.cross_entropy(logits, y).item()


def test_without_count_prediction(rng):
    logits = nn.Tensor(rng.normal(size=(3, 9)))
    y = (rng.random((3, 9)) < 0.3).astype(float)
    loss, parts = combined_loss(logits, y, None, None, 0.02, "multi-label")
    assert loss.item() == nn.bce_with_logits(logits, y).item()
    assert math.isnan(parts["hc"])


def _batch(rng, n=4, length=256):
    d = np.zeros((n, 11))
    d[np.arange(n), rng.integers(0, 8, n)] = 1
    d[np.arange(n), 8 + rng.integers(0, 3, n)] = 1
    return rng.normal(size=(n, 3, length)), d, np.arange(n) % 4, rng.integers(5, 25, n).astype(float)


def _grads(model, batch, lam, compute_hc=True):
    x, d, y, n = batch
    model.zero_grad()
    with nn.Tape() as tape:
        out = model.forward(x, d, "train", np.random.default_rng(0), compute_hc=compute_hc)
        loss, _ = combined_loss(out.logits, y, out.n_pred, n, lam)
    nn.backward(loss, tape)
    return {k: (None if t.grad is None else t.grad.copy()) for k, t in model.params.items()}


def test_head_gradient_scales_linearly_with_lambda(rng):
    model = X3ECG(X3Config(**TINY), seed=0)
    batch = _batch(rng)
    g1, g2 = _grads(model, batch, 0.01), _grads(model, batch, 0.02)
    for k in ("hc.w", "hc.b"):
        assert np.any(g1[k] != 0)
        np.testing.assert_allclose(g2[k], 2.0 * g1[k], rtol=1e-12, atol=0)


def test_head_gradient_is_zero_at_lambda_zero(rng):
    g = _grads(X3ECG(X3Config(**TINY), seed=0), _batch(rng), 0.0)
    assert np.all(g["hc.w"] == 0) and np.all(g["hc.b"] == 0)


def test_lambda_zero_step_matches_classification_only_step(rng):
    batch = _batch(rng)
    a, b = X3ECG(X3Config(**TINY), seed=1), X3ECG(X3Config(use_hc=False, **TINY), seed=1)
    cfg0 = TrainConfig(lam=0.0)
    for model in (a, b):
        train_step(model, *batch, 1e-3, AdamState(), cfg0, np.random.default_rng(3))
    for k in a.params:
        if not k.startswith("hc."):
            assert np.array_equal(a.params[k].data, b.params[k].data), k


# -- batches / divergence ---------------------------------------------------------

def test_make_batches_cover_and_merge_singleton(rng):
    batches = make_batches(9, 4, rng)
    assert [len(b) for b in batches] == [4, 5]
    assert sorted(np.concatenate(batches).tolist()) == list(range(9))


def test_divergence_guard(rng):
    model = X3ECG(X3Config(**TINY), seed=0)
    x, d, y, n = _batch(rng)
    x[0, 0, 0] = np.nan
    with pytest.raises(DivergenceError):
        train_step(model, x, d, y, n, 1e-3, AdamState(), TrainConfig(), np.random.default_rng(0))


# -- fit --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus(synth_manifest):
    schema, ds = load_dataset(synth_manifest)
    plan = make_folds(ds.ids, ds.y, schema.task, seed=0)
    train_ids, val_ids, _ = plan.split(0)
    return ds.select_ids(train_ids), ds.select_ids(val_ids)


def test_fit_is_deterministic(corpus):
    train, val = corpus
    histories = []
    for _ in range(2):
        model = X3ECG(X3Config(**TINY), seed=0)
        histories.append(fit(model, train, val, TrainConfig(epochs=2, cosine_epochs=2, batch_size=16)).history)
    for a, b in zip(*histories):
        for c in HISTORY_COLUMNS:
            assert a[c] == pytest.approx(b[c], abs=1e-12)


def test_fit_restores_best_epoch_and_calls_back(corpus):
    train, val = corpus
    seen = []
    model = X3ECG(X3Config(**TINY), seed=0)
    res = fit(model, train, val, TrainConfig(epochs=3, cosine_epochs=3, batch_size=16),
              callbacks=[lambda row, m: seen.append((row["epoch"], m.state()))])
    f1s = [r["val_macro_f1"] for r in res.history]
    assert res.best_epoch == max(i for i, f in enumerate(f1s) if f == max(f1s))
    for k, v in seen[res.best_epoch][1].items():
        np.testing.assert_array_equal(model.state()[k], v)


def test_loss_decreases_over_first_five_epochs(corpus):
    train, val = corpus
    improved = 0
    for seed in range(10):
        model = X3ECG(X3Config(**TINY), seed=seed)
        h = fit(model, train, val, TrainConfig(epochs=5, cosine_epochs=5, batch_size=8, seed=seed)).history
        total = [r["train_cls"] + 0.02 * r["train_hc"] for r in h]
        improved += total[-1] < total[0]
    assert improved >= 9


def test_fit_rejects_empty_validation(corpus):
    train, val = corpus
    with pytest.raises(ParameterError):
        fit(X3ECG(X3Config(**TINY)), train, val.subset([]), TrainConfig(epochs=1, cosine_epochs=1))


def test_fit_rejects_task_mismatch(corpus):
    train, val = corpus
    with pytest.raises(ParameterError):
        fit(X3ECG(X3Config(**TINY)), train, val, TrainConfig(epochs=1, cosine_epochs=1, task="multi-label"))


def test_predict_shapes(corpus):
    _, val = corpus
    model = X3ECG(X3Config(**TINY))
    probs, logits, counts = predict(model, val.x, val.demog, batch_size=4)
    assert probs.shape == logits.shape == (len(val), 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert counts.shape == (len(val),)


def test_write_history(tmp_path):
    rows = [dict(epoch=0, lr=1e-3, train_cls=1.0, train_hc=5.0, val_cls=1.1, val_hc=4.0, val_macro_f1=0.5)]
    write_history(rows, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert lines[1] == "0,0.001,1.0,5.0,1.1,4.0,0.5"
