import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avibench.errors import ShapeError, TrainingDiverged
from avibench.nnet import (SGD, Adam, AdamSpec, AdamState, Conv2D, Dense, Flatten, MaxPool, Model, ModelConfig,
                           ReLU, SGDSpec, Softmax, Splits, TrainConfig, adam_step, cross_entropy_grad, glorot_init,
                           gradient_check, layer_from_dict, load_checkpoint, loss_and_grads, save_checkpoint, train,
                           weighted_cross_entropy)
from avibench.nnet.layers import _im2col


def conv_oracle(x, W, b, stride=1):
    """Direct nested-loop same-padded convolution on NCHW input with (k, k, C, F) kernels."""
    n, c, h, w = x.shape
    k, f = W.shape[0], W.shape[3]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("ncab,abcf->nf", patch, W) + b
    return out


def small_cnn(k=3, classes=3):
    return [Conv2D(2, k), ReLU(), MaxPool(2), Conv2D(3, 3), ReLU(), Flatten(), Dense(classes), Softmax()]


# -- initialization ------------------------------------------------------------

def test_glorot_bounds():
    w = glorot_init(3, 3, 0, (1000,))
    assert np.all(np.abs(w) <= 1.0) and np.abs(w).max() > 0.99


def test_glorot_variance():
    w = glorot_init(100, 100, 1, (1_000_000,))
    limit = math.sqrt(6 / 200)
    assert w.var() == pytest.approx(limit ** 2 / 3, rel=0.02)


def test_glorot_deterministic():
    assert np.array_equal(glorot_init(5, 7, 3), glorot_init(5, 7, 3))
    with pytest.raises(ValueError):
        glorot_init(0, 3, 0)


def test_init_params_biases_zero_and_conv_fans():
    model = Model(small_cnn(), (1, 8, 8))
    params = model.init_params(0)
    assert all(np.all(params[k] == 0) for k in params if k.endswith(".b"))
    limit = math.sqrt(6 / (1 * 9 + 2 * 9))
    assert np.abs(params["0.W"]).max() <= limit


# -- forward -----------------------------------------------------------------------

def test_softmax_uniform_on_zero_logits():
    p, _ = Softmax().forward(np.zeros((2, 5)), {})
    assert np.allclose(p, 0.2)


def test_dense_zero_input_uniform():
    model = Model([Flatten(), Dense(4), Softmax()], (1, 2, 3))
    params = model.init_params(0)
    assert np.allclose(model.forward(params, np.zeros((3, 1, 2, 3))), 0.25)


def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 5, 6, 1))
    out, _ = Conv2D(1, 1).forward(x, {"W": np.ones((1, 1, 1, 1)), "b": np.zeros(1)})
    assert np.array_equal(out, x)


@pytest.mark.parametrize("k, stride", [(1, 1), (3, 1), (5, 1), (3, 2)])
def test_conv_matches_loop_oracle(k, stride):
    rng = np.random.default_rng(k + stride)
    x = rng.normal(size=(2, 3, 7, 6))
    W = rng.normal(size=(k, k, 3, 4))
    b = rng.normal(size=4)
    out, _ = Conv2D(4, k, stride).forward(x.transpose(0, 2, 3, 1), {"W": W, "b": b})
    assert np.allclose(out.transpose(0, 3, 1, 2), conv_oracle(x, W, b, stride), atol=1e-12)


def test_maxpool_forward():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    out, _ = MaxPool(2).forward(x, {})
    assert out[0, :, :, 0].tolist() == [[5, 7], [13, 15]]


def test_rows_sum_to_one():
    model = Model(small_cnn(), (1, 8, 8))
    x = np.random.default_rng(2).normal(size=(6, 1, 8, 8))
    p = model.forward(model.init_params(1), x)
    assert p.shape == (6, 3)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6) and np.all(p >= 0)


def test_shape_errors_name_layer():
    with pytest.raises(ShapeError, match="layer 3"):
        Model([Flatten(), Dense(3), ReLU(), MaxPool(2), Softmax()], (1, 4, 4))
    with pytest.raises(ShapeError, match="Dense"):
        Model([Conv2D(2), ReLU(), Flatten(), Softmax()], (1, 4, 4))
    model = Model(small_cnn(), (1, 8, 8))
    with pytest.raises(ShapeError, match="layer 0"):
        model.forward(model.init_params(0), np.zeros((1, 1, 8, 9)))


@pytest.mark.parametrize("bad", [lambda: Conv2D(2, 4), lambda: Conv2D(0), lambda: Dense(0), lambda: MaxPool(0)])
def test_invalid_layer_specs(bad):
    with pytest.raises(ShapeError):
        bad()


def test_model_config_round_trip():
    cfg = ModelConfig(small_cnn(), SGDSpec(lr=0.05, momentum=0.5), init_seed=4)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert layer_from_dict({"type": "conv2d", "filters": 3, "kernel": 5}) == Conv2D(3, 5)
    with pytest.raises(ShapeError):
        layer_from_dict({"type": "lstm"})


# -- loss ---------------------------------------------------------------------------

def test_perfect_prediction_zero_loss():
    assert weighted_cross_entropy(np.eye(3), np.arange(3), np.ones(3)) == 0.0


def test_uniform_loss_is_log_k():
    p = np.full((4, 20), 1 / 20)
    assert weighted_cross_entropy(p, np.arange(4), np.ones(20)) == pytest.approx(math.log(20), abs=1e-12)
    assert math.log(20) == pytest.approx(2.9957, abs=1e-4)


def test_one_hot_labels_equal_index_labels():
    p = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert weighted_cross_entropy(p, np.array([[0, 1], [1, 0]]), np.ones(2)) == \
           weighted_cross_entropy(p, np.array([1, 0]), np.ones(2))


def test_probability_clamp():
    assert weighted_cross_entropy(np.array([[1.0, 0.0]]), [1], np.ones(2)) == pytest.approx(-math.log(1e-12))


def test_weights_scale_loss_and_gradient():
    model = Model(small_cnn(), (1, 8, 8))
    params = model.init_params(3, dtype=np.float64)
    x = np.random.default_rng(3).normal(size=(4, 1, 8, 8))
    y = np.array([0, 1, 2, 1])
    w = np.array([1.0, 2.0, 0.5])
    l1, g1 = loss_and_grads(model, params, x, y, w)
    l2, g2 = loss_and_grads(model, params, x, y, 2 * w)
    assert l2 == pytest.approx(2 * l1, rel=1e-12)
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k], rtol=1e-10, atol=1e-15)


def test_zero_weights_zero_gradients():
    model = Model(small_cnn(), (1, 8, 8))
    params = model.init_params(0)
    _, grads = loss_and_grads(model, params, np.ones((2, 1, 8, 8)), [0, 1], np.zeros(3))
    assert all(np.all(g == 0) for g in grads.values())


def test_balanced_weights_equal_unweighted():
    p = np.random.default_rng(5).dirichlet(np.ones(3), size=6)
    y = np.array([0, 1, 2, 0, 1, 2])
    # balanced batch: N / (K * n_c) = 1 for every class
    assert weighted_cross_entropy(p, y, np.array([1.0, 1.0, 1.0])) == \
           np.mean(-np.log(p[np.arange(6), y]))


def test_softmax_ce_logit_gradient():
    logits = np.array([[1.0, -0.5, 2.0]])
    probs, cache = Softmax().forward(logits, {})
    d, _ = Softmax().backward(cross_entropy_grad(probs, [2], np.ones(3)), cache, {})
    assert np.allclose(d, probs - np.array([[0, 0, 1]]), atol=1e-12)


# -- gradients -----------------------------------------------------------------------

def test_gradient_check_two_conv_model():
    model = Model([Conv2D(2, 3), ReLU(), Conv2D(2, 3), ReLU(), Flatten(), Dense(3), Softmax()], (1, 8, 8))
    rng = np.random.default_rng(0)
    params = model.init_params(0, dtype=np.float64)
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.normal(scale=0.1, size=params[k].shape)
    x = rng.normal(size=(3, 1, 8, 8))
    result = gradient_check(model, params, x, np.array([0, 1, 2]), np.array([1.0, 0.5, 2.0]))
    assert result.max_rel_error < 1e-4
    assert result.skipped_kinks <= 0.02 * (result.checked + result.skipped_kinks)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5]), st.sampled_from([1, 2]), st.booleans())
def test_gradient_check_random_shapes(seed, k, stride, pool):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(4, 8)), int(rng.integers(4, 8))
    layers = [Conv2D(int(rng.integers(1, 4)), k, stride), ReLU()]
    if pool:
        layers.append(MaxPool(2))
    layers += [Flatten(), Dense(int(rng.integers(2, 5))), Softmax()]
    model = Model(layers, (int(rng.integers(1, 3)), h, w))
    params = model.init_params(seed, dtype=np.float64)
    x = rng.normal(size=(2, *model.input_shape))
    y = rng.integers(0, model.n_classes, size=2)
    result = gradient_check(model, params, x, y, rng.uniform(0.5, 2, model.n_classes), max_coords=20, rng=rng)
    assert result.max_rel_error < 1e-4


def test_im2col_layout():
    x = np.arange(9.0).reshape(1, 3, 3, 1)
    cols, ho, wo = _im2col(x, 3, 1)
    assert (ho, wo) == (3, 3)
    assert cols[4].tolist() == list(range(9))


# -- optimizers ------------------------------------------------------------------------

def test_adam_first_step_closed_form():
    g = np.array([0.3, -2e-3, 5.0, 1e-9])
    p = {"w": np.zeros(4)}
    adam_step(p, {"w": g}, AdamState(), lr=1e-3)
    assert np.allclose(p["w"], -1e-3 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-10)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(AdamSpec(lr=0.1))
    for _ in range(100):
        opt.step(p, {"w": np.zeros(2)})
    assert p["w"].tolist() == [1.0, -2.0]
    assert opt.steps == {"w": 100}


def test_adam_deterministic_streams():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=3) for _ in range(20)]
    a, b = {"w": np.ones(3)}, {"w": np.ones(3)}
    oa, ob = Adam(AdamSpec(lr=0.01)), Adam(AdamSpec(lr=0.01))
    for g in grads:
        oa.step(a, {"w": g.copy()})
        ob.step(b, {"w": g.copy()})
    assert np.array_equal(a["w"], b["w"])


def test_sgd_momentum():
    p = {"w": np.array([1.0])}
    opt = SGD(SGDSpec(lr=0.1, momentum=0.5))
    opt.step(p, {"w": np.array([1.0])})
    opt.step(p, {"w": np.array([1.0])})
    # v1 = -0.1, v2 = 0.5 * -0.1 - 0.1
    assert p["w"][0] == pytest.approx(1.0 - 0.1 - 0.15)


# -- training -----------------------------------------------------------------------------

def separable(n=64, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1, 2, 2))
    y = (x[:, 0, 0, 0] + x[:, 0, 1, 1] > 0).astype(int)
    x[:, 0, 0, 0] += np.where(y == 1, 1.5, -1.5)
    return x, y


def dense_cfg(lr=0.05):
    return ModelConfig([Flatten(), Dense(2), Softmax()], AdamSpec(lr=lr), init_seed=0)


def test_separable_toy_converges():
    x, y = separable()
    run = train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=50, batch_size=16, dtype="float64"))
    assert run.train_loss[-1] < 0.1
    assert len(run.train_loss) == len(run.val_loss) == len(run.val_macro_f1) == run.epochs_trained == 50


def test_one_epoch_one_batch_one_step():
    x, y = separable(8)
    run = train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=1, batch_size=32))
    assert run.steps == {"0.W": 1, "0.b": 1} or run.steps == {"1.W": 1, "1.b": 1}


def test_partial_batch_kept():
    x, y = separable(10)
    run = train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=2, batch_size=4))
    assert set(run.steps.values()) == {6}


def test_training_deterministic():
    x, y = separable()
    cfg = TrainConfig(epochs=5, batch_size=8, seed=3)
    a = train(dense_cfg(), Splits(x, y, x, y), cfg)
    b = train(dense_cfg(), Splits(x, y, x, y), cfg)
    assert a.curves_csv() == b.curves_csv()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=5, batch_size=8, seed=4))
    assert c.train_loss != a.train_loss


def test_early_stopping_and_restore():
    x, y = separable()
    run = train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=200, early_stop_patience=3))
    assert run.epochs_trained < 200
    assert run.best_epoch == run.epochs_trained - 3
    model = Model(dense_cfg().layers, (1, 2, 2))
    from avibench.evalkit import macro_f1
    assert macro_f1(model.predict(run.params, x).argmax(1), y, 2) == pytest.approx(max(run.val_macro_f1))


def test_divergence_raises():
    x, y = separable()
    x[5, 0, 0, 0] = np.inf
    with pytest.raises(TrainingDiverged) as info:
        train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=5))
    assert info.value.epoch == 1


def test_saturated_softmax_does_not_move():
    # clamped loss is flat once p[y] underflows, so huge steps stall instead of exploding
    x, y = separable()
    cfg = ModelConfig([Flatten(), Dense(2), Softmax()], SGDSpec(lr=1e30), init_seed=0)
    run = train(cfg, Splits(x * 1e30, y, x * 1e30, y), TrainConfig(epochs=3))
    assert np.all(np.isfinite(run.train_loss))


def test_curves_csv_header():
    x, y = separable(8)
    text = train(dense_cfg(), Splits(x, y, x, y), TrainConfig(epochs=2)).curves_csv()
    lines = text.splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_macro_f1" and len(lines) == 3


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(small_cnn(), AdamSpec(lr=3e-4), init_seed=9)
    model = Model(cfg.layers, (1, 8, 8))
    params = model.init_params(9)
    save_checkpoint(tmp_path / "c.avck", cfg, params, (1, 8, 8), seed=9, epoch=4)
    cfg2, params2, header = load_checkpoint(tmp_path / "c.avck")
    assert cfg2.to_dict() == cfg.to_dict()
    assert header["seed"] == 9 and header["epoch"] == 4 and header["input_shape"] == [1, 8, 8]
    for k in params:
        assert np.array_equal(params2[k], params[k].astype(np.float32))
    raw = (tmp_path / "c.avck").read_bytes()
    assert raw[:4] == b"AVCK"
    assert len(raw) - 8 - int.from_bytes(raw[4:8], "little") == 4 * model.n_params()
