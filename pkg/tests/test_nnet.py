import numpy as np
import pytest

from dbce.grid import one_hot, softmax
from dbce.losses import LOSS_KINDS, compute_loss, loss_gradient
from dbce.morphology import disk_element
from dbce.nnet import (AdamState, ModelConfig, adam_step, backward, forward, init_model,
                       load_checkpoint, save_checkpoint)
from dbce.weighting import ClassWeights
from oracles import central_difference, conv_net_reference, rel_error


def _tiny(seed=0, hidden=2, classes=3):
    model = init_model(ModelConfig(classes=classes, hidden=hidden, seed=seed))
    rng = np.random.default_rng(seed + 100)
    # nonzero biases so the ReLU pattern is not degenerate
    for i in range(1, len(model.params), 2):
        model.params[i] = rng.normal(scale=0.1, size=model.params[i].shape)
    return model


def test_init_deterministic_and_zero_bias():
    cfg = ModelConfig(seed=4)
    a, b = init_model(cfg), init_model(cfg)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)
    for bias in a.params[1::2]:
        assert not bias.any()


def test_init_he_variance():
    cfg = ModelConfig(hidden=64, depth=2, seed=1)
    kernel = init_model(cfg).params[2]  # 64 x 64 x 3 x 3 = 36864 draws
    target = 2.0 / (64 * 9)
    assert abs(kernel.var() / target - 1) < 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(kernel=4)
    with pytest.raises(ValueError):
        ModelConfig(hidden=0)


def test_forward_shapes_and_zero_image():
    model = init_model(ModelConfig(classes=3))
    logits = model.forward(np.zeros((10, 12)))
    assert logits.shape == (3, 10, 12)
    assert not logits.any()
    assert model.forward(np.zeros((2, 10, 12))).shape == (2, 3, 10, 12)


def test_forward_rejects_tiny_image():
    with pytest.raises(ValueError):
        init_model(ModelConfig()).forward(np.zeros((2, 2)))


def test_last_layer_linearity():
    model = _tiny(1)
    for i in range(len(model.params) - 1):
        if i % 2 == 1:
            model.params[i] = np.zeros_like(model.params[i])
    model.params[-1][:] = 0
    x = np.random.default_rng(0).random((7, 7))
    base = model.forward(x)
    model.params[-2] *= 2
    np.testing.assert_allclose(model.forward(x), 2 * base, rtol=1e-14)


def test_translation_equivariance_interior():
    model = _tiny(2, hidden=4)
    img = np.zeros((16, 16))
    img[5:10, 4:9] = np.random.default_rng(1).random((5, 5))
    shifted = np.roll(img, (1, 1), axis=(0, 1))
    a = model.forward(img)
    b = model.forward(shifted)
    # receptive field is 5 px; compare away from the padded border
    np.testing.assert_allclose(b[:, 4:14, 4:14], a[:, 3:13, 3:13], rtol=1e-13, atol=1e-14)


def test_backward_zero_grad():
    model = _tiny(3)
    logits, cache = forward(model, np.random.default_rng(0).random((8, 8)))
    for g in backward(model, cache, np.zeros_like(logits)):
        assert not g.any()


def test_backward_shape_mismatch():
    model = _tiny(3)
    _, cache = forward(model, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        backward(model, cache, np.zeros((2, 8, 8)))


def test_last_bias_gradient_is_channel_sum():
    model = _tiny(4)
    logits, cache = forward(model, np.random.default_rng(1).random((2, 8, 8)))
    g = np.random.default_rng(2).normal(size=logits.shape)
    grads = backward(model, cache, g)
    np.testing.assert_allclose(grads[-1], g.sum(axis=(0, 2, 3)), rtol=1e-13)


def test_backward_finite_differences_every_parameter():
    model = _tiny(5)
    x = np.random.default_rng(3).random((8, 8))
    g_out = np.random.default_rng(4).normal(size=(3, 8, 8))
    _, cache = forward(model, x)
    grads = backward(model, cache, g_out)
    for i, p in enumerate(model.params):
        def f(v, i=i):
            m = model.copy()
            m.params[i] = v
            return float((m.forward(x) * g_out).sum())
        assert rel_error(grads[i], central_difference(f, p)) < 1e-5, f"param {i}"


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_full_chain_gradient(kind):
    model = _tiny(6)
    rng = np.random.default_rng(7)
    x = rng.random((6, 6))
    mask = rng.integers(0, 3, size=(6, 6))
    oh = one_hot(mask, 3)
    kw = {"element": disk_element(1)} if kind == "dbce" else {}
    if kind == "bce":
        kw["weights"] = ClassWeights(np.array([1.0, 3.0, 6.0]))
    logits, cache = forward(model, x)
    grads = backward(model, cache, loss_gradient(kind, oh, logits, **kw))
    for i, p in enumerate(model.params):
        def f(v, i=i):
            m = model.copy()
            m.params[i] = v
            return compute_loss(kind, oh, softmax(m.forward(x)), **kw).total
        assert rel_error(grads[i], central_difference(f, p)) < 1e-4


def test_adam_zero_gradient_no_change():
    model = _tiny(8)
    grads = [np.zeros_like(p) for p in model.params]
    new, st = adam_step(model, grads, AdamState.zeros_like(model), lr=1e-3)
    for p, q in zip(model.params, new.params):
        np.testing.assert_array_equal(p, q)
    assert st.step == 1


def test_adam_first_step_closed_form():
    model = _tiny(9)
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=p.shape) for p in model.params]
    lr = 1e-2
    new, _ = adam_step(model, grads, AdamState.zeros_like(model), lr)
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    for p, q, g in zip(model.params, new.params, grads):
        np.testing.assert_allclose(q, p - lr * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=1e-15)


def test_adam_decoupled_weight_decay():
    model = _tiny(10)
    grads = [np.zeros_like(p) for p in model.params]
    new, _ = adam_step(model, grads, AdamState.zeros_like(model), lr=0.1, weight_decay=0.5)
    for p, q in zip(model.params, new.params):
        np.testing.assert_allclose(q, p * (1 - 0.05), rtol=1e-15)


def test_adam_deterministic_and_pure():
    model = _tiny(11)
    grads = [np.ones_like(p) for p in model.params]
    state = AdamState.zeros_like(model)
    a, sa = adam_step(model, grads, state, 1e-3, 1e-4)
    b, sb = adam_step(model, grads, state, 1e-3, 1e-4)
    assert state.step == 0
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p, q)


def test_adam_rejects_nonfinite():
    model = _tiny(12)
    grads = [np.zeros_like(p) for p in model.params]
    grads[0][0, 0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        adam_step(model, grads, AdamState.zeros_like(model), 1e-3)


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_small_adam_step_decreases_loss(kind):
    for seed in range(20):
        model = _tiny(seed, hidden=4)
        rng = np.random.default_rng(seed)
        x = rng.random((2, 8, 8))
        oh = one_hot(rng.integers(0, 3, size=(2, 8, 8)), 3)
        kw = {"element": disk_element(1)} if kind == "dbce" else {}
        if kind == "bce":
            kw["weights"] = ClassWeights(np.array([1.0, 2.0, 4.0]))
        logits, cache = forward(model, x)
        before = compute_loss(kind, oh, softmax(logits), **kw).total
        grads = backward(model, cache, loss_gradient(kind, oh, logits, **kw))
        new, _ = adam_step(model, grads, AdamState.zeros_like(model), lr=1e-4)
        assert compute_loss(kind, oh, softmax(new.forward(x)), **kw).total < before


def test_checkpoint_roundtrip(tmp_path):
    model = _tiny(13, hidden=5)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == model.config
    for p, q in zip(model.params, back.params):
        assert p.tobytes() == q.tobytes()
    save_checkpoint(back, tmp_path / "m2.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
    assert (tmp_path / "m.ckpt").read_bytes().startswith(b"DBCENET1")


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x")
    model = _tiny(14)
    save_checkpoint(model, tmp_path / "m.ckpt")
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-3])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")


def test_forward_bitwise_deterministic():
    model = _tiny(15, hidden=4)
    x = np.random.default_rng(0).random((3, 9, 9))
    assert model.forward(x).tobytes() == model.forward(x).tobytes()


def test_forward_matches_loop_reference():
    model = _tiny(16, hidden=3)
    x = np.random.default_rng(5).random((7, 9))
    ref = conv_net_reference(model.params, x)[-1]
    np.testing.assert_allclose(model.forward(x), ref, rtol=1e-12, atol=1e-14)
