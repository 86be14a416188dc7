import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqephase.tensor import autograd as ag
from vqephase.tensor import layers as L
from vqephase.tensor.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from vqephase.tensor.optim import Adam, AdamState, adam_step


def numeric_grads(f, params, step=1e-5):
    out = {}
    for k, p in params.items():
        num = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), num.reshape(-1)
        for j in range(flat.size):
            o = flat[j]
            flat[j] = o + step
            a = f().item()
            flat[j] = o - step
            b = f().item()
            flat[j] = o
            nflat[j] = (a - b) / (2 * step)
        out[k] = num
    return out


def assert_grads(f, params, rtol=1e-4):
    for p in params.values():
        p.grad = None
    f().backward()
    num = numeric_grads(f, params)
    for k, p in params.items():
        scale = max(np.max(np.abs(num[k])), 1e-8)
        assert np.max(np.abs(p.grad - num[k])) / scale < rtol, k


LAYER_CASES = ["conv1d", "conv1d_transposed", "attention", "resnet_block", "mlp", "layer_norm",
               "losses"]


def build_case(name, rng):
    x = ag.parameter(rng.normal(size=(2, 5, 8)))
    if name in ("conv1d", "conv1d_transposed"):
        p = {"x": x, **L.init_conv1d(rng, 8, 3, 3)}
        fn = getattr(L, name)
        return (lambda: ag.tsum(ag.tanh(fn(x, p)) ** 2)), p
    if name == "attention":
        p = {"x": x, **L.init_attention(rng, 8)}
        return (lambda: ag.tsum(ag.tanh(L.attention(x, p, 2)))), p
    if name == "resnet_block":
        p = {"x": x, **L.init_resnet_block(rng, 8)}
        return (lambda: ag.tsum(ag.tanh(L.resnet_block(x, p)))), p
    if name == "layer_norm":
        p = {"x": x, **L.init_layer_norm(8)}
        p["g"].data = rng.normal(size=8)
        return (lambda: ag.tsum(ag.tanh(L.layer_norm(x, p)) ** 3)), p
    if name == "mlp":
        y = ag.parameter(rng.normal(size=(4, 6)))
        p = {"y": y, **L.init_mlp(rng, (6, 5, 3))}
        return (lambda: ag.tsum(L.mlp(y, p, 2) ** 2)), p
    mu = ag.parameter(rng.normal(size=(4, 3)))
    lv = ag.parameter(rng.normal(size=(4, 3)))
    return (lambda: L.kl_gauss(mu, lv) + L.mse_loss(mu, lv * 2.0)), {"mu": mu, "lv": lv}


@pytest.mark.parametrize("name", LAYER_CASES)
def test_layer_gradients(name):
    for seed in range(10):
        f, p = build_case(name, np.random.default_rng(seed))
        assert_grads(f, p)


def test_attention_lengths_and_heads():
    rng = np.random.default_rng(0)
    x = ag.parameter(rng.normal(size=(1, 5, 8)))
    p = {"x": x, **L.init_attention(rng, 8)}
    assert_grads(lambda: ag.tsum(L.attention(x, p, 2) ** 2), p)
    with pytest.raises(ValueError):
        L.attention(x, p, 3)


def test_conv_identity_and_bias():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 4))
    p = {"W": ag.parameter(np.eye(4)[None]), "b": ag.parameter(np.zeros(4))}
    np.testing.assert_allclose(L.conv1d(x, p).data, x)
    np.testing.assert_allclose(L.conv1d_transposed(x, p).data, x)
    p = {"W": ag.parameter(np.zeros((3, 4, 2))), "b": ag.parameter(np.array([1.0, -2.0]))}
    np.testing.assert_allclose(L.conv1d(x, p).data, np.broadcast_to([1.0, -2.0], (2, 6, 2)))


def test_transposed_conv_is_adjoint():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 4, 5))
    x, y = rng.normal(size=(1, 7, 4)), rng.normal(size=(1, 7, 5))
    p = {"W": ag.parameter(w)}
    pt = {"W": ag.parameter(np.transpose(w, (0, 2, 1)))}
    lhs = np.sum(L.conv1d(x, p).data * y)
    rhs = np.sum(x * L.conv1d_transposed(y, pt).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv_even_kernel_rejected():
    with pytest.raises(ValueError):
        ag.conv1d_raw(np.zeros((1, 4, 2)), np.zeros((2, 2, 2)))


def test_attention_single_position():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 1, 8))
    p = {k: ag.parameter(v.data) for k, v in L.init_attention(rng, 8).items()}
    out = L.attention(x, p, 2).data
    np.testing.assert_allclose(out, x @ p["Wv"].data @ p["Wo"].data, atol=1e-14)


def test_resnet_zero_weights_identity():
    rng = np.random.default_rng(3)
    p = L.init_resnet_block(rng, 4)
    for v in p.values():
        v.data[...] = 0
    x = rng.normal(size=(2, 5, 4))
    np.testing.assert_allclose(L.resnet_block(x, p).data, x)


def test_zero_depth_mlp_identity():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(L.mlp(x, {}, 0).data, x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(2, 9))
def test_softmax_rows_are_distributions(seed, rows, cols):
    x = np.random.default_rng(seed).normal(scale=20, size=(rows, cols))
    s = ag.softmax(ag.Tensor(x)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)


def test_loss_closed_forms():
    assert L.mse_loss(np.ones(3), np.ones(3)).item() == 0.0
    assert L.kl_gauss(np.zeros((1, 1)), np.zeros((1, 1))).item() == 0.0
    assert L.kl_gauss(np.ones((1, 1)), np.zeros((1, 1))).item() == pytest.approx(0.5)
    with pytest.raises(ValueError):
        L.mse_loss(np.ones(3), np.ones(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    assert L.kl_gauss(rng.normal(size=(3, 4)), rng.normal(scale=3, size=(3, 4))).item() >= 0


def test_tape_linearity():
    rng = np.random.default_rng(4)
    w = ag.parameter(rng.normal(size=(3, 3)))
    x = rng.normal(size=(2, 3))
    f1 = lambda: ag.tsum(ag.tanh(ag.matmul(x, w)))
    f2 = lambda: ag.tsum(ag.exp(ag.matmul(x, w) * 0.1))
    w.grad = None
    (f1() + f2()).backward()
    joint = w.grad.copy()
    w.grad = None
    f1().backward()
    g1 = w.grad.copy()
    w.grad = None
    f2().backward()
    np.testing.assert_allclose(joint, g1 + w.grad, atol=1e-14)


def test_shared_node_accumulates():
    a = ag.parameter(np.array(3.0))
    b = a * a + a
    b.backward()
    assert a.grad == pytest.approx(7.0)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = {"w": ag.parameter(np.array([1.0, -2.0]))}
        st_ = AdamState()
        adam_step(p, {"w": np.zeros(2)}, st_, 0.1)
        np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])

    def test_descends_and_converges(self):
        p = {"w": ag.parameter(np.array(1.0))}
        opt = Adam(p, lr=0.1)
        first = None
        for i in range(500):
            opt.zero_grad()
            (p["w"] * p["w"]).backward()
            opt.step()
            if i == 0:
                first = float(p["w"].data)
        assert first < 1.0
        assert abs(float(p["w"].data)) < 1e-3

    def test_missing_gradient(self):
        p = {"w": ag.parameter(np.ones(1))}
        with pytest.raises(KeyError):
            adam_step(p, {}, AdamState(), 0.1)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.array(2.5), "c": np.zeros(0)}
    save_checkpoint(tmp_path / "m.ckpt", arrays, {"layout_id": "abc"})
    got, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"layout_id": "abc"}
    for k, v in arrays.items():
        assert got[k].shape == v.shape
        assert got[k].tobytes() == np.ascontiguousarray(v, "<f8").tobytes()
    save_checkpoint(tmp_path / "m2.ckpt", got, meta)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"notackpt" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x")
