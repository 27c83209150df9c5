import json
import math

import numpy as np
import pytest

from motionkit import diffcore as dc

TOL = 1e-4


def leaf(rng, *shape, scale=1.0, positive=False):
    x = rng.normal(0.0, scale, size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return dc.tensor(x, requires_grad=True)


def weighted(out, w):
    """Scalar probe: sum(out * w) with a fixed random weight."""
    return dc.sum_(dc.mul(out, w))


UNARY = {
    "neg": dc.neg,
    "exp": dc.exp,
    "log": None,
    "square": dc.square,
    "tanh": dc.tanh,
    "sigmoid": dc.sigmoid,
    "gelu": dc.gelu,
    "softmax": lambda a: dc.softmax(a, axis=-1),
    "log_softmax": lambda a: dc.log_softmax(a, axis=-1),
    "sum_axis": lambda a: dc.sum_(a, axis=1),
    "mean_keep": lambda a: dc.mean(a, axis=0, keepdims=True),
    "reshape": lambda a: dc.reshape(a, (a.size,)),
    "transpose": lambda a: dc.transpose(a, (1, 0)),
    "getitem": lambda a: dc.getitem(a, (slice(1, 3), slice(None, None, 2))),
    "fancy_getitem": lambda a: dc.getitem(a, (np.array([0, 2, 2]), np.array([1, 0, 1]))),
    "pad": lambda a: dc.pad_axis(a, 2, 1, axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    with dc.precision(np.float64):
        x = leaf(rng, 4, 5, positive=(name == "log"))
        op = dc.log if name == "log" else UNARY[name]
        w = rng.normal(size=op(x).shape)
        assert dc.gradcheck(lambda: weighted(op(x), w), [x]) < TOL


@pytest.mark.parametrize("op", [dc.add, dc.sub, dc.mul, dc.div])
def test_binary_gradients_with_broadcast(op, rng):
    with dc.precision(np.float64):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 1, 4, positive=True)
        w = rng.normal(size=(3, 4))
        assert dc.gradcheck(lambda: weighted(op(a, b), w), [a, b]) < TOL


def test_matmul_linear_concat_gradients(rng):
    with dc.precision(np.float64):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        w = rng.normal(size=(2, 3, 5))
        assert dc.gradcheck(lambda: weighted(dc.matmul(a, b), w), [a, b]) < TOL
        x, W, bias = leaf(rng, 2, 3, 4), leaf(rng, 4, 6), leaf(rng, 6)
        w = rng.normal(size=(2, 3, 6))
        assert dc.gradcheck(lambda: weighted(dc.linear(x, W, bias), w), [x, W, bias]) < TOL
        c = leaf(rng, 2, 2, 4)
        w = rng.normal(size=(2, 5, 4))
        assert dc.gradcheck(lambda: weighted(dc.concat([a, c], axis=1), w), [a, c]) < TOL


def test_rms_norm_and_embedding_gradients(rng):
    with dc.precision(np.float64):
        x, g = leaf(rng, 3, 4, 8), leaf(rng, 8)
        w = rng.normal(size=(3, 4, 8))
        assert dc.gradcheck(lambda: weighted(dc.rms_norm(x, g), w), [x, g]) < TOL
        table = leaf(rng, 10, 6)
        ids = np.array([[1, 3, 3], [9, 0, 1]])
        w = rng.normal(size=(2, 3, 6))
        assert dc.gradcheck(lambda: weighted(dc.embedding(ids, table), w), [table]) < TOL


def test_cross_entropy_gradient(rng):
    with dc.precision(np.float64):
        z = leaf(rng, 3, 5, 7)
        t = rng.integers(0, 7, size=(3, 5))
        mask = rng.random((3, 5)) > 0.3
        assert dc.gradcheck(lambda: dc.cross_entropy(z, t, mask), [z]) < TOL


def test_two_layer_mlp_gradient(rng):
    with dc.precision(np.float64):
        x = dc.tensor(rng.normal(size=(6, 4)))
        W1, b1, W2, b2 = leaf(rng, 4, 8), leaf(rng, 8), leaf(rng, 8, 3), leaf(rng, 3)
        t = rng.integers(0, 3, size=6)
        f = lambda: dc.cross_entropy(dc.linear(dc.gelu(dc.linear(x, W1, b1)), W2, b2), t)
        assert dc.gradcheck(f, [W1, b1, W2, b2]) < TOL


def test_shared_subexpression_accumulates(rng):
    with dc.precision(np.float64):
        x = leaf(rng, 5)
        y = dc.mul(x, x)
        f = lambda: dc.sum_(dc.add(dc.mul(x, x), dc.exp(dc.mul(x, x))))
        assert dc.gradcheck(f, [x]) < TOL


def test_round_ste():
    x = dc.tensor([-2.5, -1.5, -0.5, 0.5, 1.49, 2.5, 3.7], requires_grad=True)
    y = dc.round_ste(x)
    np.testing.assert_array_equal(y.data, [-3, -2, -1, 1, 1, 3, 4])
    assert np.all(y.data == np.round(y.data))
    dc.backward(dc.sum_(y))
    np.testing.assert_array_equal(x.grad, np.ones(7))


def test_cross_entropy_uniform_is_log_v():
    for V in (2, 7, 1000):
        z = dc.tensor(np.zeros((4, V)))
        assert float(dc.cross_entropy(z, np.arange(4) % V).data) == pytest.approx(math.log(V), rel=1e-6)


def test_backward_basics(rng):
    x = dc.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    dc.backward(dc.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    x.zero_grad()
    dc.backward(dc.sum_(dc.square(x)))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)
    unused = dc.tensor(np.ones(2), requires_grad=True)
    grads = dc.backward(dc.sum_(dc.square(x)), params=[unused])
    np.testing.assert_array_equal(grads[0], np.zeros(2))
    with pytest.raises(dc.ShapeError):
        dc.backward(dc.square(x))


def test_shape_errors_name_both_shapes():
    a, b = dc.tensor(np.ones((2, 3))), dc.tensor(np.ones((4, 5)))
    for op in (dc.add, dc.mul, dc.matmul):
        with pytest.raises(dc.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            op(a, b)
    with pytest.raises(dc.ShapeError):
        dc.linear(a, b)


def test_default_dtype_and_precision():
    assert dc.tensor([1.0]).data.dtype == np.float32
    with dc.precision(np.float64):
        assert dc.tensor([1.0]).data.dtype == np.float64
    assert dc.tensor([1.0]).data.dtype == np.float32


def test_adam_zero_gradient_keeps_params():
    p = dc.tensor([1.0, -2.0], requires_grad=True)
    state = {}
    dc.adam_step([p], [np.zeros(2, np.float32)], state, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    with dc.precision(np.float64):
        p = dc.tensor([0.0, 0.0, 0.0], requires_grad=True)
        state = {}
        g = np.array([3.0, -0.02, 1e3])
        dc.adam_step([p], [g], state, lr=0.01)
        # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        np.testing.assert_allclose(p.data, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_descends_quadratic_bowl(rng):
    with dc.precision(np.float64):
        A = rng.normal(size=(5, 5))
        H = A @ A.T + np.eye(5)
        x = dc.tensor(rng.normal(size=5), requires_grad=True)
        opt = dc.Adam([x], lr=0.01)
        losses = []
        for _ in range(200):
            loss = dc.mul(dc.sum_(dc.mul(x, dc.matmul(dc.tensor(H), dc.reshape(x, (5, 1))).reshape(5))), 0.5)
            opt.zero_grad()
            dc.backward(loss)
            opt.step()
            losses.append(float(loss.data))
        assert losses[-1] < 1e-3 * losses[0]
        assert np.all(np.diff(losses[5:]) < 0)


def test_adam_shape_mismatch():
    p = dc.tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(dc.ShapeError):
        dc.adam_step([p], [np.zeros(4)], {}, lr=0.1)


def test_determinism(rng):
    def run():
        r = np.random.default_rng(5)
        W = dc.tensor(r.normal(size=(4, 3)), requires_grad=True)
        x = dc.tensor(r.normal(size=(8, 4)))
        t = r.integers(0, 3, 8)
        opt = dc.Adam([W], lr=0.01)
        out = []
        for _ in range(20):
            loss = dc.cross_entropy(dc.linear(x, W), t)
            opt.zero_grad()
            dc.backward(loss)
            opt.step()
            out.append(loss.data.tobytes())
        return out
    assert run() == run()


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"a": dc.tensor(rng.normal(size=(3, 4))), "b.bias": dc.tensor(rng.normal(size=7))}
    dc.save_checkpoint(tmp_path / "ck", params, {"note": "x"}, seed=11, step=42)
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["step"] == 42
    assert [e["name"] for e in manifest["params"]] == ["a", "b.bias"]
    assert manifest["params"][0]["shape"] == [3, 4]
    arrays, meta = dc.load_checkpoint(tmp_path / "ck")
    assert meta == {"note": "x"}
    for k in params:
        assert arrays[k].tobytes() == params[k].data.tobytes()
    raw = (tmp_path / "ck" / "0000.f32").read_bytes()
    assert np.frombuffer(raw, "<f4")[0] == params["a"].data.ravel()[0]


def test_checkpoint_truncated_payload(tmp_path):
    dc.save_checkpoint(tmp_path, {"w": dc.tensor(np.ones(4))})
    (tmp_path / "0000.f32").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError, match="payload"):
        dc.load_checkpoint(tmp_path)
