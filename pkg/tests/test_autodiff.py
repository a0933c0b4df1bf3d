import zlib

import numpy as np
import pytest

from survfuse.autodiff import (
    ParamStore,
    Tape,
    Tensor,
    adam_step,
    avg_pool2d,
    backward,
    conv2d_forward,
    dense_forward,
    finite_diff_check,
    glorot_uniform,
    no_tape,
    softmax,
    sum_,
)
from survfuse.autodiff import tensor as T
from survfuse.errors import ContractError, DimensionError


def test_dense_identity():
    out = dense_forward(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    assert out.data.tolist() == [[1.0, 2.0]]


def test_dense_relu_clamps():
    out = dense_forward(Tensor([[-1.0, 3.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]), "relu")
    assert out.data.tolist() == [[0.0, 3.0]]


def test_dense_softplus_closed_form():
    out = dense_forward(Tensor([[0.0]]), Tensor([[1.0]]), Tensor([1.0]), "softplus")
    assert out.data[0, 0] == pytest.approx(np.log1p(np.e), abs=1e-15)
    assert out.data[0, 0] == pytest.approx(1.3133, abs=1e-4)


def test_dense_shape_errors():
    with pytest.raises(DimensionError):
        dense_forward(Tensor([[1.0, 2.0]]), Tensor(np.eye(3)), Tensor(np.zeros(3)))
    with pytest.raises(DimensionError):
        dense_forward(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor(np.zeros(3)))
    with pytest.raises(ValueError):
        dense_forward(Tensor([[1.0]]), Tensor([[1.0]]), Tensor([0.0]), "gelu")


def test_conv_identity_kernel():
    out = conv2d_forward(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    assert out.shape == (1, 1, 2, 2)
    assert np.all(out.data == 1.0)


def test_conv_hand_value():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    out = conv2d_forward(x, Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 10.0


def test_conv_stride_floor_rule():
    out = conv2d_forward(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]), stride=2)
    assert out.shape == (1, 1, 1, 1)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d_forward(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))


def test_backward_linear_in_weights():
    store = ParamStore()
    W = store.add("W", np.arange(6.0).reshape(2, 3))
    x = np.array([[1.0, -2.0]])
    with Tape() as tape:
        loss = sum_(T.matmul(Tensor(x), W))
    backward(tape, loss, store)
    # d/dW sum(x W) = x^T replicated across output columns
    np.testing.assert_array_equal(store.grads["W"], np.repeat(x.T, 3, axis=1))


def test_backward_constant_loss_gives_zero():
    store = ParamStore()
    w = store.add("w", [1.0, 2.0])
    v = store.add("v", [3.0])
    with Tape() as tape:
        loss = sum_(w * 2.0)
    backward(tape, loss, store)
    assert store.grads["v"].tolist() == [0.0]


def test_backward_power_rule():
    store = ParamStore()
    w = store.add("w", 3.0)
    with Tape() as tape:
        loss = w * w
    backward(tape, loss, store)
    assert store.grads["w"] == 6.0


def test_shared_subexpression_accumulates():
    store = ParamStore()
    w = store.add("w", 1.5)
    with Tape() as tape:
        loss = w + w
    backward(tape, loss, store)
    assert store.grads["w"] == 2.0


def test_backward_needs_scalar():
    store = ParamStore()
    w = store.add("w", [1.0, 2.0])
    with Tape() as tape:
        y = w * 2.0
    with pytest.raises(ContractError):
        backward(tape, y, store)


def test_tape_records_in_topological_order():
    store = ParamStore()
    w = store.add("w", [1.0, 2.0])
    with Tape() as tape:
        a = T.exp(w)
        b = a * w
        loss = sum_(b)
    seen = {w.node_id}
    for rec in tape.records:
        assert all(i in seen or i not in {r.output for r in tape.records} for i in rec.inputs)
        seen.add(rec.output)
    assert tape.records[-1].output == loss.node_id


def test_adam_zero_gradient_keeps_params():
    store = ParamStore()
    store.add("w", [1.0, -2.0])
    adam_step(store, lr=0.1)
    assert store["w"].data.tolist() == [1.0, -2.0]


def test_adam_first_step_moves_by_lr():
    store = ParamStore()
    store.add("w", 1.0)
    store.grads["w"][...] = 1.0
    adam_step(store, lr=0.1)
    assert store["w"].data == pytest.approx(0.9, abs=1e-7)


def test_adam_deterministic():
    def run():
        store = ParamStore()
        store.add("w", [0.3, -0.7])
        for g in ([1.0, 2.0], [1.0, 2.0]):
            store.grads["w"][...] = g
            adam_step(store)
        return store["w"].data.copy()

    assert run().tobytes() == run().tobytes()


def test_adam_rejects_nonpositive_lr():
    store = ParamStore()
    store.add("w", 1.0)
    with pytest.raises(ContractError):
        adam_step(store, lr=0.0)


def test_store_shapes_mirror_params():
    store = ParamStore()
    store.add("a", np.zeros((2, 3)))
    store.add("b", np.zeros(4))
    for name in store:
        assert store.grads[name].shape == store[name].shape
        assert store.m[name].shape == store[name].shape
        assert store.v[name].shape == store[name].shape
    with pytest.raises(ContractError):
        store.add("a", 1.0)


def test_glorot_limits():
    rng = np.random.default_rng(0)
    w = glorot_uniform(rng, (30, 20), 30, 20)
    assert np.abs(w).max() <= np.sqrt(6 / 50)


def test_gradcheck_quadratic_is_tight():
    store = ParamStore()
    store.add("w", np.random.default_rng(1).normal(size=(5, 1)))
    A = np.random.default_rng(2).normal(size=(5, 5))
    report = finite_diff_check(lambda s: sum_(T.matmul(Tensor(A), s["w"]) * s["w"]), store)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_gradcheck_constant_loss():
    store = ParamStore()
    store.add("w", [1.0, 2.0])
    report = finite_diff_check(lambda s: sum_(s["w"] * 0.0) + 4.0, store)
    assert report.passed
    assert report.max_rel_error == 0.0


def test_gradcheck_flags_wrong_gradient():
    store = ParamStore()
    store.add("w", [0.5, 1.5])
    bad = lambda a: T._result(a.data**2, (a,), lambda g: (g * a.data,))  # missing factor 2
    report = finite_diff_check(lambda s: sum_(bad(s["w"])), store)
    assert not report.passed


def _random_layer_case(kind, rng):
    store = ParamStore()
    if kind.startswith("dense"):
        act = kind.split(":")[1]
        b, i, o = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
        x = rng.normal(size=(b, i))
        store.add("W", rng.normal(size=(i, o)))
        store.add("b", rng.normal(size=o))
        proj = rng.normal(size=(b, o))
        # relu kink: keep pre-activations away from 0 so differences are smooth
        if act == "relu":
            pre = x @ store["W"].data + store["b"].data
            store["b"].data[...] += np.where(np.abs(pre).min(axis=0) < 1e-3, 0.1, 0.0)
        return store, lambda s: sum_(dense_forward(Tensor(x), s["W"], s["b"], act) * proj)
    if kind == "conv":
        c, f = rng.integers(1, 3), rng.integers(1, 3)
        h, k, stride = rng.integers(3, 6), rng.integers(1, 3), rng.integers(1, 3)
        x = rng.normal(size=(2, c, h, h))
        store.add("K", rng.normal(size=(f, c, k, k)))
        store.add("b", rng.normal(size=f))
        ho = (h - k) // stride + 1
        proj = rng.normal(size=(2, f, ho, ho))
        return store, lambda s: sum_(conv2d_forward(Tensor(x), s["K"], s["b"], stride, "tanh") * proj)
    if kind == "pool":
        h = rng.integers(2, 6)
        store.add("x", rng.normal(size=(1, 2, h, h)))
        size = rng.integers(1, h + 1)
        ho = (h - size) // size + 1
        proj = rng.normal(size=(1, 2, ho, ho))
        return store, lambda s: sum_(avg_pool2d(s["x"], size) * proj)
    raise ValueError(kind)


@pytest.mark.parametrize(
    "kind", ["dense:identity", "dense:relu", "dense:tanh", "dense:softplus", "dense:sigmoid", "dense:softmax", "conv", "pool"]
)
def test_layer_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = 0.0
    for _ in range(100):
        store, closure = _random_layer_case(kind, rng)
        report = finite_diff_check(closure, store, h=1e-5, tol=1e-4)
        worst = max(worst, report.max_rel_error)
    assert worst < 1e-4


def test_forward_without_tape_is_bitwise_identical():
    rng = np.random.default_rng(3)
    store = ParamStore()
    store.add("W", rng.normal(size=(4, 3)))
    store.add("b", rng.normal(size=3))
    store.add("K", rng.normal(size=(2, 1, 2, 2)))
    x = rng.normal(size=(5, 4))
    img = rng.normal(size=(2, 1, 5, 5))

    def forward(s):
        a = dense_forward(Tensor(x), s["W"], s["b"], "softplus")
        c = conv2d_forward(Tensor(img), s["K"], Tensor([0.1, -0.2]), 1, "relu")
        return a.data.copy(), c.data.copy()

    with Tape():
        a1, c1 = forward(store)
    with no_tape():
        a2, c2 = forward(store)
    assert a1.tobytes() == a2.tobytes()
    assert c1.tobytes() == c2.tobytes()


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.normal(scale=20, size=(6, rng.integers(1, 8)))
        p = softmax(Tensor(x)).data
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
