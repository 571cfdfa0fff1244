import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualstream.numerics import (
    AdamState,
    Graph,
    GraphError,
    ShapeError,
    Tensor,
    UnknownOpError,
    adam_step,
    apply,
    backward,
    kinds,
    no_grad,
)
from dualstream.numerics import ops
from dualstream.numerics.gradcheck import numeric_grad, relative_error

from opcases import op_cases


def _scalarize(out, weights):
    return ops.sum(ops.mul(out, weights))


def _loss_fn(fn, weights):
    def f(arrays):
        with no_grad():
            out = fn({k: Tensor(v) for k, v in arrays.items()})
            return float(np.sum(out.data * weights))

    return f


def test_matmul_identity():
    out = apply("matmul", Tensor([[1.0, 2], [3, 4]]), Tensor([[1.0, 0], [0, 1]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_softmax_symmetric():
    np.testing.assert_array_equal(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_conv2d_center_sum():
    x = Tensor(np.ones((1, 1, 4, 4)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = ops.conv2d(x, k, stride=1, padding=1)
    assert out.data[0, 0, 1, 1] == 9.0


def test_unknown_kind():
    with pytest.raises(UnknownOpError):
        apply("fft", Tensor([1.0]))


def test_shape_mismatch_names_kind_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        apply("matmul", Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_sum_gradient_is_ones():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True, name="w")
    with Graph() as g:
        loss = ops.sum(w)
    np.testing.assert_array_equal(backward(g, loss)["w"], [1, 1, 1])


def test_mean_square_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True, name="w")
    with Graph() as g:
        loss = ops.mean(ops.mul(w, w))
    np.testing.assert_allclose(backward(g, loss)["w"], [1.0, 2.0])


def test_frozen_leaf_absent():
    w = Tensor([1.0, 2.0], requires_grad=True, name="w")
    f = Tensor([3.0, 4.0], requires_grad=False, name="frozen")
    with Graph() as g:
        loss = ops.sum(ops.mul(w, f))
    grads = backward(g, loss)
    assert set(grads) == {"w"}


def test_backward_errors():
    w = Tensor([1.0, 2.0], requires_grad=True, name="w")
    with Graph() as g:
        vec = ops.mul(w, w)
    with pytest.raises(GraphError, match="scalar"):
        backward(g, vec)
    outside = ops.sum(w)
    with pytest.raises(GraphError, match="not an output"):
        backward(g, outside)


def test_op_inventory():
    required = {"matmul", "add", "mul", "sub", "relu", "gelu", "sigmoid", "softmax", "layernorm", "conv2d",
                "avgpool2d", "mean", "sum", "concat", "slice", "transpose", "embed_lookup"}
    assert required <= set(kinds())


@pytest.mark.parametrize("kind", sorted(op_cases(np.random.default_rng(0))))
def test_finite_difference_agreement(kind):
    rng = np.random.default_rng(1)
    params, fn = op_cases(rng)[kind]
    with no_grad():
        out_shape = fn({k: Tensor(v) for k, v in params.items()}).shape
    weights = rng.standard_normal(out_shape)
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    with Graph() as g:
        loss = _scalarize(fn(leaves), weights)
    grads = backward(g, loss)
    f = _loss_fn(fn, weights)
    for name in params:
        fd = numeric_grad(f, params, name)
        assert relative_error(grads[name], fd) <= 1e-6, (kind, name)


def test_apply_is_pure():
    rng = np.random.default_rng(3)
    for kind, (params, fn) in op_cases(rng).items():
        a = fn({k: Tensor(v.astype(np.float32)) for k, v in params.items()}).data
        b = fn({k: Tensor(v.astype(np.float32)) for k, v in params.items()}).data
        assert a.dtype == np.float32
        assert a.tobytes() == b.tobytes(), kind


def _random_graph(rng, n_nodes):
    """Random chain-and-merge graph over two parameters; returns (params, builder)."""
    plan = []
    for i in range(n_nodes):
        plan.append((rng.choice(["add", "mul", "gelu", "sigmoid", "sub"]), rng.integers(0, i + 2, size=2)))

    def build(p):
        vals = [p["u"], p["v"]]
        for kind, (i, j) in plan:
            a, b = vals[i], vals[j]
            if kind in ("gelu", "sigmoid"):
                vals.append(apply(kind, a))
            else:
                vals.append(apply(kind, a, b))
        return vals[-1]

    return build


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 18))
def test_backward_linearity(seed, n):
    rng = np.random.default_rng(seed)
    u0, v0 = rng.standard_normal(3), rng.standard_normal(3)
    b1, b2 = _random_graph(rng, n), _random_graph(rng, n)

    def grads_of(builders):
        u = Tensor(u0, requires_grad=True, name="u")
        v = Tensor(v0, requires_grad=True, name="v")
        with Graph() as g:
            losses = [ops.sum(b({"u": u, "v": v})) for b in builders]
            total = losses[0] if len(losses) == 1 else ops.add(losses[0], losses[1])
        return backward(g, total)

    both = grads_of([b1, b2])
    g1, g2 = grads_of([b1]), grads_of([b2])
    for name in ("u", "v"):
        expected = g1.get(name, 0) + g2.get(name, 0)
        np.testing.assert_allclose(both.get(name, np.zeros(3)), expected, rtol=1e-12, atol=1e-12)


def test_adam_zero_gradient_keeps_param():
    p = {"w": np.array([1.5])}
    new, _ = adam_step(AdamState(lr=0.1), p, {"w": np.array([0.0])})
    assert new["w"][0] == 1.5


def test_adam_first_step():
    new, state = adam_step(AdamState(lr=0.1), {"p": np.array(0.0)}, {"p": np.array(1.0)})
    assert new["p"] == pytest.approx(-0.1, abs=1e-6)
    assert state.step == 1


def test_adam_deterministic_and_skips_missing():
    state = AdamState()
    params = {"a": np.array([1.0, 2.0]), "b": np.array([3.0])}
    grads = {"a": np.array([0.3, -0.2])}
    x1, s1 = adam_step(state, params, grads)
    x2, s2 = adam_step(state, params, grads)
    assert x1["a"].tobytes() == x2["a"].tobytes()
    assert x1["b"] is params["b"]
    assert "b" not in s1.m


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        adam_step(AdamState(), {"a": np.zeros(2)}, {"a": np.zeros(3)})


def test_tensor_invariants():
    t = Tensor(np.zeros((2, 3)))
    assert t.data.size == 6
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))
