import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siamtrack import tensor as T
from siamtrack.gradcheck import GradcheckError, finite_diff_check
from siamtrack.tensor import DimensionError, Parameter, Tensor

from conftest import param


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal((eye @ eye).data, np.eye(2))


def test_matmul_hand_example():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a = param(rng, 5, 4, name="a")
    b = param(rng, 4, 3, name="b")
    w = rng.normal(size=(5, 3))
    rep = finite_diff_check(lambda: ((a @ b) * w).sum(), [a, b], step=1e-6, tol=1e-6)
    assert rep.ok, str(rep)


@pytest.mark.parametrize("x, expected", [(0.0, 1.0), (1.0, 2.0), (-1.0, np.exp(-1.0))])
def test_elu1_values(x, expected):
    assert T.elu1(Tensor([x])).data[0] == pytest.approx(expected, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
def test_elu1_strictly_positive(x):
    assert T.elu1(Tensor([x])).data[0] > 0
    assert T.elu1(Tensor(np.array([x], dtype=np.float32))).data[0] > 0


def test_elu1_derivative(rng):
    x = Parameter(np.array([-2.0, -0.5, 0.3, 1.7]))
    T.elu1(x).sum().backward()
    np.testing.assert_allclose(x.grad, [np.exp(-2.0), np.exp(-0.5), 1.0, 1.0])


def test_conv2d_identity_kernel(rng):
    x = Tensor(rng.normal(size=(1, 5, 6)))
    out = T.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_zero_input_gives_bias(rng):
    bias = rng.normal(size=3)
    out = T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(rng.normal(size=(3, 2, 3, 3))), Tensor(bias))
    np.testing.assert_allclose(out.data, np.broadcast_to(bias[:, None, None], (3, 4, 4)))


def test_conv2d_matches_direct_loops(rng):
    x = rng.normal(size=(2, 5, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = T.conv2d(Tensor(x), Tensor(k), Tensor(b)).data
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 4))
    for o in range(3):
        for i in range(5):
            for j in range(4):
                ref[o, i, j] = np.sum(pad[:, i:i + 3, j:j + 3] * k[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


def test_conv2d_gradient(rng):
    x = param(rng, 2, 5, 5, name="x")
    k = param(rng, 3, 2, 3, 3, name="k")
    b = param(rng, 3, name="b")
    w = rng.normal(size=(3, 5, 5))
    rep = finite_diff_check(lambda: (T.conv2d(x, k, b) * w).sum(), [x, k, b], tol=1e-6)
    assert rep.ok, str(rep)


def test_finite_diff_sum_of_squares(rng):
    p = param(rng, 4, 3, name="p")
    rep = finite_diff_check(lambda: (p * p).sum(), [p], tol=1e-8)
    assert rep.max_error < 1e-8


def test_finite_diff_rejects_zero_step(rng):
    p = param(rng, 2)
    with pytest.raises(GradcheckError):
        finite_diff_check(lambda: (p * p).sum(), [p], step=0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finite_diff_rejects_non_finite(rng):
    p = Parameter(np.array([-1.0]))
    with pytest.raises(GradcheckError):
        finite_diff_check(lambda: T.log(p).sum(), [p])


def test_finite_diff_flags_wrong_gradient(rng):
    p = param(rng, 3, name="p")

    def f():
        # forward is x^2 but the recorded backward claims 3x
        out = T._result(p.data ** 2, (p,), lambda g: p._accumulate(3.0 * p.data * g))
        return out.sum()

    rep = finite_diff_check(f, [p], tol=1e-5)
    assert rep.failed == ["p"]


def test_fallback_steps_do_not_hide_wrong_gradient(rng):
    p = param(rng, 3, name="p")

    def f():
        out = T._result(p.data ** 2, (p,), lambda g: p._accumulate(3.0 * p.data * g))
        return out.sum()

    rep = finite_diff_check(f, [p], tol=1e-5, fallback_steps=(1e-4, 1e-5, 1e-7))
    assert rep.failed == ["p"]


def test_fallback_step_resolves_kink_crossing():
    # relu input sits 3e-6 from its kink: a 1e-5 step straddles it, 1e-6 does not
    p = Parameter(np.array([3e-6]), name="p")
    assert not finite_diff_check(lambda: T.relu(p).sum(), [p], step=1e-5).ok
    assert finite_diff_check(lambda: T.relu(p).sum(), [p], step=1e-5, fallback_steps=(1e-6,)).ok


def test_fallback_steps_validated(rng):
    p = param(rng, 2)
    with pytest.raises(GradcheckError):
        finite_diff_check(lambda: (p * p).sum(), [p], fallback_steps=(-1.0,))


def _unary(name):
    return {
        "elu1": T.elu1, "relu": T.relu, "exp": T.exp, "sigmoid": T.sigmoid, "softplus": T.softplus,
        "abs": T.abs, "neg": lambda x: -x, "square": lambda x: x ** 2,
        "log": lambda x: T.log(T.abs(x) + 0.5), "sqrt": lambda x: T.sqrt(T.abs(x) + 0.5),
    }[name]


@pytest.mark.parametrize("name", ["elu1", "relu", "exp", "sigmoid", "softplus", "abs", "neg",
                                  "square", "log", "sqrt"])
@pytest.mark.parametrize("shape", [(1,), (7,), (3, 5), (32, 32)])
def test_unary_primitives_gradcheck(name, shape):
    rng = np.random.default_rng(zlib.crc32(f"{name}{shape}".encode()))
    x = param(rng, *shape, name="x")
    w = rng.normal(size=shape)
    rep = finite_diff_check(lambda: (_unary(name)(x) * w).sum(), [x], tol=1e-5, max_entries=64)
    assert rep.ok, str(rep)


@pytest.mark.parametrize("shape_a, shape_b", [((4, 5), (4, 5)), ((3, 1), (1, 6)), ((32, 32), (32,)),
                                              ((2, 3, 4), (3, 1))])
@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_primitives_gradcheck(op, shape_a, shape_b):
    rng = np.random.default_rng(7)
    a = param(rng, *shape_a, name="a")
    b = Parameter(rng.uniform(0.5, 2.0, size=shape_b) * rng.choice([-1, 1], size=shape_b), name="b")
    fn = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}[op]
    w = rng.normal(size=np.broadcast_shapes(shape_a, shape_b))
    rep = finite_diff_check(lambda: (fn(a, b) * w).sum(), [a, b], tol=1e-5, max_entries=64)
    assert rep.ok, str(rep)


@pytest.mark.parametrize("m, k, n", [(1, 1, 1), (3, 7, 2), (32, 16, 32), (32, 32, 32)])
def test_matmul_gradcheck_shapes(m, k, n):
    rng = np.random.default_rng(m * 100 + n)
    a, b = param(rng, m, k, name="a"), param(rng, k, n, name="b")
    w = rng.normal(size=(m, n))
    rep = finite_diff_check(lambda: ((a @ b) * w).sum(), [a, b], tol=1e-5, max_entries=64)
    assert rep.ok, str(rep)


def test_batched_matmul_gradcheck(rng):
    a, b = param(rng, 4, 2, 3, 5, name="a"), param(rng, 2, 5, 3, name="b")
    w = rng.normal(size=(4, 2, 3, 3))
    rep = finite_diff_check(lambda: ((a @ b) * w).sum(), [a, b], tol=1e-5)
    assert rep.ok, str(rep)


def test_shape_ops_gradcheck(rng):
    x = param(rng, 4, 6, name="x")
    w = rng.normal(size=(3, 2, 4))

    def f():
        y = x.reshape(2, 3, 4).transpose(1, 0, 2).swapaxes(1, 2).swapaxes(1, 2)
        return (y * w).sum() + x[1:3, ::2].sum() * 0.5 + T.concat([x, x * 2.0], axis=0).mean()

    rep = finite_diff_check(f, [x], tol=1e-5)
    assert rep.ok, str(rep)


def test_take_rows_and_fancy_index_gradcheck(rng):
    x = param(rng, 6, 3, name="x")
    idx = np.array([[0, 0, 5], [2, 1, 0]])
    w = rng.normal(size=(2, 3, 3))
    rep = finite_diff_check(lambda: (T.take_rows(x, idx) * w).sum() + x[[1, 1, 4]].sum(), [x], tol=1e-5)
    assert rep.ok, str(rep)


def test_max_reduce_gradcheck(rng):
    x = param(rng, 5, 7, 3, name="x")
    w = rng.normal(size=(5, 3))
    rep = finite_diff_check(lambda: (T.max_reduce(x, axis=1) * w).sum(), [x], tol=1e-5)
    assert rep.ok, str(rep)


def test_layer_norm_gradcheck(rng):
    x = param(rng, 6, 8, name="x")
    g = Parameter(rng.uniform(0.5, 1.5, size=8), name="g")
    b = param(rng, 8, name="b")
    w = rng.normal(size=(6, 8))
    rep = finite_diff_check(lambda: (T.layer_norm(x, g, b) * w).sum(), [x, g, b], tol=1e-5)
    assert rep.ok, str(rep)


def test_layer_norm_normalizes(rng):
    x = Tensor(rng.normal(3.0, 2.0, size=(4, 16)))
    y = T.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, rtol=1e-4)


def test_scatter_max_gradcheck(rng):
    x = param(rng, 9, 4, name="x")
    cells = np.array([0, 2, 2, 3, 0, 3, 3, 5, 2])
    w = rng.normal(size=(6, 4))

    def f():
        out, _ = T.scatter_max(x, cells, 6)
        return (out * w).sum()

    rep = finite_diff_check(f, [x], tol=1e-5)
    assert rep.ok, str(rep)


def test_scatter_max_values():
    x = Tensor([[1.0, 5.0], [3.0, 2.0], [-1.0, -1.0]])
    out, occ = T.scatter_max(x, np.array([1, 1, 3]), 4)
    np.testing.assert_array_equal(out.data, [[0, 0], [3, 5], [0, 0], [-1, -1]])
    np.testing.assert_array_equal(occ, [False, True, False, True])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31))
def test_matmul_identity_associativity(seed):
    rng = np.random.default_rng(seed)
    a, b = Tensor(rng.normal(size=(8, 8))), Tensor(rng.normal(size=(8, 8)))
    eye = Tensor(np.eye(8))
    np.testing.assert_allclose(((a @ eye) @ b).data, (a @ (eye @ b)).data, atol=1e-12, rtol=0)


def test_no_grad_records_nothing(rng):
    p = param(rng, 3)
    with T.no_grad():
        y = (p * 2.0).sum()
    assert not y.requires_grad


def test_backward_populates_every_leaf(rng):
    a, b = param(rng, 3, 2), param(rng, 2, 2)
    c = param(rng, 2)
    ((a @ b + c) ** 2).sum().backward()
    for p in (a, b, c):
        assert p.grad is not None and p.grad.shape == p.shape and np.isfinite(p.grad).all()


def test_gradient_accumulates_across_backward_calls(rng):
    p = param(rng, 4)
    (p * 3.0).sum().backward()
    (p * 3.0).sum().backward()
    np.testing.assert_allclose(p.grad, 6.0)


def test_float32_ops_keep_dtype(rng):
    x = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
    w = Tensor(rng.normal(size=(4, 2)).astype(np.float32))
    y = T.elu1(x @ w) * 2.0 + 1.0
    assert y.dtype == np.float32
