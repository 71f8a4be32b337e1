import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rsir import functional as F
from rsir.tensor import Parameter, Tensor, count_macs, default_dtype, mac_tag, no_grad, precision

from oracles import numeric_grad, rel_err


def check_grad(fn, *arrays, tol=1e-4):
    """Compare autodiff gradients of sum-reduced ``fn`` against central differences."""
    params = [Parameter(a.copy(), name=f"p{i}") for i, a in enumerate(arrays)]
    loss = F.sum(fn(*params))
    loss.backward()
    for p in params:
        def f():
            with no_grad():
                return F.sum(fn(*params)).item()

        num = numeric_grad(f, p.data)
        assert rel_err(p.grad, num) < tol, p.name


# -- matmul -------------------------------------------------------------------


def test_matmul_identity(f64):
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(F.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)


def test_matmul_hand_expansion(f64):
    out = F.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_grad_is_b_transpose(f64, rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    pa = Parameter(a)
    F.sum(F.matmul(pa, Tensor(b))).backward()
    expected = np.broadcast_to(b.sum(axis=1), (3, 4))
    np.testing.assert_allclose(pa.grad, expected, rtol=1e-12)
    check_grad(lambda x, y: F.matmul(x, y), a, b, tol=1e-6)


def test_matmul_batched_broadcast_grad(f64, rng):
    check_grad(lambda x, y: F.matmul(x, y), rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2)), tol=1e-6)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


# -- softmax ----------------------------------------------------------------


def test_softmax_symmetric(f64):
    np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-15)


def test_softmax_large_input_is_finite(f64):
    out = F.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0 and out[1] == 0.0


def test_softmax_values(f64):
    # exp(i) / sum exp, i = 1..3
    np.testing.assert_allclose(
        F.softmax(Tensor([1.0, 2.0, 3.0])).data,
        [0.09003057317038046, 0.24472847105479767, 0.6652409557748219],
        atol=1e-4,
    )


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    out = F.softmax(Tensor(x, dtype=np.float64), axis=-1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_grad(f64, rng):
    w = rng.standard_normal((3, 5))
    check_grad(lambda x: F.mul(F.softmax(x, axis=-1), Tensor(w)), rng.standard_normal((3, 5)))
    check_grad(lambda x: F.mul(F.softmax(x, axis=0), Tensor(w)), rng.standard_normal((3, 5)))


# -- layer norm ---------------------------------------------------------------


def test_layer_norm_constant_row(f64):
    c = 4
    out = F.layer_norm(Tensor([[5.0] * c]), Tensor(np.ones(c)), Tensor(np.zeros(c)))
    np.testing.assert_array_equal(out.data, [[0.0] * c])


def test_layer_norm_two_values(f64):
    out = F.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.0, 1.0])


def test_layer_norm_grad(f64, rng):
    w = rng.standard_normal((2, 3, 6))
    check_grad(
        lambda x, g, b: F.mul(F.layer_norm(x, g, b), Tensor(w)),
        rng.standard_normal((2, 3, 6)), rng.standard_normal(6), rng.standard_normal(6),
        tol=1e-5,
    )


# -- gather -------------------------------------------------------------------


def test_gather_identity(f64, rng):
    x = rng.standard_normal((2, 5, 3))
    idx = np.tile(np.arange(5), (2, 1))
    np.testing.assert_array_equal(F.gather(Tensor(x), idx).data, x)


def test_gather_rows(f64):
    x = np.array([[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]])
    out = F.gather(Tensor(x), np.array([[2, 0, 1]]))
    assert out.data[0, :, 0].tolist() == [2.0, 0.0, 1.0]


def test_gather_permutation_grad_all_ones(f64, rng):
    p = Parameter(rng.standard_normal((3, 6, 2)))
    perm = np.stack([rng.permutation(6) for _ in range(3)])
    F.sum(F.gather(p, perm)).backward()
    np.testing.assert_array_equal(p.grad, np.ones_like(p.data))


def test_gather_repeated_indices_accumulate(f64, rng):
    idx = np.array([[0, 0, 2], [1, 1, 1]])
    w = Tensor(rng.standard_normal((2, 3, 4)))
    check_grad(lambda x: F.mul(F.gather(x, idx), w), rng.standard_normal((2, 3, 4)))


def test_gather_out_of_range():
    with pytest.raises(IndexError, match="range"):
        F.gather(Tensor(np.zeros((1, 3, 2))), np.array([[0, 1, 3]]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_gather_inverse_round_trip(b, n, c, seed):
    r = np.random.default_rng(seed)
    with precision(np.float64):
        x = Parameter(r.standard_normal((b, n, c)))
        perm = np.stack([r.permutation(n) for _ in range(b)])
        inv = np.argsort(perm, axis=1)
        y = F.gather(F.gather(x, perm), inv)
        np.testing.assert_array_equal(y.data, x.data)
        w = r.standard_normal((b, n, c))
        F.sum(F.mul(y, Tensor(w))).backward()
        np.testing.assert_array_equal(x.grad, w)


# -- misc elementwise / shape ops ---------------------------------------------


def test_gelu_zero_and_exact_form(f64):
    assert F.gelu(Tensor([0.0])).data[0] == 0.0
    x = 1.3
    expected = 0.5 * x * (1 + math.erf(x / math.sqrt(2)))
    assert F.gelu(Tensor([x])).data[0] == pytest.approx(expected, rel=1e-14)


def test_mean_axis(f64):
    assert F.mean(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=1).data.tolist() == [2.0, 6.0]


def test_concat_shape(f64):
    a, b = Tensor(np.zeros((2, 3, 4))), Tensor(np.ones((2, 3, 4)))
    assert F.concat([a, b], axis=-1).shape == (2, 3, 8)


def test_concat_mismatch():
    with pytest.raises(ValueError):
        F.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=-1)


def test_add_shape_mismatch():
    with pytest.raises(ValueError, match="broadcastable"):
        F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


OPS = {
    "gelu": (lambda x: F.gelu(x), [(3, 4)]),
    "add": (lambda x, y: F.add(x, y), [(3, 4), (4,)]),
    "sub": (lambda x, y: F.sub(x, y), [(3, 4), (3, 1)]),
    "mul": (lambda x, y: F.mul(x, y), [(2, 3, 4), (3, 4)]),
    "div": (lambda x, y: F.div(x, F.add(F.mul(y, y), 1.0)), [(3, 4), (3, 4)]),
    "exp": (lambda x: F.exp(x), [(5,)]),
    "mean": (lambda x: F.mean(F.mul(x, x), axis=1), [(3, 4, 2)]),
    "sum_keepdims": (lambda x: F.mul(F.sum(x, axis=0, keepdims=True), x), [(3, 4)]),
    "reshape": (lambda x: F.mul(F.reshape(x, (4, 3)), F.reshape(x, (4, 3))), [(3, 4)]),
    "transpose": (lambda x: F.mul(F.transpose(x, (2, 0, 1)), 1.5), [(2, 3, 4)]),
    "getitem": (lambda x: F.mul(x[:, 1:3], x[:, 0:2]), [(3, 4)]),
    "concat": (lambda x, y: F.mul(F.concat([x, y], axis=1), F.concat([y, x], axis=1)), [(2, 3), (2, 3)]),
    "log_softmax": (lambda x: F.mul(F.log_softmax(x), x), [(3, 5)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, f64, rng):
    fn, shapes = OPS[name]
    check_grad(fn, *[rng.standard_normal(s) for s in shapes])


def test_cross_entropy_grad(f64, rng):
    labels = np.array([0, 2, 1])
    check_grad(lambda x: F.cross_entropy(x, labels), rng.standard_normal((3, 4)))


def test_cross_entropy_value(f64):
    loss = F.cross_entropy(Tensor([[0.0, 0.0]]), np.array([1]))
    assert loss.item() == pytest.approx(math.log(2))


# -- backward -------------------------------------------------------------------


def test_backward_linear(f64, rng):
    p = Parameter(rng.standard_normal(5))
    F.sum(p).backward()
    np.testing.assert_array_equal(p.grad, np.ones(5))


def test_backward_quadratic(f64, rng):
    p = Parameter(rng.standard_normal(5))
    F.mul(F.sum(F.mul(p, p)), 0.5).backward()
    np.testing.assert_allclose(p.grad, p.data, rtol=1e-15)


def test_backward_requires_scalar():
    with pytest.raises(ValueError, match="scalar"):
        Parameter(np.ones(3)).backward()


def test_backward_accumulates_and_clears_tape(f64):
    p = Parameter(np.array([2.0]))
    y = F.add(F.mul(p, p), p)
    loss = F.sum(y)
    loss.backward()
    assert p.grad.tolist() == [5.0]
    assert loss.is_leaf and y.is_leaf  # tape released
    F.sum(F.mul(p, 3.0)).backward()
    assert p.grad.tolist() == [8.0]


def test_detached_and_frozen_tensors_get_no_grad(f64):
    p = Parameter(np.array([1.0, 2.0]))
    frozen = Parameter(np.array([3.0, 4.0]))
    frozen.freeze()
    F.sum(F.mul(F.add(p.detach(), frozen), p)).backward()
    assert frozen.grad is None
    np.testing.assert_array_equal(p.grad, [4.0, 6.0])


def test_no_grad_builds_no_tape():
    p = Parameter(np.ones(2))
    with no_grad():
        y = F.mul(p, 2.0)
    assert not y.requires_grad and y.is_leaf


def test_precision_switch():
    assert default_dtype() == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(ValueError):
        with precision(np.float16):
            pass


def test_mac_counter_tags():
    with count_macs() as c:
        F.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
        with mac_tag("x"):
            F.matmul(Tensor(np.ones((1, 2))), Tensor(np.ones((2, 7))))
    assert c.total == 2 * 3 * 4 * 5 + 14
    assert c.by_tag["x"] == 14
