import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsir import functional as F
from rsir.permwin import (
    PermutationPlan,
    SampleMap,
    SampleOrigin,
    WindowLayout,
    importance_sample_map,
    plan_from_map,
    restore,
    shuffle,
    uniform_sample_map,
    window_partition,
    window_reverse,
)
from rsir.tensor import Parameter, Tensor, no_grad

from oracles import numeric_grad, rel_err


def _plan(scores):
    return plan_from_map(SampleMap(np.asarray(scores, dtype=float)[None], SampleOrigin.UNIFORM))


# -- sample maps --------------------------------------------------------------


def test_uniform_map_is_seeded():
    a = uniform_sample_map(2, 4, np.random.default_rng(7))
    b = uniform_sample_map(2, 4, np.random.default_rng(7))
    assert a.origin is SampleOrigin.UNIFORM
    np.testing.assert_array_equal(a.scores, b.scores)


def test_uniform_map_statistics():
    s = uniform_sample_map(1, 100_000, np.random.default_rng(0)).scores
    assert 0.49 <= s.mean() <= 0.51
    assert s.min() >= 0.0 and s.max() < 1.0


def test_uniform_map_single_token():
    m = uniform_sample_map(1, 1, np.random.default_rng(0))
    assert m.shape == (1, 1)
    p = plan_from_map(m)
    np.testing.assert_array_equal(p.ids_shuffle, [[0]])


def test_uniform_map_rejects_empty():
    with pytest.raises(ValueError):
        uniform_sample_map(0, 4, np.random.default_rng(0))


def test_sample_map_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        SampleMap(np.array([[0.0, np.inf]]), SampleOrigin.UNIFORM)


def test_importance_map_constant():
    m = importance_sample_map(np.full((1, 5, 3), 3.0))
    np.testing.assert_array_equal(m.scores, np.full((1, 5), 3.0))
    np.testing.assert_array_equal(plan_from_map(m).ids_shuffle, [np.arange(5)])


def test_importance_map_channel_means():
    x = np.array([[[1.0, 3.0], [2.0, 2.0], [0.0, 10.0]]])
    m = importance_sample_map(Tensor(x, dtype=np.float64))
    assert m.origin is SampleOrigin.IMPORTANCE
    np.testing.assert_array_equal(m.scores, [[2.0, 2.0, 5.0]])


def test_importance_map_rejects_nan():
    x = np.zeros((1, 3, 2))
    x[0, 1, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        importance_sample_map(x)


def test_importance_map_is_detached():
    x = Parameter(np.ones((1, 3, 2)))
    m = importance_sample_map(x)
    assert isinstance(m.scores, np.ndarray)
    m.scores[0, 0] = 99.0
    assert x.data[0, 0, 0] == 1.0


# -- plans ----------------------------------------------------------------------


def test_plan_small_example():
    p = _plan([0.3, 0.1, 0.2])
    assert p.ids_shuffle.tolist() == [[1, 2, 0]]
    assert p.ids_restore.tolist() == [[2, 0, 1]]


def test_plan_sorted_scores_is_identity():
    p = _plan([0.1, 0.2, 0.5, 0.9])
    np.testing.assert_array_equal(p.ids_shuffle, [np.arange(4)])
    np.testing.assert_array_equal(p.ids_restore, [np.arange(4)])


def test_plan_ties_keep_original_order():
    p = _plan([0.5] * 6)
    np.testing.assert_array_equal(p.ids_shuffle, [np.arange(6)])
    p = _plan([1.0, 0.0, 1.0, 0.0])
    assert p.ids_shuffle.tolist() == [[1, 3, 0, 2]]


def test_identity_plan_is_valid():
    assert PermutationPlan.identity(3, 7).is_valid()


def test_broken_plan_is_invalid():
    s = np.array([[0, 0, 1]])
    assert not PermutationPlan(s, s.copy()).is_valid()
    assert not PermutationPlan(np.array([[1, 0, 2]]), np.array([[0, 1, 2]])).is_valid()


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 4), st.integers(1, 256), st.integers(0, 2**32 - 1), st.booleans())
def test_plans_are_valid_permutations(b, n, seed, with_ties):
    r = np.random.default_rng(seed)
    scores = r.integers(0, 4, (b, n)).astype(float) if with_ties else r.random((b, n))
    p = plan_from_map(SampleMap(scores, SampleOrigin.UNIFORM))
    assert p.is_valid()
    np.testing.assert_array_equal(p.ids_restore, np.argsort(p.ids_shuffle, axis=1))
    ranked = np.take_along_axis(scores, p.ids_shuffle, axis=1)
    assert np.all(np.diff(ranked, axis=1) >= 0)


# -- shuffle / restore --------------------------------------------------------


def test_shuffle_moves_rows(f64):
    x = Tensor(np.arange(3.0)[None, :, None].repeat(2, axis=2))
    p = PermutationPlan(np.array([[1, 2, 0]]), np.array([[2, 0, 1]]))
    assert shuffle(x, p).data[0, :, 0].tolist() == [1.0, 2.0, 0.0]


def test_identity_plan_leaves_tokens(f64, rng):
    x = Tensor(rng.standard_normal((2, 5, 3)))
    p = PermutationPlan.identity(2, 5)
    np.testing.assert_array_equal(shuffle(x, p).data, x.data)
    np.testing.assert_array_equal(restore(x, p).data, x.data)


def test_shuffle_length_mismatch():
    with pytest.raises(ValueError, match="does not fit"):
        shuffle(Tensor(np.zeros((1, 4, 2))), PermutationPlan.identity(1, 3))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 64), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_shuffle_restore_round_trip(b, n, c, seed):
    r = np.random.default_rng(seed)
    p = plan_from_map(uniform_sample_map(b, n, r))
    x = Tensor(r.standard_normal((b, n, c)), dtype=np.float64)
    np.testing.assert_array_equal(restore(shuffle(x, p), p).data, x.data)
    np.testing.assert_array_equal(shuffle(restore(x, p), p).data, x.data)


def test_round_trip_gradient_matches_identity(f64, rng):
    p = plan_from_map(uniform_sample_map(2, 6, rng))
    w = Tensor(rng.standard_normal((2, 6, 3)))
    x = Parameter(rng.standard_normal((2, 6, 3)))

    def f():
        with no_grad():
            return F.sum(F.mul(restore(shuffle(x, p), p), w)).item()

    F.sum(F.mul(restore(shuffle(x, p), p), w)).backward()
    np.testing.assert_array_equal(x.grad, w.data)
    assert rel_err(x.grad, numeric_grad(f, x.data)) < 1e-8


# -- windows --------------------------------------------------------------------


def test_partition_single_window(f64, rng):
    x = Tensor(rng.standard_normal((2, 6, 3)))
    out = window_partition(x, 6)
    assert out.shape == (2, 6, 3)
    np.testing.assert_array_equal(out.data, x.data)


def test_partition_slices_in_order(f64):
    x = Tensor(np.arange(4.0).reshape(1, 4, 1))
    out = window_partition(x, 2)
    assert out.data[..., 0].tolist() == [[0.0, 1.0], [2.0, 3.0]]
    np.testing.assert_array_equal(window_reverse(out, 2, 2, 2).data, x.data)


def test_partition_is_batch_major(f64):
    x = Tensor(np.arange(8.0).reshape(2, 4, 1))
    out = window_partition(x, 2)
    assert out.data[..., 0].tolist() == [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [6.0, 7.0]]


def test_partition_divisibility_error():
    with pytest.raises(ValueError, match=r"L=6.*w=4"):
        window_partition(Tensor(np.zeros((1, 6, 2))), 4)


def test_reverse_inconsistent_grid():
    windows = Tensor(np.zeros((3, 2, 1)))
    with pytest.raises(ValueError):
        window_reverse(windows, 2, 2, 2)
    with pytest.raises(ValueError):
        window_reverse(Tensor(np.zeros((2, 2, 1))), 3, 2, 3)


def test_window_layout():
    layout = WindowLayout(window_size=4, seq_len=16, spatial=(4, 4))
    assert layout.num_windows * layout.window_size == layout.seq_len
    with pytest.raises(ValueError):
        WindowLayout(window_size=3, seq_len=16, spatial=(4, 4))
    with pytest.raises(ValueError):
        WindowLayout(window_size=4, seq_len=16, spatial=(2, 4))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 3), st.data())
def test_partition_reverse_round_trip(h, wd, b, data):
    n = h * wd
    divisors = [d for d in range(1, n + 1) if n % d == 0]
    w = data.draw(st.sampled_from(divisors))
    x = Tensor(np.random.default_rng(n).standard_normal((b, n, 2)), dtype=np.float64)
    np.testing.assert_array_equal(window_reverse(window_partition(x, w), w, h, wd).data, x.data)


# -- importance grouping -----------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3), st.sampled_from([(16, 4), (16, 2), (64, 8), (12, 3), (9, 9)]), st.integers(0, 2**32 - 1))
def test_importance_windows_are_rank_contiguous(b, lw, seed):
    n, w = lw
    r = np.random.default_rng(seed)
    x = r.standard_normal((b, n, 4))
    plan = plan_from_map(importance_sample_map(x))
    windows = window_partition(shuffle(Tensor(x, dtype=np.float64), plan), w).data.reshape(b, n // w, w, 4)
    ranks = np.argsort(np.argsort(x.mean(axis=2), axis=1, kind="stable"), axis=1)
    for bi in range(b):
        for k in range(n // w):
            members = plan.ids_shuffle[bi, k * w:(k + 1) * w]
            assert sorted(ranks[bi, members].tolist()) == list(range(k * w, (k + 1) * w))
            np.testing.assert_array_equal(windows[bi, k], x[bi, members])
    np.testing.assert_array_equal(plan.window_assignment(w), ranks // w)


def test_fixed_seed_gives_identical_plans():
    a = plan_from_map(uniform_sample_map(3, 50, np.random.default_rng(11)))
    b = plan_from_map(uniform_sample_map(3, 50, np.random.default_rng(11)))
    np.testing.assert_array_equal(a.ids_shuffle, b.ids_shuffle)
    c = plan_from_map(uniform_sample_map(3, 50, np.random.default_rng(12)))
    assert not np.array_equal(a.ids_shuffle, c.ids_shuffle)
