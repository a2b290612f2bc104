import threading
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from figrat.autodiff import (Tape, Tensor, backward, bmm, concat_rows, detach, elementwise, exp, gather,
                             grad_check, layer_norm, log, logsumexp_rows, matmul, mul, neighbor_sum, no_grad,
                             reduce, relu, reshape, sigmoid, slice_rows, softmax_rows, split_rows, square,
                             sum_all, swap_last, take_rows, transpose)
from figrat.errors import DimensionError


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_orthogonal():
    a = Tensor([[1, 2], [3, 4]])
    assert np.array_equal(matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])
    assert np.array_equal(matmul(Tensor([[1, 0]]), Tensor([[0], [5]])).data, [[0]])


@pytest.mark.parametrize("seed", range(10))
def test_matmul_matches_triple_loop(seed):
    rng = np.random.default_rng(seed)
    m, k, n = rng.integers(1, 33, size=3)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    ref = triple_loop(a, b)
    out = matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(out - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_matmul_3x4_by_4x2_abs():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - triple_loop(a, b))) < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_examples():
    assert np.allclose(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]], atol=0)
    big = softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big)) and abs(big[0, 0] - 1.0) < 1e-12 and big[0, 1] < 1e-12


def test_softmax_high_precision_oracle():
    getcontext().prec = 50
    e = [Decimal(v).exp() for v in (1, 2, 3)]
    ref = np.array([float(x / sum(e)) for x in e])
    out = softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0]
    assert np.allclose(out, ref, rtol=1e-12, atol=0)


def test_softmax_empty_rows_rejected():
    with pytest.raises(DimensionError):
        softmax_rows(Tensor(np.zeros((2, 0))))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_sum_to_one(x):
    p = softmax_rows(Tensor(x)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_mask_zeroes_entries_and_empty_rows():
    mask = np.array([[True, False, True], [False, False, False]])
    p = softmax_rows(Tensor(np.arange(6.0).reshape(2, 3)), mask).data
    assert p[0, 1] == 0.0 and abs(p[0].sum() - 1) < 1e-15
    assert np.array_equal(p[1], np.zeros(3))


def test_elementwise_examples():
    assert elementwise(Tensor(0.0), "sigmoid").item() == 0.5
    assert elementwise(Tensor(-3.0), "relu").item() == 0.0
    assert elementwise(Tensor(3.0), "relu").item() == 3.0
    x = Tensor([0.0], requires_grad=True)
    sum_all(sigmoid(x)).backward()
    assert abs(x.grad[0] - 0.25) < 1e-15
    h = 1e-5
    fd = (1 / (1 + np.exp(-h)) - 1 / (1 + np.exp(h))) / (2 * h)
    assert abs(x.grad[0] - fd) < 1e-10


def test_broadcast_rules():
    m = Tensor(np.ones((3, 2)))
    assert elementwise(m, "add", Tensor([1.0, 2.0])).shape == (3, 2)
    assert elementwise(m, "mul", Tensor(2.0)).shape == (3, 2)
    with pytest.raises(DimensionError):
        elementwise(m, "add", Tensor(np.ones(3)))
    with pytest.raises(ValueError):
        elementwise(m, "tanh")


def test_reduce_examples():
    a = Tensor([[2.0, 4.0], [0.0, 0.0]], requires_grad=True)
    assert np.array_equal(reduce(a, "mean_rows").data, [1.0, 2.0])
    assert np.array_equal(reduce(Tensor([[5.0, 6.0]]), "sum_rows").data, [5.0, 6.0])
    reduce(a, "sum_all").backward()
    assert np.array_equal(a.grad, np.ones((2, 2)))
    with pytest.raises(DimensionError):
        reduce(Tensor(np.zeros((0, 3))), "mean_rows")


def test_concat_examples_and_roundtrip():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(concat_rows(a, Tensor(np.zeros((0, 3)))).data, a.data)
    assert np.array_equal(concat_rows(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])).data, [[1, 2], [3, 4]])
    b = Tensor(np.ones((4, 3)))
    top, bottom = split_rows(concat_rows(a, b), 2)
    assert np.array_equal(top.data, a.data) and np.array_equal(bottom.data, b.data)
    with pytest.raises(DimensionError):
        concat_rows(a, Tensor(np.zeros((1, 2))))


def test_backward_examples():
    x = Tensor([1.0, -2.0, 3.5], requires_grad=True)
    sum_all(square(x)).backward()
    assert np.array_equal(x.grad, 2 * x.data)

    y = Tensor(np.linspace(-2, 2, 7), requires_grad=True)
    assert grad_check(lambda t: sum_all(sigmoid(t)), y) < 1e-6

    unused = Tensor([1.0, 2.0], requires_grad=True)
    z = Tensor([1.0], requires_grad=True)
    sum_all(mul(z, 3.0)).backward()
    assert np.array_equal(unused.grad, [0.0, 0.0])


def test_backward_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(DimensionError):
        backward(square(x))
    with pytest.raises(ValueError):
        backward(sum_all(Tensor([1.0])))
    loss = sum_all(square(x))
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_detach_blocks_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    sum_all(add_st := mul(detach(x), x)).backward()
    assert np.array_equal(x.grad, x.data)
    assert add_st.requires_grad


def test_straight_through_value_and_gradient():
    m = Tensor([0.3, 1.2, -0.4], requires_grad=True)
    soft = softmax_rows(reshape(m, (1, 3)))
    hard = Tensor([[0.0, 1.0, 0.0]])
    st_row = hard + soft - detach(soft)
    assert np.allclose(st_row.data, hard.data, atol=1e-15)
    sum_all(mul(st_row, Tensor([[1.0, 2.0, 3.0]]))).backward()
    p = soft.data[0]
    w = np.array([1.0, 2.0, 3.0])
    assert np.allclose(m.grad, p * (w - p @ w), atol=1e-15)


def test_tape_is_topological():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = matmul(x, x)
    z = sum_all(add_ := elementwise(y, "add", x))
    tape = Tape.from_loss(z)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]
    assert tape.nodes[-1] is z and add_ in tape.nodes


def test_no_grad_is_thread_local():
    seen = {}

    def worker():
        seen["inner"] = mul(Tensor([1.0], requires_grad=True), 2.0).requires_grad

    with no_grad():
        assert not mul(Tensor([1.0], requires_grad=True), 2.0).requires_grad
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen["inner"]


def test_grad_check_examples():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
    assert grad_check(lambda t: sum_all(mul(t, Tensor(np.arange(6.0).reshape(3, 2)))), x) < 1e-10
    c = Tensor(np.ones(3), requires_grad=True)
    assert grad_check(lambda t: sum_all(Tensor([1.0, 2.0])), c) == 0.0


def test_grad_check_restores_input():
    x = Tensor(np.random.default_rng(1).normal(size=(4,)), requires_grad=True)
    before = x.data.copy()
    grad_check(lambda t: sum_all(exp(t)), x)
    assert np.array_equal(x.data, before)


def _case(seed):
    """One primitive on random inputs, wrapped as a scalar function of x."""
    rng = np.random.default_rng(seed)
    m, n = (int(v) for v in rng.integers(1, 6, size=2))
    w = Tensor(rng.normal(size=(m, n)))
    kind = seed % 17
    if kind == 0:
        b, wm = Tensor(rng.normal(size=(n, 3))), Tensor(rng.normal(size=(m, 3)))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(matmul(x, b), wm))
    if kind == 1:
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(sigmoid(x), w))
    if kind == 2:
        x0 = rng.normal(size=(m, n))
        x0 += np.sign(x0) * 0.05  # keep away from the kink
        return x0, lambda x: sum_all(mul(relu(x), w))
    if kind == 3:
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(softmax_rows(x), w))
    if kind == 4:
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(exp(x), w))
    if kind == 5:
        return rng.uniform(0.5, 2.0, size=(m, n)), lambda x: sum_all(mul(log(x), w))
    if kind == 6:
        wr = Tensor(rng.normal(size=n))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(reduce(x, "mean_rows"), wr))
    if kind == 7:
        wl = Tensor(rng.normal(size=m))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(logsumexp_rows(x), wl))
    if kind == 8:
        other = Tensor(rng.normal(size=(2, n)))
        wc = Tensor(rng.normal(size=(m + 2, n)))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(concat_rows(other, x), wc))
    if kind == 9:
        idx = rng.integers(0, m, size=7)
        wt = Tensor(rng.normal(size=(7, n)))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(take_rows(x, idx), wt))
    if kind == 10:
        nbr = np.where(rng.random((m, 3)) < 0.3, -1, rng.integers(0, m, size=(m, 3)))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(neighbor_sum(x, nbr), w))
    if kind == 11:
        flat = np.where(rng.random((4, 5)) < 0.2, -1, rng.integers(0, m * n, size=(4, 5)))
        wg = Tensor(rng.normal(size=(4, 5)))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(gather(x, flat), wg))
    if kind == 12:
        gain, bias = Tensor(rng.normal(size=n)), Tensor(rng.normal(size=n))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(layer_norm(x, gain, bias), w))
    if kind == 13:
        b = Tensor(rng.normal(size=(2, n, 3)))
        wb = Tensor(rng.normal(size=(2, m, 3)))
        return rng.normal(size=(2, m, n)), lambda x: sum_all(mul(bmm(x, b), wb))
    if kind == 14:
        wt = Tensor(rng.normal(size=(n, m)))
        return rng.normal(size=(m, n)), lambda x: sum_all(mul(transpose(x), wt))
    if kind == 15:
        ws = Tensor(rng.normal(size=(2, n, m)))
        return rng.normal(size=(2, m, n)), lambda x: sum_all(mul(swap_last(x), ws))
    lo = int(rng.integers(0, m))
    ws = Tensor(rng.normal(size=(m - lo, n)))
    return rng.normal(size=(m, n)), lambda x: sum_all(mul(square(slice_rows(x, lo, m)), ws))


@pytest.mark.parametrize("seed", range(136))
def test_primitive_gradients_match_finite_differences(seed):
    x0, f = _case(seed)
    x = Tensor(x0, requires_grad=True)
    assert grad_check(f, x, h=1e-5) < 1e-4


def test_tape_replay_is_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        loss = sum_all(softmax_rows(matmul(relu(matmul(x, w)), transpose(w))))
        loss.backward()
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


@given(st.integers(0, 10_000))
def test_neighbor_sum_order_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 3)) * 10.0 ** rng.integers(-3, 4, size=(6, 3))
    idx = rng.integers(-1, 6, size=(6, 4))
    perm = rng.permutation(4)
    a = neighbor_sum(Tensor(x), idx).data
    b = neighbor_sum(Tensor(x), idx[:, perm]).data
    assert np.array_equal(a, b)
