import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wav2text import diffcore as dc
from helpers import GRAD_TOL, central_difference, naive_conv1d, relative_error

SEEDS = range(10)


def leaf(arr):
    return dc.Tensor(arr, requires_grad=True)


def check_grads(build, arrays, h=1e-5):
    """Compare backward() against central differences for every array."""
    tensors = [leaf(a) for a in arrays]
    loss = build(*tensors)
    loss.backward()
    worst = 0.0
    for t in tensors:
        def f():
            with dc.no_grad():
                return build(*[dc.Tensor(x.data) for x in tensors]).data
        numeric = central_difference(f, t.data, h=h)
        worst = max(worst, relative_error(t.grad, numeric))
    return worst


# ------------------------------------------------------------------ conv1d

def test_conv1d_length_formula_example():
    x = dc.Tensor(np.zeros((1, 400)))
    w = dc.Tensor(np.zeros((2, 1, 80)))
    assert dc.conv1d(x, w, np.zeros(2), stride=4).shape == (2, 81)


def test_conv1d_zero_input_gives_bias():
    rng = np.random.default_rng(0)
    out = dc.conv1d(np.zeros((3, 50)), rng.normal(size=(4, 3, 7)), [1.0, -2.0, 0.5, 3.0], stride=2)
    np.testing.assert_array_equal(out.data, np.broadcast_to([[1.0], [-2.0], [0.5], [3.0]], out.shape))


def test_conv1d_matches_naive_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 8))
    w = rng.normal(size=(1, 1, 3))
    b = rng.normal(size=1)
    np.testing.assert_allclose(dc.conv1d(x, w, b, 1).data, naive_conv1d(x, w, b, 1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_multichannel_strided_matches_naive(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 31))
    w = rng.normal(size=(4, 3, 5))
    b = rng.normal(size=4)
    np.testing.assert_allclose(dc.conv1d(x, w, b, 3).data, naive_conv1d(x, w, b, 3), atol=1e-12)


def test_conv1d_length_enumeration():
    for length in range(1, 65):
        for width in range(1, 9):
            for stride in range(1, 5):
                if length < width:
                    continue
                out = dc.conv1d(np.zeros((1, length)), np.zeros((1, 1, width)), np.zeros(1), stride)
                assert out.shape[-1] == math.floor((length - width) / stride) + 1


def test_conv1d_batched_rows_equal_single_calls():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 2, 40))
    w = rng.normal(size=(3, 2, 6))
    b = rng.normal(size=3)
    batched = dc.conv1d(x, w, b, 2).data
    for n in range(5):
        np.testing.assert_array_equal(batched[n], dc.conv1d(x[n], w, b, 2).data)


def test_conv1d_errors():
    with pytest.raises(dc.ShapeError, match="input shorter than filter"):
        dc.conv1d(np.zeros((1, 5)), np.zeros((1, 1, 6)), np.zeros(1))
    with pytest.raises(dc.ShapeError, match="C_in"):
        dc.conv1d(np.zeros((2, 10)), np.zeros((1, 3, 2)), np.zeros(1))
    with pytest.raises(dc.ShapeError, match="C_out"):
        dc.conv1d(np.zeros((1, 10)), np.zeros((2, 1, 2)), np.zeros(3))


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_gradients(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=(2, 3, 20)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)]
    err = check_grads(lambda x, w, b: dc.total(dc.tanh(dc.conv1d(x, w, b, 2))), arrays)
    assert err < GRAD_TOL


# ------------------------------------------------------------------- lrelu

def test_lrelu_values():
    np.testing.assert_allclose(dc.lrelu([2.0, -2.0], 0.1).data, [2.0, -0.2])
    np.testing.assert_array_equal(dc.lrelu([3.0, -1.0, 0.0], 0.0).data, [3.0, 0.0, 0.0])


def test_lrelu_gradient_against_finite_difference():
    x = leaf([3.0, -5.0])
    dc.total(dc.lrelu(x, 0.1)).backward()
    np.testing.assert_allclose(x.grad, [1.0, 0.1])
    numeric = central_difference(lambda: dc.total(dc.lrelu(x.data, 0.1)).data, x.data)
    np.testing.assert_allclose(x.grad, numeric, atol=1e-6)


def test_lrelu_kink_uses_leakiness():
    x = leaf([0.0])
    dc.total(dc.lrelu(x, 0.1)).backward()
    assert x.grad[0] == 0.1


def test_lrelu_rejects_bad_leakiness():
    with pytest.raises(ValueError):
        dc.lrelu([1.0], 1.0)


# ----------------------------------------------------------------- softmax

def test_softmax_uniform():
    np.testing.assert_allclose(dc.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_no_overflow():
    y = dc.softmax([1000.0, 0.0]).data
    assert np.isfinite(y).all()
    assert y[0] == pytest.approx(1.0) and y[1] == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_matches_direct_formula(seed):
    x = np.random.default_rng(seed).normal(size=5)
    direct = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(dc.softmax(x).data, direct, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_softmax_sums_to_one(values):
    y = dc.softmax(values).data
    assert (y > 0).all() or len(values) > 1
    assert abs(y.sum() - 1.0) < 1e-9


# ---------------------------------------------- elementwise and linear ops

def test_mean_pool_of_constant():
    x = np.full((4, 13), 2.5)
    np.testing.assert_array_equal(dc.mean_pool_over_time(x).data, np.full(4, 2.5))


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(dc.matmul(a, np.eye(4)).data, a)


def test_concat_gradient_splits_back():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=3)), leaf(rng.normal(size=2))
    weights = rng.normal(size=5)
    out = dc.concat([a, b])
    assert out.shape == (5,)
    dc.total(dc.mul(out, weights)).backward()
    np.testing.assert_allclose(a.grad, weights[:3])
    np.testing.assert_allclose(b.grad, weights[3:])
    err = check_grads(lambda x, y: dc.total(dc.tanh(dc.concat([x, y])) * weights),
                      [rng.normal(size=3), rng.normal(size=2)])
    assert err < GRAD_TOL


def test_embedding_lookup_and_errors():
    table = leaf(np.arange(12.0).reshape(4, 3))
    row = dc.embedding_lookup(table, 2)
    np.testing.assert_array_equal(row.data, [6.0, 7.0, 8.0])
    dc.total(row).backward()
    np.testing.assert_array_equal(table.grad, [[0, 0, 0], [0, 0, 0], [1, 1, 1], [0, 0, 0]])
    with pytest.raises(IndexError):
        dc.embedding_lookup(table, 4)


def test_shape_mismatch_errors():
    with pytest.raises(dc.ShapeError):
        dc.add(np.zeros(3), np.zeros(4))
    with pytest.raises(dc.ShapeError, match="inner dimension"):
        dc.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(dc.ShapeError):
        dc.concat([np.zeros((2, 3)), np.zeros((3, 3))])


OPS = {
    "add": (lambda a, b: dc.total(dc.tanh(dc.add(a, b))), [(3, 4), (4,)]),
    "sub": (lambda a, b: dc.total(dc.tanh(dc.sub(a, b))), [(3, 4), (3, 4)]),
    "mul": (lambda a, b: dc.total(dc.mul(a, b)), [(3, 4), (3, 1)]),
    "matmul_mm": (lambda a, b: dc.total(dc.tanh(a @ b)), [(3, 4), (4, 2)]),
    "matmul_vm": (lambda a, b: dc.total(dc.tanh(a @ b)), [(4,), (4, 2)]),
    "matmul_mv": (lambda a, b: dc.total(dc.tanh(a @ b)), [(3, 4), (4,)]),
    "matmul_vv": (lambda a, b: dc.tanh(a @ b), [(4,), (4,)]),
    "tanh": (lambda a: dc.total(dc.tanh(a)), [(5,)]),
    "sigmoid": (lambda a: dc.total(dc.mul(dc.sigmoid(a), np.arange(5.0))), [(5,)]),
    "lrelu": (lambda a: dc.total(dc.tanh(dc.lrelu(a, 0.1))), [(2, 6)]),
    "softmax": (lambda a: dc.total(dc.mul(dc.softmax(a), np.arange(6.0))), [(6,)]),
    "softmax_rows": (lambda a: dc.total(dc.mul(dc.softmax(a), np.arange(6.0))), [(3, 6)]),
    "log_softmax": (lambda a: dc.total(dc.mul(dc.log_softmax(a), np.arange(6.0))), [(6,)]),
    "concat_rows": (lambda a, b: dc.total(dc.tanh(dc.concat([a, b], axis=0))), [(2, 3), (1, 3)]),
    "stack": (lambda a, b: dc.total(dc.tanh(dc.stack([a, b]))), [(3,), (3,)]),
    "getitem": (lambda a: dc.total(dc.tanh(a[1::2])), [(7, 2)]),
    "transpose": (lambda a: dc.total(dc.mul(dc.transpose(a), np.arange(6.0).reshape(3, 2))), [(2, 3)]),
    "mean_pool": (lambda a: dc.total(dc.tanh(dc.mean_pool_over_time(a))), [(3, 5)]),
    "mse": (lambda a, b: dc.mse_loss(a, b), [(3, 4), (3, 4)]),
    "cross_entropy": (lambda a: dc.cross_entropy_loss(a, [1, 0, 4]), [(3, 5)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", SEEDS)
def test_op_gradients(name, seed):
    build, shapes = OPS[name]
    rng = np.random.default_rng(seed)
    err = check_grads(build, [rng.normal(size=s) for s in shapes])
    assert err < GRAD_TOL, f"{name}: relative error {err:.2e}"


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_cell_gradients(seed):
    rng = np.random.default_rng(seed)

    def build(z, c):
        h, c2 = dc.lstm_cell(z, c)
        return dc.total(dc.mul(h, np.arange(3.0))) + dc.total(dc.tanh(c2))

    assert check_grads(build, [rng.normal(size=12), rng.normal(size=3)]) < GRAD_TOL


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_sequence_equals_chained_cells(reverse):
    rng = np.random.default_rng(4)
    xproj, w_h = rng.normal(size=(6, 8)), rng.normal(size=(8, 2))
    fused = dc.lstm_sequence(xproj, w_h, reverse)
    h, c = np.zeros(2), np.zeros(2)
    rows = [None] * 6
    for t in (range(5, -1, -1) if reverse else range(6)):
        h_t, c_t = dc.lstm_cell(xproj[t] + w_h @ h, c)
        h, c = h_t.data, c_t.data
        rows[t] = h
    np.testing.assert_allclose(fused.data, np.array(rows), rtol=0, atol=1e-14)


@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_sequence_gradients(seed, reverse):
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=(5, 3))

    def build(xproj, w_h):
        return dc.total(dc.mul(dc.lstm_sequence(xproj, w_h, reverse), weights))

    assert check_grads(build, [rng.normal(size=(5, 12)), rng.normal(size=(12, 3))]) < GRAD_TOL


def test_lstm_sequence_shape_error():
    with pytest.raises(dc.ShapeError):
        dc.lstm_sequence(np.zeros((4, 8)), np.zeros((12, 3)))


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_gradient(seed):
    rng = np.random.default_rng(seed)
    err = check_grads(lambda t: dc.total(dc.tanh(dc.embedding_lookup(t, 2))), [rng.normal(size=(4, 3))])
    assert err < GRAD_TOL


# ------------------------------------------------------------------- losses

def test_mse_examples():
    assert dc.mse_loss(np.ones((2, 3)), np.ones((2, 3))).item() == 0.0
    assert dc.mse_loss([[1.0, 2.0]], [[0.0, 0.0]]).item() == 5.0


def test_mse_matches_scalar_loop():
    rng = np.random.default_rng(3)
    f, z = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    loop = 0.0
    for s in range(3):
        for d in range(4):
            loop += (f[s, d] - z[s, d]) ** 2
    assert dc.mse_loss(z, f).item() == pytest.approx(loop / 3, abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(dc.ShapeError):
        dc.mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_cross_entropy_examples():
    logits = np.full((2, 32), -1e4)
    logits[0, 3] = logits[1, 7] = 0.0
    assert dc.cross_entropy_loss(logits, [3, 7]).item() == pytest.approx(0.0, abs=1e-12)
    assert dc.cross_entropy_loss(np.zeros((4, 32)), [0, 1, 2, 3]).item() == pytest.approx(math.log(32))


def test_cross_entropy_matches_naive():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(5, 7))
    targets = rng.integers(0, 7, size=5)
    naive = 0.0
    for t in range(5):
        row = logits[t]
        naive -= row[targets[t]] - math.log(sum(math.exp(v) for v in row))
    assert dc.cross_entropy_loss(logits, targets).item() == pytest.approx(naive / 5, abs=1e-12)


def test_cross_entropy_index_error():
    with pytest.raises(IndexError):
        dc.cross_entropy_loss(np.zeros((1, 4)), [4])


# ----------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = leaf(np.random.default_rng(0).normal(size=(3, 2)))
    dc.total(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_backward_accumulates_and_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    loss = dc.total(dc.mul(x, x))
    loss.backward()
    loss.backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    with pytest.raises(dc.ShapeError):
        dc.backward(dc.mul(x, 2.0))


@pytest.mark.parametrize("seed", SEEDS)
def test_backward_mse_of_conv_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    target = rng.normal(size=(3, 8))
    arrays = [rng.normal(size=(2, 22)), rng.normal(size=(3, 2, 8)), rng.normal(size=3)]
    err = check_grads(lambda x, k, b: dc.mse_loss(dc.conv1d(x, k, b, 2), target), arrays)
    assert err < GRAD_TOL


def test_backward_reuse_with_reset_is_deterministic():
    rng = np.random.default_rng(5)
    x, w = leaf(rng.normal(size=(2, 30))), leaf(rng.normal(size=(3, 2, 4)))
    loss = dc.total(dc.tanh(dc.conv1d(x, w, np.zeros(3), 2)))
    loss.backward()
    first = (x.grad.copy(), w.grad.copy())
    x.zero_grad()
    w.zero_grad()
    loss.backward()
    np.testing.assert_array_equal(first[0], x.grad)
    np.testing.assert_array_equal(first[1], w.grad)


def test_non_finite_values_raise():
    with pytest.raises(dc.NonFiniteError):
        dc.mul([np.inf], [1.0])
    with np.errstate(over="ignore"), pytest.raises(dc.NonFiniteError):
        dc.add([1e308], [1e308])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with dc.no_grad():
        y = dc.tanh(x)
    assert not y.requires_grad


# ---------------------------------------------------------------- optimizer

def make_params(**arrays):
    ps = dc.ParameterSet()
    for k, v in arrays.items():
        ps.add(k, np.array(v, dtype=float))
    return ps


def test_optimizer_zero_gradient_leaves_params():
    ps = make_params(a=[1.0, -2.0])
    ps["a"].grad = np.zeros(2)
    dc.optimizer_step(ps, dc.momentum_sgd(0.01, 0.9))
    np.testing.assert_array_equal(ps["a"].data, [1.0, -2.0])


def test_momentum_sgd_single_step():
    ps = make_params(p=0.5)
    ps["p"].grad = np.array(1.0)
    dc.optimizer_step(ps, dc.momentum_sgd(0.1, 0.0))
    assert ps["p"].data == pytest.approx(0.4, abs=1e-15)
    assert ps["p"].grad is None


def test_momentum_sgd_matches_recurrence():
    ps = make_params(p=1.0)
    state = dc.momentum_sgd(0.01, 0.9)
    p_ref, v_ref = 1.0, 0.0
    for _ in range(30):
        ps["p"].grad = 2.0 * ps["p"].data
        dc.optimizer_step(ps, state)
        v_ref = 0.9 * v_ref - 0.01 * 2.0 * p_ref
        p_ref += v_ref
    assert float(ps["p"].data) == pytest.approx(p_ref, abs=1e-14)


def test_adam_on_quadratic_matches_scalar_recurrence():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    p_ref, m, v = 1.0, 0.0, 0.0
    ref_losses = []
    for t in range(1, 101):
        g = 2 * p_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p_ref -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        ref_losses.append(p_ref ** 2)

    ps = make_params(p=1.0)
    state = dc.adam(lr)
    losses = []
    for _ in range(100):
        x = ps["p"]
        loss = dc.mul(x, x)
        loss.backward()
        dc.optimizer_step(ps, state)
        losses.append(float(ps["p"].data) ** 2)
    np.testing.assert_allclose(losses, ref_losses, rtol=0, atol=1e-12)
    assert abs(float(ps["p"].data)) < 1.0
    assert losses[-1] < 1e-2


def test_frozen_parameters_bitwise_unchanged():
    rng = np.random.default_rng(0)
    ps = make_params(a=rng.normal(size=(3, 3)), b=rng.normal(size=3))
    ps.freeze(["a"])
    before = ps["a"].data.copy()
    for kind in (dc.momentum_sgd(), dc.adam()):
        for _ in range(3):
            loss = dc.total(dc.tanh(ps["a"] @ ps["b"]))
            loss.backward()
            assert ps["a"].grad is not None
            dc.optimizer_step(ps, kind)
        assert ps["a"].data.tobytes() == before.tobytes()
        assert "a" not in kind.buffers


def test_optimizer_missing_gradient():
    ps = make_params(a=[1.0], b=[2.0])
    ps["a"].grad = np.ones(1)
    with pytest.raises(ValueError, match="'b'"):
        dc.optimizer_step(ps, dc.adam())


def test_optimizer_state_validation():
    with pytest.raises(ValueError):
        dc.OptimizerState(kind="rmsprop")
    with pytest.raises(ValueError):
        dc.momentum_sgd(0.01, 1.0)


def test_parameterset_contracts():
    ps = make_params(a=[1.0])
    with pytest.raises(KeyError):
        ps.add("a", [2.0])
    with pytest.raises(KeyError):
        ps.freeze(["zzz"])


def test_glorot_bounds():
    rng = np.random.default_rng(0)
    w = dc.glorot_uniform(rng, (50, 30), 30, 50)
    assert np.abs(w).max() <= math.sqrt(6 / 80)
