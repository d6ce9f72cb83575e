import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prismnet import tensor as T
from prismnet.optim import Adam, AdamState, adam_step
from prismnet.tensor import ContractError, DimensionError, Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_matmul_identity_and_hand_values():
    m = T.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
    assert np.array_equal(m.data, [[1, 2], [3, 4]])
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_against_finite_differences():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    w = rng.normal(size=(3, 2))
    errs = T.gradcheck(lambda: T.sum_(T.mul(T.matmul(a, b), w)), [a, b])
    assert max(errs.values()) < 1e-4


def test_softmax_examples():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)
    assert np.array_equal(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_matches_high_precision():
    mpmath.mp.dps = 50
    xs = [1, 2, 3]
    den = sum(mpmath.exp(x) for x in xs)
    ref = [float(mpmath.exp(x) / den) for x in xs]
    assert np.allclose(T.softmax(Tensor(xs)).data, ref, rtol=0, atol=1e-15)


def test_softmax_mask_gives_exact_zeros():
    out = T.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]]))
    assert out.data[0, 1] == 0.0
    assert abs(out.data.sum() - 1) < 1e-15


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)),
              elements=st.floats(-1e6, 1e6)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    assert np.all(np.isfinite(out))
    assert np.all(np.abs(out.sum(axis=-1) - 1) < 1e-12)


def test_backward_simple_cases():
    x = leaf([1.0, -2.0, 3.0])
    with T.fresh_tape():
        T.backward(T.sum_(x))
    assert np.array_equal(x.grad, np.ones(3))
    x.grad = None
    with T.fresh_tape():
        T.backward(T.sum_(T.mul(x, x)))
    assert np.array_equal(x.grad, 2 * x.data)


def test_backward_contract_errors():
    x = leaf(np.ones(3))
    with T.fresh_tape():
        with pytest.raises(ContractError):
            T.backward(T.mul(x, 2.0))
    with T.fresh_tape():
        y = Tensor(1.0, requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(y)


def test_backward_clears_tape():
    x = leaf([1.0, 2.0])
    with T.fresh_tape():
        T.backward(T.sum_(T.mul(x, x)))
        assert not T.current_tape().records


def test_gradient_linearity():
    rng = np.random.default_rng(1)
    x = leaf(rng.normal(size=(3, 3)))

    def f1():
        return T.sum_(T.tanh(x))

    def f2():
        return T.mean(T.mul(x, x))

    with T.fresh_tape():
        T.backward(T.add(f1(), f2()))
    joint = x.grad.copy()
    x.grad = None
    with T.fresh_tape():
        T.backward(f1())
    with T.fresh_tape():
        T.backward(f2())
    assert np.allclose(joint, x.grad, atol=1e-14)


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.fresh_tape():
        with T.no_grad():
            y = T.mul(x, 3.0)
        assert not T.current_tape().records
        assert not y.requires_grad


def test_item_requires_single_element():
    assert Tensor([[2.5]]).item() == 2.5
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()


def test_is_finite_flags_nan():
    assert Tensor([1.0]).is_finite()
    assert not Tensor([np.nan]).is_finite()


def _primitive_cases(rng):
    pos = lambda *s: np.abs(rng.normal(size=s)) + 0.5  # noqa: E731
    a = rng.normal(size=(3, 4))
    return {
        "add": (lambda x, y: T.add(x, y), [a, rng.normal(size=(4,))]),
        "sub": (lambda x, y: T.sub(x, y), [a, rng.normal(size=(3, 1))]),
        "mul": (lambda x, y: T.mul(x, y), [a, rng.normal(size=(3, 4))]),
        "div": (lambda x, y: T.div(x, y), [a, pos(3, 4)]),
        "pow": (lambda x: T.pow_(x, 3.0), [a]),
        "exp": (T.exp, [a]),
        "log": (T.log, [pos(3, 4)]),
        "sqrt": (T.sqrt, [pos(3, 4)]),
        "tanh": (T.tanh, [a]),
        "sigmoid": (T.sigmoid, [a * 3]),
        "relu": (T.relu, [a + np.sign(a) * 0.1]),
        "matmul_batched": (lambda x, y: T.matmul(x, y), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))]),
        "transpose": (lambda x: T.transpose(x, (1, 0)), [a]),
        "swapaxes": (lambda x: T.swapaxes(x, 0, 1), [a]),
        "reshape": (lambda x: T.reshape(x, (2, 6)), [a]),
        "concat": (lambda x, y: T.concat([x, y], axis=0), [a, rng.normal(size=(2, 4))]),
        "slice": (lambda x: x[1:, ::2], [a]),
        "fancy_slice": (lambda x: T.slice_(x, (np.array([0, 0, 2]),)), [a]),
        "sum": (lambda x: T.sum_(x, axis=1, keepdims=True), [a]),
        "mean": (lambda x: T.mean(x, axis=0), [a]),
        "softmax": (lambda x: T.softmax(x, axis=1), [a]),
        "masked_softmax": (lambda x: T.softmax(x, axis=1, mask=np.tril(np.ones((3, 4), bool))), [a]),
        "logsumexp": (lambda x: T.logsumexp(x, axis=1), [a]),
        "layer_norm": (lambda x, g, b: T.layer_norm(x, g, b), [a, rng.normal(size=4), rng.normal(size=4)]),
        "embedding": (lambda t: T.embedding(t, np.array([[0, 2], [2, 1]])), [rng.normal(size=(3, 4))]),
        "l2_normalize": (lambda x: T.l2_normalize(x), [a]),
    }


@pytest.mark.parametrize("name", sorted(_primitive_cases(np.random.default_rng(0))))
def test_primitive_gradients(name):
    """Central differences at step 1e-5, 20 random instances, rel. 1e-4."""
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng([trial, 99])
        fn, inputs = _primitive_cases(rng)[name]
        params = [leaf(x) for x in inputs]
        w = Tensor(rng.normal(size=fn(*[Tensor(x) for x in inputs]).shape))
        errs = T.gradcheck(lambda: T.sum_(T.mul(fn(*params), w)), params, step=1e-5)
        worst = max(worst, max(errs.values()))
    assert worst < 1e-4, worst


def test_large_magnitudes_stay_finite():
    x = Tensor(np.array([[-1e6, 0.0, 1e6]]))
    for out in (T.softmax(x), T.logsumexp(x), T.sigmoid(x), T.tanh(x),
                T.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))), T.l2_normalize(x)):
        assert out.is_finite()


def test_dropout_modes():
    x = Tensor(np.ones((200, 50)))
    assert T.dropout(x, 0.1, None, training=False) is x
    a = T.dropout(x, 0.1, np.random.default_rng(3), training=True).data
    b = T.dropout(x, 0.1, np.random.default_rng(3), training=True).data
    assert np.array_equal(a, b)
    zero_frac = np.mean(a == 0)
    assert 0.08 < zero_frac < 0.12
    assert np.allclose(a[a != 0], 1 / 0.9)
    with pytest.raises(ContractError):
        T.dropout(x, 0.1, None, training=True)


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.array([1.0, 1.0])}, state, lr=0.1)
    before = p["w"].copy()
    m_before = state.m["w"].copy()
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.0)
    assert np.array_equal(p["w"], before)
    assert np.allclose(state.m["w"], 0.9 * m_before)


def test_adam_constant_gradient_step_tends_to_lr_sign():
    p = {"w": np.zeros(3)}
    g = np.array([0.3, -5.0, 2.0])
    state = AdamState()
    for _ in range(200):
        prev = p["w"].copy()
        adam_step(p, {"w": g}, state, lr=1e-3)
    assert np.allclose(p["w"] - prev, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_quadratic_bowl_decreases():
    w = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, name="w")
    opt = Adam({"w": w}, lr=0.1)
    losses = []
    for _ in range(10):
        opt.zero_grad()
        with T.fresh_tape():
            loss = T.sum_(T.mul(w, w))
            T.backward(loss)
        losses.append(loss.item())
        opt.step()
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())
