import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from ilm.autograd import (
    Tensor,
    backward,
    concat,
    cosine_matrix,
    cosine_similarity,
    default_dtype,
    exp,
    gelu,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    normalize,
    pad_rows,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    stack,
    take,
    tanh,
    transpose,
    tsum,
)
from ilm.errors import DegenerateInputError, DimensionError, NonFiniteError, UsageError

rng = np.random.default_rng(1234)


def param(*shape, low=None, high=None):
    if low is None:
        data = rng.normal(size=shape)
    else:
        data = rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def weighted(out: Tensor) -> Tensor:
    """Scalar probe: sum of the output against fixed random weights."""
    weights = np.random.default_rng(99).normal(size=out.shape)
    return tsum(out * weights)


UNARY_CASES = [
    ("exp", lambda x: exp(x), None),
    ("log", lambda x: log(x), (0.5, 2.0)),
    ("sqrt", lambda x: sqrt(x), (0.5, 2.0)),
    ("tanh", lambda x: tanh(x), None),
    ("sigmoid", lambda x: sigmoid(x), None),
    ("softplus", lambda x: softplus(x), None),
    ("gelu", lambda x: gelu(x), None),
    ("pow3", lambda x: x ** 3, None),
    ("pow_half", lambda x: x ** 0.5, (0.5, 2.0)),
    ("neg", lambda x: -x, None),
    ("sum_axis", lambda x: tsum(x, axis=1, keepdims=True), None),
    ("mean_all", lambda x: mean(x), None),
    ("mean_axis0", lambda x: mean(x, axis=0), None),
    ("reshape", lambda x: reshape(x, (x.size,)), None),
    ("transpose", lambda x: transpose(x), None),
    ("take_rows", lambda x: take(x, np.array([0, 2, 0])), None),
    ("take_pairs", lambda x: take(x, (np.array([1, 1, 2]), np.array([0, 0, 3]))), None),
    ("slice", lambda x: x[1:, :2], None),
    ("pad_rows", lambda x: pad_rows(x, 5), None),
    ("softmax", lambda x: softmax(x, axis=-1), None),
    ("softmax_axis0", lambda x: softmax(x, axis=0), None),
    ("log_softmax", lambda x: log_softmax(x), None),
    ("layer_norm", lambda x: layer_norm(x), None),
    ("normalize", lambda x: normalize(x), None),
]


@pytest.mark.parametrize("shape", [(3, 4), (8, 8), (2, 5)])
@pytest.mark.parametrize("name,op,bounds", UNARY_CASES, ids=[c[0] for c in UNARY_CASES])
def test_unary_op_gradients_match_finite_differences(check_gradients, name, op, bounds, shape):
    if name in ("take_rows", "take_pairs") and shape[0] < 3:
        pytest.skip("index needs three rows")
    if name == "take_pairs" and shape[1] < 4:
        pytest.skip("index needs four columns")
    if name == "pad_rows" and shape[0] > 5:
        pytest.skip("cannot pad down")
    x = param(*shape) if bounds is None else param(*shape, low=bounds[0], high=bounds[1])
    check_gradients(lambda: weighted(op(x)), [x])


BINARY_CASES = [
    ("add", lambda a, b: a + b, (3, 4), (4,)),
    ("sub", lambda a, b: a - b, (3, 4), (3, 1)),
    ("mul", lambda a, b: a * b, (3, 4), (3, 4)),
    ("div", lambda a, b: a / b, (3, 4), (1, 4)),
    ("matmul", lambda a, b: a @ b, (3, 4), (4, 5)),
    ("batched_matmul", lambda a, b: matmul(a, b), (2, 3, 4), (4, 2)),
    ("concat", lambda a, b: concat([a, b], axis=0), (3, 4), (2, 4)),
    ("stack", lambda a, b: stack([a, b], axis=1), (3, 4), (3, 4)),
    ("cosine_similarity", lambda a, b: cosine_similarity(a, b), (3, 4), (3, 4)),
    ("cosine_matrix", lambda a, b: cosine_matrix(a, b), (3, 4), (5, 4)),
]


@pytest.mark.parametrize("name,op,shape_a,shape_b", BINARY_CASES, ids=[c[0] for c in BINARY_CASES])
def test_binary_op_gradients_match_finite_differences(check_gradients, name, op, shape_a, shape_b):
    a = param(*shape_a)
    b = param(*shape_b, low=0.5, high=2.0) if name == "div" else param(*shape_b)
    check_gradients(lambda: weighted(op(a, b)), [a, b])


def test_masked_softmax_gradient_and_zero_weight():
    x = param(2, 4)
    mask = np.array([[True, False, True, True], [False, True, True, False]])
    out = softmax(x, mask=mask)
    assert np.all(out.data[~mask] == 0.0)
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_fully_masked_softmax_row_is_rejected():
    x = param(2, 3)
    mask = np.array([[True, True, False], [False, False, False]])
    with pytest.raises(DegenerateInputError):
        softmax(x, mask=mask)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = x * x + x
    grads = backward(tsum(y * y), [x])
    expected = 2.0 * (x.data ** 2 + x.data) * (2.0 * x.data + 1.0)
    assert np.allclose(grads[x], expected)


def test_backward_twice_gives_identical_gradients():
    a = param(3, 3)
    loss = weighted(tanh(a @ a))
    first = backward(loss, [a])[a].copy()
    second = backward(loss, [a])[a]
    assert np.array_equal(first, second)


def test_unreached_parameter_gets_zero_gradient():
    a = param(2, 2)
    b = param(3)
    grads = backward(tsum(a * a), [a, b])
    assert np.array_equal(grads.get(b), np.zeros(3))
    assert np.array_equal(b.grad, np.zeros(3))


def test_backward_needs_scalar():
    a = param(2, 2)
    with pytest.raises(UsageError):
        backward(a * 2.0)


def test_log_of_zero_names_the_op():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with pytest.raises(NonFiniteError) as info:
        log(x)
    assert info.value.op == "log"
    assert info.value.exit_code == 12


def test_matmul_inner_dimension_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_shapes_must_broadcast():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


def test_normalize_rejects_zero_vector():
    with pytest.raises(DegenerateInputError):
        normalize(Tensor(np.array([[0.0, 0.0], [1.0, 0.0]])))


def test_mean_over_empty_axis():
    with pytest.raises(DimensionError):
        mean(Tensor(np.zeros((0, 3))), axis=0)


def test_no_grad_records_nothing():
    a = param(2, 2)
    with no_grad():
        out = a * 3.0
    assert not out.requires_grad
    assert out.is_leaf


def test_no_grad_in_overlapping_threads_restores_recording():
    both_inside = threading.Barrier(2)

    def work(delay):
        with no_grad():
            both_inside.wait(timeout=5)
            assert not is_grad_enabled()
            threading.Event().wait(delay)
        return is_grad_enabled()

    with ThreadPoolExecutor(max_workers=2) as pool:
        assert list(pool.map(work, [0.05, 0.2])) == [True, True]
    assert is_grad_enabled()
    a = param(2, 2)
    assert (a * 3.0).requires_grad


def test_default_dtype_applies_to_non_float_inputs():
    assert Tensor([1, 2]).dtype == np.float64
    with default_dtype(np.float32):
        assert Tensor([1, 2]).dtype == np.float32
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64
    with pytest.raises(UsageError):
        with default_dtype(np.int32):
            pass


def test_tensors_are_immutable():
    a = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        a.data[0] = 5.0
