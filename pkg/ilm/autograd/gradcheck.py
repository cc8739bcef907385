from typing import Callable, List, Sequence

import numpy as np

from .tensor import Tensor, backward, default_dtype


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """
    Central finite differences of a scalar-valued `fn` with respect to `param`.

    `param.data` is perturbed in place between evaluations and restored
    afterwards; `fn` must rebuild its graph from `param` on every call.
    """
    data = param.data
    data.flags.writeable = True
    grad = np.zeros_like(data)
    try:
        flat = data.reshape(-1)
        out = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = fn().item()
            flat[i] = original - step
            minus = fn().item()
            flat[i] = original
            out[i] = (plus - minus) / (2.0 * step)
    finally:
        data.flags.writeable = False
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a| + |n|, floor), elementwise."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> List[float]:
    """Relative error per parameter between backward() and finite differences."""
    with default_dtype(np.float64):
        grads = backward(fn(), params=params)
        errors = []
        for param in params:
            numeric = numerical_gradient(fn, param, step=step)
            errors.append(relative_error(grads.get(param), numeric))
    return errors
