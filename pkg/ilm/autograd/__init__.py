from .tensor import (
    Graph,
    GradientMap,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    default_dtype,
    div,
    exp,
    gelu,
    get_default_dtype,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    pad_rows,
    power,
    reshape,
    set_default_dtype,
    sigmoid,
    softplus,
    sqrt,
    stack,
    sub,
    take,
    tanh,
    transpose,
    tsum,
)
from .functional import (
    NORM_EPSILON,
    cosine_matrix,
    cosine_similarity,
    layer_norm,
    log_softmax,
    normalize,
    softmax,
    vector_norm,
)
