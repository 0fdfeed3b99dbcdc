"""Float64 tensor engine: tape autodiff, NN ops, FD checking, binary I/O."""

from .gradcheck import FDReport, finite_difference_check, rel_error
from .ops import (
    avg_pool_axis,
    conv1d_temporal,
    conv2d,
    cosine_similarity,
    cross_entropy_with_logits,
    l2_normalize_rows,
    layer_norm,
    linear,
    log_softmax_rows,
    pairwise_cosine,
    softmax_rows,
)
from .tensor import (
    DimensionError,
    NonFiniteError,
    NumericsError,
    Tape,
    TapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    constant,
    div,
    finite_checks_enabled,
    getitem,
    matmul,
    mul,
    neg,
    parameter,
    relu,
    reshape,
    set_finite_checks,
    stack,
    stop_gradient,
    sub,
    tabs,
    texp,
    tlog,
    tmean,
    tsqrt,
    tsum,
    transpose,
)
from .tensor_io import (
    MAGIC,
    TensorIOError,
    f32_quantize,
    load_named_tensors,
    read_tensor,
    save_named_tensors,
    write_tensor,
)
