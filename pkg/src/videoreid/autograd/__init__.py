"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Only the operations the re-identification network needs are provided:
2-D cross-correlation, max pooling, affine maps, tanh/sigmoid/relu,
softmax cross-entropy, elementwise arithmetic with broadcasting, and
reductions. Gradients flow through an implicitly recorded graph that is
replayed in reverse topological order by :func:`backward`.
"""

from .tensor import Tensor, Graph, backward, no_grad
from .ops import (
    activate,
    add,
    conv2d,
    linear,
    maxpool2d,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax_xent,
    sqrt,
    sub,
    tensor_sum,
    tanh,
)
from .params import ParamStore, he_normal, sgd_step
from .checkpoint import load_checkpoint, save_checkpoint, CheckpointError
from .gradcheck import (
    numerical_gradient,
    gradient_error,
    check_op_gradients,
    standard_op_audit,
)

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "no_grad",
    "activate",
    "add",
    "conv2d",
    "linear",
    "maxpool2d",
    "mul",
    "neg",
    "relu",
    "reshape",
    "sigmoid",
    "softmax_xent",
    "sqrt",
    "sub",
    "tensor_sum",
    "tanh",
    "ParamStore",
    "he_normal",
    "sgd_step",
    "load_checkpoint",
    "save_checkpoint",
    "CheckpointError",
    "numerical_gradient",
    "gradient_error",
    "check_op_gradients",
    "standard_op_audit",
]
