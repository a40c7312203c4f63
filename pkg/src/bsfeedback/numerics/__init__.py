from .tensor import (
    Tensor, absmax, add, as_tensor, broadcast_to, cabs, cmatmul, concat, conj, constant, csolve,
    cswap, detach, div, from_complex, getitem, matmul, mean, mul, parameter, reshape,
    sigmoid, sqrt, square, sub, take, tanh, to_complex, transpose, tsum,
)
from .layers import circular_conv2d, circular_conv3d, dense, hard_quantize, soft_quantize
from .optim import AdamState, adam_step, grad_check
from .checkpoint import load_params, save_params
