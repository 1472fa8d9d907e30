from .tensor import (
    DiffArray, OPS, add, as_diff, backward, concat, conv1d, cosine_similarity, div, embedding, exp,
    forward_op, gelu, layer_norm, log, log_softmax, logsumexp, matmul, mean, mul, power, relu,
    reshape, slice_, softmax, stack, sub, sum_, swapaxes, take_rows, tanh, transpose,
)
from .optim import AdamState, adam_step, clip_grad_norm
from .gradcheck import finite_difference_check
from .threads import limit_threads
