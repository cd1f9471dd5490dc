"""Dense 64-bit tensors, a define-then-run graph and reverse-mode gradients."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, all_passed, finite_diff_check
from .graph import Graph, backward
from .ops import OPS, RunContext, batchnorm, conv2d, dense, dropout, maxpool2d, relu, softmax, softmax_ce
from .optim import SGD, sgd_step
from .rng import fan_in_uniform, generator
from .tensor import Tensor

__all__ = [
    "Checkpoint",
    "GradCheckResult",
    "Graph",
    "OPS",
    "RunContext",
    "SGD",
    "Tensor",
    "all_passed",
    "backward",
    "batchnorm",
    "conv2d",
    "dense",
    "dropout",
    "fan_in_uniform",
    "finite_diff_check",
    "generator",
    "load_checkpoint",
    "maxpool2d",
    "relu",
    "save_checkpoint",
    "sgd_step",
    "softmax",
    "softmax_ce",
]
