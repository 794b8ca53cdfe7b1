from . import autodiff, kernels
from .autodiff import Tensor, backward
from .kernels import jsd, kld, log_row_normalize, log_softmax, lse

__all__ = [
    "autodiff", "kernels", "Tensor", "backward",
    "jsd", "kld", "log_row_normalize", "log_softmax", "lse",
]
