"""Non-intrusive speech intelligibility prediction with an enhancer-guided dual pathway."""

from .tensor import Tensor, no_grad, using_dtype

__all__ = ["Tensor", "no_grad", "using_dtype"]
__version__ = "0.1.0"
