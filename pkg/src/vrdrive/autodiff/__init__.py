from . import functional
from .gradcheck import GradCheckReport, grad_check, relative_error
from .optim import Adam, RMSProp, clip_by_global_norm
from .tensor import ShapeError, Tensor, as_tensor, topological_order

__all__ = [
    "Adam",
    "GradCheckReport",
    "RMSProp",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "clip_by_global_norm",
    "functional",
    "grad_check",
    "relative_error",
    "topological_order",
]
