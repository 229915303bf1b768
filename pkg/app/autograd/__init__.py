from app.autograd.tensor import (
    Tape,
    Tensor,
    backward,
    current_tape,
    default_dtype,
    no_grad,
    override_backward,
    precision,
)
from app.autograd.gradcheck import GradCheckReport, grad_check, grad_check_param

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "current_tape",
    "default_dtype",
    "no_grad",
    "override_backward",
    "precision",
    "GradCheckReport",
    "grad_check",
    "grad_check_param",
]
