"""
Chequeo de gradientes por diferencias finitas centrales

Compara el gradiente de la cinta contra (f(x + eps e_i) - f(x - eps e_i)) / 2 eps
en precision de 64 bits. Las coordenadas cuya perturbacion cambia el patron
de activacion de alguna relu/max0 se cuentan como cruces de quiebre y se omiten.
"""

import logging
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel

from app.autograd.tensor import Tape, Tensor
from app.core.errors import DirectCapsError, TapeError

logger = logging.getLogger(__name__)

# Denominador minimo del error relativo por coordenada
RELATIVE_FLOOR = 1e-6


class NonDeterministicError(DirectCapsError):
    """La funcion devolvio valores distintos para la misma entrada"""
    exit_code = 1


class GradCheckReport(BaseModel):
    """Resultado de un chequeo de gradiente"""
    name: str
    max_rel_error: float
    worst_index: Optional[int] = None
    checked: int
    skipped_kinks: int
    eps: float
    tol: float
    passed: bool


def _evaluate(f: Callable[[], Tensor]):
    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise TapeError(f"grad_check requiere salida escalar, forma {out.shape}")
    return float(out.data.reshape(-1)[0]), tape.kink_signature()


def grad_check_param(
    f: Callable[[], Tensor],
    param: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    name: str = "f",
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """
    Verifica el gradiente de f() respecto a un tensor hoja que f lee

    El tensor se perturba en sitio y se restaura al terminar.

    Args:
        f: funcion sin argumentos que devuelve un escalar
        param: hoja float64 con requires_grad
        eps: paso de las diferencias centrales, en [1e-6, 1e-4]
        tol: tolerancia de error relativo
        max_coords: si se indica, revisa solo esa cantidad de coordenadas al azar
    """
    if param.dtype != np.float64:
        raise TapeError("grad_check requiere precision de 64 bits")
    if not 1e-6 <= eps <= 1e-4:
        raise TapeError(f"eps fuera de rango [1e-6, 1e-4]: {eps}")

    param.data = np.ascontiguousarray(param.data)
    param.zero_grad()
    param.requires_grad = True
    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise TapeError(f"grad_check requiere salida escalar, forma {out.shape}")
    tape.backward(out)
    analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
    analytic = analytic.reshape(-1).copy()
    base_value = float(out.data.reshape(-1)[0])
    base_kinks = tape.kink_signature()

    repeat_value, _ = _evaluate(f)
    if repeat_value != base_value:
        raise NonDeterministicError(
            f"{name}: dos evaluaciones difieren ({base_value!r} vs {repeat_value!r})"
        )

    flat = param.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and max_coords < flat.size:
        rng = rng or np.random.default_rng(0)
        coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))

    worst, worst_index, checked, skipped = 0.0, None, 0, 0
    for i in coords:
        original = flat[i]
        try:
            flat[i] = original + eps
            f_plus, k_plus = _evaluate(f)
            flat[i] = original - eps
            f_minus, k_minus = _evaluate(f)
        finally:
            flat[i] = original
        if k_plus != base_kinks or k_minus != base_kinks:
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2 * eps)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), RELATIVE_FLOOR)
        checked += 1
        if err > worst:
            worst, worst_index = err, int(i)

    report = GradCheckReport(
        name=name,
        max_rel_error=worst,
        worst_index=worst_index,
        checked=checked,
        skipped_kinks=skipped,
        eps=eps,
        tol=tol,
        passed=worst <= tol,
    )
    level = logging.DEBUG if report.passed else logging.WARNING
    logger.log(level, f"[STATS] gradcheck {name}: max_rel={worst:.3e} checked={checked} skipped={skipped}")
    return report


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    name: str = "f",
) -> GradCheckReport:
    """
    Verifica el gradiente de una funcion escalar f(x)

    Returns:
        GradCheckReport; passed es True si max_rel_error <= tol
    """
    leaf = Tensor(x.data, requires_grad=True, dtype=np.float64)
    return grad_check_param(lambda: f(leaf), leaf, eps=eps, tol=tol, name=name)
