"""
Optimizador Adam con correccion de sesgo
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from app.autograd.tensor import Tensor
from app.core.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Estado del optimizador

    Los momentos tienen la forma (y precision) de su parametro. Cada parametro
    lleva su propio contador de pasos: un parametro sin gradiente en un lote
    no avanza su correccion de sesgo.
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)
    step: int = 0
    # Tasa propia por parametro (ej. banco de anclas); None usa lr
    lr_overrides: Dict[str, float] = field(default_factory=dict)

    def lr_for(self, name: str) -> float:
        return self.lr_overrides.get(name, self.lr)


def adam_step(params: Dict[str, Tensor], state: AdamState, grads: Optional[Dict[str, np.ndarray]] = None) -> int:
    """
    Aplica un paso de Adam en sitio

    Args:
        params: parametros por nombre
        state: AdamState (se actualiza)
        grads: gradientes por nombre; por defecto se usa param.grad
    Returns:
        cantidad de parametros actualizados
    """
    # Validar todo antes de tocar cualquier parametro
    pending = {}
    for name, param in params.items():
        g = grads.get(name) if grads is not None else param.grad
        if g is None:
            continue
        if g.shape != param.shape:
            raise ShapeError(f"Gradiente de {name} con forma {g.shape}, parametro {param.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteError(f"Gradiente no finito en {name} ({bad} de {g.size} valores)")
        pending[name] = g

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for name, g in pending.items():
        param = params[name]
        dtype = param.data.dtype
        g = g.astype(dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        t = state.steps.get(name, 0) + 1

        m = (b1 * m + (1 - b1) * g).astype(dtype)
        v = (b2 * v + (1 - b2) * g * g).astype(dtype)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        update = state.lr_for(name) * m_hat / (np.sqrt(v_hat) + state.epsilon)

        param.data = (param.data - update).astype(dtype)
        state.m[name], state.v[name], state.steps[name] = m, v, t
    return len(pending)


class Adam:
    """
    Envoltura con estado sobre adam_step

    Args:
        params: parametros con nombre (Module.named_parameters())
        lr, beta1, beta2, epsilon: hiperparametros de Adam
        lr_overrides: tasa especifica por nombre de parametro
    """

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8,
                 lr_overrides: Optional[Dict[str, float]] = None):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
                               lr_overrides=dict(lr_overrides or {}))

    def step(self) -> int:
        return adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
