"""
Inicializacion de parametros
"""

import math

import numpy as np

from app.autograd.tensor import default_dtype


def glorot_limit(fan_in: int, fan_out: int) -> float:
    """Limite a de la uniforme(-a, a): sqrt(6 / (fan_in + fan_out))"""
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    a = glorot_limit(fan_in, fan_out)
    return rng.uniform(-a, a, size=shape).astype(default_dtype())


def init_parameters(layer, seed) -> None:
    """
    Reinicializa los parametros de una capa de forma determinista

    Pesos uniformes Glorot, sesgos en cero. Mismo seed, mismos parametros.
    """
    rng = np.random.default_rng(seed)
    layer.reset_parameters(rng)
