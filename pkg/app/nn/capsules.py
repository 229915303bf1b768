"""
Capsulas: squash, capa primaria y capa de clases con enrutamiento por acuerdo

Todas las funciones trabajan por lotes: las capsulas tienen forma
[B, num_capsules, dim].
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from app.autograd import ops
from app.autograd.tensor import Tensor, default_dtype
from app.core.errors import ShapeError
from app.nn.init import glorot_uniform
from app.nn.layers import ConvLayer, Module

logger = logging.getLogger(__name__)

# Epsilon dentro de la norma del squash (evita dividir por cero)
SQUASH_EPS = 1e-8

_LETTERS = "abcdefgh"


def max_length(dtype) -> float:
    """Largo maximo representable por debajo de 1 con holgura de redondeo"""
    return float(1.0 - 4 * np.finfo(dtype).eps)


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """
    Escala cada vector a largo |s|^2 / (1 + |s|^2) conservando la direccion

    El vector nulo queda en cero.
    """
    if axis not in (-1, s.ndim - 1):
        raise ShapeError("squash solo opera sobre el ultimo eje")
    sq = ops.squared_norm(s, axis=-1)
    denom = ops.mul(ops.add_scalar(sq, 1.0), ops.sqrt(ops.add_scalar(sq, SQUASH_EPS)))
    factor = ops.div(sq, denom)
    idx = _LETTERS[: s.ndim]
    v = ops.einsum(f"{idx[:-1]},{idx}->{idx}", factor, s)
    # En float32 |s|^2 / (1 + |s|^2) se redondea a 1 para normas grandes;
    # el margen de 4 eps sobrevive al redondeo del producto y de la norma
    return ops.cap_length(v, max_length(s.dtype))


@dataclass
class RoutingState:
    """Logits y acoplamientos del enrutamiento (valores constantes)"""
    logits: np.ndarray
    couplings: List[np.ndarray] = field(default_factory=list)
    iterations: int = 0


class CapsuleSet:
    """
    Conjunto de vectores de actividad [B, N, dim] con sus largos [B, N]
    """

    def __init__(self, activities: Tensor, routing: Optional[RoutingState] = None):
        if activities.ndim != 3:
            raise ShapeError(f"CapsuleSet espera [B, N, dim], forma {activities.shape}")
        self.activities = activities
        self.lengths = ops.l2_norm(activities, axis=-1)
        self.routing = routing

    @property
    def num_capsules(self) -> int:
        return self.activities.shape[1]

    @property
    def dim(self) -> int:
        return self.activities.shape[2]


def primary_capsules(features: Tensor, caps_dim: int) -> CapsuleSet:
    """
    Agrupa canales de un mapa convolucional en capsulas y aplica squash

    Args:
        features: [B, ch, h, w] (o [ch, h, w]) con ch divisible por caps_dim
        caps_dim: dimension de cada capsula primaria
    Returns:
        CapsuleSet con (ch / caps_dim) * h * w capsulas por muestra
    """
    if features.ndim == 3:
        features = ops.reshape(features, (1,) + features.shape)
    if features.ndim != 4:
        raise ShapeError(f"primary_capsules espera [B, ch, h, w], forma {features.shape}")
    b, ch, h, w = features.shape
    if ch % caps_dim != 0:
        raise ShapeError(f"Canales {ch} no divisibles por caps_dim {caps_dim}")
    types = ch // caps_dim
    grouped = ops.reshape(features, (b, types, caps_dim, h, w))
    grouped = ops.transpose(grouped, (0, 1, 3, 4, 2))
    return CapsuleSet(squash(ops.reshape(grouped, (b, types * h * w, caps_dim))))


def route(
    in_caps: CapsuleSet,
    W: Tensor,
    iterations: int = 3,
    detach_agreement: bool = True,
) -> CapsuleSet:
    """
    Enrutamiento por acuerdo hacia las capsulas de salida

    Args:
        in_caps: capsulas de entrada [B, I, d]
        W: matrices de transformacion [I, J, D, d]
        iterations: rondas de enrutamiento (>= 1)
        detach_agreement: si True el termino u_hat . v que actualiza los
            logits no propaga gradiente
    Returns:
        CapsuleSet [B, J, D]; su atributo routing guarda logits y acoplamientos
    """
    if iterations < 1:
        raise ShapeError(f"iterations debe ser >= 1, recibido {iterations}")
    u = in_caps.activities
    if W.ndim != 4 or W.shape[0] != u.shape[1] or W.shape[3] != u.shape[2]:
        raise ShapeError(f"route: W {W.shape} no encaja con capsulas {u.shape}")
    b_size, n_in = u.shape[0], u.shape[1]
    n_out = W.shape[1]

    u_hat = ops.einsum("ijed,bid->bije", W, u)
    u_hat_agree = u_hat.detach() if detach_agreement else u_hat
    logits = Tensor(np.zeros((b_size, n_in, n_out), dtype=u.dtype))
    state = RoutingState(logits=logits.data)

    v = None
    for it in range(iterations):
        c = ops.softmax(logits, axis=2)
        state.couplings.append(c.data)
        s = ops.einsum("bij,bije->bje", c, u_hat)
        v = squash(s)
        if it < iterations - 1:
            v_agree = v.detach() if detach_agreement else v
            logits = ops.add(logits, ops.einsum("bije,bje->bij", u_hat_agree, v_agree))
            state.logits = logits.data
    state.iterations = iterations
    return CapsuleSet(v, routing=state)


def predict(caps: Union[CapsuleSet, Tensor, np.ndarray]) -> Union[int, np.ndarray]:
    """
    Clase de la capsula con mayor largo; empates a favor del menor indice

    Returns:
        int para un vector de largos [K]; arreglo de indices para [B, K]
    """
    if isinstance(caps, CapsuleSet):
        lengths = caps.lengths.data
    elif isinstance(caps, Tensor):
        lengths = caps.data
    else:
        lengths = np.asarray(caps)
    if lengths.shape[-1] < 1:
        raise ShapeError("predict requiere al menos una capsula")
    # argmax devuelve la primera posicion del maximo
    out = np.argmax(lengths, axis=-1)
    return int(out) if lengths.ndim == 1 else out


class PrimaryCapsuleLayer(Module):
    """Convolucion seguida de agrupamiento en capsulas primarias"""

    def __init__(self, in_ch: int, caps_types: int, caps_dim: int, kernel: int, stride: int):
        super().__init__()
        self.caps_types, self.caps_dim = caps_types, caps_dim
        self.conv = self.add_module("conv", ConvLayer(in_ch, caps_types * caps_dim, kernel, stride, 0))

    def num_capsules(self, h: int, w: int) -> int:
        return self.caps_types * self.conv.output_size(h) * self.conv.output_size(w)

    def forward(self, features: Tensor) -> CapsuleSet:
        return primary_capsules(self.conv(features), self.caps_dim)


class ClassCapsuleLayer(Module):
    """Capsulas de clase [K, m] alimentadas por enrutamiento"""

    def __init__(self, in_caps: int, in_dim: int, num_classes: int, out_dim: int,
                 iterations: int = 3, detach_agreement: bool = True):
        super().__init__()
        self.iterations = iterations
        self.detach_agreement = detach_agreement
        self.W = self.add_parameter(
            "W", np.zeros((in_caps, num_classes, out_dim, in_dim), dtype=default_dtype())
        )

    def reset_parameters(self, rng: np.random.Generator) -> None:
        _, _, out_dim, in_dim = self.W.shape
        self.W.data = glorot_uniform(self.W.shape, in_dim, out_dim, rng)

    def forward(self, in_caps: CapsuleSet) -> CapsuleSet:
        return route(in_caps, self.W, self.iterations, self.detach_agreement)
