"""
Funcion objetivo: perdida de margen, perdida de ancla HR y reconstruccion dirigida

Todas las perdidas reciben lotes y reducen por promedio (o suma) sobre el eje
de muestras.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from app.autograd import ops
from app.autograd.tensor import Tensor, default_dtype
from app.core.errors import ShapeError
from app.models.schemas import LossWeights, MarginParams
from app.nn.layers import Module

logger = logging.getLogger(__name__)


def _as_batch(values, dtype=np.int64) -> np.ndarray:
    return np.atleast_1d(np.asarray(values, dtype=dtype))


def _reduce(per_sample: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return ops.mean(per_sample)
    if reduction == "sum":
        return ops.sum(per_sample)
    raise ValueError(f"Reduccion no soportada: {reduction}")


class AnchorBank(Module):
    """
    Anclas HR por clase [K, feature_dim]

    La misma memoria se usa como parametro (A^c, recibe gradiente) o como
    constante (gradiente bloqueado) segun la resolucion de la muestra.
    """

    def __init__(self, num_classes: int, feature_dim: int):
        super().__init__()
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.anchors = self.add_parameter("anchors", np.zeros((num_classes, feature_dim), dtype=default_dtype()))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        self.anchors.data = np.zeros_like(self.anchors.data)

    def parameter_view(self) -> Tensor:
        return self.anchors

    def constant_view(self) -> Tensor:
        return self.anchors.detach()

    def running_average_update(self, features: np.ndarray, classes: np.ndarray,
                               flags: np.ndarray, momentum: float) -> None:
        """
        Actualizacion alternativa: promedio movil de los rasgos HR por clase

        A^c <- momentum * A^c + (1 - momentum) * media(f HR de la clase c)
        """
        hr = flags.astype(bool)
        for c in np.unique(classes[hr]):
            mean_f = features[hr & (classes == c)].mean(axis=0)
            updated = momentum * self.anchors.data[c] + (1 - momentum) * mean_f
            self.anchors.data[c] = updated.astype(self.anchors.dtype)


def margin_loss(lengths: Tensor, true_class, p: MarginParams = None, reduction: str = "mean") -> Tensor:
    """
    Perdida de margen sobre los largos de las capsulas de clase

    sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2

    Args:
        lengths: [K] o [B, K]
        true_class: indice o arreglo de indices [B]
    """
    p = p or MarginParams()
    if lengths.ndim == 1:
        lengths = ops.reshape(lengths, (1, lengths.shape[0]))
    b, k = lengths.shape
    classes = _as_batch(true_class)
    if classes.shape[0] != b:
        raise ShapeError(f"margin_loss: {classes.shape[0]} etiquetas para {b} muestras")
    if classes.min() < 0 or classes.max() >= k:
        raise ShapeError(f"margin_loss: clase fuera de [0, {k})")
    onehot = np.zeros((b, k), dtype=lengths.dtype)
    onehot[np.arange(b), classes] = 1
    T = Tensor(onehot)
    not_T = Tensor(1 - onehot)

    pos = ops.max0(ops.add_scalar(ops.scale(lengths, -1.0), p.m_plus))
    neg = ops.max0(ops.add_scalar(lengths, -p.m_minus))
    pos_term = ops.mul(T, ops.mul(pos, pos))
    neg_term = ops.scale(ops.mul(not_T, ops.mul(neg, neg)), p.lambda_down)
    per_sample = ops.sum(ops.add(pos_term, neg_term), axis=1)
    return _reduce(per_sample, reduction)


def hr_anchor_loss(f: Tensor, c, r, bank: AnchorBank, reduction: str = "mean") -> Tensor:
    """
    Perdida de ancla HR

    1/2 [(1 - r) |f - A_const^c|^2 + r |f - A^c|^2]

    Con r = 0 el ancla entra como constante: solo f recibe gradiente.

    Args:
        f: rasgos [feature_dim] o [B, feature_dim]
        c: clase(s)
        r: bandera(s) de resolucion, 1 = HR
    """
    if f.ndim == 1:
        f = ops.reshape(f, (1, f.shape[0]))
    b, dim = f.shape
    if dim != bank.feature_dim:
        raise ShapeError(f"hr_anchor_loss: rasgos de dimension {dim}, banco de {bank.feature_dim}")
    classes = _as_batch(c)
    flags = _as_batch(r, dtype=f.dtype)
    if classes.shape[0] != b or flags.shape[0] != b:
        raise ShapeError("hr_anchor_loss: etiquetas o banderas no alinean con el lote")
    if classes.min() < 0 or classes.max() >= bank.num_classes:
        raise ShapeError(f"hr_anchor_loss: clase sin ancla (K={bank.num_classes})")
    if not np.all((flags == 0) | (flags == 1)):
        raise ShapeError("hr_anchor_loss: la bandera de resolucion debe ser 0 o 1")

    const_rows = ops.gather_rows(bank.constant_view(), classes)
    if flags.any():
        param_rows = ops.gather_rows(bank.parameter_view(), classes)
        anchors = ops.add(
            ops.einsum("b,bf->bf", Tensor(flags), param_rows),
            ops.einsum("b,bf->bf", Tensor(1 - flags), const_rows),
        )
    else:
        # Lote solo VLR: el banco ni siquiera entra a la cinta
        anchors = const_rows
    diff = ops.sub(f, anchors)
    per_sample = ops.scale(ops.squared_norm(diff, axis=1), 0.5)
    return _reduce(per_sample, reduction)


def targeted_reconstruction_loss(recon: Tensor, hr_target: Union[Tensor, np.ndarray],
                                 reduction: str = "mean") -> Tensor:
    """
    Reconstruccion dirigida: |hr - recon|^2 por muestra

    El factor 1/2 se aplica al combinar en total_loss. Con un solo ejemplo
    (sin eje de lote) devuelve la suma de cuadrados directamente.
    """
    target = hr_target if isinstance(hr_target, Tensor) else Tensor(np.asarray(hr_target, dtype=recon.dtype))
    if recon.shape != target.shape:
        raise ShapeError(f"Reconstruccion {recon.shape} y objetivo {target.shape} difieren")
    diff = ops.sub(target.detach(), recon)
    if recon.ndim <= 1:
        return ops.sum(ops.mul(diff, diff))
    axes = tuple(range(1, recon.ndim))
    per_sample = ops.sum(ops.mul(diff, diff), axis=axes)
    return _reduce(per_sample, reduction)


def plain_reconstruction_loss(recon: Tensor, model_input: Union[Tensor, np.ndarray],
                              reduction: str = "mean") -> Tensor:
    """Reconstruccion de referencia: el objetivo es la propia entrada"""
    return targeted_reconstruction_loss(recon, model_input, reduction)


@dataclass
class LossBreakdown:
    """Componentes de la perdida de un paso (None si el termino no se construyo)"""
    total: Tensor
    margin: Tensor
    anchor: Optional[Tensor] = None
    recon: Optional[Tensor] = None

    def as_floats(self) -> dict:
        return {
            "total": self.total.item(),
            "margin": self.margin.item(),
            "anchor": self.anchor.item() if self.anchor is not None else 0.0,
            "recon": self.recon.item() if self.recon is not None else 0.0,
        }


def combine_losses(margin: Tensor, anchor: Optional[Tensor], recon: Optional[Tensor],
                   weights: LossWeights) -> LossBreakdown:
    """
    margin + lambda1 * anchor + (lambda2 / 2) * recon

    Un termino con peso 0 (o None) no se agrega a la cinta.
    """
    total = margin
    if anchor is not None and weights.lambda1 > 0:
        total = ops.add(total, ops.scale(anchor, weights.lambda1))
    if recon is not None and weights.lambda2 > 0:
        total = ops.add(total, ops.scale(recon, weights.lambda2 / 2))
    return LossBreakdown(total=total, margin=margin, anchor=anchor, recon=recon)


def loss_breakdown(lengths: Tensor, true_class, f: Tensor, r, bank: AnchorBank,
                   recon: Tensor, hr_target, weights: LossWeights = None,
                   margin_params: MarginParams = None, reduction: str = "mean") -> LossBreakdown:
    """Objetivo completo con sus componentes; los terminos con peso 0 no se construyen"""
    weights = weights or LossWeights()
    margin = margin_loss(lengths, true_class, margin_params, reduction)
    anchor = hr_anchor_loss(f, true_class, r, bank, reduction) if weights.lambda1 > 0 else None
    rec = targeted_reconstruction_loss(recon, hr_target, reduction) if weights.lambda2 > 0 else None
    return combine_losses(margin, anchor, rec, weights)


def total_loss(lengths: Tensor, true_class, f: Tensor, r, bank: AnchorBank,
               recon: Tensor, hr_target, weights: LossWeights = None,
               margin_params: MarginParams = None, reduction: str = "mean") -> Tensor:
    """Objetivo completo; con lambda1 = lambda2 = 0 es exactamente la perdida de margen"""
    return loss_breakdown(lengths, true_class, f, r, bank, recon, hr_target,
                          weights, margin_params, reduction).total
