"""
Red de capsulas dirigida por HR

Extractor convolucional -> capsulas primarias -> capsulas de clase ->
red de reconstruccion. HR y VLR recorren exactamente el mismo camino: la
entrada VLR ya llega reescalada a la geometria HR.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.autograd import ops
from app.autograd.tensor import Tensor
from app.core.errors import ConfigError, ShapeError
from app.models.schemas import ModelConfig
from app.nn.capsules import CapsuleSet, ClassCapsuleLayer, PrimaryCapsuleLayer, predict
from app.nn.init import init_parameters
from app.nn.layers import BatchNormLayer, ConvLayer, DenseLayer, Module
from app.nn.losses import AnchorBank

logger = logging.getLogger(__name__)


@dataclass
class ForwardOutput:
    """Salidas de una pasada hacia adelante"""
    features: Tensor            # f: ultimo mapa convolucional aplanado [B, F]
    class_caps: CapsuleSet      # capsulas de clase [B, K, m]
    recon: Optional[Tensor]     # reconstruccion [B, C, H, W] (None si no se decodifico)
    selected: np.ndarray        # clase decodificada por muestra


class ConvBlock(Module):
    """Convolucion + batch normalization + ReLU"""

    def __init__(self, in_ch: int, out_ch: int, config: ModelConfig):
        super().__init__()
        self.position = config.batchnorm_position
        self.conv = self.add_module(
            "conv", ConvLayer(in_ch, out_ch, config.conv_kernel, config.conv_stride, config.conv_padding)
        )
        self.bn = self.add_module("bn", BatchNormLayer(out_ch, config.bn_momentum, config.bn_epsilon))

    def forward(self, x: Tensor) -> Tensor:
        out = self.conv(x)
        if self.position == "before_relu":
            return ops.relu(self.bn(out))
        return self.bn(ops.relu(out))


class FeatureExtractor(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.blocks: List[ConvBlock] = []
        in_ch = config.channels
        for i, filters in enumerate(config.conv_filters):
            self.blocks.append(self.add_module(str(i), ConvBlock(in_ch, filters, config)))
            in_ch = filters

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Decoder(Module):
    """Tres capas totalmente conectadas: ReLU, ReLU, sigmoide"""

    def __init__(self, in_features: int, hidden: tuple, out_features: int):
        super().__init__()
        self.fc1 = self.add_module("fc1", DenseLayer(in_features, hidden[0], "relu"))
        self.fc2 = self.add_module("fc2", DenseLayer(hidden[0], hidden[1], "relu"))
        self.fc3 = self.add_module("fc3", DenseLayer(hidden[1], out_features, "sigmoid"))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc3(self.fc2(self.fc1(x)))


class DirectCapsNet(Module):
    """
    Modelo completo con su banco de anclas HR

    Args:
        config: ModelConfig validado
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c, h, w = config.input_shape
        self._check_geometry(h, w)

        self.features = self.add_module("features", FeatureExtractor(config))
        fh, fw = self._feature_hw(h, w)
        last_ch = config.conv_filters[-1]
        self.feature_dim = last_ch * fh * fw

        self.primary = self.add_module(
            "primary",
            PrimaryCapsuleLayer(last_ch, config.primary_caps_types, config.caps_dim_primary,
                                config.primary_kernel, config.primary_stride),
        )
        self.num_primary = self.primary.num_capsules(fh, fw)
        self.class_caps = self.add_module(
            "class_caps",
            ClassCapsuleLayer(self.num_primary, config.caps_dim_primary, config.num_classes,
                              config.caps_dim_class, config.routing_iterations, config.detach_agreement),
        )
        decoder_in = config.caps_dim_class * (config.num_classes if config.decoder_input == "masked_concat" else 1)
        self.decoder = self.add_module("decoder", Decoder(decoder_in, config.recon_hidden, config.recon_size))
        self.anchor_bank = self.add_module("anchor_bank", AnchorBank(config.num_classes, self.feature_dim))

    def _feature_hw(self, h: int, w: int):
        for _ in self.config.conv_filters:
            h = (h + 2 * self.config.conv_padding - self.config.conv_kernel) // self.config.conv_stride + 1
            w = (w + 2 * self.config.conv_padding - self.config.conv_kernel) // self.config.conv_stride + 1
        return h, w

    def _check_geometry(self, h: int, w: int) -> None:
        cfg = self.config
        for i, _ in enumerate(cfg.conv_filters):
            h = (h + 2 * cfg.conv_padding - cfg.conv_kernel) // cfg.conv_stride + 1
            w = (w + 2 * cfg.conv_padding - cfg.conv_kernel) // cfg.conv_stride + 1
            if h < 1 or w < 1:
                raise ConfigError(f"Geometria inconsistente: la convolucion {i} deja un mapa vacio")
        if h < cfg.primary_kernel or w < cfg.primary_kernel:
            raise ConfigError(
                f"Geometria inconsistente: mapa {h}x{w} menor que el kernel primario {cfg.primary_kernel}"
            )

    def forward(self, x: Tensor, target_class=None, decode: bool = True) -> ForwardOutput:
        """
        Pasada completa

        Args:
            x: lote [B, C, H, W] en geometria HR
            target_class: clases a decodificar (entrenamiento); si es None se
                decodifica la clase predicha
            decode: False omite la red de reconstruccion
        """
        expected = self.config.input_shape
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"Entrada de forma {x.shape}, se esperaba [B, {expected[0]}, {expected[1]}, {expected[2]}]")
        b = x.shape[0]

        fmap = self.features(x)
        f = ops.reshape(fmap, (b, self.feature_dim))
        caps = self.class_caps(self.primary(fmap))

        if target_class is None:
            selected = np.atleast_1d(predict(caps))
        else:
            selected = np.atleast_1d(np.asarray(target_class, dtype=np.int64))
            if selected.shape[0] != b:
                raise ShapeError(f"{selected.shape[0]} clases objetivo para {b} muestras")

        recon = self.decode(caps, selected) if decode else None
        return ForwardOutput(features=f, class_caps=caps, recon=recon, selected=selected)

    def decode(self, caps: CapsuleSet, selected: np.ndarray) -> Tensor:
        """Reconstruye desde la capsula seleccionada; las demas quedan en cero"""
        b, k, m = caps.activities.shape
        mask = np.zeros((b, k), dtype=caps.activities.dtype)
        mask[np.arange(b), selected] = 1
        if self.config.decoder_input == "masked_concat":
            masked = ops.einsum("bk,bkm->bkm", Tensor(mask), caps.activities)
            decoder_in = ops.reshape(masked, (b, k * m))
        else:
            decoder_in = ops.einsum("bk,bkm->bm", Tensor(mask), caps.activities)
        flat = self.decoder(decoder_in)
        return ops.reshape(flat, (b,) + tuple(self.config.input_shape))

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())


def build(config: ModelConfig, seed: int) -> DirectCapsNet:
    """
    Construye el modelo con inicializacion determinista

    Cada capa con parametros recibe su propio generador derivado de (seed, orden).
    """
    model = DirectCapsNet(config)
    for order, (name, module) in enumerate(model._walk()):
        if module._parameters:
            init_parameters(module, [seed, order])
    logger.info(
        f"[OK] DirectCapsNet construido: K={config.num_classes} filtros={config.conv_filters} "
        f"rasgos={model.feature_dim} capsulas_primarias={model.num_primary} "
        f"parametros={model.parameter_count():,}"
    )
    return model
