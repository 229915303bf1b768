"""
Capas con parametros: convolucion, batch normalization y totalmente conectada
"""

import logging
from typing import Dict, Iterator, Tuple

import numpy as np

from app.autograd import ops
from app.autograd.tensor import Tensor, default_dtype
from app.core.errors import ShapeError
from app.nn.init import glorot_uniform

logger = logging.getLogger(__name__)


class Module:
    """
    Contenedor de parametros, buffers y submodulos

    Los nombres completos ("features.0.conv.kernels") son las claves del
    checkpoint.
    """

    def __init__(self):
        self._parameters: Dict[str, Tensor] = {}
        self._buffers: Dict[str, Tensor] = {}
        self._modules: Dict[str, "Module"] = {}
        self.training = True

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(value, requires_grad=True, name=name)
        self._parameters[name] = tensor
        return tensor

    def add_buffer(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(value, name=name)
        self._buffers[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def _walk(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child._walk(f"{prefix}{name}.")

    def named_parameters(self) -> Dict[str, Tensor]:
        return {f"{p}{n}": t for p, m in self._walk() for n, t in m._parameters.items()}

    def named_buffers(self) -> Dict[str, Tensor]:
        return {f"{p}{n}": t for p, m in self._walk() for n, t in m._buffers.items()}

    def train(self, mode: bool = True) -> "Module":
        for _, module in self._walk():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for tensor in self.named_parameters().values():
            tensor.zero_grad()

    def reset_parameters(self, rng: np.random.Generator) -> None:
        for _, child in self._modules.items():
            child.reset_parameters(rng)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ConvLayer(Module):
    """Convolucion 2-D con sesgo por canal de salida"""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0):
        super().__init__()
        if stride < 1 or padding < 0:
            raise ShapeError(f"ConvLayer: stride={stride} padding={padding} invalidos")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        dtype = default_dtype()
        self.kernels = self.add_parameter("kernels", np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype))
        self.bias = self.add_parameter("bias", np.zeros(out_ch, dtype=dtype))

    def output_size(self, size: int) -> int:
        return ops.conv_output_size(size, self.kernel, self.stride, self.padding)

    def reset_parameters(self, rng: np.random.Generator) -> None:
        area = self.kernel * self.kernel
        self.kernels.data = glorot_uniform(self.kernels.shape, self.in_ch * area, self.out_ch * area, rng)
        self.bias.data = np.zeros_like(self.bias.data)

    def forward(self, x: Tensor) -> Tensor:
        out = ops.conv2d(x, self.kernels, stride=self.stride, padding=self.padding)
        return ops.add_bias(out, self.bias, axis=1)


class BatchNormLayer(Module):
    """
    Batch normalization por canal (eje 1)

    En entrenamiento normaliza con las estadisticas del lote y actualiza
    running = momentum * running + (1 - momentum) * lote. En evaluacion usa
    las estadisticas acumuladas.
    """

    def __init__(self, channels: int, momentum: float = 0.9, epsilon: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        dtype = default_dtype()
        self.gamma = self.add_parameter("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_parameter("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        self.gamma.data = np.ones_like(self.gamma.data)
        self.beta.data = np.zeros_like(self.beta.data)
        self.running_mean.data = np.zeros_like(self.running_mean.data)
        self.running_var.data = np.ones_like(self.running_var.data)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNormLayer: se esperaban {self.channels} canales, forma {x.shape}")
        if not self.training:
            return ops.batch_norm_eval(
                x, self.gamma, self.beta, self.running_mean.data, self.running_var.data, self.epsilon
            )
        out, mu, var = ops.batch_norm_train(x, self.gamma, self.beta, self.epsilon)
        m = self.momentum
        self.running_mean.data = (m * self.running_mean.data + (1 - m) * mu).astype(self.running_mean.dtype)
        self.running_var.data = (m * self.running_var.data + (1 - m) * var).astype(self.running_var.dtype)
        return out


_ACTIVATIONS = {
    "relu": ops.relu,
    "sigmoid": ops.sigmoid,
    "none": lambda x: x,
}


class DenseLayer(Module):
    """Capa totalmente conectada: activation(W x + b) sobre lotes [B, in]"""

    def __init__(self, in_features: int, out_features: int, activation: str = "none"):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"Activacion no soportada: {activation}")
        self.in_features, self.out_features = in_features, out_features
        self.activation = activation
        dtype = default_dtype()
        self.weight = self.add_parameter("weight", np.zeros((out_features, in_features), dtype=dtype))
        self.bias = self.add_parameter("bias", np.zeros(out_features, dtype=dtype))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        self.weight.data = glorot_uniform(self.weight.shape, self.in_features, self.out_features, rng)
        self.bias.data = np.zeros_like(self.bias.data)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"DenseLayer: se esperaba [B, {self.in_features}], forma {x.shape}")
        out = ops.matmul(x, ops.transpose(self.weight, (1, 0)))
        return _ACTIVATIONS[self.activation](ops.add_bias(out, self.bias, axis=-1))
