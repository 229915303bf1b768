"""
Tensor denso con diferenciacion automatica en modo reverso

Un Tensor envuelve un ndarray de numpy. Las operaciones diferenciables se
registran en la Tape activa (una por hilo) y Tape.backward recorre el registro
en orden inverso aplicando la regla de cada operacion.
"""

import threading
import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import NonFiniteError, TapeError

_local = threading.local()

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


def _stack() -> List[Optional["Tape"]]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def default_dtype() -> type:
    """Precision por defecto del hilo actual (float32 si no se fijo otra)"""
    return getattr(_local, "dtype", np.float32)


@contextmanager
def precision(name: str):
    """
    Fija la precision por defecto dentro del bloque

    Args:
        name: "float32" (entrenamiento) o "float64" (chequeo de gradientes)
    """
    if name not in _PRECISIONS:
        raise ValueError(f"Precision no soportada: {name}")
    previous = default_dtype()
    _local.dtype = _PRECISIONS[name]
    try:
        yield
    finally:
        _local.dtype = previous


def current_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Ejecuta operaciones sin registrarlas en ninguna cinta"""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


def check_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{what} produjo valores no finitos")


class Tensor:
    """
    Arreglo denso con seguimiento opcional de gradiente

    Los datos se tratan como inmutables; solo el optimizador y las
    estadisticas de batchnorm los modifican en sitio.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Optional[type] = None,
        name: Optional[str] = None,
    ):
        if dtype is None:
            # un ndarray de punto flotante conserva su precision
            floating = isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating)
            dtype = data.dtype if floating else default_dtype()
        array = np.array(data, dtype=dtype)
        if any(d <= 0 for d in array.shape):
            raise TapeError(f"Dimensiones invalidas para un Tensor: {array.shape}")
        check_finite(array, "Tensor")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._record: Optional["OpRecord"] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        """Crea un Tensor sin copiar ni validar (uso interno de las ops)"""
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._record = None
        out._tape = None
        return out

    # =========================
    # Propiedades
    # =========================
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Vista constante de los mismos datos (bloquea el gradiente)"""
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # =========================
    # Operadores
    # =========================
    def __add__(self, other):
        from app.autograd import ops
        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.add_scalar(self, float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from app.autograd import ops
        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.add_scalar(self, -float(other))

    def __rsub__(self, other):
        from app.autograd import ops
        return ops.add_scalar(ops.scale(self, -1.0), float(other))

    def __mul__(self, other):
        from app.autograd import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        from app.autograd import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self):
        from app.autograd import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from app.autograd import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from app.autograd import ops
        return ops.slice(self, index)

    def reshape(self, *shape):
        from app.autograd import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from app.autograd import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from app.autograd import ops
        return ops.mean(self, axis)


# Regla: (grad_salida, registro) -> gradientes por entrada (None si no aplica)
BackwardRule = Callable[[np.ndarray, "OpRecord"], Sequence[Optional[np.ndarray]]]

BACKWARD_RULES: Dict[str, BackwardRule] = {}


def register_backward(name: str):
    """Decorador que registra la regla de retropropagacion de una op"""

    def decorator(fn: BackwardRule) -> BackwardRule:
        BACKWARD_RULES[name] = fn
        return fn

    return decorator


@contextmanager
def override_backward(name: str, rule: BackwardRule):
    """Sustituye temporalmente una regla (control negativo del gradcheck)"""
    if name not in BACKWARD_RULES:
        raise KeyError(f"Op sin regla registrada: {name}")
    original = BACKWARD_RULES[name]
    BACKWARD_RULES[name] = rule
    try:
        yield
    finally:
        BACKWARD_RULES[name] = original


@dataclass
class OpRecord:
    """Una op ejecutada: entradas, salida y contexto para su regla"""
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    ctx: Dict[str, Any] = field(default_factory=dict)


class Tape:
    """
    Registro ordenado de las ops diferenciables ejecutadas en un hilo

    Uso:
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)

    Llamar backward varias veces sin poner a cero los gradientes acumula en
    las hojas (mismo comportamiento que sumar las perdidas).
    """

    def __init__(self):
        self.records: List[OpRecord] = []
        self._kinks: List[Tuple[str, bytes]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise TapeError("Cintas anidadas cerradas fuera de orden")
        stack.pop()

    def record(self, rec: OpRecord) -> None:
        rec.output._record = rec
        rec.output._tape = self
        self.records.append(rec)

    def note_kink(self, op_name: str, mask: np.ndarray) -> None:
        """Guarda el patron de activacion de una op con quiebre (relu/max)"""
        self._kinks.append((op_name, np.packbits(mask.reshape(-1)).tobytes()))

    def signature(self) -> Tuple[Tuple[str, Tuple[Tuple[int, ...], ...]], ...]:
        """Estructura de la cinta: nombre de cada op y formas de sus entradas"""
        return tuple(
            (rec.name, tuple(t.shape for t in rec.inputs)) for rec in self.records
        )

    def kink_signature(self) -> str:
        digest = hashlib.sha256()
        for name, mask in self._kinks:
            digest.update(name.encode())
            digest.update(mask)
        return digest.hexdigest()

    def backward(self, loss: Tensor) -> None:
        """
        Propaga gradientes desde un escalar hacia las hojas con requires_grad

        Args:
            loss: Tensor de un solo elemento producido en esta cinta
        """
        if loss.size != 1:
            raise TapeError(f"backward requiere un escalar, forma recibida {loss.shape}")
        if loss._tape is not self:
            raise TapeError("El tensor no fue producido en esta cinta")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}

        for rec in reversed(self.records):
            upstream = grads.pop(id(rec.output), None)
            if upstream is None:
                continue
            rule = BACKWARD_RULES[rec.name]
            input_grads = rule(upstream, rec)
            for tensor, g in zip(rec.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, leaf in leaves.items():
            g = grads[key].astype(leaf.data.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor) -> None:
    """Atajo: retropropaga en la cinta que produjo `loss`"""
    if loss._tape is None:
        raise TapeError("El tensor no fue producido en ninguna cinta")
    loss._tape.backward(loss)
