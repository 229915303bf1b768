"""
Operaciones diferenciables sobre Tensor

Sin broadcasting implicito: las ops binarias exigen formas identicas, salvo
el producto por escalar y add_bias (que declara el eje explicitamente).
Toda salida se valida como finita.
"""

import builtins
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from app.autograd.tensor import (
    OpRecord,
    Tensor,
    check_finite,
    current_tape,
    register_backward,
)
from app.core.errors import ShapeError

Axis = Optional[Union[int, Tuple[int, ...]]]


def _make(name: str, data: np.ndarray, inputs: Sequence[Tensor], ctx=None, kink=None) -> Tensor:
    data = np.asarray(data)
    check_finite(data, name)
    out = Tensor._wrap(data)
    tape = current_tape()
    if tape is not None:
        if kink is not None:
            tape.note_kink(name, kink)
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            tape.record(OpRecord(name, tuple(inputs), out, ctx or {}))
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: formas distintas {a.shape} vs {b.shape}")


def _norm_axis(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"Eje {ax} fuera de rango para {ndim} dimensiones")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _expand(g: np.ndarray, axes: Tuple[int, ...], shape: Tuple[int, ...]) -> np.ndarray:
    for ax in axes:
        g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


# =========================
# Elementales
# =========================
def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make("add", a.data + b.data, (a, b))


@register_backward("add")
def _add_backward(g, rec):
    return g, g


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make("sub", a.data - b.data, (a, b))


@register_backward("sub")
def _sub_backward(g, rec):
    return g, -g


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make("mul", a.data * b.data, (a, b))


@register_backward("mul")
def _mul_backward(g, rec):
    a, b = rec.inputs
    return g * b.data, g * a.data


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    return _make("div", a.data / b.data, (a, b))


@register_backward("div")
def _div_backward(g, rec):
    a, b = rec.inputs
    return g / b.data, -g * a.data / (b.data * b.data)


def scale(a: Tensor, s: float) -> Tensor:
    return _make("scale", a.data * a.data.dtype.type(s), (a,), {"s": s})


@register_backward("scale")
def _scale_backward(g, rec):
    return (g * g.dtype.type(rec.ctx["s"]),)


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _make("add_scalar", a.data + a.data.dtype.type(s), (a,))


@register_backward("add_scalar")
def _add_scalar_backward(g, rec):
    return (g,)


def add_bias(x: Tensor, bias: Tensor, axis: int = -1) -> Tensor:
    """
    Suma un vector a lo largo de un eje declarado de x

    Args:
        x: tensor de cualquier forma
        bias: vector de largo x.shape[axis]
        axis: eje de x que indexa el sesgo
    """
    ax = _norm_axis(axis, x.ndim)[0]
    if bias.ndim != 1 or bias.shape[0] != x.shape[ax]:
        raise ShapeError(f"add_bias: sesgo {bias.shape} no encaja en eje {ax} de {x.shape}")
    view = [1] * x.ndim
    view[ax] = bias.shape[0]
    return _make("add_bias", x.data + bias.data.reshape(view), (x, bias), {"axis": ax})


@register_backward("add_bias")
def _add_bias_backward(g, rec):
    ax = rec.ctx["axis"]
    others = tuple(i for i in range(g.ndim) if i != ax)
    return g, g.sum(axis=others)


# =========================
# No linealidades
# =========================
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), {"mask": mask}, kink=mask)


@register_backward("relu")
def _relu_backward(g, rec):
    # Subgradiente 0 en x = 0
    return (g * rec.ctx["mask"],)


def max0(x: Tensor) -> Tensor:
    """max(0, x) de las perdidas con margen; misma regla que relu"""
    mask = x.data > 0
    return _make("max0", np.where(mask, x.data, 0).astype(x.dtype), (x,), {"mask": mask}, kink=mask)


@register_backward("max0")
def _max0_backward(g, rec):
    return (g * rec.ctx["mask"],)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data).astype(x.dtype)
    return _make("sigmoid", out, (x,), {"out": out})


@register_backward("sigmoid")
def _sigmoid_backward(g, rec):
    out = rec.ctx["out"]
    return (g * out * (1 - out),)


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise ShapeError("sqrt de valores negativos")
    out = np.sqrt(x.data)
    return _make("sqrt", out, (x,), {"out": out})


@register_backward("sqrt")
def _sqrt_backward(g, rec):
    out = rec.ctx["out"]
    safe = np.where(out > 0, out, 1)
    return (np.where(out > 0, g / (2 * safe), 0),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)[0]
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)
    return _make("softmax", out, (x,), {"out": out, "axis": ax})


@register_backward("softmax")
def _softmax_backward(g, rec):
    y, ax = rec.ctx["out"], rec.ctx["axis"]
    return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)


# =========================
# Normas y reducciones
# =========================
def squared_norm(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    return _make("squared_norm", (x.data * x.data).sum(axis=ax), (x,), {"axes": ax})


@register_backward("squared_norm")
def _squared_norm_backward(g, rec):
    x = rec.inputs[0]
    return (2 * x.data * _expand(g, rec.ctx["axes"], x.shape),)


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    out = np.sqrt((x.data * x.data).sum(axis=ax))
    return _make("l2_norm", out, (x,), {"axes": ax, "out": out})


@register_backward("l2_norm")
def _l2_norm_backward(g, rec):
    x, axes = rec.inputs[0], rec.ctx["axes"]
    norm = rec.ctx["out"]
    # gradiente 0 en el vector nulo
    ratio = np.where(norm > 0, g / np.where(norm > 0, norm, 1), 0)
    return (x.data * _expand(ratio, axes, x.shape),)


def cap_length(x: Tensor, limit: float) -> Tensor:
    """
    Acota el largo de cada vector (ultimo eje) a `limit`

    Los vectores acotados se tratan como un quiebre: su escala se propaga
    como constante.
    """
    norm = np.sqrt((x.data.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    capped = norm > limit
    scale = np.where(capped, limit / np.where(capped, norm, 1.0), 1.0)
    out = (x.data * scale).astype(x.dtype)
    return _make("cap_length", out, (x,), {"scale": scale}, kink=capped)


@register_backward("cap_length")
def _cap_length_backward(g, rec):
    return ((g * rec.ctx["scale"]).astype(g.dtype),)


def sum(x: Tensor, axis: Axis = None) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    return _make("sum", np.asarray(x.data.sum(axis=ax)), (x,), {"axes": ax})


@register_backward("sum")
def _sum_backward(g, rec):
    x = rec.inputs[0]
    return (np.array(_expand(g, rec.ctx["axes"], x.shape)),)


def mean(x: Tensor, axis: Axis = None) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[i] for i in ax])) if ax else 1
    return _make("mean", np.asarray(x.data.mean(axis=ax)), (x,), {"axes": ax, "count": count})


@register_backward("mean")
def _mean_backward(g, rec):
    x = rec.inputs[0]
    return (np.array(_expand(g, rec.ctx["axes"], x.shape)) / rec.ctx["count"],)


# =========================
# Forma
# =========================
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape {x.shape} -> {shape}: {e}") from e
    return _make("reshape", out, (x,))


@register_backward("reshape")
def _reshape_backward(g, rec):
    return (g.reshape(rec.inputs[0].shape),)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: permutacion invalida {axes} para {x.shape}")
    return _make("transpose", x.data.transpose(axes), (x,), {"axes": axes})


@register_backward("transpose")
def _transpose_backward(g, rec):
    return (g.transpose(np.argsort(rec.ctx["axes"])),)


def slice(x: Tensor, index) -> Tensor:
    """Indexado basico (enteros y slices); sin indices avanzados"""
    idx = index if isinstance(index, tuple) else (index,)
    for item in idx:
        if not isinstance(item, (int, np.integer, builtins.slice)) and item is not Ellipsis:
            raise ShapeError(f"slice: indice no soportado {item!r}")
    out = np.array(x.data[index])
    return _make("slice", out, (x,), {"index": index})


@register_backward("slice")
def _slice_backward(g, rec):
    x = rec.inputs[0]
    full = np.zeros_like(x.data)
    full[rec.ctx["index"]] = g
    return (full,)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat de lista vacia")
    ax = _norm_axis(axis, tensors[0].ndim)[0]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: formas incompatibles {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _make("concat", out, tuple(tensors), {"axis": ax, "sizes": sizes})


@register_backward("concat")
def _concat_backward(g, rec):
    cuts = np.cumsum(rec.ctx["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=rec.ctx["axis"]))


def gather_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """Selecciona filas de una matriz; el gradiente se acumula por fila"""
    rows = np.asarray(rows, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows espera una matriz, recibio {x.shape}")
    if rows.ndim != 1 or rows.size == 0 or rows.min() < 0 or rows.max() >= x.shape[0]:
        raise ShapeError(f"gather_rows: indices fuera de rango para {x.shape[0]} filas")
    return _make("gather_rows", x.data[rows], (x,), {"rows": rows})


@register_backward("gather_rows")
def _gather_rows_backward(g, rec):
    full = np.zeros_like(rec.inputs[0].data)
    np.add.at(full, rec.ctx["rows"], g)
    return (full,)


# =========================
# Algebra lineal
# =========================
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: formas no conformes {a.shape} @ {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b))


@register_backward("matmul")
def _matmul_backward(g, rec):
    a, b = rec.inputs
    return g @ b.data.T, a.data.T @ g


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """
    Contraccion de dos operandos con salida explicita ("ab,bc->ac")

    Cada indice de un operando debe aparecer en el otro o en la salida, asi
    el gradiente es otra contraccion del mismo tipo.
    """
    if "->" not in subscripts:
        raise ShapeError("einsum requiere salida explicita")
    lhs, out_idx = subscripts.replace(" ", "").split("->")
    parts = lhs.split(",")
    if len(parts) != 2:
        raise ShapeError("einsum soporta exactamente dos operandos")
    ia, ib = parts
    for own, other in ((ia, ib), (ib, ia)):
        if len(set(own)) != len(own):
            raise ShapeError(f"einsum: indice repetido en {own}")
        missing = set(own) - set(other) - set(out_idx)
        if missing:
            raise ShapeError(f"einsum: indices {sorted(missing)} solo aparecen en un operando")
    if len(ia) != a.ndim or len(ib) != b.ndim:
        raise ShapeError(f"einsum: {subscripts} no encaja con {a.shape}, {b.shape}")
    sizes = {}
    for idx, shape in ((ia, a.shape), (ib, b.shape)):
        for ch, n in zip(idx, shape):
            if sizes.setdefault(ch, n) != n:
                raise ShapeError(f"einsum: dimension de '{ch}' inconsistente")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)
    return _make("einsum", np.asarray(out), (a, b), {"ia": ia, "ib": ib, "io": out_idx})


@register_backward("einsum")
def _einsum_backward(g, rec):
    a, b = rec.inputs
    ia, ib, io = rec.ctx["ia"], rec.ctx["ib"], rec.ctx["io"]
    ga = np.einsum(f"{io},{ib}->{ia}", g, b.data, optimize=True) if a.requires_grad else None
    gb = np.einsum(f"{io},{ia}->{ib}", g, a.data, optimize=True) if b.requires_grad else None
    return ga, gb


# =========================
# Convolucion
# =========================
def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Correlacion 2-D por lotes

    Args:
        x: [B, C, H, W]
        w: [O, C, kh, kw]
    Returns:
        [B, O, H', W'] con H' = floor((H + 2p - kh)/s) + 1
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: formas no conformes {x.shape} * {w.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride={stride} padding={padding} invalidos")
    _, _, h, wd = x.shape
    _, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} mayor que la entrada {h}x{wd}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.einsum("bchwij,ocij->bohw", windows, w.data, optimize=True)
    ctx = {"stride": stride, "padding": padding, "xp_shape": xp.shape, "windows": windows}
    return _make("conv2d", np.ascontiguousarray(out), (x, w), ctx)


@register_backward("conv2d")
def _conv2d_backward(g, rec):
    x, w = rec.inputs
    s, p = rec.ctx["stride"], rec.ctx["padding"]
    _, _, kh, kw = w.shape
    _, _, ho, wo = g.shape
    gw = np.einsum("bohw,bchwij->ocij", g, rec.ctx["windows"], optimize=True) if w.requires_grad else None
    gx = None
    if x.requires_grad:
        gxp = np.zeros(rec.ctx["xp_shape"], dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += np.einsum(
                    "bohw,oc->bchw", g, w.data[:, :, i, j], optimize=True
                )
        h, wd = x.shape[2], x.shape[3]
        gx = gxp[:, :, p:p + h, p:p + wd]
    return gx, gw


# =========================
# Batch normalization
# =========================
def _bn_view(ndim: int, channels: int):
    view = [1] * ndim
    view[1] = channels
    return view


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """
    Normaliza por canal (eje 1) con las estadisticas del lote

    Returns:
        (salida, media_del_lote, varianza_del_lote) - la varianza es la
        poblacional, la misma que se usa para normalizar
    """
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: formas no conformes {x.shape}, {gamma.shape}, {beta.shape}")
    axes = tuple(i for i in range(x.ndim) if i != 1)
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    view = _bn_view(x.ndim, x.shape[1])
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(view)) * inv_std.reshape(view)
    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)
    ctx = {"xhat": xhat, "inv_std": inv_std, "axes": axes, "view": view}
    return _make("batch_norm_train", out.astype(x.dtype), (x, gamma, beta), ctx), mu, var


@register_backward("batch_norm_train")
def _batch_norm_train_backward(g, rec):
    x, gamma, _ = rec.inputs
    xhat, inv_std, axes, view = rec.ctx["xhat"], rec.ctx["inv_std"], rec.ctx["axes"], rec.ctx["view"]
    n = x.size // x.shape[1]
    dxhat = g * gamma.data.reshape(view)
    sum_d = dxhat.sum(axis=axes).reshape(view)
    sum_dx = (dxhat * xhat).sum(axis=axes).reshape(view)
    gx = inv_std.reshape(view) / n * (n * dxhat - sum_d - xhat * sum_dx)
    return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)


def batch_norm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray, eps: float
) -> Tensor:
    view = _bn_view(x.ndim, x.shape[1])
    axes = tuple(i for i in range(x.ndim) if i != 1)
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(view)) * inv_std.reshape(view)
    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)
    ctx = {"xhat": xhat, "inv_std": inv_std, "axes": axes, "view": view}
    return _make("batch_norm_eval", out.astype(x.dtype), (x, gamma, beta), ctx)


@register_backward("batch_norm_eval")
def _batch_norm_eval_backward(g, rec):
    _, gamma, _ = rec.inputs
    xhat, inv_std, axes, view = rec.ctx["xhat"], rec.ctx["inv_std"], rec.ctx["axes"], rec.ctx["view"]
    gx = g * (gamma.data * inv_std).reshape(view)
    return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
