"""
Utilidades de imagen: remuestreo bicubico, aumentos y lectura/escritura PNG

Las imagenes son arreglos float [C, H, W] con valores en [0, 1].
"""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from app.core.errors import DataError

logger = logging.getLogger(__name__)

# Parametro del nucleo cubico (convolucion cubica de Keys)
BICUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    x = np.abs(x)
    near = (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    far = a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def bicubic_matrix(in_size: int, out_size: int, a: float = BICUBIC_A) -> np.ndarray:
    """
    Matriz [out, in] de pesos bicubicos para un eje

    Muestreo por centros de pixel, indices fuera de rango se fijan al borde.
    """
    if in_size < 1 or out_size < 1:
        raise DataError(f"Tamanos invalidos para remuestrear: {in_size} -> {out_size}")
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    for k in (-1, 0, 1, 2):
        idx = np.clip(base + k, 0, in_size - 1)
        np.add.at(weights, (rows, idx), cubic_kernel(t - k, a))
    return weights


def bicubic_resize(img: np.ndarray, target_size: Tuple[int, int]) -> np.ndarray:
    """
    Remuestreo bicubico separable

    Args:
        img: [C, H, W] o [H, W]
        target_size: (alto, ancho) destino
    Returns:
        imagen en la misma precision, sin recortar a [0, 1]
    """
    squeeze = img.ndim == 2
    src = img[None] if squeeze else img
    _, h, w = src.shape
    th, tw = int(target_size[0]), int(target_size[1])
    if (th, tw) == (h, w):
        return img.copy()
    my = bicubic_matrix(h, th)
    mx = bicubic_matrix(w, tw)
    out = np.einsum("oh,chw,pw->cop", my, src.astype(np.float64), mx).astype(img.dtype)
    return out[0] if squeeze else out


def nearest_resize(img: np.ndarray, target_size: Tuple[int, int]) -> np.ndarray:
    """Vecino mas cercano (referencia para comparar contra bicubico)"""
    squeeze = img.ndim == 2
    src = img[None] if squeeze else img
    _, h, w = src.shape
    th, tw = int(target_size[0]), int(target_size[1])
    rows = np.minimum(((np.arange(th) + 0.5) * h / th).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(np.int64), w - 1)
    out = src[:, rows][:, :, cols]
    return out[0] if squeeze else out


def degrade(hr_img: np.ndarray, vlr_size: Tuple[int, int]) -> np.ndarray:
    """Baja a resolucion VLR y vuelve a subir a la geometria HR"""
    _, h, w = hr_img.shape
    if vlr_size[0] >= h or vlr_size[1] >= w:
        raise DataError(f"vlr_size {tuple(vlr_size)} debe ser menor que el tamano HR {(h, w)}")
    low = bicubic_resize(hr_img, vlr_size)
    return np.clip(bicubic_resize(low, (h, w)), 0.0, 1.0).astype(hr_img.dtype)


def adjust_brightness(img: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(img + img.dtype.type(delta), 0.0, 1.0).astype(img.dtype)


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    """Espejo sobre el eje y (columnas invertidas)"""
    return np.ascontiguousarray(img[:, :, ::-1])


def crop_and_resize(img: np.ndarray, top: int, left: int, size: Tuple[int, int]) -> np.ndarray:
    """Recorta una ventana y la devuelve a la geometria original"""
    _, h, w = img.shape
    ch, cw = size
    window = img[:, top:top + ch, left:left + cw]
    return np.clip(bicubic_resize(window, (h, w)), 0.0, 1.0).astype(img.dtype)


# =========================
# Lectura / escritura
# =========================
def load_image(path: Union[str, Path], channels: int = 3) -> np.ndarray:
    """
    Lee una imagen raster sin perdida y la normaliza a [0, 1]

    Returns:
        float32 [C, H, W]
    """
    try:
        with Image.open(path) as im:
            mode = "L" if channels == 1 else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    except FileNotFoundError as e:
        raise DataError(f"Imagen no encontrada: {path}") from e
    except OSError as e:
        raise DataError(f"No se pudo decodificar la imagen {path}: {e}") from e
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[C, H, W] en [0, 1] -> [H, W, C] uint8"""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)


def save_image(path: Union[str, Path], img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, format="PNG")
