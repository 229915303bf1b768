"""
Generador de un conjunto sintetico de figuras (escala de escritorio)

Cada clase es una figura distinta dibujada con jitter de posicion, escala,
color de fondo y color de trazo. Mismo seed -> mismos bytes en disco.
"""

import logging
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from app.core.config import settings
from app.core.errors import DataError
from app.db.manifest_store import save_manifest
from app.models.schemas import DatasetManifest, ManifestEntry

logger = logging.getLogger(__name__)

# Supermuestreo del lienzo antes de reducir al tamano HR
SUPERSAMPLE = 4

Box = Tuple[float, float, float, float]


def _ellipse(draw: ImageDraw.ImageDraw, box: Box, fill, width: int) -> None:
    draw.ellipse(box, fill=fill)


def _square(draw, box, fill, width):
    draw.rectangle(box, fill=fill)


def _triangle(draw, box, fill, width):
    x0, y0, x1, y1 = box
    draw.polygon([((x0 + x1) / 2, y0), (x1, y1), (x0, y1)], fill=fill)


def _cross(draw, box, fill, width):
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    draw.rectangle((cx - width, y0, cx + width, y1), fill=fill)
    draw.rectangle((x0, cy - width, x1, cy + width), fill=fill)


def _diamond(draw, box, fill, width):
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=fill)


def _ring(draw, box, fill, width):
    draw.ellipse(box, outline=fill, width=max(1, int(width * 1.5)))


def _hbars(draw, box, fill, width):
    x0, y0, x1, y1 = box
    for t in (0.15, 0.5, 0.85):
        y = y0 + t * (y1 - y0)
        draw.rectangle((x0, y - width / 2, x1, y + width / 2), fill=fill)


def _vbars(draw, box, fill, width):
    x0, y0, x1, y1 = box
    for t in (0.15, 0.5, 0.85):
        x = x0 + t * (x1 - x0)
        draw.rectangle((x - width / 2, y0, x + width / 2, y1), fill=fill)


def _x_shape(draw, box, fill, width):
    x0, y0, x1, y1 = box
    draw.line((x0, y0, x1, y1), fill=fill, width=int(width * 2))
    draw.line((x0, y1, x1, y0), fill=fill, width=int(width * 2))


def _corner(draw, box, fill, width):
    x0, y0, x1, y1 = box
    draw.rectangle((x0, y0, x0 + 2 * width, y1), fill=fill)
    draw.rectangle((x0, y1 - 2 * width, x1, y1), fill=fill)


GLYPHS: List[Callable] = [
    _ellipse, _square, _triangle, _cross, _diamond,
    _ring, _hbars, _vbars, _x_shape, _corner,
]


def render_glyph(label: int, size: Tuple[int, int], rng: np.random.Generator, channels: int = 3) -> np.ndarray:
    """
    Dibuja una instancia de la clase `label`

    Clases mas alla de las figuras base agregan marcas de esquina (label // 10).

    Returns:
        uint8 [H, W, C] (o [H, W] en gris)
    """
    h, w = size
    big = (w * SUPERSAMPLE, h * SUPERSAMPLE)
    background = tuple(int(v) for v in rng.integers(0, 80, size=3))
    foreground = tuple(int(v) for v in rng.integers(150, 256, size=3))
    scale = rng.uniform(0.5, 0.8)
    shift = rng.uniform(-0.12, 0.12, size=2)

    canvas = Image.new("RGB", big, background)
    draw = ImageDraw.Draw(canvas)
    half_w, half_h = big[0] * scale / 2, big[1] * scale / 2
    cx, cy = big[0] * (0.5 + shift[0]), big[1] * (0.5 + shift[1])
    box = (cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    stroke = max(1.0, min(big) * 0.06)
    GLYPHS[label % len(GLYPHS)](draw, box, foreground, stroke)

    marks = label // len(GLYPHS)
    dot = max(2, min(big) // 12)
    for m in range(marks):
        x = dot + m * 2 * dot
        draw.rectangle((x, dot, x + dot, 2 * dot), fill=foreground)

    img = canvas.resize((w, h), Image.Resampling.BOX)
    if channels == 1:
        img = img.convert("L")
    return np.asarray(img)


def synth_dataset(
    out_dir: str,
    num_classes: int,
    n_per_class: int,
    hr_size: Tuple[int, int] = (32, 32),
    vlr_size: Tuple[int, int] = (8, 8),
    seed: Optional[int] = None,
    n_test_per_class: Optional[int] = None,
    channels: int = 3,
) -> DatasetManifest:
    """
    Genera el conjunto sintetico y escribe manifest.yaml + labels.csv

    Args:
        out_dir: directorio destino (se crea)
        num_classes: K >= 2
        n_per_class: imagenes de entrenamiento por clase
        n_test_per_class: imagenes de prueba por clase (por defecto n_per_class // 4)
    Returns:
        DatasetManifest escrito
    """
    if num_classes < 2:
        raise DataError(f"Se requieren al menos 2 clases, recibido {num_classes}")
    if n_per_class < 1:
        raise DataError(f"n_per_class debe ser >= 1, recibido {n_per_class}")
    seed = settings.DEFAULT_SEED if seed is None else seed
    n_test = max(1, n_per_class // 4) if n_test_per_class is None else n_test_per_class

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries: List[ManifestEntry] = []
    for split, count, split_id in (("train", n_per_class, 0), ("test", n_test, 1)):
        for c in range(num_classes):
            for i in range(count):
                rng = np.random.default_rng([seed, split_id, c, i])
                pixels = render_glyph(c, tuple(hr_size), rng, channels)
                name = f"images/{split}_c{c:03d}_{i:05d}.png"
                Image.fromarray(pixels).save(out / name, format="PNG")
                entries.append(ManifestEntry(file=name, label=c, split=split))

    manifest = DatasetManifest(
        root=str(out.resolve()),
        labels_csv="labels.csv",
        num_classes=num_classes,
        hr_size=tuple(hr_size),
        vlr_size=tuple(vlr_size),
        channels=channels,
        entries=entries,
    )
    save_manifest(manifest, out / "manifest.yaml")
    logger.info(
        f"[OK] Conjunto sintetico: K={num_classes} train={n_per_class}/clase "
        f"test={n_test}/clase HR={tuple(hr_size)} VLR={tuple(vlr_size)} seed={seed}"
    )
    return manifest
