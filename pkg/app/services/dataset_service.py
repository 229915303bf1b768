"""
Servicio de datos: pares HR/VLR, aumentos y lotes mezclados

Cada imagen del manifiesto produce dos vistas con la misma etiqueta y el mismo
objetivo HR:
    - vista HR  (r = 1): entrada = imagen HR
    - vista VLR (r = 0): entrada = HR -> vlr_size -> HR (bicubico)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import DataError
from app.models.schemas import AugmentParams, BatchMix, DatasetManifest, ManifestEntry
from app.utils.image_ops import (
    adjust_brightness,
    bicubic_resize,
    crop_and_resize,
    degrade,
    flip_horizontal,
    load_image,
)

logger = logging.getLogger(__name__)

HR_FLAG = 1
VLR_FLAG = 0


@dataclass
class Sample:
    """Una vista de entrenamiento/evaluacion"""
    input: np.ndarray          # [C, H, W] en geometria HR
    hr_target: np.ndarray      # [C, H, W] imagen HR de la misma muestra
    label: int
    resolution_flag: int       # 1 = HR, 0 = VLR
    sample_id: str


@dataclass
class Batch:
    inputs: np.ndarray         # [B, C, H, W]
    hr_targets: np.ndarray     # [B, C, H, W]
    labels: np.ndarray         # [B]
    flags: np.ndarray          # [B]
    sample_ids: List[str]

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_hr(self) -> int:
        return int(np.count_nonzero(self.flags == HR_FLAG))

    @property
    def n_vlr(self) -> int:
        return self.size - self.n_hr


def make_vlr_pair(hr_img: np.ndarray, vlr_size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Construye (entrada VLR reescalada a HR, objetivo HR)

    Raises:
        DataError: si vlr_size no es estrictamente menor que la imagen HR
    """
    return degrade(hr_img, tuple(vlr_size)), hr_img.copy()


def augment(sample: Sample, rng: np.random.Generator, params: Optional[AugmentParams] = None,
            force: Optional[Dict[str, object]] = None) -> Sample:
    """
    Aumenta una muestra aplicando la misma transformacion a entrada y objetivo

    Cada aumento se activa de forma independiente con su probabilidad. El
    generador se consume siempre igual, asi la secuencia no depende de que
    aumentos se activaron.

    Args:
        sample: muestra de entrenamiento
        rng: generador con semilla
        params: probabilidades y magnitudes
        force: fija decisiones, ej. {"flip": True, "brightness": 0.0, "crop": False}
    """
    params = params or AugmentParams()
    force = force or {}
    _, h, w = sample.input.shape

    u_bright, u_flip, u_crop = rng.random(3)
    delta = rng.uniform(-params.brightness_delta, params.brightness_delta)
    ch = max(1, int(round(h * params.crop_fraction)))
    cw = max(1, int(round(w * params.crop_fraction)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))

    if "brightness" in force:
        brightness = force["brightness"]
        delta = float(brightness) if brightness is not None else 0.0
        do_bright = brightness is not None
    else:
        do_bright = u_bright < params.p_brightness
    do_flip = bool(force["flip"]) if "flip" in force else u_flip < params.p_flip
    do_crop = bool(force["crop"]) if "crop" in force else u_crop < params.p_crop

    def transform(img: np.ndarray) -> np.ndarray:
        if do_bright:
            img = adjust_brightness(img, delta)
        if do_flip:
            img = flip_horizontal(img)
        if do_crop and (ch, cw) != (h, w):
            img = crop_and_resize(img, top, left, (ch, cw))
        return img

    return replace(sample, input=transform(sample.input), hr_target=transform(sample.hr_target))


def split_by_ratio(entries: Sequence[ManifestEntry], train_fraction: float = 0.8,
                   seed: int = 0) -> List[ManifestEntry]:
    """
    Reparte las entradas de cada clase en train/test segun la proporcion

    Returns:
        nuevas entradas, en el orden original, con la particion asignada
    """
    if not 0 < train_fraction < 1:
        raise DataError(f"train_fraction debe estar en (0, 1), recibido {train_fraction}")
    rng = np.random.default_rng(seed)
    split: Dict[int, str] = {}
    labels = np.array([e.label for e in entries], dtype=np.int64)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        shuffled = members[rng.permutation(len(members))]
        n_train = int(round(len(members) * train_fraction))
        for pos, idx in enumerate(shuffled):
            split[int(idx)] = "train" if pos < n_train else "test"
    return [e.model_copy(update={"split": split[i]}) for i, e in enumerate(entries)]


class PairedDataset:
    """
    Imagenes HR del manifiesto en memoria y generacion de sus vistas

    Args:
        manifest: DatasetManifest cargado
        vlr_size: resolucion VLR (por defecto la del manifiesto)
        workers: hilos de decodificacion (por defecto DIRECTCAPS_DATA_WORKERS)
    """

    def __init__(self, manifest: DatasetManifest, vlr_size: Optional[Tuple[int, int]] = None,
                 workers: Optional[int] = None):
        self.manifest = manifest
        self.root = Path(manifest.root)
        self.hr_size = tuple(manifest.hr_size)
        self.vlr_size = tuple(vlr_size or manifest.vlr_size)
        if self.vlr_size[0] >= self.hr_size[0] or self.vlr_size[1] >= self.hr_size[1]:
            raise DataError(f"vlr_size {self.vlr_size} debe ser menor que hr_size {self.hr_size}")
        self.workers = workers or settings.data_workers()
        self._hr: Dict[int, np.ndarray] = {}
        self._vlr: Dict[int, np.ndarray] = {}

    def indices(self, split: str) -> List[int]:
        return [i for i, e in enumerate(self.manifest.entries) if e.split == split]

    def _decode(self, idx: int) -> np.ndarray:
        entry = self.manifest.entries[idx]
        img = load_image(self.root / entry.file, self.manifest.channels)
        if img.shape[1:] != self.hr_size:
            img = np.clip(bicubic_resize(img, self.hr_size), 0.0, 1.0).astype(np.float32)
        return img

    def preload(self, indices: Sequence[int]) -> None:
        """Decodifica en paralelo las imagenes que aun no estan en memoria"""
        todo = [i for i in indices if i not in self._hr]
        if not todo:
            return
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for idx, img in zip(todo, pool.map(self._decode, todo)):
                self._hr[idx] = img
        logger.info(f"[OK] {len(todo)} imagenes HR decodificadas ({self.workers} hilos)")

    def hr_image(self, idx: int) -> np.ndarray:
        if idx not in self._hr:
            self._hr[idx] = self._decode(idx)
        return self._hr[idx]

    def vlr_image(self, idx: int) -> np.ndarray:
        if idx not in self._vlr:
            self._vlr[idx], _ = make_vlr_pair(self.hr_image(idx), self.vlr_size)
        return self._vlr[idx]

    def sample(self, idx: int, flag: int) -> Sample:
        entry = self.manifest.entries[idx]
        hr = self.hr_image(idx)
        source = hr if flag == HR_FLAG else self.vlr_image(idx)
        return Sample(input=source.copy(), hr_target=hr.copy(), label=entry.label,
                      resolution_flag=flag, sample_id=entry.file)

    def samples(self, split: str, view: str = "vlr") -> List[Sample]:
        """Todas las muestras de una particion en una vista (evaluacion)"""
        flag = HR_FLAG if view == "hr" else VLR_FLAG
        idx = self.indices(split)
        self.preload(idx)
        return [self.sample(i, flag) for i in idx]


def stack_samples(samples: Sequence[Sample]) -> Batch:
    return Batch(
        inputs=np.stack([s.input for s in samples]),
        hr_targets=np.stack([s.hr_target for s in samples]),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        flags=np.array([s.resolution_flag for s in samples], dtype=np.int64),
        sample_ids=[s.sample_id for s in samples],
    )


def epoch_views(n: int, mix: BatchMix, seed: int, epoch: int) -> List[Tuple[int, int]]:
    """
    Orden barajado de (posicion, bandera) de una epoca

    Con mix=both cada muestra aporta su vista HR seguida de su vista VLR.
    """
    order = np.random.default_rng([seed, epoch]).permutation(n)
    mix = BatchMix(mix)
    if mix == BatchMix.HR:
        return [(int(i), HR_FLAG) for i in order]
    if mix == BatchMix.VLR:
        return [(int(i), VLR_FLAG) for i in order]
    return [(int(i), flag) for i in order for flag in (HR_FLAG, VLR_FLAG)]


def batch_iter(
    dataset: PairedDataset,
    batch_size: int,
    mix: BatchMix = BatchMix.BOTH,
    seed: int = 0,
    epoch: int = 0,
    split: str = "train",
    augment_params: Optional[AugmentParams] = None,
) -> Iterator[Batch]:
    """
    Lotes de una epoca

    El orden depende solo de (seed, epoch); el aumento de cada vista usa su
    propio generador derivado de (seed, epoch, indice, bandera), asi el
    resultado no cambia con la cantidad de hilos. El ultimo lote parcial se
    conserva.
    """
    if isinstance(dataset, DatasetManifest):
        dataset = PairedDataset(dataset)
    if batch_size < 1:
        raise DataError(f"batch_size debe ser >= 1, recibido {batch_size}")
    indices = dataset.indices(split)
    if not indices:
        raise DataError(f"El manifiesto no tiene entradas en la particion '{split}'")
    dataset.preload(indices)
    views = epoch_views(len(indices), mix, seed, epoch)
    use_augment = augment_params is not None and augment_params.enabled

    def build(view: Tuple[int, int]) -> Sample:
        pos, flag = view
        idx = indices[pos]
        sample = dataset.sample(idx, flag)
        if use_augment:
            rng = np.random.default_rng([seed, epoch, idx, flag])
            sample = augment(sample, rng, augment_params)
        return sample

    with ThreadPoolExecutor(max_workers=dataset.workers) as pool:
        for start in range(0, len(views), batch_size):
            chunk = views[start:start + batch_size]
            yield stack_samples(list(pool.map(build, chunk)))
