"""
Checkpoints binarios

Formato (little-endian):

    magic        8 bytes   b"DCAPSCKP"
    version      uint32
    n_records    uint32
    record * n:
        kind     uint8     0 = tensor, 1 = json
        name_len uint16, name (utf-8)
        tensor:  ndim uint8, dims uint32 * ndim, datos float32 ('<f4') en orden C
        json:    len uint32, documento utf-8
    digest       32 bytes  sha256 de todo lo anterior

Nombres de registro:
    meta                 json: config, epoch, step, seed
    param/<nombre>       parametros (incluye anchor_bank.anchors)
    buffer/<nombre>      estadisticas de batchnorm
    adam/state           json: hiperparametros y contadores
    adam/m/<nombre>, adam/v/<nombre>   momentos
"""

import hashlib
import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.errors import CheckpointVersionError, CorruptCheckpointError, DataError, ShapeError
from app.models.schemas import ExperimentConfig
from app.nn.optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"DCAPSCKP"
FORMAT_VERSION = 1
DIGEST_SIZE = 32

KIND_TENSOR = 0
KIND_JSON = 1


@dataclass
class Checkpoint:
    """Contenido decodificado de un checkpoint"""
    config: ExperimentConfig
    epoch: int
    step: int
    seed: int
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    adam: Optional[AdamState] = None
    version: int = FORMAT_VERSION
    extra: Dict[str, Any] = field(default_factory=dict)


# =========================
# Codificacion
# =========================
def _encode_name(buf: io.BytesIO, kind: int, name: str) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<BH", kind, len(raw)))
    buf.write(raw)


def _encode_tensor(buf: io.BytesIO, name: str, array: np.ndarray) -> None:
    _encode_name(buf, KIND_TENSOR, name)
    array = np.ascontiguousarray(array, dtype="<f4")
    buf.write(struct.pack("<B", array.ndim))
    buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buf.write(array.tobytes(order="C"))


def _encode_json(buf: io.BytesIO, name: str, doc: Dict[str, Any]) -> None:
    _encode_name(buf, KIND_JSON, name)
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    records = []
    records.append(("json", "meta", {
        "config": ckpt.config.model_dump(mode="json", by_alias=True),
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
    }))
    for name in sorted(ckpt.params):
        records.append(("tensor", f"param/{name}", ckpt.params[name]))
    for name in sorted(ckpt.buffers):
        records.append(("tensor", f"buffer/{name}", ckpt.buffers[name]))
    if ckpt.adam is not None:
        st = ckpt.adam
        records.append(("json", "adam/state", {
            "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "epsilon": st.epsilon,
            "step": st.step, "steps": st.steps, "lr_overrides": st.lr_overrides,
        }))
        for name in sorted(st.m):
            records.append(("tensor", f"adam/m/{name}", st.m[name]))
            records.append(("tensor", f"adam/v/{name}", st.v[name]))

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", ckpt.version, len(records)))
    for kind, name, payload in records:
        if kind == "tensor":
            _encode_tensor(buf, name, payload)
        else:
            _encode_json(buf, name, payload)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


# =========================
# Decodificacion
# =========================
class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("Checkpoint truncado")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 + DIGEST_SIZE or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("Cabecera de checkpoint invalida")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Version de checkpoint {version} no soportada (se espera {FORMAT_VERSION})"
        )
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("Checkpoint corrupto: el digest no coincide")

    reader = _Reader(body)
    reader.take(len(MAGIC) + 4)
    (n_records,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    docs: Dict[str, Dict[str, Any]] = {}
    try:
        for _ in range(n_records):
            kind, name_len = reader.unpack("<BH")
            name = reader.take(name_len).decode("utf-8")
            if kind == KIND_TENSOR:
                (ndim,) = reader.unpack("<B")
                shape = reader.unpack(f"<{ndim}I") if ndim else ()
                count = int(np.prod(shape)) if shape else 1
                raw = reader.take(4 * count)
                tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
            elif kind == KIND_JSON:
                (length,) = reader.unpack("<I")
                docs[name] = json.loads(reader.take(length).decode("utf-8"))
            else:
                raise CorruptCheckpointError(f"Tipo de registro desconocido {kind} en {name}")
    except (UnicodeDecodeError, json.JSONDecodeError, ValueError) as e:
        raise CorruptCheckpointError(f"Registro ilegible: {e}") from e
    if reader.pos != len(body):
        raise CorruptCheckpointError("Bytes sobrantes despues del ultimo registro")
    if "meta" not in docs:
        raise CorruptCheckpointError("Checkpoint sin registro meta")

    meta = docs["meta"]
    try:
        config = ExperimentConfig.model_validate(meta["config"])
    except (ValidationError, KeyError) as e:
        raise CorruptCheckpointError(f"Configuracion embebida invalida: {e}") from e

    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    buffers = {k[len("buffer/"):]: v for k, v in tensors.items() if k.startswith("buffer/")}
    adam = None
    if "adam/state" in docs:
        st = docs["adam/state"]
        adam = AdamState(
            lr=st["lr"], beta1=st["beta1"], beta2=st["beta2"], epsilon=st["epsilon"],
            step=st["step"], steps={k: int(v) for k, v in st["steps"].items()},
            lr_overrides=st.get("lr_overrides", {}),
            m={k[len("adam/m/"):]: v for k, v in tensors.items() if k.startswith("adam/m/")},
            v={k[len("adam/v/"):]: v for k, v in tensors.items() if k.startswith("adam/v/")},
        )
    return Checkpoint(config=config, epoch=int(meta["epoch"]), step=int(meta["step"]),
                      seed=int(meta["seed"]), params=params, buffers=buffers, adam=adam,
                      version=version, extra=meta.get("extra", {}))


# =========================
# Archivos
# =========================
def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Escribe el checkpoint de forma atomica (archivo temporal + rename)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    logger.info(f"[OK] Checkpoint guardado: {path} (epoca {ckpt.epoch}, paso {ckpt.step})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"No existe el checkpoint: {path}")
    ckpt = decode_checkpoint(path.read_bytes())
    logger.info(f"[OK] Checkpoint cargado: {path} (epoca {ckpt.epoch}, paso {ckpt.step})")
    return ckpt


# =========================
# Modelo <-> checkpoint
# =========================
def snapshot(model, config: ExperimentConfig, epoch: int, step: int, seed: int,
             adam: Optional[AdamState] = None, extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """Copia el estado actual del modelo (y del optimizador) en un Checkpoint"""
    return Checkpoint(
        config=config, epoch=epoch, step=step, seed=seed,
        params={k: t.data.copy() for k, t in model.named_parameters().items()},
        buffers={k: t.data.copy() for k, t in model.named_buffers().items()},
        adam=adam, extra=dict(extra or {}),
    )


def load_into(model, ckpt: Checkpoint) -> None:
    """Copia parametros y buffers del checkpoint en un modelo de la misma arquitectura"""
    for kind, source, target in (
        ("parametro", ckpt.params, model.named_parameters()),
        ("buffer", ckpt.buffers, model.named_buffers()),
    ):
        missing = set(target) - set(source)
        if missing:
            raise CorruptCheckpointError(f"Checkpoint sin {kind}: {sorted(missing)[0]}")
        for name, tensor in target.items():
            value = source[name]
            if value.shape != tensor.shape:
                raise ShapeError(f"{kind} {name}: checkpoint {value.shape}, modelo {tensor.shape}")
            tensor.data = value.astype(tensor.dtype, copy=True)
