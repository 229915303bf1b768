"""
Esquemas Pydantic para configuracion, manifiestos y registros
"""

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings

# Umbral de lado HR que cambia la arquitectura por defecto
LARGE_HR_SIDE = 96


class Ablation(str, Enum):
    """Variantes de entrenamiento (filas de la tabla de ablacion)"""
    FULL = "full"
    NO_ANCHOR = "no_anchor"
    NO_TRECON = "no_trecon"
    MARGIN_ONLY = "margin_only"
    HR_ONLY = "hr_only"
    PLAIN_RECON = "plain_recon"


class BatchMix(str, Enum):
    """Vistas que entran a cada lote"""
    BOTH = "both"
    HR = "hr"
    VLR = "vlr"


class MarginParams(BaseModel):
    """Margenes de la perdida de margen"""
    model_config = ConfigDict(extra="forbid")

    m_plus: float = Field(default=0.9, description="Margen positivo m+")
    m_minus: float = Field(default=0.1, description="Margen negativo m-")
    lambda_down: float = Field(default=0.5, gt=0, description="Peso de las clases negativas")

    @model_validator(mode="after")
    def check_margins(self):
        if not 0 <= self.m_minus < self.m_plus <= 1:
            raise ValueError(f"Se requiere 0 <= m_minus < m_plus <= 1 (m_minus={self.m_minus}, m_plus={self.m_plus})")
        return self


class LossWeights(BaseModel):
    """Pesos de las perdidas auxiliares (0 desactiva el termino)"""
    model_config = ConfigDict(extra="forbid")

    lambda1: float = Field(default=1e-3, ge=0, description="Peso de la perdida de ancla HR")
    lambda2: float = Field(default=1e-5, ge=0, description="Peso de la reconstruccion dirigida")


class ModelConfig(BaseModel):
    """Arquitectura e hiperparametros del modelo"""
    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(ge=1, description="Numero de clases K")
    hr_size: Tuple[int, int] = Field(description="Alto y ancho HR (geometria de entrada)")
    channels: int = Field(default=3, ge=1)

    # Extractor convolucional
    conv_filters: Optional[List[int]] = None
    conv_kernel: int = Field(default=5, ge=1)
    conv_stride: int = Field(default=1, ge=1)
    conv_padding: int = Field(default=2, ge=0)
    batchnorm_position: str = Field(default="before_relu", pattern="^(before_relu|after_relu)$")
    bn_momentum: float = Field(default=0.9, ge=0, lt=1)
    bn_epsilon: float = Field(default=1e-5, gt=0)

    # Capsulas
    primary_caps_types: int = Field(default=32, ge=1)
    caps_dim_primary: int = Field(default=8, ge=1)
    primary_kernel: int = Field(default=9, ge=1)
    primary_stride: int = Field(default=2, ge=1)
    caps_dim_class: int = Field(default=16, ge=1, description="Dimension m de las capsulas de clase")
    routing_iterations: int = Field(default=3, ge=1)
    detach_agreement: bool = True

    # Reconstruccion
    recon_hidden: Tuple[int, int] = (512, 1024)
    decoder_input: str = Field(default="masked_concat", pattern="^(masked_concat|selected)$")
    recon_target: str = Field(default="hr", pattern="^(hr|input)$")

    # Perdidas
    margin: MarginParams = Field(default_factory=MarginParams)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    reduction: str = Field(default="mean", pattern="^(mean|sum)$")
    anchor_update: str = Field(default="gradient", pattern="^(gradient|running_average)$")
    anchor_momentum: float = Field(default=0.5, ge=0, le=1)

    batch_size: Optional[int] = Field(default=None, ge=1)

    @field_validator("hr_size")
    @classmethod
    def check_hr_size(cls, v):
        if v[0] < 1 or v[1] < 1:
            raise ValueError(f"hr_size invalido: {v}")
        return v

    @field_validator("conv_filters")
    @classmethod
    def check_filters(cls, v):
        if v is not None and (not v or any(n < 1 for n in v)):
            raise ValueError(f"conv_filters invalido: {v}")
        return v

    @model_validator(mode="after")
    def fill_size_defaults(self):
        # Lado HR > 96: tres convoluciones y lotes de 32; si no, una y lotes de 100
        large = max(self.hr_size) > LARGE_HR_SIDE
        if self.conv_filters is None:
            self.conv_filters = [16, 32, 128] if large else [128]
        if self.batch_size is None:
            self.batch_size = 32 if large else 100
        return self

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.hr_size[0], self.hr_size[1])

    @property
    def recon_size(self) -> int:
        return self.channels * self.hr_size[0] * self.hr_size[1]


class AugmentParams(BaseModel):
    """Aumentos de entrenamiento (brillo, espejo horizontal, recorte)"""
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    p_brightness: float = Field(default=0.5, ge=0, le=1)
    p_flip: float = Field(default=0.5, ge=0, le=1)
    p_crop: float = Field(default=0.5, ge=0, le=1)
    brightness_delta: float = Field(default=0.2, ge=0, le=1)
    crop_fraction: float = Field(default=0.9, gt=0, le=1)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mix: BatchMix = BatchMix.BOTH
    augment: AugmentParams = Field(default_factory=AugmentParams)


class TrainingConfig(BaseModel):
    """Optimizador y bucle de entrenamiento"""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=10, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_epsilon: float = Field(default=1e-8, gt=0)
    anchor_lr: Optional[float] = Field(default=None, gt=0)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    ablation: Ablation = Ablation.FULL
    eval_every: int = Field(default=1, ge=1)


class ExperimentConfig(BaseModel):
    """Documento de configuracion completo (YAML con identificador de esquema)"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_id: str = Field(default=settings.CONFIG_SCHEMA, alias="schema")
    model: ModelConfig
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    @field_validator("schema_id")
    @classmethod
    def check_schema(cls, v):
        if v != settings.CONFIG_SCHEMA:
            raise ValueError(f"Esquema de configuracion no soportado: {v} (se espera {settings.CONFIG_SCHEMA})")
        return v


class ManifestEntry(BaseModel):
    file: str
    label: int = Field(ge=0)
    split: str = "train"


class DatasetManifest(BaseModel):
    """Conjunto de imagenes HR en disco con etiquetas y particiones"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_id: str = Field(default=settings.MANIFEST_SCHEMA, alias="schema")
    root: str
    labels_csv: str = "labels.csv"
    num_classes: int = Field(ge=1)
    hr_size: Tuple[int, int]
    vlr_size: Tuple[int, int]
    channels: int = Field(default=3, ge=1)
    entries: List[ManifestEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_resolutions(self):
        if self.vlr_size[0] >= self.hr_size[0] or self.vlr_size[1] >= self.hr_size[1]:
            raise ValueError(f"vlr_size {self.vlr_size} debe ser menor que hr_size {self.hr_size}")
        for entry in self.entries:
            if entry.label >= self.num_classes:
                raise ValueError(f"Etiqueta {entry.label} fuera de [0, {self.num_classes}) en {entry.file}")
        return self

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


class ScoreRecord(BaseModel):
    """Puntajes de capsula (largos) de una muestra evaluada"""
    sample_id: str
    true_class: int = Field(ge=0)
    scores: List[float]

    @model_validator(mode="after")
    def check_scores(self):
        if self.true_class >= len(self.scores):
            raise ValueError(f"Clase {self.true_class} sin puntaje ({len(self.scores)} clases)")
        if any(s < 0 or s >= 1 for s in self.scores):
            raise ValueError(f"Puntajes fuera de [0, 1) en {self.sample_id}")
        return self


class ContingencyTable(BaseModel):
    """Tabla 2x2 de aciertos de dos sistemas sobre las mismas muestras"""
    a: int = Field(ge=0, description="Ambos aciertan")
    b: int = Field(ge=0, description="Solo A acierta")
    c: int = Field(ge=0, description="Solo B acierta")
    d: int = Field(ge=0, description="Ambos fallan")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


class McNemarResult(BaseModel):
    statistic: float
    p_value: float
    method: str
    significant: bool
    critical_value: float


class RunSpec(BaseModel):
    """Parametros de una corrida de la CLI"""
    subcommand: str
    config_path: Optional[str] = None
    manifest_path: Optional[str] = None
    output_dir: Optional[str] = None
    checkpoint_path: Optional[str] = None
    seed: Optional[int] = None
    ablation: Optional[Ablation] = None
