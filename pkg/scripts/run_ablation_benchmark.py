#!/usr/bin/env python3
"""
Benchmark de ablaciones sobre el conjunto sintetico

Genera el conjunto (K=4, 200 por clase, HR 32x32, VLR 8x8), entrena cada
variante con varias semillas y compara el top-1 VLR de la particion de prueba.
La variante completa debe superar a margin_only por al menos MIN_GAP puntos y
cada ablacion parcial debe quedar entre ambas (o a menos de SLACK de un extremo).

Los umbrales se leen de ablation_thresholds.yaml si existe. Con --pin, una
corrida que cumple el orden fija ahi los umbrales y las medias observadas; las
corridas siguientes tambien fallan si una variante cae mas de SLACK por debajo
de su media fijada.

Uso:
    python scripts/run_ablation_benchmark.py --out runs/ablation
    python scripts/run_ablation_benchmark.py --out runs/ablation --pin
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
import yaml

# Agregar el directorio raiz al path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.db.manifest_store import load_config, load_manifest  # noqa: E402
from app.models.schemas import Ablation  # noqa: E402
from app.services.dataset_service import PairedDataset  # noqa: E402
from app.services.synth_service import synth_dataset  # noqa: E402
from app.services.training_service import TrainingService  # noqa: E402

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "synth_small.yaml"
VARIANTS = [Ablation.MARGIN_ONLY, Ablation.NO_ANCHOR, Ablation.NO_TRECON, Ablation.FULL]
SEEDS = [0, 1, 2]
MIN_GAP = 2.0
SLACK = 1.0
THRESHOLDS_FILE = Path(__file__).resolve().parent / "ablation_thresholds.yaml"


def print_section(title: str) -> None:
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60 + "\n")


def run_benchmark(out_dir: Path, config_path: Path = DEFAULT_CONFIG, seeds: Sequence[int] = SEEDS,
                  per_class: int = 200, epochs: int = None) -> pd.DataFrame:
    """
    Entrena todas las variantes y devuelve una fila por (variante, semilla)

    Args:
        out_dir: directorio de trabajo (datos + checkpoints)
        config_path: configuracion base del experimento
        seeds: semillas de entrenamiento
        per_class: imagenes de entrenamiento por clase
        epochs: sobrescribe training.epochs
    """
    out_dir = Path(out_dir)
    base = load_config(config_path)
    data_dir = out_dir / "data"
    if not (data_dir / "manifest.yaml").is_file():
        synth_dataset(str(data_dir), num_classes=base.model.num_classes, n_per_class=per_class,
                      hr_size=tuple(base.model.hr_size), vlr_size=(8, 8), seed=0,
                      channels=base.model.channels)
    dataset = PairedDataset(load_manifest(data_dir / "manifest.yaml"))

    rows: List[Dict] = []
    for variant in VARIANTS:
        for seed in seeds:
            updates = {"seed": seed}
            if epochs is not None:
                updates["epochs"] = epochs
            config = base.model_copy(update={"training": base.training.model_copy(update=updates)})
            start = time.perf_counter()
            service = TrainingService(config, dataset, out_dir / f"{variant.value}-seed{seed}", ablation=variant)
            result = service.run()
            elapsed = time.perf_counter() - start
            rows.append({
                "ablation": variant.value,
                "seed": seed,
                "val_top1": result.final_metrics["val_top1"],
                "val_top5": result.final_metrics["val_top5"],
                "train_acc": result.final_metrics["train_acc"],
                "seconds": round(elapsed, 1),
            })
            print(f"[STATS] {variant.value:<12} seed={seed} top-1={rows[-1]['val_top1']:.2f}% "
                  f"({elapsed:.0f}s)")

    frame = pd.DataFrame(rows)
    frame.to_csv(out_dir / "ablation_results.csv", index=False)
    return frame


def check_ordering(frame: pd.DataFrame, min_gap: float = MIN_GAP, slack: float = SLACK) -> List[str]:
    """
    Verifica el orden esperado de las medias de top-1

    Returns:
        lista de problemas encontrados (vacia si todo se cumple)
    """
    means = frame.groupby("ablation")["val_top1"].mean()
    low, high = means[Ablation.MARGIN_ONLY.value], means[Ablation.FULL.value]
    problems = []
    if high < low + min_gap:
        problems.append(f"full ({high:.2f}) no supera a margin_only ({low:.2f}) por {min_gap} puntos")
    for variant in (Ablation.NO_ANCHOR, Ablation.NO_TRECON):
        value = means[variant.value]
        if not (low - slack <= value <= high + slack):
            problems.append(f"{variant.value} ({value:.2f}) fuera de [{low:.2f}, {high:.2f}] +/- {slack}")
    return problems


def load_thresholds(path: Path = THRESHOLDS_FILE) -> Dict[str, Any]:
    """
    Umbrales fijados por una corrida anterior

    Returns:
        dict con min_gap, slack y means (means vacio si nunca se fijaron)
    """
    path = Path(path)
    if not path.is_file():
        return {"min_gap": MIN_GAP, "slack": SLACK, "means": {}}
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return {
        "min_gap": float(doc.get("min_gap", MIN_GAP)),
        "slack": float(doc.get("slack", SLACK)),
        "means": {k: float(v) for k, v in (doc.get("means") or {}).items()},
    }


def pin_thresholds(frame: pd.DataFrame, path: Path = THRESHOLDS_FILE, min_gap: float = MIN_GAP,
                   slack: float = SLACK) -> Path:
    """Escribe umbrales y medias de top-1 observadas por variante"""
    means = frame.groupby("ablation")["val_top1"].mean()
    doc = {
        "min_gap": float(min_gap),
        "slack": float(slack),
        "observed_gap": round(float(means[Ablation.FULL.value] - means[Ablation.MARGIN_ONLY.value]), 4),
        "seeds": sorted(int(s) for s in frame["seed"].unique()) if "seed" in frame else [],
        "means": {k: round(float(v), 4) for k, v in means.items()},
    }
    path = Path(path)
    path.write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")
    return path


def check_against_pin(frame: pd.DataFrame, pinned: Dict[str, Any]) -> List[str]:
    """Variantes cuya media cae mas de `slack` por debajo de la media fijada"""
    means = frame.groupby("ablation")["val_top1"].mean()
    slack = pinned.get("slack", SLACK)
    problems = []
    for variant, reference in pinned.get("means", {}).items():
        if variant in means and means[variant] < reference - slack:
            problems.append(f"{variant} ({means[variant]:.2f}) cae por debajo de la media fijada ({reference:.2f})")
    return problems


def main() -> int:
    parser = argparse.ArgumentParser(description="Benchmark de ablaciones sobre datos sinteticos")
    parser.add_argument("--out", type=Path, default=Path("runs/ablation"))
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    parser.add_argument("--seeds", type=int, nargs="+", default=SEEDS)
    parser.add_argument("--per-class", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--thresholds", type=Path, default=THRESHOLDS_FILE)
    parser.add_argument("--pin", action="store_true", help="Fija umbrales y medias si el orden se cumple")
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING)
    print_section(" BENCHMARK: ablaciones DirectCapsNet (sintetico)")
    start = time.perf_counter()
    frame = run_benchmark(args.out, args.config, args.seeds, args.per_class, args.epochs)

    summary = frame.groupby("ablation")[["val_top1", "val_top5"]].agg(["mean", "std"])
    print_section(" RESULTADOS")
    print(summary.to_string(float_format=lambda v: f"{v:.2f}"))
    print(f"\nTiempo total: {(time.perf_counter() - start) / 60:.1f} min")

    pinned = load_thresholds(args.thresholds)
    problems = check_ordering(frame, pinned["min_gap"], pinned["slack"])
    if not args.pin:
        problems += check_against_pin(frame, pinned)
    if problems:
        for problem in problems:
            print(f"[ERR] {problem}")
        return 1
    print("[OK] Orden de ablaciones verificado")
    if args.pin:
        path = pin_thresholds(frame, args.thresholds, pinned["min_gap"], pinned["slack"])
        print(f"[OK] Umbrales fijados en {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
