"""
Orden de las ablaciones en el experimento sintetico (corrida larga)
"""

import os

import pandas as pd
import pytest

from scripts.run_ablation_benchmark import (
    MIN_GAP,
    SLACK,
    check_against_pin,
    check_ordering,
    load_thresholds,
    pin_thresholds,
    run_benchmark,
)

RUN_SLOW = os.getenv("DIRECTCAPS_RUN_SLOW", "0") == "1"


def test_check_ordering_flags_small_gap():
    """El chequeo de orden detecta una variante completa sin ventaja"""
    frame = pd.DataFrame([
        {"ablation": "margin_only", "val_top1": 60.0},
        {"ablation": "no_anchor", "val_top1": 61.0},
        {"ablation": "no_trecon", "val_top1": 70.0},
        {"ablation": "full", "val_top1": 61.0},
    ])
    problems = check_ordering(frame)
    assert any("full" in p for p in problems)
    assert any("no_trecon" in p for p in problems)


def test_check_ordering_accepts_expected_order():
    frame = pd.DataFrame([
        {"ablation": "margin_only", "val_top1": 60.0},
        {"ablation": "no_anchor", "val_top1": 63.0},
        {"ablation": "no_trecon", "val_top1": 65.5},
        {"ablation": "full", "val_top1": 66.0},
    ])
    assert check_ordering(frame) == []


def _ordered_frame(shift=0.0):
    rows = []
    for seed in (0, 1):
        for name, value in (("margin_only", 60.0), ("no_anchor", 63.0), ("no_trecon", 64.0), ("full", 66.0)):
            rows.append({"ablation": name, "seed": seed, "val_top1": value + shift})
    return pd.DataFrame(rows)


def test_thresholds_default_without_pin_file(tmp_path):
    pinned = load_thresholds(tmp_path / "missing.yaml")
    assert pinned == {"min_gap": MIN_GAP, "slack": SLACK, "means": {}}


def test_pinned_thresholds_round_trip(tmp_path):
    path = pin_thresholds(_ordered_frame(), tmp_path / "thresholds.yaml", min_gap=2.5, slack=0.5)
    pinned = load_thresholds(path)
    assert pinned["min_gap"] == 2.5 and pinned["slack"] == 0.5
    assert pinned["means"]["full"] == pytest.approx(66.0)
    assert pinned["means"]["margin_only"] == pytest.approx(60.0)


def test_check_against_pin_flags_regression(tmp_path):
    pinned = load_thresholds(pin_thresholds(_ordered_frame(), tmp_path / "thresholds.yaml"))
    assert check_against_pin(_ordered_frame(shift=-0.5), pinned) == []
    problems = check_against_pin(_ordered_frame(shift=-2.0), pinned)
    assert len(problems) == 4
    assert any("full" in p for p in problems)


@pytest.mark.slow
@pytest.mark.skipif(not RUN_SLOW, reason="activar con DIRECTCAPS_RUN_SLOW=1")
def test_full_model_beats_margin_only(tmp_path):
    frame = run_benchmark(tmp_path)
    assert len(frame) == 12
    pinned = load_thresholds()
    assert check_ordering(frame, pinned["min_gap"], pinned["slack"]) == []
