"""
Pruebas de metricas, exportacion de puntajes y McNemar
"""

import numpy as np
import pandas as pd
import pytest

from app.core.errors import DataError, NoDiscordantPairsError
from app.db.manifest_store import load_manifest
from app.models.direct_capsnet import build
from app.models.schemas import ContingencyTable, ScoreRecord
from app.services.dataset_service import PairedDataset
from app.services.evaluation_service import (
    contingency_table,
    evaluate,
    export_scores,
    mcnemar,
    mcnemar_from_files,
    rank1_identification,
    read_scores,
    topk_accuracy,
    true_class_rank,
    write_labels,
    write_predictions,
)
from app.services.reconstruction_service import reconstruct_grid


def _record(i, true_class, scores):
    return ScoreRecord(sample_id=f"s{i}", true_class=true_class, scores=scores)


# =========================
# Top-k
# =========================
def test_topk_hand_example():
    """Clase verdadera en 1er, 3er y 2do lugar: top-2 = 2/3"""
    records = [
        _record(0, 0, [0.9, 0.2, 0.1]),
        _record(1, 0, [0.1, 0.5, 0.3]),
        _record(2, 2, [0.2, 0.6, 0.4]),
    ]
    np.testing.assert_array_equal(true_class_rank(records), [0, 2, 1])
    assert topk_accuracy(records, 2) == pytest.approx(66.6667, abs=1e-3)
    assert topk_accuracy(records, 1) == pytest.approx(100 / 3)
    assert topk_accuracy(records, 3) == 100.0


def test_topk_is_monotone_and_permutation_invariant(rng):
    records = [_record(i, int(rng.integers(0, 6)), rng.uniform(0, 0.99, size=6).tolist()) for i in range(40)]
    values = [topk_accuracy(records, k) for k in range(1, 7)]
    assert values == sorted(values) and values[-1] == 100.0
    shuffled = [records[i] for i in rng.permutation(len(records))]
    assert topk_accuracy(shuffled, 3) == values[2]


def test_topk_ties_go_to_lowest_index():
    assert topk_accuracy([_record(0, 1, [0.5, 0.5])], 1) == 0.0
    assert topk_accuracy([_record(0, 0, [0.5, 0.5])], 1) == 100.0


def test_topk_errors():
    with pytest.raises(DataError):
        topk_accuracy([], 1)
    with pytest.raises(DataError):
        topk_accuracy([_record(0, 0, [0.5, 0.1])], 3)


def test_rank1_identification():
    assert rank1_identification([_record(0, 1, [0.1, 0.8, 0.2])]) == 100.0


def test_score_record_rejects_out_of_range():
    with pytest.raises(ValueError):
        ScoreRecord(sample_id="x", true_class=0, scores=[1.0, 0.2])


# =========================
# Exportacion de puntajes
# =========================
def test_export_scores_genuine_and_impostors(tmp_path, rng):
    records = [_record(i, i % 4, rng.uniform(0, 0.99, size=4).tolist()) for i in range(5)]
    path = export_scores(records, tmp_path / "scores.csv")
    frame = read_scores(path)
    assert len(frame) == 20
    assert (frame["kind"] == "genuine").sum() == 5
    genuine = frame[frame["kind"] == "genuine"]
    assert genuine["class"].tolist() == [r.true_class for r in records]
    # 9 cifras significativas
    for r, (_, row) in zip(records, genuine.iterrows()):
        assert row["score"] == pytest.approx(r.scores[r.true_class], rel=1e-8)


def test_export_scores_empty_is_header_only(tmp_path):
    path = export_scores([], tmp_path / "empty.csv")
    assert path.read_text().strip() == "sample_id,class,score,kind"


def test_evaluate_model_on_synth(tiny_model_config, synth_dir):
    dataset = PairedDataset(load_manifest(synth_dir / "manifest.yaml"))
    model = build(tiny_model_config, seed=0)
    result = evaluate(model, dataset, "test", "vlr", batch_size=4)
    assert len(result.records) == 6
    assert 0 <= result.top1 <= result.top5 <= 100
    assert model.training
    for r in result.records:
        assert len(r.scores) == 3 and all(0 <= s < 1 for s in r.scores)


def test_reconstruction_grid_with_no_samples_is_empty(tiny_model_config, synth_dir, tmp_path):
    dataset = PairedDataset(load_manifest(synth_dir / "manifest.yaml"))
    model = build(tiny_model_config, seed=0)
    path = tmp_path / "grid.png"
    report = reconstruct_grid(model, dataset, path, indices=[])
    assert report.sample_ids == [] and report.mse == []
    assert report.mean_mse == 0.0
    assert not path.exists()


# =========================
# McNemar
# =========================
def test_mcnemar_not_significant():
    result = mcnemar(ContingencyTable(a=50, b=10, c=2, d=8))
    assert result.statistic == pytest.approx(49 / 12, abs=1e-3)
    assert not result.significant
    assert result.method == "exact_binomial"
    assert result.p_value == pytest.approx(158 / 4096, rel=1e-9)


def test_mcnemar_significant():
    result = mcnemar(ContingencyTable(a=50, b=30, c=2, d=8))
    assert result.statistic == pytest.approx(22.781, abs=1e-3)
    assert result.critical_value == pytest.approx(6.635, abs=1e-3)
    assert result.significant


def test_mcnemar_is_symmetric():
    x = mcnemar(ContingencyTable(a=0, b=30, c=2, d=0))
    y = mcnemar(ContingencyTable(a=0, b=2, c=30, d=0))
    assert x.statistic == y.statistic and x.significant == y.significant


def test_mcnemar_equal_discordance_never_significant():
    for b in (1, 5, 40):
        result = mcnemar(ContingencyTable(a=0, b=b, c=b, d=0))
        assert result.statistic <= 1 / (2 * b)
        assert not result.significant


def test_mcnemar_without_discordant_pairs():
    with pytest.raises(NoDiscordantPairsError):
        mcnemar(ContingencyTable(a=5, b=0, c=0, d=3))


def test_contingency_table_counts():
    table = contingency_table([0, 1, 2, 0], [0, 2, 2, 1], [0, 1, 1, 1])
    assert (table.a, table.b, table.c, table.d) == (1, 1, 1, 1)


def test_mcnemar_from_files(tmp_path):
    ids = [f"s{i}" for i in range(40)]
    labels = [0] * 40
    pred_a = [0] * 38 + [1, 1]
    pred_b = [1] * 30 + [0] * 8 + [0, 1]
    write_predictions(tmp_path / "a.csv", ids, pred_a)
    write_predictions(tmp_path / "b.csv", ids, pred_b)
    write_labels(tmp_path / "y.csv", ids, labels)
    table, result = mcnemar_from_files(tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "y.csv")
    assert (table.b, table.c) == (30, 1)
    assert result is not None and result.significant

    _, none = mcnemar_from_files(tmp_path / "a.csv", tmp_path / "a.csv", tmp_path / "y.csv")
    assert none is None


def test_mcnemar_misaligned_files(tmp_path):
    write_predictions(tmp_path / "a.csv", ["x", "y"], [0, 1])
    write_predictions(tmp_path / "b.csv", ["x"], [0])
    write_labels(tmp_path / "y.csv", ["x", "y"], [0, 1])
    with pytest.raises(DataError):
        mcnemar_from_files(tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "y.csv")
    pd.DataFrame({"sample_id": ["y", "x"], "prediction": [1, 0]}).to_csv(tmp_path / "c.csv", index=False)
    with pytest.raises(DataError):
        mcnemar_from_files(tmp_path / "a.csv", tmp_path / "c.csv", tmp_path / "y.csv")
