"""
Pruebas del remuestreo, aumentos, conjunto sintetico y lotes
"""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from app.core.errors import DataError
from app.db.manifest_store import load_manifest, save_manifest
from app.models.schemas import AugmentParams, BatchMix
from app.services.dataset_service import (
    HR_FLAG,
    VLR_FLAG,
    PairedDataset,
    Sample,
    augment,
    batch_iter,
    make_vlr_pair,
    split_by_ratio,
)
from app.services.synth_service import synth_dataset
from app.utils.image_ops import bicubic_matrix, bicubic_resize, load_image, nearest_resize


# =========================
# Remuestreo bicubico
# =========================
def test_bicubic_golden_values():
    """Un pixel encendido en 4x4 bajado a 2x2 (nucleo con a = -0.5)"""
    img = np.zeros((1, 4, 4))
    img[0, 1, 1] = 1.0
    out = bicubic_resize(img, (2, 2))
    r = np.array([0.5625, -0.0625])
    np.testing.assert_allclose(out[0], np.outer(r, r), rtol=0, atol=1e-15)


def test_bicubic_identity_resize_weights():
    np.testing.assert_array_equal(bicubic_matrix(5, 5), np.eye(5))


def test_bicubic_keeps_constant_images(rng):
    value = rng.uniform()
    img = np.full((3, 12, 12), value)
    for size in [(4, 4), (3, 5), (20, 20)]:
        np.testing.assert_allclose(bicubic_resize(img, size), value, rtol=1e-12)


def test_bicubic_round_trip_beats_nearest():
    """Rampa suave 32 -> 8 -> 32: bicubico reconstruye mejor que vecino mas cercano"""
    yy, xx = np.mgrid[0:32, 0:32]
    img = ((xx + yy) / 62.0)[None]
    bicubic = bicubic_resize(bicubic_resize(img, (8, 8)), (32, 32))
    nearest = nearest_resize(nearest_resize(img, (8, 8)), (32, 32))
    assert np.mean((bicubic - img) ** 2) < np.mean((nearest - img) ** 2)


def test_make_vlr_pair(rng):
    hr = rng.uniform(size=(3, 16, 16)).astype(np.float32)
    vlr, target = make_vlr_pair(hr, (4, 4))
    assert vlr.shape == hr.shape and vlr.dtype == hr.dtype
    assert vlr.min() >= 0 and vlr.max() <= 1
    np.testing.assert_array_equal(target, hr)
    flat = np.full((1, 16, 16), 0.25, dtype=np.float32)
    np.testing.assert_allclose(make_vlr_pair(flat, (4, 4))[0], flat, atol=1e-6)


def test_make_vlr_pair_rejects_larger_size(rng):
    with pytest.raises(DataError):
        make_vlr_pair(rng.uniform(size=(1, 8, 8)), (8, 8))


# =========================
# Aumentos
# =========================
def _sample(rng, h=12, w=12):
    img = rng.uniform(size=(3, h, w)).astype(np.float32)
    vlr, hr = make_vlr_pair(img, (3, 3))
    return Sample(input=vlr, hr_target=hr, label=1, resolution_flag=VLR_FLAG, sample_id="x.png")


def test_augment_is_deterministic(rng):
    sample = _sample(rng)
    a = augment(sample, np.random.default_rng(9))
    b = augment(sample, np.random.default_rng(9))
    np.testing.assert_array_equal(a.input, b.input)
    np.testing.assert_array_equal(a.hr_target, b.hr_target)


def test_augment_keeps_pair_aligned(rng):
    """Brillo y espejo aplicados igual a entrada y objetivo"""
    sample = _sample(rng)
    force = {"flip": True, "brightness": 0.1, "crop": False}
    out = augment(sample, np.random.default_rng(0), force=force)
    expected_in = np.clip(sample.input + np.float32(0.1), 0, 1)[:, :, ::-1]
    expected_hr = np.clip(sample.hr_target + np.float32(0.1), 0, 1)[:, :, ::-1]
    np.testing.assert_allclose(out.input, expected_in)
    np.testing.assert_allclose(out.hr_target, expected_hr)
    assert out.label == sample.label and out.resolution_flag == sample.resolution_flag


def test_double_flip_is_identity(rng):
    sample = _sample(rng)
    force = {"flip": True, "brightness": None, "crop": False}
    once = augment(sample, np.random.default_rng(1), force=force)
    twice = augment(once, np.random.default_rng(2), force=force)
    np.testing.assert_array_equal(twice.input, sample.input)
    np.testing.assert_array_equal(twice.hr_target, sample.hr_target)


def test_zero_brightness_is_identity(rng):
    sample = _sample(rng)
    out = augment(sample, np.random.default_rng(3), force={"brightness": 0.0, "flip": False, "crop": False})
    np.testing.assert_array_equal(out.input, sample.input)


def test_crop_preserves_geometry(rng):
    sample = _sample(rng)
    out = augment(sample, np.random.default_rng(4), AugmentParams(crop_fraction=0.75),
                  force={"brightness": None, "flip": False, "crop": True})
    assert out.input.shape == sample.input.shape
    assert out.hr_target.shape == sample.hr_target.shape


# =========================
# Conjunto sintetico y manifiesto
# =========================
def _digest(folder: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(folder.rglob("*.png")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_synth_counts_and_balance(synth_dir):
    manifest = load_manifest(synth_dir / "manifest.yaml")
    assert manifest.num_classes == 3
    train = manifest.split("train")
    test = manifest.split("test")
    assert len(train) == 18 and len(test) == 6
    assert [sum(e.label == c for e in train) for c in range(3)] == [6, 6, 6]
    img = load_image(Path(manifest.root) / train[0].file, manifest.channels)
    assert img.shape == (3, 16, 16)


def test_synth_is_byte_identical(tmp_path):
    synth_dataset(str(tmp_path / "a"), num_classes=2, n_per_class=3, hr_size=(16, 16), vlr_size=(4, 4), seed=11)
    synth_dataset(str(tmp_path / "b"), num_classes=2, n_per_class=3, hr_size=(16, 16), vlr_size=(4, 4), seed=11)
    synth_dataset(str(tmp_path / "c"), num_classes=2, n_per_class=3, hr_size=(16, 16), vlr_size=(4, 4), seed=12)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_synth_rejects_single_class(tmp_path):
    with pytest.raises(DataError):
        synth_dataset(str(tmp_path), num_classes=1, n_per_class=2)


def test_manifest_missing_image_raises(tmp_path):
    manifest = synth_dataset(str(tmp_path), num_classes=2, n_per_class=1, hr_size=(8, 8), vlr_size=(2, 2), seed=0)
    (tmp_path / manifest.entries[0].file).unlink()
    with pytest.raises(DataError):
        load_manifest(tmp_path / "manifest.yaml")


def test_manifest_round_trip(synth_dir, tmp_path):
    manifest = load_manifest(synth_dir / "manifest.yaml")
    save_manifest(manifest, tmp_path / "copy.yaml")
    again = load_manifest(tmp_path / "copy.yaml")
    assert [e.file for e in again.entries] == [e.file for e in manifest.entries]
    assert again.vlr_size == manifest.vlr_size


def test_split_by_ratio_is_stratified(synth_dir):
    entries = load_manifest(synth_dir / "manifest.yaml").entries
    out = split_by_ratio(entries, train_fraction=0.5, seed=0)
    for c in range(3):
        members = [e for e in out if e.label == c]
        assert sum(e.split == "train" for e in members) == len(members) // 2
    with pytest.raises(DataError):
        split_by_ratio(entries, train_fraction=1.0)


# =========================
# Lotes
# =========================
def test_batches_cover_every_view_once(synth_dir):
    dataset = PairedDataset(load_manifest(synth_dir / "manifest.yaml"))
    batches = list(batch_iter(dataset, batch_size=7, mix=BatchMix.BOTH, seed=0, epoch=0))
    sizes = [b.size for b in batches]
    # 18 muestras x 2 vistas, el ultimo lote parcial se conserva
    assert sum(sizes) == 36 and sizes[-1] == 36 % 7
    views = [(sid, int(f)) for b in batches for sid, f in zip(b.sample_ids, b.flags)]
    assert len(set(views)) == 36
    assert sum(b.n_hr for b in batches) == 18


def test_interleaved_views_share_target(synth_dir):
    dataset = PairedDataset(load_manifest(synth_dir / "manifest.yaml"))
    batch = next(batch_iter(dataset, batch_size=4, mix=BatchMix.BOTH, seed=1, epoch=0))
    assert list(batch.flags) == [HR_FLAG, VLR_FLAG, HR_FLAG, VLR_FLAG]
    assert batch.sample_ids[0] == batch.sample_ids[1]
    np.testing.assert_array_equal(batch.hr_targets[0], batch.hr_targets[1])
    np.testing.assert_array_equal(batch.inputs[0], batch.hr_targets[0])


def test_batch_order_is_reproducible(synth_dir):
    manifest = load_manifest(synth_dir / "manifest.yaml")
    params = AugmentParams()
    a = list(batch_iter(PairedDataset(manifest, workers=1), 5, BatchMix.BOTH, 3, 2, augment_params=params))
    b = list(batch_iter(PairedDataset(manifest, workers=4), 5, BatchMix.BOTH, 3, 2, augment_params=params))
    for x, y in zip(a, b):
        assert x.sample_ids == y.sample_ids
        np.testing.assert_array_equal(x.inputs, y.inputs)
    c = list(batch_iter(PairedDataset(manifest), 5, BatchMix.BOTH, 3, 3))
    assert [s for x in a for s in x.sample_ids] != [s for x in c for s in x.sample_ids]


def test_single_view_mixes(synth_dir):
    dataset = PairedDataset(load_manifest(synth_dir / "manifest.yaml"))
    hr = list(batch_iter(dataset, 8, BatchMix.HR))
    vlr = list(batch_iter(dataset, 8, BatchMix.VLR))
    assert all(b.n_vlr == 0 for b in hr)
    assert all(b.n_hr == 0 for b in vlr)
    assert sum(b.size for b in vlr) == 18


def test_empty_split_raises(synth_dir):
    dataset = PairedDataset(load_manifest(synth_dir / "manifest.yaml"))
    with pytest.raises(DataError):
        next(batch_iter(dataset, 4, split="validation"))


def test_pairing_and_augment_coupling_on_many_samples():
    """1000 muestras: entrada y objetivo reciben exactamente la misma transformacion"""
    rng = np.random.default_rng(2024)
    for i in range(1000):
        hr = rng.uniform(size=(1, 8, 8)).astype(np.float32)
        vlr, target = make_vlr_pair(hr, (2, 2))
        np.testing.assert_array_equal(target, hr)
        sample = Sample(input=target.copy(), hr_target=target, label=0, resolution_flag=HR_FLAG, sample_id=str(i))
        out = augment(sample, np.random.default_rng([7, i]))
        # con la vista HR la entrada es el objetivo: el aumento debe conservar la igualdad
        np.testing.assert_array_equal(out.input, out.hr_target)
