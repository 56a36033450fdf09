"""Degradation operator and dataset alignment checks."""

import numpy as np
import pytest

from qad.errors import InvalidConfigError, InvalidInputError
from qad.quality import (
    DEFAULT_MODALITIES,
    MultiQualityBatch,
    QualityModality,
    SynthTaskConfig,
    batches,
    degrade,
    generate_dataset,
    load_dataset,
    save_dataset,
    validate_modalities,
)
from qad.util import rng


def test_degrade_level_zero_is_identity_bit_exact():
    x = rng(0).uniform(0, 24, (3, 1, 16, 16)).astype(np.float32)
    out = degrade(x, 0.0)
    assert np.array_equal(out, x)
    assert out is not x


def test_degrade_constant_image_stays_constant():
    for q in (0.5, 1.0, 4.0, 9.0):
        x = np.full((1, 16, 16), 11.3)
        out = degrade(x, q)
        assert np.allclose(out, out.reshape(-1)[0])
        assert abs(out.reshape(-1)[0] - 11.3) <= q / 2 / np.sqrt(64) + 1e-9


def test_degrade_distortion_grows_with_level():
    x = rng(1).uniform(0, 24, (16, 1, 16, 16))
    mse1 = np.mean((degrade(x, 1.0) - x) ** 2)
    mse4 = np.mean((degrade(x, 4.0) - x) ** 2)
    assert mse4 > mse1 > 0


def test_degrade_monotone_distortion_over_grid():
    x = rng(2).uniform(0, 24, (8, 1, 16, 16))
    mses = [np.mean((degrade(x, q) - x) ** 2) for q in (0.0, 0.5, 1.0, 2.0, 4.0, 6.0, 10.0)]
    assert all(a <= b + 1e-12 for a, b in zip(mses, mses[1:]))


def test_degrade_deterministic_and_shape_checked():
    x = rng(3).uniform(0, 24, (2, 1, 16, 16)).astype(np.float32)
    assert np.array_equal(degrade(x, 3.0), degrade(x, 3.0))
    with pytest.raises(InvalidInputError):
        degrade(np.zeros((1, 12, 12)), 2.0)
    with pytest.raises(InvalidInputError):
        degrade(x, -1.0)


def test_degrade_kills_high_frequency_before_low():
    size = 16
    u = np.arange(size)[:, None] * np.ones((1, size))
    lowf = 10 + 3 * np.cos(2 * np.pi * 0.06 * u)
    highf = 10 + 3 * np.cos(2 * np.pi * 0.25 * u)
    q = 6.0
    low_loss = np.mean((degrade(lowf, q) - lowf) ** 2) / np.mean((lowf - lowf.mean()) ** 2)
    high_loss = np.mean((degrade(highf, q) - highf) ** 2) / np.mean((highf - highf.mean()) ** 2)
    assert high_loss > 5 * low_loss


def test_modalities_validation():
    mods = validate_modalities([0, 2, 6])
    assert [m.name for m in mods] == ["raw", "c2", "c6"]
    with pytest.raises(InvalidConfigError):
        validate_modalities([0, 6, 2])
    with pytest.raises(InvalidConfigError):
        validate_modalities([0, 2, 2])
    with pytest.raises(InvalidConfigError):
        QualityModality(-1)


def test_generate_dataset_deterministic():
    cfg = SynthTaskConfig(n_train=32, n_val=16, n_test=16, seed=9)
    a = generate_dataset(cfg)
    b = generate_dataset(cfg)
    for split in a.splits:
        for name in a.splits[split].images:
            assert np.array_equal(a.splits[split].images[name], b.splits[split].images[name])
        assert np.array_equal(a.splits[split].labels, b.splits[split].labels)


def test_generate_dataset_raw_only():
    cfg = SynthTaskConfig(n_train=16, n_val=8, n_test=8, seed=1)
    ds = generate_dataset(cfg, modalities=[QualityModality(0.0)])
    assert list(ds.splits["train"].images) == ["raw"]
    assert ds.distortion["train"]["raw"] == 0.0


def test_modality_alignment_bit_exact():
    cfg = SynthTaskConfig(n_train=24, n_val=8, n_test=8, seed=5)
    ds = generate_dataset(cfg)
    for split in ("train", "test"):
        sp = ds.splits[split]
        raw = sp.images["raw"]
        for mod in ds.modalities:
            again = degrade(raw, mod.level, clip=cfg.value_range)
            assert np.array_equal(again, sp.images[mod.name])


def test_distortion_stats_ordered_by_level():
    cfg = SynthTaskConfig(n_train=32, n_val=8, n_test=8, seed=2)
    ds = generate_dataset(cfg)
    d = ds.distortion["train"]
    assert d["raw"] == 0.0
    assert d["c6"] > d["c2"] > 0.0


def test_batches_cover_every_sample_once():
    cfg = SynthTaskConfig(n_train=40, n_val=8, n_test=8, seed=3)
    ds = generate_dataset(cfg)
    seen = []
    for batch in batches(ds.splits["train"], 16, seed=7):
        assert isinstance(batch, MultiQualityBatch)
        assert set(batch.images) == {"raw", "c2", "c6"}
        seen.extend(batch.sample_ids.tolist())
    assert sorted(seen) == ds.splits["train"].sample_ids.tolist()


def test_batches_same_seed_same_sequence():
    cfg = SynthTaskConfig(n_train=32, n_val=8, n_test=8, seed=4)
    ds = generate_dataset(cfg)
    ids1 = [b.sample_ids.tolist() for b in batches(ds.splits["train"], 8, seed=11)]
    ids2 = [b.sample_ids.tolist() for b in batches(ds.splits["train"], 8, seed=11)]
    ids3 = [b.sample_ids.tolist() for b in batches(ds.splits["train"], 8, seed=12)]
    assert ids1 == ids2
    assert ids1 != ids3


def test_single_batch_contains_everything():
    cfg = SynthTaskConfig(n_train=16, n_val=8, n_test=8, seed=6)
    ds = generate_dataset(cfg)
    got = list(batches(ds.splits["train"], 16, seed=0, shuffle=False))
    assert len(got) == 1
    assert np.array_equal(got[0].sample_ids, ds.splits["train"].sample_ids)
    with pytest.raises(InvalidInputError):
        next(batches(ds.splits["train"], 17, seed=0))


def test_dataset_round_trips_through_directory(tmp_path):
    cfg = SynthTaskConfig(n_train=16, n_val=8, n_test=8, seed=8)
    ds = generate_dataset(cfg)
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.config == cfg
    assert back.modalities == ds.modalities
    for split in ds.splits:
        for name in ds.splits[split].images:
            assert np.array_equal(back.splits[split].images[name], ds.splits[split].images[name])
        assert np.array_equal(back.splits[split].labels, ds.splits[split].labels)
        assert np.array_equal(back.splits[split].sample_ids, ds.splits[split].sample_ids)
    assert back.distortion == ds.distortion


def test_labels_roughly_balanced():
    cfg = SynthTaskConfig(n_train=512, n_val=8, n_test=8, seed=10)
    ds = generate_dataset(cfg)
    frac = ds.splits["train"].labels.mean()
    assert 0.4 < frac < 0.6
