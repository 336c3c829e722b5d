import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggmatch import data
from aggmatch.errors import ParameterError, ParseError
from aggmatch.trainer import TrainConfig, Trainer, predict


def test_load_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("label,f0,f1\n0,0.1,0.2\n1,0.3,0.4\n")
    ds = data.load(path)
    assert len(ds) == 2 and ds.dim == 2 and ds.num_classes == 2
    np.testing.assert_array_equal(ds.instances, [[0.1, 0.2], [0.3, 0.4]])


def test_load_empty_csv(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_bytes(b"")
    with pytest.raises(ParseError) as err:
        data.load(path)
    assert err.value.offset == 0


def test_csv_error_reports_byte_offset(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0\n0,1.5\n1,oops\n")
    with pytest.raises(ParseError) as err:
        data.load(path)
    assert err.value.offset == len("label,f0\n0,1.5\n")
    assert "byte offset" in str(err.value)


def test_load_idx(tmp_path):
    images = np.arange(10 * 28 * 28, dtype=np.uint8).reshape(10, 28, 28)
    img_path, lab_path = tmp_path / "x.idx", tmp_path / "y.idx"
    data.write_idx(img_path, images)
    data.write_idx(lab_path, np.arange(10, dtype=np.uint8) % 3)
    assert img_path.read_bytes()[:4] == struct.pack(">I", 0x00000803)
    ds = data.load(img_path, "idx", lab_path)
    assert ds.instances.shape == (10, 784)
    assert ds.grid_shape == (28, 28)
    assert ds.num_classes == 3
    np.testing.assert_allclose(ds.instances[0, :3], np.array([0, 1, 2]) / 255.0)


def test_idx_bad_magic():
    with pytest.raises(ParseError):
        data.parse_idx(b"\x01\x00\x08\x01\x00\x00\x00\x00")


def test_csv_roundtrip(tmp_path):
    ds = data.synth("blobs", 20, 3, 0.5, seed=1, dim=4)
    data.write_csv(tmp_path / "rt.csv", ds)
    back = data.load(tmp_path / "rt.csv")
    assert np.array_equal(back.instances, ds.instances) and np.array_equal(back.labels, ds.labels)


def test_blobs_without_noise_sit_on_centers():
    ds = data.synth("blobs", 40, 4, 0.0, seed=3, dim=5)
    for c in range(4):
        pts = ds.instances[ds.labels == c]
        assert np.all(pts == pts[0])
    assert len({tuple(ds.instances[ds.labels == c][0]) for c in range(4)}) == 4


def test_synth_is_deterministic():
    a = data.synth("moons", 100, 2, 0.1, seed=5)
    b = data.synth("moons", 100, 2, 0.1, seed=5)
    assert np.array_equal(a.instances, b.instances) and np.array_equal(a.labels, b.labels)


def test_moons_are_separable_under_full_supervision():
    ds = data.synth("moons", 2000, 2, 0.1, seed=0)
    labeled, unlabeled = data.split(ds, data.SplitSpec(labels_per_class=1000))
    assert len(unlabeled) == 0
    cfg = TrainConfig(method="supervised", iterations=1500, batch_size=64, lr=0.1, seed=0)
    trainer = Trainer(cfg, labeled, unlabeled, data.AugmentationSpec(sigma_weak=0.0, sigma_strong=0.0, dropout=0.0), hidden=32, feature_dim=16)
    for _ in range(cfg.iterations):
        trainer.step()
    _, probs = predict(trainer.state.params, ds.instances)
    assert np.mean(np.argmax(probs, axis=1) == ds.labels) > 0.95


def test_split_examples():
    ds = data.synth("blobs", 500, 10, 1.0, seed=0, dim=3)
    labeled, unlabeled = data.split(ds, data.SplitSpec(labels_per_class=4, seed=2))
    assert len(labeled) == 40
    assert np.bincount(labeled.labels, minlength=10).tolist() == [4] * 10
    assert len(unlabeled) == 460

    small = data.synth("blobs", 40, 4, 1.0, seed=0, dim=3)
    labeled, unlabeled = data.split(small, data.SplitSpec(labels_per_class=10))
    assert len(labeled) == 40 and len(unlabeled) == 0


@given(st.integers(0, 2**31), st.integers(1, 5))
def test_split_is_partition(seed, lpc):
    ds = data.synth("blobs", 60, 3, 1.0, seed=seed % 100, dim=2)
    labeled, unlabeled = data.split(ds, data.SplitSpec(labels_per_class=lpc, seed=seed))
    rows = [tuple(r) for r in np.concatenate([labeled.instances, unlabeled.instances])]
    assert sorted(rows) == sorted(tuple(r) for r in ds.instances)
    assert len(labeled) + len(unlabeled) == len(ds)


def _labeled(labels, num_classes=4):
    labels = np.asarray(labels)
    x = np.arange(len(labels) * 2, dtype=np.float64).reshape(-1, 2)
    return data.LabeledSet(x, labels, num_classes, labels.copy())


def test_noise_examples():
    lab = _labeled([0, 1, 2, 3] * 5)
    same = data.inject_noise(lab, data.NoiseSpec({0: 1}, 0.0, 0))
    assert np.array_equal(same.labels, lab.labels)
    flipped = data.inject_noise(lab, data.NoiseSpec({0: 1}, 1.0, 0))
    assert np.all(flipped.labels[lab.labels == 0] == 1)
    assert np.array_equal(flipped.labels[lab.labels != 0], lab.labels[lab.labels != 0])


def test_noise_half_rate_is_reproducible():
    lab = _labeled(np.arange(250) % 10, 10)
    spec = data.NoiseSpec({c: (c + 1) % 10 for c in range(10)}, 0.5, seed=11)
    a, b = data.inject_noise(lab, spec), data.inject_noise(lab, spec)
    assert np.array_equal(a.labels, b.labels)
    frac = np.mean(a.labels != lab.labels)
    assert 0.35 < frac < 0.65


@given(st.lists(st.integers(0, 3), min_size=1, max_size=40), st.floats(0, 1), st.integers(0, 2**31))
def test_noise_touches_only_mapped_labels(labels, rate, seed):
    lab = _labeled(labels)
    out = data.inject_noise(lab, data.NoiseSpec({0: 1, 1: 0}, rate, seed))
    assert np.array_equal(out.instances, lab.instances)
    changed = out.labels != lab.labels
    assert np.all(np.isin(lab.labels[changed], [0, 1]))
    assert np.all(out.labels[changed] == 1 - lab.labels[changed])


def test_noise_spec_rejects_identity_mapping():
    with pytest.raises(ParameterError):
        data.NoiseSpec({2: 2}, 0.5)


def test_augment_examples():
    x = np.arange(8, dtype=np.float64) + 1
    spec = data.AugmentationSpec(sigma_weak=0.0, sigma_strong=0.0, dropout=0.25)
    assert np.array_equal(data.augment(x, spec, "weak", np.random.default_rng(0)), x)
    strong = data.augment(x, spec, "strong", np.random.default_rng(0))
    assert np.sum(strong == 0) == 2
    a = data.augment(x, data.AugmentationSpec(), "strong", np.random.default_rng(9))
    b = data.augment(x, data.AugmentationSpec(), "strong", np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_grid_augmentation_keeps_shape_and_range():
    spec = data.AugmentationSpec(grid_shape=(6, 6), cutout=2, shift=1)
    x = np.random.default_rng(0).random((3, 36))
    out = data.augment_batch(x, spec, "strong", np.random.default_rng(1))
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1


def _stream(mu, batch_size, seed):
    ds = data.synth("blobs", 600, 4, 1.0, seed=0, dim=3)
    labeled, unlabeled = data.split(ds, data.SplitSpec(labels_per_class=5))
    spec = data.SplitSpec(labels_per_class=5, batch_size=batch_size, mu=mu)
    return data.BatchStream(labeled, unlabeled, spec, data.AugmentationSpec(), np.random.default_rng(seed))


def test_batch_sizes():
    lb, ub = data.next_batches(_stream(7, 64, 0))
    assert len(lb.labels) == 64 and lb.weak.shape == (64, 3)
    assert ub.weak.shape == (448, 3) and ub.strong.shape == (448, 3)
    _, ub = data.next_batches(_stream(0, 16, 0))
    assert len(ub.weak) == 0


def test_batch_streams_are_deterministic():
    s1, s2 = _stream(3, 8, 4), _stream(3, 8, 4)
    for _ in range(5):
        (l1, u1), (l2, u2) = s1.next_batches(), s2.next_batches()
        assert np.array_equal(l1.weak, l2.weak) and np.array_equal(l1.labels, l2.labels)
        assert np.array_equal(u1.strong, u2.strong)


def test_labeled_stream_ignores_unlabeled_draws():
    s1, s2 = _stream(3, 8, 4), _stream(3, 8, 4)
    for _ in range(4):
        a = s1.next_labeled()
        s2.next_unlabeled()
        b = s2.next_labeled()
        assert np.array_equal(a.weak, b.weak)
