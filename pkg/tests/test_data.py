import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hahi.data import (BlockAtlas, ContainerError, DatasetManifest, ManifestRow, TensorContainer,
                       read_manifest, read_tensor, split_dataset, write_manifest, write_tensor)
from hahi.features import pearson_fc
from hahi.synthetic import SyntheticConfig, generate_synthetic_cohort, iter_subjects, target_correlation

from conftest import tiny_cohort_config


def test_container_round_trip(tmp_path):
    t = TensorContainer([2, 2], np.array([1, 2, 3, 4], dtype=np.float32), {"modality": "x"})
    write_tensor(t, tmp_path / "c")
    back = read_tensor(tmp_path / "c")
    assert back.shape == [2, 2]
    assert back.meta == {"modality": "x"}
    assert np.array_equal(back.payload, t.payload)
    meta = json.loads((tmp_path / "c" / "meta.json").read_text())
    assert meta["dtype"] == "f32le" and meta["layout"] == "row-major"
    assert (tmp_path / "c" / "data.bin").stat().st_size == 16


def test_single_scalar_container(tmp_path):
    write_tensor(TensorContainer([1], np.zeros(1, np.float32)), tmp_path / "c")
    assert read_tensor(tmp_path / "c").to_array().tolist() == [0.0]


def test_shape_payload_mismatch(tmp_path):
    with pytest.raises(ContainerError, match="payload/shape mismatch"):
        write_tensor(TensorContainer([3, 2], np.zeros(5, np.float32)), tmp_path / "c")


@pytest.mark.parametrize("shape", [[], [0], [2, -1]])
def test_bad_shapes_rejected(tmp_path, shape):
    with pytest.raises(ContainerError):
        write_tensor(TensorContainer(shape, np.zeros(1, np.float32)), tmp_path / "c")


def test_truncated_payload(tmp_path):
    write_tensor(TensorContainer([2, 2], np.arange(4, dtype=np.float32)), tmp_path / "c")
    raw = (tmp_path / "c" / "data.bin").read_bytes()
    (tmp_path / "c" / "data.bin").write_bytes(raw[:-4])
    with pytest.raises(ContainerError, match="truncated payload"):
        read_tensor(tmp_path / "c")


def test_unsupported_dtype(tmp_path):
    write_tensor(TensorContainer([2], np.arange(2, dtype=np.float32)), tmp_path / "c")
    meta = json.loads((tmp_path / "c" / "meta.json").read_text())
    meta["dtype"] = "f64le"
    (tmp_path / "c" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ContainerError, match="unsupported dtype"):
        read_tensor(tmp_path / "c")


def test_missing_files(tmp_path):
    with pytest.raises(ContainerError, match="missing"):
        read_tensor(tmp_path / "nothing")


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=5, max_side=4),
                  elements=st.floats(width=32, allow_nan=True, allow_infinity=True)))
def test_round_trip_bit_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("c") / "t"
    write_tensor(TensorContainer.from_array(arr, seed=1), path)
    back = read_tensor(path).to_array()
    assert back.shape == arr.shape
    assert back.tobytes() == arr.astype("<f4").tobytes()


def test_regular_atlas_partition():
    atlas = BlockAtlas.regular((32, 32, 32), (4, 4, 2))
    assert atlas.n_rois == 32
    cover = sum(atlas.mask(k).astype(int) for k in range(atlas.n_rois))
    assert cover.min() == 1 and cover.max() == 1
    assert atlas.blocks[0] == (0, 8, 0, 8, 0, 16)


def test_overlapping_atlas_rejected():
    with pytest.raises(ValueError, match="overlaps"):
        BlockAtlas((4, 4, 4), ((0, 2, 0, 2, 0, 2), (1, 3, 0, 2, 0, 2)))


def _manifest(n_per_class, n_classes=2):
    rows = [ManifestRow(f"s{c}_{i}", c, {"ts": "x", "fa": "y"})
            for c in range(n_classes) for i in range(n_per_class)]
    return DatasetManifest(rows, {"class_names": [str(c) for c in range(n_classes)]})


def test_manifest_validation():
    with pytest.raises(ValueError, match="duplicate"):
        DatasetManifest([ManifestRow("a", 0, {}), ManifestRow("a", 1, {})], {"class_names": ["x", "y"]})
    with pytest.raises(ValueError, match="label"):
        DatasetManifest([ManifestRow("a", 2, {})], {"class_names": ["x", "y"]})


def test_manifest_csv_round_trip(tmp_path):
    m = _manifest(3)
    write_manifest(m, tmp_path / "manifest.csv")
    header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
    assert header == "subject_id,label,ts_path,fa_path"
    back = read_manifest(tmp_path / "manifest.csv")
    assert back.subject_ids == m.subject_ids
    assert back.labels.tolist() == m.labels.tolist()
    assert back.rows[0].paths == {"ts": "x", "fa": "y"}


def test_split_ratio_40_subjects():
    tr, va, te = split_dataset(_manifest(20), fold=0, n_folds=10, seed=0)
    assert (len(tr.rows), len(va.rows), len(te.rows)) == (32, 4, 4)
    # stratified
    assert sorted(te.labels.tolist()) == [0, 0, 1, 1]


@pytest.mark.parametrize("fold", range(10))
def test_split_partition_and_determinism(fold):
    m = _manifest(20)
    parts = split_dataset(m, fold, 10, seed=5)
    ids = [set(p.subject_ids) for p in parts]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set.union(*ids) == set(m.subject_ids)
    again = split_dataset(m, fold, 10, seed=5)
    assert [p.subject_ids for p in parts] == [p.subject_ids for p in again]


def test_test_blocks_rotate_over_folds():
    m = _manifest(20)
    tests = [set(split_dataset(m, f, 10, 1)[2].subject_ids) for f in range(10)]
    assert set.union(*tests) == set(m.subject_ids)
    assert sum(len(t) for t in tests) == 40


def test_split_too_few_subjects():
    with pytest.raises(ValueError, match="too few"):
        split_dataset(_manifest(4), 0, 10, 0)


def test_synthetic_config_validation():
    with pytest.raises(ValueError, match="planted"):
        SyntheticConfig(planted_rois=[40])
    with pytest.raises(ValueError, match="finite"):
        SyntheticConfig(connectivity_delta=[0.0, float("nan")])
    with pytest.raises(ValueError, match="unknown"):
        SyntheticConfig.from_dict({"bogus": 1})


def test_target_correlation_is_positive_definite():
    cfg = SyntheticConfig(connectivity_delta=[0.0, 2.0])
    c = target_correlation(cfg, 1)
    assert np.linalg.eigvalsh(c).min() > 0
    assert np.allclose(np.diag(c), 1.0)


def test_synthetic_cohort_is_deterministic(tmp_path):
    cfg = tiny_cohort_config(seed=7)
    a = generate_synthetic_cohort(cfg, tmp_path / "a")
    b = generate_synthetic_cohort(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
    for ra, rb in zip(a.rows, b.rows):
        for key in ("ts", "fa"):
            assert (a.resolve(ra, key) / "data.bin").read_bytes() == (b.resolve(rb, key) / "data.bin").read_bytes()
    assert len(a.rows) == 20
    a.check_paths()


def _block_fc_by_class(cfg):
    idx = np.asarray(cfg.planted_rois)
    iu = np.triu_indices(len(idx), 1)
    vals = {c: [] for c in range(cfg.n_classes)}
    for _, c, ts, _ in iter_subjects(cfg):
        vals[c].append(pearson_fc(ts)[np.ix_(idx, idx)][iu].mean())
    return {c: np.array(v) for c, v in vals.items()}


def test_null_effect_has_no_block_difference():
    cfg = SyntheticConfig(n_subjects_per_class=50, connectivity_delta=[0.0, 0.0],
                          regional_delta=[0.0, 0.0], seed=11)
    v = _block_fc_by_class(cfg)
    se = np.sqrt(v[0].var(ddof=1) / 50 + v[1].var(ddof=1) / 50)
    assert abs(v[1].mean() - v[0].mean()) < 3 * se


def test_planted_connectivity_effect_survives():
    # measured gain is ~0.29 for a 0.3 delta; 0.15 is the floor
    cfg = SyntheticConfig(n_subjects_per_class=50, connectivity_delta=[0.0, 0.3], seed=11)
    v = _block_fc_by_class(cfg)
    assert v[1].mean() - v[0].mean() >= 0.15


def test_planted_regional_effect():
    cfg = tiny_cohort_config(regional_delta=[0.0, 1.0], noise_level=0.5)
    atlas = cfg.atlas
    means = {0: [], 1: []}
    for _, c, _, fa in iter_subjects(cfg):
        means[c].append(atlas.block_means(fa)[cfg.planted_rois].mean())
    assert np.mean(means[1]) - np.mean(means[0]) == pytest.approx(1.0, abs=0.1)
