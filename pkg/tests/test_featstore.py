import struct

import numpy as np
import pytest

from couq.errors import (
    DataError,
    DimensionError,
    FormatError,
    InsufficientDataError,
    ScheduleError,
)
from couq.featstore import (
    FeatureSet,
    SyntheticSpec,
    build_task_stream,
    gen_synthetic,
    load_features,
    save_features,
)


def small_fs(dim=4, n=6):
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(n, dim)).astype(np.float32)
    labels = np.arange(n, dtype=np.int32) % 2
    return FeatureSet(dim, vectors, np.arange(n, dtype=np.uint64), labels)


def test_binary_round_trip_exact(tmp_path):
    fs = small_fs()
    path = tmp_path / "a.feat"
    save_features(fs, str(path))
    loaded = load_features(str(path))
    assert loaded.dim == fs.dim
    assert np.array_equal(loaded.vectors, fs.vectors)
    assert np.array_equal(loaded.ids, fs.ids)
    assert np.array_equal(loaded.labels, fs.labels)
    assert loaded.class_index == fs.class_index


def test_round_trip_bytes_identical_10k(tmp_path):
    spec = SyntheticSpec(n_classes=10, dim=16, per_class=1000,
                         cluster_spread=1.0, center_spread=5.0)
    fs = gen_synthetic(spec, seed=42)
    p1 = tmp_path / "one.feat"
    p2 = tmp_path / "two.feat"
    save_features(fs, str(p1))
    save_features(load_features(str(p1)), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.feat"
    path.write_bytes(b"NOPE!\x00" + b"\x00" * 32)
    with pytest.raises(FormatError):
        load_features(str(path))


def test_trailing_bytes_rejected(tmp_path):
    fs = small_fs()
    path = tmp_path / "a.feat"
    save_features(fs, str(path))
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(FormatError):
        load_features(str(path))


def test_nonfinite_value_names_record(tmp_path):
    fs = small_fs()
    path = tmp_path / "a.feat"
    save_features(fs, str(path))
    raw = bytearray(path.read_bytes())
    # First float of record index 2 (id 2): header is 6 + 17 bytes.
    off = 6 + 17 + 2 * fs.dim * 4
    raw[off : off + 4] = struct.pack("<f", float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="id 2"):
        load_features(str(path))


def test_duplicate_ids_rejected():
    with pytest.raises(DataError, match="duplicate"):
        FeatureSet(
            2,
            np.zeros((2, 2), dtype=np.float32),
            np.asarray([7, 7], dtype=np.uint64),
            np.asarray([0, 1], dtype=np.int32),
        )


def test_csv_round_trip(tmp_path):
    fs = small_fs()
    path = tmp_path / "a.csv"
    save_features(fs, str(path), format="csv")
    loaded = load_features(str(path), format="csv")
    assert np.array_equal(loaded.vectors, fs.vectors)
    assert np.array_equal(loaded.ids, fs.ids)
    assert np.array_equal(loaded.labels, fs.labels)


def test_csv_row_length_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,class,f0,f1,f2,f3\n0,1,0.0,0.0,0.0\n")
    with pytest.raises(DimensionError):
        load_features(str(path), format="csv")


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,label,f0\n0,1,0.0\n")
    with pytest.raises(FormatError):
        load_features(str(path), format="csv")


def test_gen_synthetic_counts_and_classes():
    spec = SyntheticSpec(2, 8, 100, 0.5, 5.0)
    fs = gen_synthetic(spec, seed=1)
    assert len(fs) == 200
    assert fs.classes() == [0, 1]
    assert all(len(ids) == 100 for ids in fs.class_index.values())


def test_gen_synthetic_zero_spread_collapses_to_center():
    spec = SyntheticSpec(2, 4, 10, 0.0, 5.0)
    fs = gen_synthetic(spec, seed=3)
    for cls, ids in fs.class_index.items():
        block = fs.vectors_of(ids)
        assert np.all(block == block[0])


def test_gen_synthetic_deterministic():
    spec = SyntheticSpec(3, 8, 50, 1.0, 4.0)
    a = gen_synthetic(spec, seed=9)
    b = gen_synthetic(spec, seed=9)
    assert np.array_equal(a.vectors, b.vectors)
    assert np.array_equal(a.ids, b.ids)


def test_gen_synthetic_class_means_near_centers():
    # Law-of-large-numbers check at the stated instance: per-coordinate
    # sample means stay within 0.2 of the true (recomputed) class centers.
    spec = SyntheticSpec(4, 16, 250, 1.0, 10.0)
    fs = gen_synthetic(spec, seed=3)
    from couq.rng import substream

    rng = substream(3, "synthetic")
    centers = rng.uniform(
        -spec.center_spread, spec.center_spread, size=(spec.n_classes, spec.dim)
    )
    for cls in range(4):
        block = fs.vectors_of(fs.class_index[cls]).astype(np.float64)
        assert np.abs(block.mean(axis=0) - centers[cls]).max() < 0.2


STREAM_KW = dict(mix_ratio=2.0, holdout_frac=0.7, test_frac=0.1, seed=7)


def six_class_fs():
    return gen_synthetic(SyntheticSpec(6, 8, 300, 1.0, 6.0), seed=11)


def test_stream_mix_ratio_within_one_per_class():
    fs = six_class_fs()
    stream = build_task_stream(fs, [{0, 1}, {2, 3}, {4, 5}], **STREAM_KW)
    for task in stream.tasks:
        new = sum(1 for rid in task.unlabeled_pool if fs.class_of(rid) in task.new_classes)
        old = len(task.unlabeled_pool) - new
        assert abs(old - 2.0 * new) <= len(task.new_classes)
        # Test pool keeps the same ratio.
        tnew = sum(1 for rid in task.test_pool if fs.class_of(rid) in task.new_classes)
        told = len(task.test_pool) - tnew
        assert abs(told - 2.0 * tnew) <= len(task.new_classes)


def test_stream_deterministic():
    fs = six_class_fs()
    a = build_task_stream(fs, [{0, 1}, {2, 3}, {4, 5}], **STREAM_KW)
    b = build_task_stream(fs, [{0, 1}, {2, 3}, {4, 5}], **STREAM_KW)
    assert a == b


def test_stream_repeated_class_rejected():
    fs = six_class_fs()
    with pytest.raises(ScheduleError):
        build_task_stream(fs, [{0, 1}, {0, 2}], **STREAM_KW)


def test_stream_unknown_class_rejected():
    fs = six_class_fs()
    with pytest.raises(ScheduleError):
        build_task_stream(fs, [{0, 1}, {2, 99}], **STREAM_KW)


def test_stream_pools_disjoint_from_tests():
    fs = six_class_fs()
    stream = build_task_stream(fs, [{0, 1}, {2, 3}, {4, 5}], **STREAM_KW)
    train = set(stream.initial_labeled)
    for task in stream.tasks:
        train |= set(task.unlabeled_pool)
    tests = set(stream.initial_test)
    for task in stream.tasks:
        tests |= set(task.test_pool)
    assert not train & tests


def test_stream_old_pool_from_earlier_classes_only():
    fs = six_class_fs()
    stream = build_task_stream(fs, [{0, 1}, {2, 3}, {4, 5}], **STREAM_KW)
    introduced = set(stream.initial_classes)
    for task in stream.tasks:
        for rid in task.unlabeled_pool:
            cls = fs.class_of(rid)
            assert cls in introduced or cls in task.new_classes
        introduced |= set(task.new_classes)


def test_stream_unlabeled_pools_disjoint_across_tasks():
    fs = six_class_fs()
    stream = build_task_stream(fs, [{0, 1}, {2, 3}, {4, 5}], **STREAM_KW)
    seen: set[int] = set(stream.initial_labeled)
    for task in stream.tasks:
        pool = set(task.unlabeled_pool)
        assert not pool & seen
        seen |= pool


def test_stream_holdout_exhaustion_raises():
    fs = six_class_fs()
    with pytest.raises(InsufficientDataError):
        build_task_stream(
            fs, [{0}, {1}, {2}, {3}, {4}, {5}],
            mix_ratio=2.0, holdout_frac=0.2, test_frac=0.1, seed=7,
        )


def test_stream_small_fractions_reject_tiny_classes():
    fs = gen_synthetic(SyntheticSpec(2, 4, 3, 1.0, 4.0), seed=0)
    with pytest.raises(InsufficientDataError):
        build_task_stream(fs, [{0}, {1}], mix_ratio=1.0,
                          holdout_frac=0.67, test_frac=0.34, seed=1)
