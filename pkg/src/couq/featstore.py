"""Feature storage, task-stream construction, and synthetic data generation.

Feature sets are column-oriented internally (one (N, D) float32 matrix plus
id/label arrays) so scoring code can operate on whole pools at once; the
record-level view is materialized on demand.

Binary feature format (extension ``.feat``), all fields little-endian:

    magic   6 bytes  ``FEAT1\\0``
    version u32      (=1)
    dim     u32      D
    count   u64      N
    flag    u8       1 if class labels present, else 0
    vectors N * D    f32
    labels  N        i32   (only when flag=1)
    ids     N        u64

CSV alternative: header ``id,class,f0,...,f{D-1}``; a negative class id
marks an unlabeled record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    DimensionError,
    FormatError,
    InsufficientDataError,
    ScheduleError,
)
from .rng import substream

_MAGIC = b"FEAT1\x00"
_VERSION = 1
_HEADER = struct.Struct("<IIQB")  # version, dim, count, flag


@dataclass(frozen=True)
class FeatureRecord:
    """One sample: id, feature vector, and (hidden) ground-truth class."""

    id: int
    vector: np.ndarray
    true_class: int | None


class FeatureSet:
    """Immutable collection of feature records of a common dimension."""

    def __init__(
        self,
        dim: int,
        vectors: np.ndarray,
        ids: np.ndarray,
        labels: np.ndarray | None,
    ):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] != dim:
            raise DimensionError(
                f"vector matrix has shape {vectors.shape}, expected (*, {dim})"
            )
        ids = np.ascontiguousarray(ids, dtype=np.uint64)
        if ids.shape[0] != vectors.shape[0]:
            raise DataError("id count does not match record count")
        bad = ~np.isfinite(vectors).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite value in record id {int(ids[np.argmax(bad)])}")
        if len(np.unique(ids)) != len(ids):
            seen: set[int] = set()
            for rid in ids.tolist():
                if rid in seen:
                    raise DataError(f"duplicate record id {rid}")
                seen.add(rid)
        if labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.int32)
            if labels.shape[0] != vectors.shape[0]:
                raise DataError("label count does not match record count")

        self.dim = int(dim)
        self.vectors = vectors
        self.ids = ids
        self.labels = labels
        self._index = {int(rid): i for i, rid in enumerate(ids.tolist())}

        self.class_index: dict[int, list[int]] = {}
        if labels is not None:
            for rid, cls in zip(ids.tolist(), labels.tolist()):
                if cls >= 0:
                    self.class_index.setdefault(cls, []).append(rid)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def records(self) -> list[FeatureRecord]:
        return [self.record(i) for i in range(len(self))]

    def record(self, index: int) -> FeatureRecord:
        cls = None
        if self.labels is not None and self.labels[index] >= 0:
            cls = int(self.labels[index])
        return FeatureRecord(int(self.ids[index]), self.vectors[index], cls)

    def vector_of(self, record_id: int) -> np.ndarray:
        return self.vectors[self._index[record_id]]

    def vectors_of(self, record_ids) -> np.ndarray:
        idx = [self._index[int(r)] for r in record_ids]
        return self.vectors[idx]

    def class_of(self, record_id: int) -> int:
        """Ground truth; callable only by the oracle and the evaluator."""
        if self.labels is None:
            raise DataError("feature set carries no labels")
        return int(self.labels[self._index[record_id]])

    def classes(self) -> list[int]:
        return sorted(self.class_index)


def load_features(path: str, format: str = "binary") -> FeatureSet:
    """Read a feature file; see the module docstring for the layouts."""
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise FormatError(f"unknown feature format {format!r}")


def save_features(fs: FeatureSet, path: str, format: str = "binary") -> None:
    """Write ``fs`` so that a subsequent load reproduces it exactly."""
    if format == "binary":
        _save_binary(fs, path)
    elif format == "csv":
        _save_csv(fs, path)
    else:
        raise FormatError(f"unknown feature format {format!r}")


def _load_binary(path: str) -> FeatureSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    off = len(_MAGIC)
    try:
        version, dim, count, flag = _HEADER.unpack_from(data, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    off += _HEADER.size
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if flag not in (0, 1):
        raise FormatError(f"{path}: bad label flag {flag}")

    need = count * dim * 4 + (count * 4 if flag else 0) + count * 8
    if len(data) - off != need:
        raise FormatError(
            f"{path}: payload is {len(data) - off} bytes, expected {need}"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
    vectors = vectors.reshape(count, dim)
    off += count * dim * 4
    labels = None
    if flag:
        labels = np.frombuffer(data, dtype="<i4", count=count, offset=off)
        off += count * 4
    ids = np.frombuffer(data, dtype="<u8", count=count, offset=off)
    return FeatureSet(dim, vectors, ids, labels)


def _save_binary(fs: FeatureSet, path: str) -> None:
    flag = 1 if fs.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(_VERSION, fs.dim, len(fs), flag))
        fh.write(fs.vectors.astype("<f4", copy=False).tobytes())
        if flag:
            fh.write(fs.labels.astype("<i4", copy=False).tobytes())
        fh.write(fs.ids.astype("<u8", copy=False).tobytes())


def _load_csv(path: str) -> FeatureSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        cols = header.split(",")
        if len(cols) < 3 or cols[0] != "id" or cols[1] != "class":
            raise FormatError(f"{path}: bad CSV header {header!r}")
        dim = len(cols) - 2
        if cols[2:] != [f"f{i}" for i in range(dim)]:
            raise FormatError(f"{path}: bad CSV feature columns")
        ids, labels, rows = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 2:
                raise DimensionError(
                    f"{path}:{lineno}: row has {len(parts) - 2} features, expected {dim}"
                )
            ids.append(int(parts[0]))
            labels.append(int(parts[1]))
            rows.append([float(p) for p in parts[2:]])
    vectors = np.asarray(rows, dtype=np.float32).reshape(len(rows), dim)
    return FeatureSet(dim, vectors, np.asarray(ids, dtype=np.uint64),
                      np.asarray(labels, dtype=np.int32))


def _save_csv(fs: FeatureSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,class," + ",".join(f"f{i}" for i in range(fs.dim)) + "\n")
        labels = fs.labels if fs.labels is not None else np.full(len(fs), -1)
        for i in range(len(fs)):
            feats = ",".join(str(v) for v in fs.vectors[i])
            fh.write(f"{int(fs.ids[i])},{int(labels[i])},{feats}\n")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for a Gaussian-cluster dataset."""

    n_classes: int
    dim: int
    per_class: int
    cluster_spread: float
    center_spread: float


def gen_synthetic(spec: SyntheticSpec, seed: int) -> FeatureSet:
    """Per class, draw ``per_class`` samples from an isotropic Gaussian
    around a seeded random center."""
    if spec.n_classes <= 0 or spec.dim <= 0 or spec.per_class <= 0:
        raise DataError("synthetic spec counts must be positive")
    if spec.cluster_spread < 0 or spec.center_spread <= 0:
        raise DataError("synthetic spec spreads must be positive")
    rng = substream(seed, "synthetic")
    centers = rng.uniform(
        -spec.center_spread, spec.center_spread, size=(spec.n_classes, spec.dim)
    )
    # Pairwise-distinct centers hold almost surely; guard anyway.
    for i in range(spec.n_classes):
        for j in range(i + 1, spec.n_classes):
            if np.array_equal(centers[i], centers[j]):
                centers[j] += spec.center_spread * 1e-6

    n_total = spec.n_classes * spec.per_class
    vectors = np.empty((n_total, spec.dim), dtype=np.float32)
    labels = np.empty(n_total, dtype=np.int32)
    for cls in range(spec.n_classes):
        lo = cls * spec.per_class
        hi = lo + spec.per_class
        noise = rng.normal(0.0, spec.cluster_spread, size=(spec.per_class, spec.dim))
        vectors[lo:hi] = (centers[cls] + noise).astype(np.float32)
        labels[lo:hi] = cls
    ids = np.arange(n_total, dtype=np.uint64)
    return FeatureSet(spec.dim, vectors, ids, labels)


@dataclass(frozen=True)
class TaskSpec:
    """One continual task: new classes plus a mixed unlabeled/test pool."""

    task_index: int
    new_classes: tuple[int, ...]
    unlabeled_pool: tuple[int, ...]
    test_pool: tuple[int, ...]


@dataclass(frozen=True)
class TaskStream:
    """Ordered continual tasks over a feature set.

    Task 0 is the fully labeled base task (``initial_classes`` with
    ``initial_labeled`` training ids and ``initial_test`` test ids);
    ``tasks`` holds the unlabeled tasks t >= 1.
    """

    initial_classes: tuple[int, ...]
    initial_labeled: tuple[int, ...]
    initial_test: tuple[int, ...]
    tasks: tuple[TaskSpec, ...]
    holdout_old: dict[int, tuple[int, ...]] = field(repr=False)
    seed: int = 0


def build_task_stream(
    fs: FeatureSet,
    schedule: list[set[int]],
    mix_ratio: float,
    holdout_frac: float,
    test_frac: float,
    seed: int,
) -> TaskStream:
    """Split ``fs`` into a seeded continual task stream.

    The first schedule entry becomes the fully labeled base task; each
    later entry introduces its classes as novel, mixed with old-class
    records drawn from per-class holdout reserves at ``mix_ratio`` old
    per new sample (uniform over old classes, remainder to the lowest
    class ids). Holdout draws never repeat across tasks; exhausting a
    class's reserve is an error.
    """
    if mix_ratio <= 0:
        raise ScheduleError("mix_ratio must be positive")
    if not 0 < holdout_frac < 1 or not 0 < test_frac < 1:
        raise ScheduleError("holdout_frac and test_frac must lie in (0, 1)")
    if len(schedule) < 1 or any(len(entry) == 0 for entry in schedule):
        raise ScheduleError("schedule must contain non-empty class sets")

    seen: set[int] = set()
    for entry in schedule:
        for cls in entry:
            if cls in seen:
                raise ScheduleError(f"class {cls} appears twice in the schedule")
            if cls not in fs.class_index:
                raise ScheduleError(f"class {cls} not present in the feature set")
            seen.add(cls)

    # Per-class split into holdout / test / training residue.
    holdout: dict[int, list[int]] = {}
    test_reserve: dict[int, list[int]] = {}
    residue: dict[int, list[int]] = {}
    for cls in sorted(seen):
        rids = sorted(fs.class_index[cls])
        rng = substream(seed, "split", cls)
        order = rng.permutation(len(rids))
        shuffled = [rids[i] for i in order]
        n = len(shuffled)
        n_hold = int(n * holdout_frac)
        n_test = int(n * test_frac)
        if n_hold + n_test >= n:
            raise InsufficientDataError(
                f"class {cls}: {n} records cannot cover holdout+test fractions"
            )
        holdout[cls] = shuffled[:n_hold]
        test_reserve[cls] = shuffled[n_hold : n_hold + n_test]
        residue[cls] = shuffled[n_hold + n_test :]

    initial_classes = tuple(sorted(schedule[0]))
    initial_labeled = tuple(
        rid for cls in initial_classes for rid in sorted(residue[cls])
    )
    initial_test = tuple(
        rid for cls in initial_classes for rid in sorted(test_reserve[cls])
    )

    holdout_cursor = {cls: 0 for cls in seen}
    tasks: list[TaskSpec] = []
    old_classes = list(initial_classes)
    for t, entry in enumerate(schedule[1:], start=1):
        new_classes = tuple(sorted(entry))
        new_pool = [rid for cls in new_classes for rid in sorted(residue[cls])]

        n_old = int(round(mix_ratio * len(new_pool)))
        old_pool = _draw_uniform(
            sorted(old_classes), n_old, holdout, holdout_cursor, t
        )
        pool = new_pool + old_pool
        pool_rng = substream(seed, "pool", t)
        pool = [pool[i] for i in pool_rng.permutation(len(pool))]

        new_test, old_test = _build_test_pool(
            new_classes, sorted(old_classes), test_reserve, mix_ratio, seed, t
        )
        test = new_test + old_test
        test_rng = substream(seed, "testpool", t)
        test = [test[i] for i in test_rng.permutation(len(test))]

        tasks.append(TaskSpec(t, new_classes, tuple(pool), tuple(test)))
        old_classes.extend(new_classes)

    return TaskStream(
        initial_classes=initial_classes,
        initial_labeled=initial_labeled,
        initial_test=initial_test,
        tasks=tuple(tasks),
        holdout_old={cls: tuple(v) for cls, v in holdout.items()},
        seed=seed,
    )


def _draw_uniform(
    classes: list[int],
    total: int,
    reserve: dict[int, list[int]],
    cursor: dict[int, int],
    task: int,
) -> list[int]:
    """Consume ``total`` holdout records uniformly over ``classes``."""
    base, rem = divmod(total, len(classes))
    drawn: list[int] = []
    for i, cls in enumerate(classes):
        want = base + (1 if i < rem else 0)
        avail = len(reserve[cls]) - cursor[cls]
        if want > avail:
            raise InsufficientDataError(
                f"task {task}: holdout of class {cls} exhausted "
                f"({want} requested, {avail} left)"
            )
        drawn.extend(reserve[cls][cursor[cls] : cursor[cls] + want])
        cursor[cls] += want
    return drawn


def _build_test_pool(
    new_classes: tuple[int, ...],
    old_classes: list[int],
    reserve: dict[int, list[int]],
    mix_ratio: float,
    seed: int,
    task: int,
) -> tuple[list[int], list[int]]:
    """Test pool with the training pool's old:new ratio.

    The per-new-class contribution is the largest count whose matching
    old-class demand every old reserve can cover; test reserves are reused
    across tasks (test data is read-only) but never within one task.
    """
    min_new = min(len(reserve[cls]) for cls in new_classes)
    min_old = min(len(reserve[cls]) for cls in old_classes)
    m = min(min_new, int(min_old * len(old_classes) / (mix_ratio * len(new_classes))))
    while m >= 1:
        total_old = int(round(mix_ratio * m * len(new_classes)))
        base, rem = divmod(total_old, len(old_classes))
        if base + (1 if rem else 0) <= min_old:
            break
        m -= 1
    if m < 1:
        raise InsufficientDataError(
            f"task {task}: test reserves cannot cover the {mix_ratio}:1 mix"
        )

    new_test: list[int] = []
    for cls in new_classes:
        rng = substream(seed, "testnew", task, cls)
        idx = rng.choice(len(reserve[cls]), size=m, replace=False)
        new_test.extend(reserve[cls][j] for j in sorted(idx.tolist()))

    total_old = int(round(mix_ratio * len(new_test)))
    base, rem = divmod(total_old, len(old_classes))
    old_test: list[int] = []
    for i, cls in enumerate(old_classes):
        want = base + (1 if i < rem else 0)
        rng = substream(seed, "test", task, cls)
        idx = rng.choice(len(reserve[cls]), size=want, replace=False)
        old_test.extend(reserve[cls][j] for j in sorted(idx.tolist()))
    return new_test, old_test
