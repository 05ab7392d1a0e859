"""Binary run checkpoints.

Layout (all little-endian): magic ``CQCK1\\0``, u32 version (=1), u32
section count, then per section a u8 tag, i32 iteration index (-1 when
not applicable), u64 payload length, and the payload. Tags:

    1  old-class subspace store as of task start
    2  novel-class subspace snapshot after iteration ``iteration``
    3  final mapper
    4  classifier

Subspace means/bases and all network weights are stored as float32, which
is exactly how they are held in memory, so a reloaded subspace reproduces
scores bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .learner import ContinualClassifier
from .mapper import Mapper
from .mlp import MLP, NetConfig
from .subspace import ClassSubspace

_MAGIC = b"CQCK1\x00"
_VERSION = 1

TAG_OLD_STORE = 1
TAG_NOVEL_SNAPSHOT = 2
TAG_MAPPER = 3
TAG_CLASSIFIER = 4


@dataclass
class Checkpoint:
    old_subspaces: dict[int, ClassSubspace] = field(default_factory=dict)
    novel_snapshots: dict[int, dict[int, ClassSubspace]] = field(default_factory=dict)
    mapper: Mapper | None = None
    classifier: ContinualClassifier | None = None


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    sections: list[tuple[int, int, bytes]] = []
    sections.append((TAG_OLD_STORE, -1, _pack_store(ckpt.old_subspaces)))
    for iteration in sorted(ckpt.novel_snapshots):
        sections.append(
            (TAG_NOVEL_SNAPSHOT, iteration, _pack_store(ckpt.novel_snapshots[iteration]))
        )
    if ckpt.mapper is not None:
        sections.append((TAG_MAPPER, -1, _pack_mapper(ckpt.mapper)))
    if ckpt.classifier is not None:
        sections.append((TAG_CLASSIFIER, -1, _pack_classifier(ckpt.classifier)))

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(sections)))
        for tag, iteration, payload in sections:
            fh.write(struct.pack("<BiQ", tag, iteration, len(payload)))
            fh.write(payload)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = len(_MAGIC)
    try:
        version, count = struct.unpack_from("<II", data, off)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off += 8

    ckpt = Checkpoint()
    for _ in range(count):
        try:
            tag, iteration, length = struct.unpack_from("<BiQ", data, off)
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated section header") from exc
        off += struct.calcsize("<BiQ")
        payload = data[off : off + length]
        if len(payload) != length:
            raise CheckpointError(f"{path}: truncated section payload")
        off += length
        if tag == TAG_OLD_STORE:
            ckpt.old_subspaces = _unpack_store(payload)
        elif tag == TAG_NOVEL_SNAPSHOT:
            ckpt.novel_snapshots[iteration] = _unpack_store(payload)
        elif tag == TAG_MAPPER:
            ckpt.mapper = _unpack_mapper(payload)
        elif tag == TAG_CLASSIFIER:
            ckpt.classifier = _unpack_classifier(payload)
        else:
            raise CheckpointError(f"{path}: unknown section tag {tag}")
    return ckpt


def _pack_store(store: dict[int, ClassSubspace]) -> bytes:
    out = [struct.pack("<I", len(store))]
    for cid in sorted(store):
        s = store[cid]
        out.append(
            struct.pack(
                "<qIIBIf", cid, s.dim, s.q, int(s.degenerate), s.n_fit,
                s.variance_retained,
            )
        )
        out.append(s.mean.astype("<f4", copy=False).tobytes())
        out.append(s.basis.astype("<f4", copy=False).tobytes())
    return b"".join(out)


def _unpack_store(payload: bytes) -> dict[int, ClassSubspace]:
    (count,) = struct.unpack_from("<I", payload, 0)
    off = 4
    head = struct.Struct("<qIIBIf")
    store: dict[int, ClassSubspace] = {}
    for _ in range(count):
        cid, dim, q, degenerate, n_fit, vr = head.unpack_from(payload, off)
        off += head.size
        mean = np.frombuffer(payload, "<f4", dim, off).copy()
        off += dim * 4
        basis = np.frombuffer(payload, "<f4", q * dim, off).reshape(q, dim).copy()
        off += q * dim * 4
        store[cid] = ClassSubspace(
            class_id=cid, mean=mean, basis=basis, q=q,
            variance_retained=float(vr), n_fit=n_fit, degenerate=bool(degenerate),
        )
    return store


_KINDS = {"kmeans": 0, "shallow_net": 1, "constant": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


def _pack_mapper(m: Mapper) -> bytes:
    out = [struct.pack("<BI", _KINDS[m.kind], m.n_classes)]
    out.append(np.asarray(m.class_ids, dtype="<i8").tobytes())
    if m.kind == "kmeans":
        k, dim = m.centroids.shape
        out.append(struct.pack("<I", dim))
        out.append(m.centroids.astype("<f4", copy=False).tobytes())
    elif m.kind == "shallow_net":
        out.append(_pack_net(m.net))
    return b"".join(out)


def _unpack_mapper(payload: bytes) -> Mapper:
    kind_code, n = struct.unpack_from("<BI", payload, 0)
    off = 5
    ids = tuple(np.frombuffer(payload, "<i8", n, off).tolist())
    off += n * 8
    kind = _KIND_NAMES[kind_code]
    if kind == "kmeans":
        (dim,) = struct.unpack_from("<I", payload, off)
        off += 4
        centroids = np.frombuffer(payload, "<f4", n * dim, off).reshape(n, dim).copy()
        return Mapper(kind="kmeans", class_ids=ids, centroids=centroids)
    if kind == "shallow_net":
        net, _ = _unpack_net(payload, off)
        return Mapper(kind="shallow_net", class_ids=ids, net=net)
    return Mapper(kind="constant", class_ids=ids)


def _pack_net(net: MLP) -> bytes:
    out = [struct.pack("<III", net.dim, net.hidden, net.n_out)]
    for arr in (net.w1, net.b1, net.w2, net.b2):
        out.append(np.asarray(arr).astype("<f4").tobytes())
    return b"".join(out)


def _unpack_net(payload: bytes, off: int) -> tuple[MLP, int]:
    dim, hidden, n_out = struct.unpack_from("<III", payload, off)
    off += 12
    net = MLP(dim, n_out, hidden, np.random.Generator(np.random.PCG64(0)))
    shapes = [(dim, hidden), (hidden,), (hidden, n_out), (n_out,)]
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(
            np.frombuffer(payload, "<f4", size, off).reshape(shape).astype(np.float64)
        )
        off += size * 4
    net.w1, net.b1, net.w2, net.b2 = arrays
    return net, off


def _pack_classifier(clf: ContinualClassifier) -> bytes:
    out = [struct.pack("<I", len(clf.class_ids))]
    out.append(np.asarray(clf.class_ids, dtype="<i8").tobytes())
    out.append(_pack_net(clf.net))
    return b"".join(out)


def _unpack_classifier(payload: bytes) -> ContinualClassifier:
    (n,) = struct.unpack_from("<I", payload, 0)
    off = 4
    ids = np.frombuffer(payload, "<i8", n, off).tolist()
    off += n * 8
    net, _ = _unpack_net(payload, off)
    clf = ContinualClassifier(net.dim, NetConfig(hidden=net.hidden), seed=0)
    clf.class_ids = [int(c) for c in ids]
    clf.net = net
    return clf
