"""Little-endian binary formats for features, labels, cluster datasets and checkpoints.

Features   "QCFV" u32 version, u32 N, u32 D, N*D f32 (row-major)
Labels     "QCLB" u32 version, u32 N, N u32
Clusters   "QCCL" u32 version, u32 N, u32 k, u32 has_mask, then per instance:
           u32 center, k u32 members, k f64 sims, [k u8 mask]
Checkpoint "QCKP" u32 version, u32 len + UTF-8 key=value config block,
           u32 tensor count, then per tensor: u32 name len, name, u32 rank,
           rank u32 dims, f64 data

Every writer goes through a temp file and an atomic rename.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clusterset import ClusterInstance, FeatureSet
from .qsim import ContractError

VERSION = 1
FEATURE_MAGIC = b"QCFV"
LABEL_MAGIC = b"QCLB"
CLUSTER_MAGIC = b"QCCL"
CHECKPOINT_MAGIC = b"QCKP"


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size, what), dtype=dtype).copy()

    def header(self, magic: bytes) -> None:
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        version = self.u32("version")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", VERSION)


# -- features / labels -------------------------------------------------------


def encode_features(fs: FeatureSet) -> bytes:
    n, d = fs.features.shape
    return _header(FEATURE_MAGIC) + struct.pack("<II", n, d) + fs.features.astype("<f4").tobytes()


def decode_features(data: bytes) -> np.ndarray:
    r = _Reader(data)
    r.header(FEATURE_MAGIC)
    n = r.u32("N")
    d = r.u32("D")
    if n == 0 or d == 0:
        raise FormatError(f"empty feature matrix ({n} x {d})", 8)
    x = r.array("<f4", n * d, "feature data").reshape(n, d)
    r.finish()
    return x.astype(np.float64)


def encode_labels(labels) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFFFFFF):
        raise ContractError("labels must fit in u32")
    return _header(LABEL_MAGIC) + struct.pack("<I", labels.shape[0]) + labels.astype("<u4").tobytes()


def decode_labels(data: bytes) -> np.ndarray:
    r = _Reader(data)
    r.header(LABEL_MAGIC)
    n = r.u32("N")
    if n == 0:
        raise FormatError("empty label vector", 8)
    out = r.array("<u4", n, "labels")
    r.finish()
    return out.astype(np.int64)


def write_features(path, fs: FeatureSet, labels_path=None) -> None:
    atomic_write(path, encode_features(fs))
    if labels_path is not None and fs.labels is not None:
        write_labels(labels_path, fs.labels)


def read_features(path, labels_path=None) -> FeatureSet:
    x = decode_features(Path(path).read_bytes())
    labels = read_labels(labels_path) if labels_path is not None else None
    if labels is not None and labels.shape[0] != x.shape[0]:
        raise ContractError(f"{x.shape[0]} feature rows but {labels.shape[0]} labels")
    return FeatureSet(x, labels)


def write_labels(path, labels) -> None:
    atomic_write(path, encode_labels(labels))


def read_labels(path) -> np.ndarray:
    return decode_labels(Path(path).read_bytes())


# -- cluster datasets ----------------------------------------------------------


def encode_clusters(clusters) -> bytes:
    if not clusters:
        raise ContractError("cannot write an empty cluster dataset")
    k = clusters[0].k
    has_mask = all(c.mask is not None for c in clusters)
    parts = [_header(CLUSTER_MAGIC), struct.pack("<III", len(clusters), k, int(has_mask))]
    for c in clusters:
        if c.k != k:
            raise ContractError("all cluster instances must share k")
        parts.append(struct.pack("<I", c.center))
        parts.append(np.asarray(c.members, dtype="<u4").tobytes())
        parts.append(np.asarray(c.sims, dtype="<f8").tobytes())
        if has_mask:
            parts.append(np.asarray(c.mask, dtype="u1").tobytes())
    return b"".join(parts)


def decode_clusters(data: bytes) -> list:
    r = _Reader(data)
    r.header(CLUSTER_MAGIC)
    n = r.u32("N")
    k = r.u32("k")
    has_mask = r.u32("mask flag")
    if n == 0 or k == 0:
        raise FormatError(f"empty cluster dataset (N={n}, k={k})", 8)
    if has_mask not in (0, 1):
        raise FormatError(f"mask flag must be 0 or 1, got {has_mask}", 16)
    out = []
    for _ in range(n):
        center = r.u32("center")
        members = r.array("<u4", k, "members").astype(np.int64)
        sims = r.array("<f8", k, "similarities")
        mask = r.array("u1", k, "mask").astype(np.int64) if has_mask else None
        out.append(ClusterInstance(center, members, sims, mask))
    r.finish()
    return out


def write_clusters(path, clusters) -> None:
    atomic_write(path, encode_clusters(clusters))


def read_clusters(path) -> list:
    return decode_clusters(Path(path).read_bytes())


# -- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    """Trainable tensors plus everything needed to resume bit-exactly."""

    config: dict
    tensors: dict
    epoch: int = 0
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def meta(self) -> dict:
        meta = {f"config.{k}": v for k, v in self.config.items()}
        meta["epoch"] = self.epoch
        meta["step"] = self.step
        meta["rng_state"] = json.dumps(self.rng_state, sort_keys=True, separators=(",", ":"))
        meta.update({f"extra.{k}": v for k, v in self.extra.items()})
        return meta


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    text = str(v)
    if "\n" in text:
        raise ContractError("config values must be single-line")
    return text


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    block = "".join(f"{k}={_format_value(v)}\n" for k, v in ckpt.meta().items()).encode("utf-8")
    parts = [_header(CHECKPOINT_MAGIC), struct.pack("<I", len(block)), block]
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    r.header(CHECKPOINT_MAGIC)
    start = r.pos
    block_len = r.u32("config block length")
    try:
        text = r.take(block_len, "config block").decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config block is not UTF-8", start + 4) from None
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"malformed config line {line!r}", start + 4)
        meta[key] = value
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name_pos = r.pos
        try:
            name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", name_pos) from None
        rank = r.u32("rank")
        if rank > 8:
            raise FormatError(f"implausible tensor rank {rank}", r.pos - 4)
        dims = tuple(r.u32("dim") for _ in range(rank))
        tensors[name] = r.array("<f8", int(np.prod(dims, dtype=np.int64)), f"tensor {name}").reshape(dims)
    r.finish()
    try:
        config = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
        extra = {k[len("extra."):]: v for k, v in meta.items() if k.startswith("extra.")}
        return Checkpoint(
            config=config,
            tensors=tensors,
            epoch=int(meta["epoch"]),
            step=int(meta["step"]),
            rng_state=json.loads(meta["rng_state"]),
            extra=extra,
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"incomplete checkpoint metadata: {exc}", start) from None


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def read_checkpoint(path, expect: dict = None) -> Checkpoint:
    """Load a checkpoint; ``expect`` maps config keys to required values."""
    ckpt = decode_checkpoint(Path(path).read_bytes())
    for key, want in (expect or {}).items():
        have = ckpt.config.get(key)
        if have != _format_value(want):
            raise ContractError(f"checkpoint {key}={have} is incompatible with required {key}={want}")
    return ckpt
