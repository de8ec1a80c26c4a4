"""Synthetic data and Non-IID federated partitions with ground-truth clusters."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .numkernel import DatasetShard

SCENARIO_KINDS = ("pathological", "rotated", "shifted", "hybrid", "iid")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for malformed IDX input."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True, eq=False)
class BaseDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"shape mismatch: features {x.shape}, labels {y.shape}")
        if x.shape[0] < self.num_classes:
            raise ValueError(f"need at least {self.num_classes} samples, got {x.shape[0]}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError("labels out of range")
        if np.unique(y).size != self.num_classes:
            raise ValueError("every class must appear at least once")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(eq=False)
class FederatedScenario:
    """Per-client shards plus ground-truth cluster ids (evaluation only)."""

    train: list[DatasetShard]
    true_cluster: list[int]
    num_clusters: int
    kind: str
    num_classes: int
    test: list[DatasetShard] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.true_cluster = [int(c) for c in self.true_cluster]
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if len(self.train) != len(self.true_cluster):
            raise ValueError("shards and true_cluster differ in length")
        if self.test is not None and len(self.test) != len(self.train):
            raise ValueError("train and test shard lists differ in length")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if set(self.true_cluster) != set(range(self.num_clusters)):
            raise ValueError("every cluster id in [0, K) must appear at least once")

    @property
    def num_clients(self) -> int:
        return len(self.train)

    @property
    def dim(self) -> int:
        return self.train[0].dim


def make_base_dataset(
    seed: int, n: int, d: int, num_classes: int, class_separation: float
) -> BaseDataset:
    """Gaussian blobs around prototypes drawn uniformly on a sphere."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if n < num_classes:
        raise ValueError(f"n={n} is smaller than num_classes={num_classes}")
    if d < 2:
        raise ValueError("d must be >= 2")
    if class_separation <= 0:
        raise ValueError("class_separation must be positive")
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((num_classes, d))
    protos *= class_separation / np.linalg.norm(protos, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % num_classes)
    features = protos[labels] + rng.standard_normal((n, d))
    return BaseDataset(features, labels, num_classes)


def _even_split(n: int, parts: int, rng: np.random.Generator) -> list[np.ndarray]:
    if parts < 1:
        raise ValueError("need at least one part")
    if n < parts:
        raise ValueError(f"cannot split {n} samples into {parts} non-empty shards")
    return np.array_split(rng.permutation(n), parts)


def partition_iid(base: BaseDataset, num_clients: int, seed: int) -> FederatedScenario:
    rng = np.random.default_rng(seed)
    shards = [
        DatasetShard(base.features[idx], base.labels[idx])
        for idx in _even_split(len(base), num_clients, rng)
    ]
    return FederatedScenario(shards, [0] * num_clients, 1, "iid", base.num_classes)


def partition_pathological(
    base: BaseDataset,
    label_groups: Sequence[Sequence[int]],
    clients_per_group: int,
    seed: int = 0,
) -> FederatedScenario:
    groups = [sorted({int(c) for c in g}) for g in label_groups]
    flat = [c for g in groups for c in g]
    if len(flat) != len(set(flat)):
        raise ValueError("label groups must be disjoint")
    if any(c < 0 or c >= base.num_classes for c in flat):
        raise ValueError("label group refers to an unknown class")
    rng = np.random.default_rng(seed)
    shards, truth = [], []
    for g, labels in enumerate(groups):
        members = np.flatnonzero(np.isin(base.labels, labels))
        if members.size == 0:
            raise ValueError(f"label group {g} has no samples")
        for idx in _even_split(members.size, clients_per_group, rng):
            sel = members[np.sort(idx)]
            shards.append(DatasetShard(base.features[sel], base.labels[sel]))
            truth.append(g)
    return FederatedScenario(
        shards, truth, len(groups), "pathological", base.num_classes,
        meta={"label_groups": groups},
    )


def rotation_matrices(d: int, count: int, seed: int) -> list[np.ndarray]:
    """Identity followed by ``count - 1`` Haar-random orthogonal matrices."""
    rng = np.random.default_rng(seed)
    out = [np.eye(d)]
    for _ in range(count - 1):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        out.append(q * np.sign(np.diag(r)))
    return out


def partition_rotated(
    base: BaseDataset, num_rotations: int, clients_per_rotation: int, seed: int = 0
) -> FederatedScenario:
    """Cluster r sees features mapped through a fixed orthogonal transform Q_r."""
    if num_rotations < 2:
        raise ValueError("num_rotations must be >= 2")
    plain = partition_iid(base, num_rotations * clients_per_rotation, seed)
    mats = rotation_matrices(base.dim, num_rotations, seed + 1)
    shards, truth = [], []
    for i, shard in enumerate(plain.train):
        r = i // clients_per_rotation
        x = shard.features if r == 0 else shard.features @ mats[r].T
        shards.append(DatasetShard(x, shard.labels))
        truth.append(r)
    return FederatedScenario(
        shards, truth, num_rotations, "rotated", base.num_classes,
        meta={"rotations": mats},
    )


def partition_shifted(
    base: BaseDataset, shifts: Sequence[int], clients_per_shift: int, seed: int = 0
) -> FederatedScenario:
    """Cluster s relabels every sample as ``(y + shifts[s]) mod C``."""
    shifts = [int(s) for s in shifts]
    if not shifts:
        raise ValueError("shifts must be non-empty")
    plain = partition_iid(base, len(shifts) * clients_per_shift, seed)
    shards, truth = [], []
    for i, shard in enumerate(plain.train):
        s = i // clients_per_shift
        shards.append(DatasetShard(shard.features, shift_labels(shard.labels, shifts[s], base.num_classes)))
        truth.append(s)
    return FederatedScenario(
        shards, truth, len(shifts), "shifted", base.num_classes, meta={"shifts": shifts}
    )


def shift_labels(labels: np.ndarray, shift: int, num_classes: int) -> np.ndarray:
    return (np.asarray(labels) + shift) % num_classes


def partition_hybrid(
    base_a: BaseDataset, base_b: BaseDataset, clients_per_domain: int, seed: int = 0
) -> FederatedScenario:
    if base_a.num_classes != base_b.num_classes:
        raise ValueError(
            f"class count mismatch: {base_a.num_classes} vs {base_b.num_classes}"
        )
    if base_a.dim != base_b.dim:
        raise ValueError(f"feature dimension mismatch: {base_a.dim} vs {base_b.dim}")
    a = partition_iid(base_a, clients_per_domain, seed)
    b = partition_iid(base_b, clients_per_domain, seed + 1)
    truth = [0] * clients_per_domain + [1] * clients_per_domain
    return FederatedScenario(a.train + b.train, truth, 2, "hybrid", base_a.num_classes)


def split_shard(
    shard: DatasetShard, test_fraction: float, rng: np.random.Generator
) -> tuple[DatasetShard, DatasetShard]:
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(shard)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n - n_test < 1:
        raise ValueError(f"shard of {n} samples is too small to split at {test_fraction}")
    order = rng.permutation(n)
    return shard.subset(np.sort(order[n_test:])), shard.subset(np.sort(order[:n_test]))


def train_test_split(data, test_fraction: float, seed: int):
    """Seeded per-client split.

    Accepts a :class:`FederatedScenario` (returns a new scenario whose
    ``test`` list is filled) or a single shard (returns ``(train, test)``).
    """
    if isinstance(data, DatasetShard):
        return split_shard(data, test_fraction, np.random.default_rng(seed))
    rng = np.random.default_rng(seed)
    train, test = [], []
    for i, shard in enumerate(data.train):
        try:
            tr, te = split_shard(shard, test_fraction, rng)
        except ValueError as exc:
            raise ValueError(f"client {i}: {exc}") from None
        train.append(tr)
        test.append(te)
    return replace(data, train=train, test=test)


def split_holdout(
    scenario: FederatedScenario, per_cluster: int
) -> tuple[FederatedScenario, FederatedScenario | None]:
    """Move the last ``per_cluster`` clients of every true cluster into a held-out scenario.

    Client ids are renumbered contiguously in both outputs.
    """
    if per_cluster <= 0:
        return scenario, None
    truth = np.asarray(scenario.true_cluster)
    held = set()
    for k in range(scenario.num_clusters):
        members = np.flatnonzero(truth == k)
        if members.size <= per_cluster:
            raise ValueError(f"cluster {k} has too few clients to hold out {per_cluster}")
        held.update(int(i) for i in members[-per_cluster:])

    def pick(keep: bool) -> FederatedScenario:
        ids = [i for i in range(scenario.num_clients) if (i in held) != keep]
        return replace(
            scenario,
            train=[scenario.train[i] for i in ids],
            test=None if scenario.test is None else [scenario.test[i] for i in ids],
            true_cluster=[scenario.true_cluster[i] for i in ids],
        )

    return pick(True), pick(False)


def _read_exact(buf: bytes, offset: int, size: int, what: str) -> bytes:
    chunk = buf[offset : offset + size]
    if len(chunk) != size:
        raise TruncatedFileError(f"truncated file: expected {size} bytes of {what}, got {len(chunk)}")
    return chunk


def _read_file(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def load_idx(images_path, labels_path, num_classes: int | None = None) -> BaseDataset:
    """Parse a big-endian IDX image/label pair, scaling pixels to [0, 1]."""
    img = _read_file(images_path)
    lab = _read_file(labels_path)

    (magic,) = struct.unpack(">I", _read_exact(img, 0, 4, "image header"))
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08x} in image file, expected 0x{IDX_IMAGES_MAGIC:08x}")
    count, rows, cols = struct.unpack(">III", _read_exact(img, 4, 12, "image header"))

    (magic,) = struct.unpack(">I", _read_exact(lab, 0, 4, "label header"))
    if magic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08x} in label file, expected 0x{IDX_LABELS_MAGIC:08x}")
    (n_labels,) = struct.unpack(">I", _read_exact(lab, 4, 4, "label header"))

    if count != n_labels:
        raise CountMismatchError(f"count mismatch: {count} images vs {n_labels} labels")

    pixels = np.frombuffer(_read_exact(img, 16, count * rows * cols, "pixels"), dtype=np.uint8)
    labels = np.frombuffer(_read_exact(lab, 8, n_labels, "labels"), dtype=np.uint8)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return BaseDataset(features, labels, num_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images of shape (count, rows, cols) and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes()
    )
