"""Per-round observables and clustering-quality scores."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .numkernel import DatasetShard, ModelParams, num_correct

METRICS_HEADER = (
    "round", "k_tilde", "clustering_objective", "global_acc", "cluster_acc", "ari", "wall_ms",
)


@dataclass
class MetricsRecord:
    round: int
    k_tilde: int
    clustering_objective: float | None
    global_acc: float | None
    cluster_acc: float | None
    ari: float | None
    wall_ms: float | None = None

    def __post_init__(self) -> None:
        if self.ari is not None and not -1.0 - 1e-12 <= self.ari <= 1.0 + 1e-12:
            raise ValueError(f"ari out of range: {self.ari}")
        for name in ("global_acc", "cluster_acc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of range: {v}")


def compute_ari(predicted: Mapping[int, int], truth: Sequence[int] | Mapping[int, int]) -> float:
    """Adjusted Rand Index between ``predicted`` (client -> cluster) and ground truth.

    Only clients present in ``predicted`` are scored. Returns 1.0 when both
    labelings are a single cluster (or every client is its own cluster in both).
    """
    clients = sorted(predicted)
    if not clients:
        raise ValueError("no clients to score")
    labels_true = []
    for c in clients:
        try:
            labels_true.append(truth[c])
        except (KeyError, IndexError):
            raise ValueError(f"client {c} has no truth label") from None
    labels_pred = [predicted[c] for c in clients]

    n = len(clients)
    cells = Counter(zip(labels_pred, labels_true))
    rows = Counter(labels_pred)
    cols = Counter(labels_true)
    index = sum(comb(v, 2) for v in cells.values())
    sum_rows = sum(comb(v, 2) for v in rows.values())
    sum_cols = sum(comb(v, 2) for v in cols.values())
    total = comb(n, 2)
    if total == 0:
        return 1.0
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def purity(predicted: Mapping[int, int], truth: Sequence[int] | Mapping[int, int]) -> float:
    clients = sorted(predicted)
    by_cluster: dict[int, Counter] = {}
    for c in clients:
        by_cluster.setdefault(predicted[c], Counter())[truth[c]] += 1
    return sum(max(cnt.values()) for cnt in by_cluster.values()) / len(clients)


def pooled_accuracy(pairs: Sequence[tuple[ModelParams, DatasetShard]]) -> float | None:
    """Accuracy over the union of shards, each evaluated with its own model."""
    correct = total = 0
    for params, shard in pairs:
        correct += num_correct(params, shard)
        total += len(shard)
    return None if total == 0 else correct / total


def stack_shards(shards: Sequence[DatasetShard]) -> DatasetShard:
    return DatasetShard(
        np.concatenate([s.features for s in shards]),
        np.concatenate([s.labels for s in shards]),
    )
