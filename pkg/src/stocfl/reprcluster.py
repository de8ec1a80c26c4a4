"""Gradient-based distribution representations and stochastic client clustering.

Each client is summarised by the unit-normalised loss gradient at a fixed
anchor model. The server keeps clusters of clients together with the
(unnormalised) sum of their members' representations, and greedily merges
the most similar pair of clusters while their cosine similarity exceeds a
threshold.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numkernel import DatasetShard, ModelParams, gradient

DEGENERATE_NORM = 1e-12


class DegenerateShardError(ValueError):
    """The anchor gradient on a shard is (numerically) zero."""


def extract_representation(anchor: ModelParams, shard: DatasetShard) -> np.ndarray:
    g = gradient(anchor, shard)
    norm = float(np.linalg.norm(g))
    if not norm > DEGENERATE_NORM:
        raise DegenerateShardError(f"degenerate shard: anchor gradient norm {norm:.3g}")
    return g / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


@dataclass(frozen=True)
class MergeEvent:
    kept: int
    absorbed: int
    kept_size: int
    absorbed_size: int
    similarity: float


@dataclass
class ClusterPartition:
    """Server-side clustering state. Mutated only by its single owner."""

    clusters: dict[int, set[int]] = field(default_factory=dict)
    rep_sum: dict[int, np.ndarray] = field(default_factory=dict)
    client_rep: dict[int, np.ndarray] = field(default_factory=dict)
    next_id: int = 0

    @property
    def seen_clients(self) -> set[int]:
        return set(self.client_rep)

    @property
    def k_tilde(self) -> int:
        return len(self.clusters)

    def cluster_ids(self) -> list[int]:
        return sorted(self.clusters)

    def cluster_of(self, client: int) -> int:
        for cid, members in self.clusters.items():
            if client in members:
                return cid
        raise KeyError(f"client {client} is not in any cluster")

    def assignment(self) -> dict[int, int]:
        return {c: cid for cid, members in self.clusters.items() for c in members}

    def rep_mean(self, cid: int) -> np.ndarray:
        return self.rep_sum[cid] / len(self.clusters[cid])

    def add_singleton(self, client: int, rep: np.ndarray) -> int:
        if client in self.client_rep:
            raise ValueError(f"client {client} already seen")
        cid = self.next_id
        self.next_id += 1
        self.client_rep[client] = rep
        self.clusters[cid] = {client}
        self.rep_sum[cid] = np.array(rep, dtype=np.float64, copy=True)
        return cid

    def add_to_cluster(self, client: int, rep: np.ndarray, cid: int) -> None:
        if client in self.client_rep:
            raise ValueError(f"client {client} already seen")
        self.client_rep[client] = rep
        self.clusters[cid].add(client)
        self.rep_sum[cid] = self.rep_sum[cid] + rep

    def copy(self) -> "ClusterPartition":
        return ClusterPartition(
            clusters={k: set(v) for k, v in self.clusters.items()},
            rep_sum={k: v.copy() for k, v in self.rep_sum.items()},
            client_rep=dict(self.client_rep),
            next_id=self.next_id,
        )

    def recomputed_rep_sum(self, cid: int) -> np.ndarray:
        return np.sum([self.client_rep[c] for c in sorted(self.clusters[cid])], axis=0)

    def check(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        union: set[int] = set()
        for cid, members in self.clusters.items():
            assert members, f"cluster {cid} is empty"
            assert not (union & members), f"cluster {cid} overlaps another cluster"
            union |= members
            assert np.allclose(self.rep_sum[cid], self.recomputed_rep_sum(cid), rtol=0, atol=1e-9)
        assert union == self.seen_clients
        assert set(self.rep_sum) == set(self.clusters)


def ingest_round(
    partition: ClusterPartition,
    sampled: Iterable[int],
    anchor: ModelParams,
    shards: Sequence[DatasetShard],
) -> list[int]:
    """Register sampled clients not seen before as singleton clusters.

    Returns the new cluster ids, in ascending client order.
    """
    new_ids = []
    for client in sorted(set(sampled)):
        if client in partition.client_rep:
            continue
        if not 0 <= client < len(shards):
            raise ValueError(f"unknown client {client}")
        try:
            rep = extract_representation(anchor, shards[client])
        except ValueError as exc:
            raise type(exc)(f"client {client}: {exc}") from exc
        new_ids.append(partition.add_singleton(client, rep))
    return new_ids


def similarity_matrix(partition: ClusterPartition) -> np.ndarray:
    """Pairwise cosine similarity of cluster representation sums, in ascending id order."""
    ids = partition.cluster_ids()
    k = len(ids)
    m = np.eye(k)
    for a in range(k):
        for b in range(a + 1, k):
            m[a, b] = m[b, a] = cosine(partition.rep_sum[ids[a]], partition.rep_sum[ids[b]])
    return m


def merge_step(partition: ClusterPartition, tau: float) -> list[MergeEvent]:
    """Merge the most similar pair while its similarity is strictly above ``tau``.

    Mutates ``partition``. The survivor keeps the lower id; absorbed ids are
    retired. Ties resolve to the lexicographically smallest (i, j).
    """
    ids = partition.cluster_ids()
    m = similarity_matrix(partition)
    np.fill_diagonal(m, -np.inf)
    log: list[MergeEvent] = []
    while len(ids) > 1:
        upper = np.where(np.triu(np.ones_like(m, dtype=bool), k=1), m, -np.inf)
        flat = int(np.argmax(upper))
        a, b = divmod(flat, len(ids))
        best = upper[a, b]
        if not best > tau:
            break
        kept, absorbed = ids[a], ids[b]
        log.append(
            MergeEvent(
                kept, absorbed,
                len(partition.clusters[kept]), len(partition.clusters[absorbed]),
                float(best),
            )
        )
        partition.clusters[kept] |= partition.clusters.pop(absorbed)
        partition.rep_sum[kept] = partition.rep_sum[kept] + partition.rep_sum.pop(absorbed)

        del ids[b]
        m = np.delete(np.delete(m, b, axis=0), b, axis=1)
        for c in range(len(ids)):
            if c != a:
                m[a, c] = m[c, a] = cosine(partition.rep_sum[kept], partition.rep_sum[ids[c]])
    return log


def clustering_objective(partition: ClusterPartition) -> float:
    """Sum of pairwise cosine similarities between current clusters."""
    m = similarity_matrix(partition)
    return float(m[np.triu_indices_from(m, k=1)].sum())


def infer_cluster(
    partition: ClusterPartition, rep: np.ndarray, tau: float
) -> tuple[int, bool, int]:
    """Place a new client: ``(cluster id, created_new, source id for the model copy)``.

    Joins the nearest cluster when its similarity is at least ``tau``;
    otherwise proposes a fresh id (the partition's next unused id) seeded
    from the nearest cluster's model. Does not mutate ``partition``.
    """
    ids = partition.cluster_ids()
    if not ids:
        raise ValueError("cannot infer a cluster from an empty partition")
    sims = [cosine(rep, partition.rep_sum[c]) for c in ids]
    best = int(np.argmax(sims))
    nearest = ids[best]
    if sims[best] >= tau:
        return nearest, False, nearest
    return partition.next_id, True, nearest


def write_representations(
    path,
    partition: ClusterPartition,
    true_cluster: Sequence[int],
    client_ids: Mapping[int, int] | None = None,
) -> None:
    """CSV dump: ``client_id,true_cluster,assigned_cluster,v0,v1,...``.

    ``client_ids`` optionally maps internal client indices to exported ids.
    """
    assign = partition.assignment()
    clients = sorted(partition.client_rep)
    width = len(next(iter(partition.client_rep.values()))) if clients else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "true_cluster", "assigned_cluster", *(f"v{i}" for i in range(width))])
        for c in clients:
            cid = c if client_ids is None else client_ids[c]
            w.writerow(
                [cid, true_cluster[c], assign[c], *(format(float(v), ".17g") for v in partition.client_rep[c])]
            )
