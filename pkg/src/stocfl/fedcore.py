"""Bi-level clustered federated training.

The server keeps a global model ``omega`` trained by plain federated
averaging, and one model per cluster. Sampled clients run local SGD on both:
the cluster model with a proximal pull towards the received global model,
the global model without regularisation.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datagen import FederatedScenario
from .metrics import MetricsRecord, compute_ari, pooled_accuracy, stack_shards
from .numkernel import (
    DatasetShard,
    ModelParams,
    ModelSpec,
    forward_loss,
    gradient,
    init_params,
    iter_batches,
    num_correct,
    sgd_step,
    weighted_mean,
)
from .reprcluster import (
    ClusterPartition,
    MergeEvent,
    clustering_objective,
    ingest_round,
    merge_step,
)

# seed stream tags
MODEL_STREAM = 1
SAMPLE_STREAM = 2
BATCH_STREAM = 3
ANCHOR_STREAM = 4
DATA_STREAM = 5

WEIGHTINGS = ("samples", "equal")
ANCHORS = ("omega0", "independent")


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 64-bit seed for a named stream of a master seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(t) for t in tags)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class TrainConfig:
    eta: float = 0.1
    lam: float = 0.05
    tau: float = 0.5
    rounds: int = 50
    sample_rate: float = 0.1
    sample_size: int | None = None
    local_epochs: int = 5
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    hidden_dims: tuple[int, ...] = ()
    workers: int = 1
    weighting: str = "samples"
    anchor: str = "omega0"
    num_models: int = 2  # IFCA only

    def __post_init__(self) -> None:
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be non-negative, got {self.rounds}")
        if self.sample_size is None and not 0 < self.sample_rate <= 1:
            raise ValueError(f"sample_rate must be in (0, 1], got {self.sample_rate}")
        if self.sample_size is not None and self.sample_size < 1:
            raise ValueError(f"sample_size must be positive, got {self.sample_size}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")
        if self.num_models < 1:
            raise ValueError(f"num_models must be >= 1, got {self.num_models}")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    updated_global: ModelParams
    updated_cluster: ModelParams
    sample_count: int


@dataclass
class ServerState:
    global_model: ModelParams
    anchor: ModelParams
    cluster_models: dict[int, ModelParams] = field(default_factory=dict)
    partition: ClusterPartition = field(default_factory=ClusterPartition)
    round: int = 0
    seed: int = 0

    def check(self) -> None:
        assert set(self.cluster_models) == set(self.partition.clusters)
        spec = self.global_model.spec
        assert all(m.spec == spec for m in self.cluster_models.values())


def model_spec_for(scenario: FederatedScenario, config: TrainConfig) -> ModelSpec:
    return ModelSpec(scenario.dim, scenario.num_classes, config.hidden_dims)


def initial_model(spec: ModelSpec, config: TrainConfig, index: int = 0) -> ModelParams:
    return init_params(spec, derive_seed(config.seed, MODEL_STREAM, index))


def make_anchor(spec: ModelSpec, config: TrainConfig) -> ModelParams:
    """The fixed representation anchor: omega0 by default, or an independent draw."""
    if config.anchor == "omega0":
        return initial_model(spec, config)
    return init_params(spec, derive_seed(config.seed, ANCHOR_STREAM))


def sample_size(num_clients: int, config: TrainConfig) -> int:
    if config.sample_size is not None:
        m = config.sample_size
    else:
        m = max(1, int(round(config.sample_rate * num_clients)))
    if m > num_clients:
        raise ValueError(f"cannot sample {m} of {num_clients} clients")
    return m


def sample_clients(num_clients: int, config: TrainConfig, round_index: int) -> list[int]:
    """Uniform sample without replacement, a pure function of (seed, round)."""
    m = sample_size(num_clients, config)
    rng = np.random.default_rng(derive_seed(config.seed, SAMPLE_STREAM, round_index))
    return sorted(int(i) for i in rng.choice(num_clients, size=m, replace=False))


def batch_seed(config: TrainConfig, round_index: int, client_id: int) -> int:
    return derive_seed(config.seed, BATCH_STREAM, round_index, client_id)


def _batches(shard: DatasetShard, config: TrainConfig, rng):
    for idx in iter_batches(len(shard), config.batch_size, rng):
        yield shard if isinstance(idx, slice) else shard.subset(idx)


def client_update(
    omega: ModelParams,
    theta: ModelParams,
    shard: DatasetShard,
    config: TrainConfig,
    *,
    client_id: int = 0,
    round_index: int = 0,
) -> ClientUpdate:
    """Local epochs on the cluster model (proximal to ``omega``) and on the global model.

    The proximal anchor stays at the received ``omega`` for all local epochs.
    Both tracks see the same batch order.
    """
    if omega.spec != theta.spec:
        raise ValueError("global and cluster models have different specs")
    rng = None
    if config.batch_size is not None:
        rng = np.random.default_rng(batch_seed(config, round_index, client_id))
    anchor = omega.values
    th, om = theta, omega
    for _ in range(config.local_epochs):
        for batch in _batches(shard, config, rng):
            th = sgd_step(th, gradient(th, batch) + config.lam * (th.values - anchor), config.eta)
            om = sgd_step(om, gradient(om, batch), config.eta)
    return ClientUpdate(client_id, om, th, len(shard))


def cluster_objective(
    theta: ModelParams, omega: ModelParams, shards: Sequence[DatasetShard], lam: float
) -> float:
    """Sample-weighted empirical loss of ``theta`` on ``shards`` plus ``lam/2 * ||theta - omega||^2``."""
    n = sum(len(s) for s in shards)
    loss = sum(forward_loss(theta, s) * len(s) for s in shards) / n
    diff = theta.values - omega.values
    return loss + 0.5 * lam * float(diff @ diff)


def _weights(updates: Sequence[ClientUpdate], weighting: str) -> list[float]:
    if weighting == "equal":
        return [1.0] * len(updates)
    return [float(u.sample_count) for u in updates]


def aggregate_global(updates: Sequence[ClientUpdate], weighting: str = "samples") -> ModelParams:
    if not updates:
        raise ValueError("cannot aggregate an empty set of updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    spec = ordered[0].updated_global.spec
    if any(u.updated_global.spec != spec for u in ordered):
        raise ValueError("updates have mismatched model specs")
    values = weighted_mean([u.updated_global.values for u in ordered], _weights(ordered, weighting))
    return ModelParams(spec, values)


def aggregate_cluster(
    state: ServerState, updates: Sequence[ClientUpdate], weighting: str = "samples"
) -> dict[int, ModelParams]:
    """Per-cluster weighted mean of this round's member updates.

    Clusters without sampled members keep their model.
    """
    assign = state.partition.assignment()
    grouped: dict[int, list[ClientUpdate]] = {}
    for u in sorted(updates, key=lambda u: u.client_id):
        if u.client_id not in assign:
            raise ValueError(f"client {u.client_id} is not in any cluster")
        grouped.setdefault(assign[u.client_id], []).append(u)
    models = dict(state.cluster_models)
    for cid, group in grouped.items():
        values = weighted_mean([u.updated_cluster.values for u in group], _weights(group, weighting))
        models[cid] = ModelParams(group[0].updated_cluster.spec, values)
    return models


def merge_cluster_models(state: ServerState, log: Sequence[MergeEvent]) -> ServerState:
    """Fold absorbed cluster models into survivors, weighted by member counts at merge time."""
    for ev in log:
        kept = state.cluster_models[ev.kept]
        absorbed = state.cluster_models.pop(ev.absorbed)
        values = weighted_mean([kept.values, absorbed.values], [ev.kept_size, ev.absorbed_size])
        state.cluster_models[ev.kept] = ModelParams(kept.spec, values)
    return state


def map_clients(fn: Callable[[int], object], clients: Sequence[int], workers: int) -> list:
    """Apply ``fn`` to every client, returning results in the order of ``clients``."""
    if workers <= 1 or len(clients) <= 1:
        return [fn(c) for c in clients]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, clients))


def eval_shards(scenario: FederatedScenario) -> list[DatasetShard]:
    return scenario.test if scenario.test is not None else scenario.train


def evaluate_stocfl(state: ServerState, scenario: FederatedScenario, union: DatasetShard) -> MetricsRecord:
    part = state.partition
    shards = eval_shards(scenario)
    assign = part.assignment()
    cluster_acc = pooled_accuracy(
        [(state.cluster_models[assign[c]], shards[c]) for c in sorted(assign)]
    )
    return MetricsRecord(
        round=state.round,
        k_tilde=part.k_tilde,
        clustering_objective=clustering_objective(part) if part.k_tilde else None,
        global_acc=num_correct(state.global_model, union) / len(union),
        cluster_acc=cluster_acc,
        ari=compute_ari(assign, scenario.true_cluster) if assign else None,
    )


RoundCallback = Callable[[ServerState, list[ClientUpdate]], None]


def run_stocfl(
    scenario: FederatedScenario,
    config: TrainConfig,
    *,
    callback: RoundCallback | None = None,
    evaluate: bool = True,
) -> tuple[ServerState, list[MetricsRecord]]:
    spec = model_spec_for(scenario, config)
    omega0 = initial_model(spec, config)
    anchor = make_anchor(spec, config)
    state = ServerState(global_model=omega0, anchor=anchor, seed=config.seed)
    union = stack_shards(eval_shards(scenario))
    records: list[MetricsRecord] = []

    for t in range(config.rounds):
        start = time.perf_counter()
        sampled = sample_clients(scenario.num_clients, config, t)

        # new singletons start from the current global model (omega0 in round 0)
        for cid in ingest_round(state.partition, sampled, anchor, scenario.train):
            state.cluster_models[cid] = state.global_model
        merge_cluster_models(state, merge_step(state.partition, config.tau))

        assign = state.partition.assignment()
        omega = state.global_model
        theta = state.cluster_models

        def work(i: int) -> ClientUpdate:
            return client_update(
                omega, theta[assign[i]], scenario.train[i], config, client_id=i, round_index=t
            )

        updates = map_clients(work, sampled, config.workers)
        state.global_model = aggregate_global(updates, config.weighting)
        state.cluster_models = aggregate_cluster(state, updates, config.weighting)
        state.round = t + 1

        if evaluate:
            rec = evaluate_stocfl(state, scenario, union)
            rec.wall_ms = (time.perf_counter() - start) * 1000.0
            records.append(rec)
        if callback is not None:
            callback(state, updates)
    return state, records
