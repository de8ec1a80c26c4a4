"""FedAvg, FedProx, Ditto and IFCA on the same sampling and seeding as StoCFL.

Local loops here are written independently of :func:`fedcore.client_update`
so that the degenerate StoCFL configurations can be checked against them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datagen import FederatedScenario
from .fedcore import (
    TrainConfig,
    batch_seed,
    eval_shards,
    initial_model,
    map_clients,
    model_spec_for,
    sample_clients,
)
from .metrics import MetricsRecord, compute_ari, pooled_accuracy, stack_shards
from .numkernel import (
    DatasetShard,
    ModelParams,
    forward_loss,
    gradient,
    iter_batches,
    num_correct,
    weighted_mean,
)

BASELINES = ("fedavg", "fedprox", "ditto", "ifca")


@dataclass
class BaselineResult:
    kind: str
    global_model: ModelParams | None
    # fedavg/fedprox: {0: global}; ditto: personal models by client; ifca: the M models
    models: dict[int, ModelParams] = field(default_factory=dict)
    assignment: dict[int, int] = field(default_factory=dict)
    metrics: list[MetricsRecord] = field(default_factory=list)
    round: int = 0


def local_sgd(
    start: ModelParams,
    shard: DatasetShard,
    config: TrainConfig,
    seed: int,
    prox_center: np.ndarray | None = None,
    lam: float = 0.0,
) -> ModelParams:
    """E epochs of SGD; with ``prox_center`` adds ``lam * (w - prox_center)`` to every step."""
    rng = np.random.default_rng(seed) if config.batch_size is not None else None
    w = np.array(start.values)
    spec = start.spec
    for _ in range(config.local_epochs):
        for idx in iter_batches(len(shard), config.batch_size, rng):
            batch = shard if isinstance(idx, slice) else shard.subset(idx)
            g = gradient(ModelParams(spec, w), batch)
            if prox_center is not None:
                g = g + lam * (w - prox_center)
            w = w - config.eta * g
    return ModelParams(spec, w)


def _fedavg(results: list[tuple[int, ModelParams, int]], weighting: str) -> ModelParams:
    results = sorted(results, key=lambda r: r[0])
    weights = [1.0 if weighting == "equal" else float(n) for _, _, n in results]
    values = weighted_mean([m.values for _, m, _ in results], weights)
    return ModelParams(results[0][1].spec, values)


def _choose_model(models: list[ModelParams], shard: DatasetShard) -> int:
    losses = [forward_loss(m, shard) for m in models]
    return int(np.argmin(losses))  # first minimum: ties go to the lowest index


RoundCallback = Callable[[BaselineResult], None]


def run_baseline(
    kind: str,
    scenario: FederatedScenario,
    config: TrainConfig,
    *,
    callback: RoundCallback | None = None,
    evaluate: bool = True,
) -> BaselineResult:
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    spec = model_spec_for(scenario, config)
    shards = scenario.train
    test = eval_shards(scenario)
    union = stack_shards(test)

    if kind == "ifca":
        models = {j: initial_model(spec, config, j) for j in range(config.num_models)}
        res = BaselineResult(kind, None, models)
    else:
        res = BaselineResult(kind, initial_model(spec, config))
        if kind != "ditto":
            res.models = {0: res.global_model}

    for t in range(config.rounds):
        start = time.perf_counter()
        sampled = sample_clients(scenario.num_clients, config, t)

        if kind in ("fedavg", "fedprox"):
            server = res.global_model
            lam = config.lam if kind == "fedprox" else 0.0
            center = server.values if kind == "fedprox" else None

            def work(i: int):
                return i, local_sgd(server, shards[i], config, batch_seed(config, t, i), center, lam), len(shards[i])

            res.global_model = _fedavg(map_clients(work, sampled, config.workers), config.weighting)
            res.models = {0: res.global_model}

        elif kind == "ditto":
            server = res.global_model
            for i in sampled:
                res.models.setdefault(i, server)
            personal = dict(res.models)

            def work(i: int):
                seed = batch_seed(config, t, i)
                v = local_sgd(personal[i], shards[i], config, seed, server.values, config.lam)
                w = local_sgd(server, shards[i], config, seed)
                return i, v, w, len(shards[i])

            out = map_clients(work, sampled, config.workers)
            for i, v, _, _ in out:
                res.models[i] = v
            res.global_model = _fedavg([(i, w, n) for i, _, w, n in out], config.weighting)

        else:  # ifca
            current = [res.models[j] for j in range(config.num_models)]

            def work(i: int):
                j = _choose_model(current, shards[i])
                return i, j, local_sgd(current[j], shards[i], config, batch_seed(config, t, i)), len(shards[i])

            out = map_clients(work, sampled, config.workers)
            for j in range(config.num_models):
                adopters = [(i, m, n) for i, jj, m, n in out if jj == j]
                if adopters:
                    res.models[j] = _fedavg(adopters, config.weighting)
            for i, j, _, _ in out:
                res.assignment[i] = j

        res.round = t + 1
        if evaluate:
            rec = _evaluate(res, scenario, test, union)
            rec.wall_ms = (time.perf_counter() - start) * 1000.0
            res.metrics.append(rec)
        if callback is not None:
            callback(res)
    return res


def _evaluate(res: BaselineResult, scenario: FederatedScenario, test, union: DatasetShard) -> MetricsRecord:
    global_acc = None
    if res.global_model is not None:
        global_acc = num_correct(res.global_model, union) / len(union)
    cluster_acc = ari = None
    k = 1
    if res.kind == "ditto":
        k = len(res.models)
        cluster_acc = pooled_accuracy([(res.models[c], test[c]) for c in sorted(res.models)])
    elif res.kind == "ifca":
        k = len(res.models)
        models = [res.models[j] for j in range(len(res.models))]
        # every client picks the model with the lowest loss on its own training data
        choice = {c: _choose_model(models, scenario.train[c]) for c in range(scenario.num_clients)}
        cluster_acc = pooled_accuracy([(models[choice[c]], test[c]) for c in sorted(choice)])
        ari = compute_ari(choice, scenario.true_cluster)
    return MetricsRecord(
        round=res.round, k_tilde=k, clustering_objective=None,
        global_acc=global_acc, cluster_acc=cluster_acc, ari=ari,
    )
