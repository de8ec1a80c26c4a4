"""Experiment orchestration and CSV emission."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import datagen
from ..baselines import run_baseline
from ..datagen import BaseDataset, FederatedScenario
from ..fedcore import DATA_STREAM, derive_seed, make_anchor, model_spec_for, run_stocfl, sample_clients
from ..metrics import METRICS_HEADER, MetricsRecord, compute_ari, purity
from ..reprcluster import (
    ClusterPartition,
    extract_representation,
    infer_cluster,
    ingest_round,
    merge_step,
    write_representations,
)
from .config import ExperimentConfig, ScenarioConfig

log = logging.getLogger(__name__)

CLUSTERS_HEADER = ("client_id", "true_cluster", "assigned_cluster")
INFERENCE_HEADER = ("client_id", "true_cluster", "assigned_cluster", "created_new", "source_cluster", "correct")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _subsample(base: BaseDataset, n: int, seed: int) -> BaseDataset:
    if n > len(base):
        raise ValueError(f"dataset has {len(base)} samples, scenario needs {n}")
    idx = np.sort(np.random.default_rng(seed).permutation(len(base))[:n])
    return BaseDataset(base.features[idx], base.labels[idx], base.num_classes)


def _base(sc: ScenarioConfig, n: int, seed: int, which: int = 0) -> BaseDataset:
    if sc.source == "idx":
        images = sc.idx_images if which == 0 else sc.idx_images_b
        labels = sc.idx_labels if which == 0 else sc.idx_labels_b
        if images is None or labels is None:
            raise ValueError("hybrid scenario from IDX needs scenario.idx_images_b and scenario.idx_labels_b")
        return _subsample(datagen.load_idx(images, labels), n, seed)
    return datagen.make_base_dataset(seed, n, sc.dim, sc.num_classes, sc.class_separation)


def build_scenario(cfg: ExperimentConfig) -> tuple[FederatedScenario, FederatedScenario | None]:
    """Generate the configured scenario; returns (participants, held-out clients or None)."""
    sc = cfg.scenario
    seed = cfg.seed
    per_client = sc.samples_per_client + sc.test_samples_per_client
    m = sc.clients_per_cluster + sc.holdout_per_cluster
    data_seed = derive_seed(seed, DATA_STREAM, 0)
    part_seed = derive_seed(seed, DATA_STREAM, 1) % (2**32)

    if sc.kind == "shifted":
        base = _base(sc, len(sc.shifts) * m * per_client, data_seed)
        scen = datagen.partition_shifted(base, sc.shifts, m, part_seed)
    elif sc.kind == "rotated":
        base = _base(sc, sc.num_rotations * m * per_client, data_seed)
        scen = datagen.partition_rotated(base, sc.num_rotations, m, part_seed)
    elif sc.kind == "pathological":
        num_classes = sc.num_classes
        smallest = min(len(g) for g in sc.label_groups)
        # the smallest group gets exactly m * per_client samples
        n = -(-num_classes * m * per_client // smallest)
        base = _base(sc, n, data_seed)
        scen = datagen.partition_pathological(base, sc.label_groups, m, part_seed)
    elif sc.kind == "hybrid":
        a = _base(sc, m * per_client, data_seed, 0)
        b = _base(sc, m * per_client, derive_seed(seed, DATA_STREAM, 2), 1)
        scen = datagen.partition_hybrid(a, b, m, part_seed)
    else:
        base = _base(sc, m * per_client, data_seed)
        scen = datagen.partition_iid(base, m, part_seed)

    frac = sc.test_samples_per_client / per_client
    scen = datagen.train_test_split(scen, frac, derive_seed(seed, DATA_STREAM, 3))
    return datagen.split_holdout(scen, sc.holdout_per_cluster)


@dataclass
class RunResult:
    algorithm: str
    metrics: list[MetricsRecord]
    assignment: dict[int, int]
    scenario: FederatedScenario
    partition: ClusterPartition | None = None
    inference: list[tuple] = field(default_factory=list)
    out_dir: Path | None = None
    rounds: int | None = None

    @property
    def final(self) -> MetricsRecord | None:
        return self.metrics[-1] if self.metrics else None

    def summary_line(self) -> str:
        rec = self.final
        rounds = self.rounds if self.rounds is not None else len(self.metrics)
        parts = [f"algorithm={self.algorithm}", f"rounds={rounds}"]
        if rec is None and self.partition is not None and self.assignment:
            ari = compute_ari(self.assignment, self.scenario.true_cluster)
            parts += [
                f"k_tilde={self.partition.k_tilde}",
                f"ari={fmt(ari)}",
                f"purity={fmt(purity(self.assignment, self.scenario.true_cluster))}",
            ]
        elif rec is not None:
            parts += [
                f"k_tilde={rec.k_tilde}",
                f"ari={fmt(rec.ari) or 'na'}",
                f"global_acc={fmt(rec.global_acc) or 'na'}",
                f"cluster_acc={fmt(rec.cluster_acc) or 'na'}",
            ]
            if rec.ari is not None:
                parts.append(f"purity={fmt(purity(self.assignment, self.scenario.true_cluster))}")
        if self.inference:
            correct = sum(1 for row in self.inference if row[-1])
            parts.append(f"holdout_correct={correct}/{len(self.inference)}")
        return "summary " + " ".join(parts)


def infer_holdout(
    partition: ClusterPartition,
    anchor,
    holdout: FederatedScenario,
    participants: FederatedScenario,
    tau: float,
) -> list[tuple]:
    """Place held-out clients without mutating the partition.

    A placement is correct when it joins an existing cluster whose members
    share the held-out client's true cluster (by majority).
    """
    majority = {}
    for cid, members in partition.clusters.items():
        labels = [participants.true_cluster[c] for c in members]
        majority[cid] = max(set(labels), key=lambda x: (labels.count(x), -x))
    rows = []
    offset = participants.num_clients
    for j, shard in enumerate(holdout.train):
        rep = extract_representation(anchor, shard)
        cid, created, source = infer_cluster(partition, rep, tau)
        truth = holdout.true_cluster[j]
        correct = (not created) and majority[cid] == truth
        rows.append((offset + j, truth, cid, created, source, correct))
    return rows


def _metrics_rows(metrics: Sequence[MetricsRecord], timing: bool):
    for r in metrics:
        yield (
            r.round, r.k_tilde, r.clustering_objective, r.global_acc, r.cluster_acc, r.ari,
            r.wall_ms if timing else None,
        )


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario, holdout = build_scenario(cfg)
    log.info("scenario %s: %d clients, K=%d", scenario.kind, scenario.num_clients, scenario.num_clusters)

    if cfg.algorithm == "stocfl":
        state, metrics = run_stocfl(scenario, cfg.train)
        assignment = state.partition.assignment()
        result = RunResult("stocfl", metrics, assignment, scenario, state.partition)
        if holdout is not None and state.partition.k_tilde:
            result.inference = infer_holdout(state.partition, state.anchor, holdout, scenario, cfg.train.tau)
    else:
        res = run_baseline(cfg.algorithm, scenario, cfg.train)
        if cfg.algorithm in ("fedavg", "fedprox"):
            assignment = {c: 0 for c in range(scenario.num_clients)}
        elif cfg.algorithm == "ditto":
            assignment = {c: c for c in res.models}
        else:
            assignment = dict(res.assignment)
        result = RunResult(cfg.algorithm, res.metrics, assignment, scenario)

    _write_outputs(result, cfg, out)
    return result


def run_cluster_only(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Stochastic clustering rounds without any training."""
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario, holdout = build_scenario(cfg)
    anchor = make_anchor(model_spec_for(scenario, cfg.train), cfg.train)
    part = ClusterPartition()
    for t in range(cfg.train.rounds):
        ingest_round(part, sample_clients(scenario.num_clients, cfg.train, t), anchor, scenario.train)
        merge_step(part, cfg.train.tau)
    assignment = part.assignment()
    result = RunResult("cluster-only", [], assignment, scenario, part, rounds=cfg.train.rounds)
    if holdout is not None and part.k_tilde:
        result.inference = infer_holdout(part, anchor, holdout, scenario, cfg.train.tau)
    _write_outputs(result, cfg, out, metrics=False)
    return result


def _write_outputs(result: RunResult, cfg: ExperimentConfig, out: Path, metrics: bool = True) -> None:
    scenario = result.scenario
    if metrics:
        _write_csv(out / "metrics.csv", METRICS_HEADER, _metrics_rows(result.metrics, cfg.output.timing))
    _write_csv(
        out / "clusters.csv",
        CLUSTERS_HEADER,
        ((c, scenario.true_cluster[c], result.assignment.get(c)) for c in range(scenario.num_clients)),
    )
    if result.partition is not None and cfg.output.representations:
        write_representations(out / "representations.csv", result.partition, scenario.true_cluster)
    if result.inference:
        _write_csv(out / "inference.csv", INFERENCE_HEADER, result.inference)
    line = result.summary_line()
    (out / "summary.txt").write_text(line + "\n")
    result.out_dir = out
