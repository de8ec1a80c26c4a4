"""Flat ``section.key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Every key except ``seed`` is namespaced by a section. See README.md for the
full schema and defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..baselines import BASELINES
from ..datagen import SCENARIO_KINDS
from ..fedcore import ANCHORS, WEIGHTINGS, TrainConfig

ALGORITHMS = ("stocfl", *BASELINES)
SOURCES = ("synthetic", "idx")


class ConfigError(ValueError):
    def __init__(self, message: str, *, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass
class ScenarioConfig:
    kind: str
    source: str = "synthetic"
    num_classes: int = 10
    dim: int = 20
    class_separation: float = 8.0
    clients_per_cluster: int = 20
    samples_per_client: int = 50
    test_samples_per_client: int = 50
    shifts: tuple[int, ...] = (0, 3, 6, 9)
    num_rotations: int = 4
    label_groups: tuple[tuple[int, ...], ...] = ((0, 1, 2), (3, 4), (5, 6), (7, 8, 9))
    holdout_per_cluster: int = 0
    idx_images: str | None = None
    idx_labels: str | None = None
    idx_images_b: str | None = None
    idx_labels_b: str | None = None


@dataclass
class OutputConfig:
    dir: str = "out"
    representations: bool = True
    timing: bool = False


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    algorithm: str
    train: TrainConfig
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def seed(self) -> int:
        return self.train.seed


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _groups(v: str) -> tuple[tuple[int, ...], ...]:
    return tuple(_int_list(g) for g in v.split(";") if g.strip())


def _batch(v: str) -> int | None:
    return None if v.lower() == "full" else int(v)


def _str(v: str) -> str:
    return v


# key -> (target block, attribute, parser)
SCHEMA = {
    "seed": ("train", "seed", _int),
    "scenario.kind": ("scenario", "kind", _str),
    "scenario.source": ("scenario", "source", _str),
    "scenario.num_classes": ("scenario", "num_classes", _int),
    "scenario.dim": ("scenario", "dim", _int),
    "scenario.class_separation": ("scenario", "class_separation", _float),
    "scenario.clients_per_cluster": ("scenario", "clients_per_cluster", _int),
    "scenario.samples_per_client": ("scenario", "samples_per_client", _int),
    "scenario.test_samples_per_client": ("scenario", "test_samples_per_client", _int),
    "scenario.shifts": ("scenario", "shifts", _int_list),
    "scenario.num_rotations": ("scenario", "num_rotations", _int),
    "scenario.label_groups": ("scenario", "label_groups", _groups),
    "scenario.holdout_per_cluster": ("scenario", "holdout_per_cluster", _int),
    "scenario.idx_images": ("scenario", "idx_images", _str),
    "scenario.idx_labels": ("scenario", "idx_labels", _str),
    "scenario.idx_images_b": ("scenario", "idx_images_b", _str),
    "scenario.idx_labels_b": ("scenario", "idx_labels_b", _str),
    "algorithm.kind": ("algorithm", "kind", _str),
    "algorithm.num_models": ("train", "num_models", _int),
    "model.hidden_dims": ("train", "hidden_dims", _int_list),
    "train.eta": ("train", "eta", _float),
    "train.lambda": ("train", "lam", _float),
    "train.tau": ("train", "tau", _float),
    "train.rounds": ("train", "rounds", _int),
    "train.sample_rate": ("train", "sample_rate", _float),
    "train.sample_size": ("train", "sample_size", _int),
    "train.local_epochs": ("train", "local_epochs", _int),
    "train.batch_size": ("train", "batch_size", _batch),
    "train.workers": ("train", "workers", _int),
    "train.weighting": ("train", "weighting", _str),
    "train.anchor": ("train", "anchor", _str),
    "output.dir": ("output", "dir", _str),
    "output.representations": ("output", "representations", _bool),
    "output.timing": ("output", "timing", _bool),
}


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError("duplicate key", key=key, line=lineno)
        try:
            values[key] = SCHEMA[key][2](value)
        except ValueError as exc:
            raise ConfigError(f"invalid value {value!r} ({exc})", key=key, line=lineno) from None
        lines[key] = lineno
    return build_config(values, lines)


def build_config(values: dict[str, object], lines: dict[str, int] | None = None) -> ExperimentConfig:
    """Validate parsed values and assemble an :class:`ExperimentConfig`."""
    lines = lines or {}
    for required in ("scenario.kind", "algorithm.kind"):
        if required not in values:
            raise ConfigError("missing required key", key=required)

    blocks: dict[str, dict[str, object]] = {"scenario": {}, "train": {}, "output": {}, "algorithm": {}}
    for key, value in values.items():
        block, attr, _ = SCHEMA[key]
        blocks[block][attr] = value

    def fail(key: str, message: str):
        raise ConfigError(message, key=key, line=lines.get(key))

    kind = blocks["algorithm"]["kind"]
    if kind not in ALGORITHMS:
        fail("algorithm.kind", f"must be one of {', '.join(ALGORITHMS)}")
    scen = blocks["scenario"]
    if scen["kind"] not in SCENARIO_KINDS:
        fail("scenario.kind", f"must be one of {', '.join(SCENARIO_KINDS)}")
    if scen.get("source", "synthetic") not in SOURCES:
        fail("scenario.source", f"must be one of {', '.join(SOURCES)}")
    train = blocks["train"]

    checks = [
        ("train.eta", train.get("eta", 1.0) > 0, "must be positive"),
        ("train.lambda", train.get("lam", 0.0) >= 0, "must be non-negative"),
        ("train.rounds", train.get("rounds", 0) >= 0, "must be non-negative"),
        ("train.sample_rate", 0 < train.get("sample_rate", 0.1) <= 1, "must be in (0, 1]"),
        ("train.sample_size", train.get("sample_size") is None or train["sample_size"] >= 1, "must be positive"),
        ("train.local_epochs", train.get("local_epochs", 1) >= 1, "must be >= 1"),
        ("train.batch_size", train.get("batch_size") is None or train["batch_size"] >= 1, "must be positive or 'full'"),
        ("train.workers", train.get("workers", 1) >= 1, "must be >= 1"),
        ("train.weighting", train.get("weighting", "samples") in WEIGHTINGS, f"must be one of {', '.join(WEIGHTINGS)}"),
        ("train.anchor", train.get("anchor", "omega0") in ANCHORS, f"must be one of {', '.join(ANCHORS)}"),
        ("algorithm.num_models", train.get("num_models", 1) >= 1, "must be >= 1"),
        ("model.hidden_dims", all(h >= 1 for h in train.get("hidden_dims", ())), "entries must be positive"),
        ("scenario.num_classes", scen.get("num_classes", 10) >= 2, "must be >= 2"),
        ("scenario.dim", scen.get("dim", 2) >= 2, "must be >= 2"),
        ("scenario.class_separation", scen.get("class_separation", 1.0) > 0, "must be positive"),
        ("scenario.clients_per_cluster", scen.get("clients_per_cluster", 1) >= 1, "must be >= 1"),
        ("scenario.samples_per_client", scen.get("samples_per_client", 1) >= 1, "must be >= 1"),
        ("scenario.test_samples_per_client", scen.get("test_samples_per_client", 1) >= 1, "must be >= 1"),
        ("scenario.shifts", len(scen.get("shifts", (0,))) >= 1, "must be non-empty"),
        ("scenario.num_rotations", scen.get("num_rotations", 2) >= 2, "must be >= 2"),
        ("scenario.label_groups", len(scen.get("label_groups", ((0,),))) >= 1, "must be non-empty"),
        ("scenario.holdout_per_cluster", scen.get("holdout_per_cluster", 0) >= 0, "must be non-negative"),
    ]
    for key, ok, message in checks:
        if not ok:
            fail(key, message)
    if scen.get("source") == "idx":
        for key in ("scenario.idx_images", "scenario.idx_labels"):
            if key not in values:
                fail(key, "required when scenario.source = idx")

    try:
        train_cfg = TrainConfig(**train)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        scenario=ScenarioConfig(**scen),
        algorithm=kind,
        train=train_cfg,
        output=OutputConfig(**blocks["output"]),
    )


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config_text(text)
