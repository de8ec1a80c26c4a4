"""Seeded analytic-vs-finite-difference gradient suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numkernel import DatasetShard, ModelParams, ModelSpec, finite_diff_gradient, gradient, param_count

DEFAULT_STEP = 1e-5
NUM_CASES = 20
# coordinates whose magnitudes are both below this are compared absolutely
REL_FLOOR = 1e-6


@dataclass(frozen=True)
class GradCase:
    seed: int
    params: ModelParams
    shard: DatasetShard


def tolerance_for(step: float) -> float:
    """1e-4 at the default step; truncation error grows with the step, so 10*h above that."""
    return max(1e-4, 10.0 * step)


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def make_case(seed: int) -> GradCase:
    """Even seeds: multinomial logistic regression; odd seeds: one ReLU hidden layer."""
    rng = np.random.default_rng([seed, 0x6AD])
    d = int(rng.integers(2, 11))
    n = int(rng.integers(1, 17))
    c = int(rng.integers(2, 6))
    hidden = () if seed % 2 == 0 else (int(rng.integers(2, 7)),)
    spec = ModelSpec(d, c, hidden)
    params = ModelParams(spec, rng.normal(0.0, 0.7, size=param_count(spec)))
    shard = DatasetShard(rng.normal(0.0, 1.0, size=(n, d)), rng.integers(0, c, size=n))
    return GradCase(seed, params, shard)


def gradcheck_suite(step: float = DEFAULT_STEP, break_gradient: bool = False) -> tuple[float, list[float]]:
    """Return (max relative error, per-case max relative errors) over the seeded cases.

    ``break_gradient`` perturbs the analytic gradient so the check must fail
    (negative control).
    """
    per_case = []
    for seed in range(NUM_CASES):
        case = make_case(seed)
        g = gradient(case.params, case.shard)
        if break_gradient:
            g = g * 1.01 + 1e-3
        fd = finite_diff_gradient(case.params, case.shard, step)
        per_case.append(float(relative_error(g, fd).max()))
    return max(per_case), per_case
