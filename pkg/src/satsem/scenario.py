"""Task arrivals and the weighted semantic-efficiency score.

Arrivals follow a per-user Poisson process thinned to at most one task per
user per slot (extra same-slot arrivals are dropped and counted). Each task
carries uniform latency/quality thresholds and a uniformly chosen content
source satellite.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig


@dataclass
class Task:
    user: int
    slot: int
    size_bits: int
    latency_max_s: float
    quality_min_db: float
    compute_budget_gflops: float  # owning user's budget
    source_satellite: int


@dataclass
class MetricInputs:
    latency_s: float
    quality_db: float
    compute_gflops: float
    latency_max_s: float
    quality_min_db: float
    compute_budget_gflops: float


def weight_grid() -> np.ndarray:
    """All weight triples on the 0.1 grid summing to one, entries >= 0.1.

    Canonical order: lexicographic in the integer triples (i, j, k)/10.
    """
    return _WEIGHT_GRID.copy()


def weight_grid_ints():
    return list(_WEIGHT_GRID_INT)


_WEIGHT_GRID_INT = tuple(
    (i, j, 10 - i - j) for i, j in itertools.product(range(1, 9), repeat=2) if 1 <= 10 - i - j <= 8
)
_WEIGHT_GRID = np.array(_WEIGHT_GRID_INT, dtype=float) / 10.0


def weight_index(triple) -> int:
    ints = tuple(int(round(w * 10)) for w in triple)
    return _WEIGHT_GRID_INT.index(ints)


def generate_tasks(slot: int, cfg: ScenarioConfig, num_satellites: int, user_budgets, rng: np.random.Generator):
    """Tasks arriving this slot; returns (tasks, dropped_arrival_count)."""
    tasks = []
    dropped = 0
    lo_d, hi_d = cfg.latency_range_s
    lo_q, hi_q = cfg.quality_range_db
    for n, budget in enumerate(user_budgets):
        arrivals = rng.poisson(cfg.arrival_rate)
        if arrivals == 0:
            continue
        dropped += arrivals - 1
        tasks.append(
            Task(
                user=n,
                slot=slot,
                size_bits=cfg.task_bits,
                latency_max_s=float(rng.uniform(lo_d, hi_d)),
                quality_min_db=float(rng.uniform(lo_q, hi_q)),
                compute_budget_gflops=float(budget),
                source_satellite=int(rng.integers(num_satellites)),
            )
        )
    return tasks, dropped


def realized_latency_s(
    payload_bits: float,
    serving_sat: int,
    source_sat: int,
    downlink_rate_bps: float,
    isl_rate_bps: float,
    downlink_dist_m: float,
    isl_dist_m: float,
    light_speed_m_s: float = 3e8,
) -> float:
    """Transfer plus propagation time, with a forwarding leg when the content
    sits on a different satellite than the one serving the user.

    A dead link (zero or non-finite rate) yields +inf.
    """
    if downlink_rate_bps <= 0 or not np.isfinite(downlink_rate_bps):
        return float("inf")
    total = payload_bits / downlink_rate_bps + downlink_dist_m / light_speed_m_s
    if serving_sat != source_sat:
        if isl_rate_bps <= 0 or not np.isfinite(isl_rate_bps):
            return float("inf")
        total += payload_bits / isl_rate_bps + isl_dist_m / light_speed_m_s
    return total


def _clamp01(x: float) -> float:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def semantic_efficiency(inputs: MetricInputs, weights, quality_cap_db: float) -> float:
    """Weighted sum of min-max-scaled latency slack, quality surplus, and
    compute slack. Each term is clamped to [0, 1], so the score is too.
    """
    nd = _clamp01((inputs.latency_max_s - inputs.latency_s) / inputs.latency_max_s)
    nq = _clamp01((inputs.quality_db - inputs.quality_min_db) / (quality_cap_db - inputs.quality_min_db))
    nf = _clamp01((inputs.compute_budget_gflops - inputs.compute_gflops) / inputs.compute_budget_gflops)
    if not np.isfinite(inputs.latency_s):
        nd = 0.0
    return weights[0] * nd + weights[1] * nq + weights[2] * nf
