"""
Multi-seed stability: mean and standard deviation of every metric per t
"""
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from shared.schemas import PathProfile

DEFAULT_SEEDS = tuple(range(10))


class MetricStats(BaseModel):
    mean: List[float]
    std: List[float]


class StabilitySummary(BaseModel):
    t_grid: List[float]
    seeds: List[int]
    metrics: Dict[str, MetricStats]

    def rows(self) -> List[dict]:
        """One row per t with <metric>_mean / <metric>_std columns."""
        out = []
        for i, t in enumerate(self.t_grid):
            row = {"t": t}
            for name, stats in self.metrics.items():
                row[f"{name}_mean"] = stats.mean[i]
                row[f"{name}_std"] = stats.std[i]
            out.append(row)
        return out


def stability_summary(profiles: Sequence[PathProfile], seeds: Sequence[int]) -> StabilitySummary:
    """Population std (0.0 for a single run); profiles must share a grid."""
    if not profiles:
        raise ValueError("stability summary needs at least one profile")
    if len(profiles) != len(seeds):
        raise ValueError("one seed per profile expected")
    grid = profiles[0].t_grid
    if any(p.t_grid != grid for p in profiles):
        raise ValueError("profiles were sampled on different grids")

    metrics: Dict[str, MetricStats] = {}
    for name in profiles[0].metric_names():
        table = np.asarray([p.column(name) for p in profiles])
        metrics[name] = MetricStats(mean=table.mean(axis=0).tolist(), std=table.std(axis=0).tolist())
    return StabilitySummary(t_grid=list(grid), seeds=list(seeds), metrics=metrics)


def multi_seed_profiles(
    run: Callable[[int], PathProfile], seeds: Iterable[int] = DEFAULT_SEEDS
) -> Tuple[List[PathProfile], StabilitySummary]:
    seeds = list(seeds)
    profiles = [run(seed) for seed in seeds]
    return profiles, stability_summary(profiles, seeds)
