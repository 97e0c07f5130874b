"""
Robustness loss, Pearson correlation and barrier detection
"""
import math
from typing import Optional, Sequence

import numpy as np

from attacks.pgd import attack_dataset
from data_forge.dataset import LabeledDataset
from nn_core.engine import Model
from nn_core.evaluation import mean_loss
from shared.errors import MetricMissingError
from shared.schemas import PathProfile, PGDConfig


def robustness_loss(model: Model, data: LabeledDataset, pgd: PGDConfig) -> float:
    """Mean cross-entropy on PGD-perturbed inputs against the true labels."""
    if len(data) == 0:
        raise ValueError("cannot evaluate robustness loss on an empty set")
    return mean_loss(model, attack_dataset(model, data, pgd), data.labels)


def pearson(a: Sequence[float], b: Sequence[float]) -> Optional[float]:
    """Pearson correlation; None when either sequence has zero variance or holds NaN."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two 1-D sequences of equal length")
    if a.size < 2 or not (np.isfinite(a).all() and np.isfinite(b).all()):
        return None
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        return None
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def barrier_height(profile: PathProfile, metric: str) -> float:
    """max over interior t of metric(t) minus the larger endpoint value; > 0 means a barrier."""
    missing = [r.t for r in profile.records if metric not in r.metrics or math.isnan(r.metrics[metric])]
    if missing:
        raise MetricMissingError(f"metric '{metric}' missing at t={missing}")
    values = profile.column(metric)
    if len(values) < 3:
        raise ValueError("barrier height needs at least one interior grid point")
    return max(values[1:-1]) - max(values[0], values[-1])
