"""
Ready-made per-model metrics for sample_path
Each factory binds a dataset (and config) and returns model -> value
"""
import math
from typing import Callable, Dict, Optional

import numpy as np

from data_forge.dataset import LabeledDataset
from landscape_analysis.hessian import DEFAULT_HESSIAN_SAMPLES, DEFAULT_MAX_ITER, DEFAULT_REL_TOL, mean_lambda_max
from landscape_analysis.robustness import robustness_loss
from nn_core.engine import Model, sample_losses
from nn_core.evaluation import accuracy, logits, mean_loss, predict
from shared.schemas import PGDConfig


def clean_loss(data: LabeledDataset) -> Callable[[Model], float]:
    return lambda model: mean_loss(model, data.images, data.labels)


def clean_accuracy(data: LabeledDataset) -> Callable[[Model], float]:
    return lambda model: accuracy(model, data.images, data.labels)


def clean_error(data: LabeledDataset) -> Callable[[Model], float]:
    return lambda model: 1.0 - accuracy(model, data.images, data.labels)


def clean_metrics(data: LabeledDataset) -> Callable[[Model], Dict[str, float]]:
    """Loss, error and accuracy from one forward pass."""
    def evaluate(model: Model) -> Dict[str, float]:
        out = logits(model, data.images)
        acc = float(np.mean(out.argmax(axis=1) == data.labels))
        return {
            "clean_loss": float(sample_losses(out, data.labels).mean()),
            "clean_accuracy": acc,
            "clean_error": 1.0 - acc,
        }
    return evaluate


def attack_success(triggered: LabeledDataset) -> Callable[[Model], float]:
    """Fraction of tampered inputs classified as the adversary's target (labels hold the targets)."""
    return lambda model: accuracy(model, triggered.images, triggered.labels)


def triggered_true_error(triggered: LabeledDataset) -> Callable[[Model], float]:
    """Prediction error on tampered inputs measured against their true labels."""
    return lambda model: float(np.mean(predict(model, triggered.images) != triggered.original_labels))


def injection_success(data: LabeledDataset, indices, target_labels) -> Callable[[Model], float]:
    images = data.images[list(indices)]
    targets = np.asarray(list(target_labels), dtype=np.int64)

    def evaluate(model: Model) -> float:
        if targets.size == 0:
            return 0.0
        return float(np.mean(predict(model, images) == targets))
    return evaluate


def robustness_loss_metric(data: LabeledDataset, pgd: PGDConfig) -> Callable[[Model], float]:
    return lambda model: robustness_loss(model, data, pgd)


def lambda_max_stats(
    data: LabeledDataset,
    n_samples: Optional[int] = DEFAULT_HESSIAN_SAMPLES,
    seed: int = 0,
    rel_tol: float = DEFAULT_REL_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Callable[[Model], Dict[str, float]]:
    """Mean lambda_max over a seeded subset, with its log for plotting (NaN when not positive)."""
    def evaluate(model: Model) -> Dict[str, float]:
        mean, estimates = mean_lambda_max(model, data, n_samples, seed, rel_tol, max_iter)
        return {
            "lambda_max": mean,
            "log_lambda_max": math.log(mean) if mean > 0.0 else math.nan,
            "alignment_c": float(np.mean([p.alignment_c for p in estimates])),
        }
    return evaluate
