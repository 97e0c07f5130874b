"""
Comparison baselines: fine-tuning, training from scratch, Gaussian-noise
models around the tampered pair, and magnitude-based pruning with retraining
"""
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, WeightVector, init_model
from nn_core.trainer import train
from shared.errors import LayoutMismatchError
from shared.logging_config import get_logger
from shared.schemas import Conv2D, Dense, Flatten, ModelSpec, TrainConfig

logger = get_logger("repair")

NOISE_REPETITIONS = 50
PRUNE_PRESETS: Dict[str, float] = {"vgg": 0.6, "resnet": 0.2}


def finetune(model: Model, bonafide: LabeledDataset, cfg: TrainConfig) -> Model:
    return train(model, bonafide, cfg)


def train_scratch(spec: ModelSpec, bonafide: LabeledDataset, cfg: TrainConfig) -> Model:
    return train(init_model(spec, cfg.seed), bonafide, cfg)


def gaussian_noise_models(w1: Model, w2: Model, n: int = NOISE_REPETITIONS, seed: int = 0) -> List[Model]:
    """
    n noisy copies of w1 followed by n of w2

    Each coordinate gets Normal(0, |w1_i - w2_i|) noise.
    """
    if w1.spec != w2.spec:
        raise LayoutMismatchError("noise baseline needs two models with the same spec")
    if n < 0:
        raise ValueError("n must be non-negative")
    std = np.abs(w1.weights.data - w2.weights.data)
    rng = np.random.default_rng(seed)
    models = []
    for base in (w1, w2):
        for _ in range(n):
            noise = rng.standard_normal(std.size) * std
            models.append(base.with_weights(base.weights.data + noise))
    return models


class NoiseSweep(BaseModel):
    """Accuracies of every noisy model plus their joint histogram"""
    clean_accuracy: List[float]
    attack_success: List[float]
    mean_clean_accuracy: float
    mean_attack_success: float
    histogram: List[List[int]]
    bin_edges: List[float]


def noise_sweep(
    w1: Model,
    w2: Model,
    n: int,
    seed: int,
    clean_metric: Callable[[Model], float],
    attack_metric: Callable[[Model], float],
    bins: int = 10,
) -> NoiseSweep:
    """Evaluate every noisy model; accuracies are binned on [0, 1] x [0, 1]."""
    clean_acc, attack = [], []
    for model in gaussian_noise_models(w1, w2, n, seed):
        clean_acc.append(float(clean_metric(model)))
        attack.append(float(attack_metric(model)))
    edges = np.linspace(0.0, 1.0, bins + 1)
    hist, _, _ = np.histogram2d(clean_acc, attack, bins=[edges, edges])
    return NoiseSweep(
        clean_accuracy=clean_acc,
        attack_success=attack,
        mean_clean_accuracy=float(np.mean(clean_acc)) if clean_acc else 0.0,
        mean_attack_success=float(np.mean(attack)) if attack else 0.0,
        histogram=hist.astype(int).tolist(),
        bin_edges=edges.tolist(),
    )


def _flatten_spatial(spec: ModelSpec, start: int, stop: int) -> int:
    """Columns per unit when a Flatten sits between two parametric layers."""
    shapes = spec.infer_shapes()
    for i in range(start + 1, stop):
        if isinstance(spec.layers[i], Flatten) and len(shapes[i]) == 3:
            return shapes[i][1] * shapes[i][2]
    return 1


def prune_mask(model: Model, fraction: float) -> np.ndarray:
    """
    0/1 mask removing the lowest-l1 fraction of units in every parametric
    layer except the output layer

    A pruned unit loses its incoming weights, its bias and its outgoing weights.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"prune fraction must lie in [0, 1), got {fraction}")
    spec = model.spec
    mask = WeightVector(model.weights.layout, np.ones(len(model.weights)))
    parametric = [i for i, layer in enumerate(spec.layers) if isinstance(layer, (Dense, Conv2D))]

    for pos, i in enumerate(parametric[:-1]):
        weight = model.weights.tensor(i, "weight")
        units = weight.shape[0]
        n_prune = int(np.floor(fraction * units))
        if n_prune == 0:
            continue
        scores = np.abs(weight.reshape(units, -1)).sum(axis=1)
        pruned = np.sort(np.argsort(scores, kind="stable")[:n_prune])

        mask.tensor(i, "weight")[pruned] = 0.0
        mask.tensor(i, "bias")[pruned] = 0.0
        nxt = parametric[pos + 1]
        outgoing = mask.tensor(nxt, "weight")
        if isinstance(spec.layers[nxt], Conv2D):
            outgoing[:, pruned] = 0.0
        else:
            spatial = _flatten_spatial(spec, i, nxt)
            for unit in pruned:
                outgoing[:, unit * spatial:(unit + 1) * spatial] = 0.0
        logger.debug("layer %d: pruned %d/%d units", i, n_prune, units)
    return mask.data


def prune_and_retrain(model: Model, fraction: float, bonafide: LabeledDataset, cfg: TrainConfig) -> Model:
    """Mask the pruned units to zero and keep them there while retraining on bonafide data."""
    mask = prune_mask(model, fraction)
    logger.info("pruning %.0f%% of hidden units, %d weights masked", 100 * fraction, int((mask == 0).sum()))
    return train(model, bonafide, cfg, mask=mask)


def preset_fraction(name: Optional[str], fraction: Optional[float] = None) -> float:
    if fraction is not None:
        return fraction
    if name not in PRUNE_PRESETS:
        raise ValueError(f"unknown pruning preset '{name}', expected one of {sorted(PRUNE_PRESETS)}")
    return PRUNE_PRESETS[name]
