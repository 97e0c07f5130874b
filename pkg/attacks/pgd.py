"""
Projected gradient descent on the input (l-infinity ball)
"""
from typing import Callable, List, Optional, Tuple

import numpy as np

from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, check_batch, forward, loss_and_gradients
from nn_core.trainer import BatchPerturb, train
from shared.logging_config import get_logger
from shared.schemas import PGDConfig, TrainConfig

logger = get_logger("attacks")


def _project(x_adv: np.ndarray, x: np.ndarray, cfg: PGDConfig) -> np.ndarray:
    delta = np.clip(x_adv - x, -cfg.epsilon, cfg.epsilon)
    return np.clip(x + delta, cfg.box[0], cfg.box[1])


Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def sign_ascent(
    objective: Objective,
    x: np.ndarray,
    cfg: PGDConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, List[float]]:
    """
    Projected sign-gradient ascent of objective(x) -> (loss, gradient)

    Returns the final iterate and the loss before each step.
    """
    lo, hi = cfg.box
    if x.size and (x.min() < lo or x.max() > hi):
        raise ValueError(f"inputs must lie inside the box [{lo}, {hi}]")
    x_adv = x.copy()
    if cfg.epsilon == 0.0:
        return x_adv, []
    if cfg.random_start:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        x_adv = _project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg)

    step_size = cfg.effective_step_size
    losses: List[float] = []
    for _ in range(cfg.steps):
        loss, grad = objective(x_adv)
        losses.append(loss)
        x_adv = _project(x_adv + step_size * np.sign(grad), x, cfg)
    return x_adv, losses


def pgd_trace(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    cfg: PGDConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, List[float]]:
    """
    Run PGD and report the batch loss at every iterate

    Returns:
        (adversarial batch, losses) where losses[k] is the mean loss at the
        k-th iterate, losses[0] at the start point and losses[-1] at the output.
    """
    x = check_batch(model.spec, batch, labels)
    labels = np.asarray(labels)

    def objective(x_adv: np.ndarray) -> Tuple[float, np.ndarray]:
        grads = loss_and_gradients(model, x_adv, labels, weights=False, inputs=True)
        return grads.loss, grads.inputs

    x_adv, losses = sign_ascent(objective, x, cfg, rng)
    if losses:
        losses.append(forward(model, x_adv, labels).loss)
    return x_adv, losses


def pgd_attack(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    cfg: PGDConfig,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """x + delta with ||delta||_inf <= epsilon and x + delta inside the box."""
    return pgd_trace(model, batch, labels, cfg, rng)[0]


def pgd_perturb(cfg: PGDConfig) -> BatchPerturb:
    """Minibatch transform for adversarial and robust-path training."""
    def perturb(model: Model, images: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return pgd_attack(model, images, labels, cfg, rng=rng)
    return perturb


def attack_dataset(model: Model, data: LabeledDataset, cfg: PGDConfig, batch_size: int = 256) -> np.ndarray:
    """PGD over a whole dataset in fixed batches; returns the adversarial images."""
    parts = [
        pgd_attack(model, data.images[i:i + batch_size], data.labels[i:i + batch_size], cfg)
        for i in range(0, len(data), batch_size)
    ]
    if not parts:
        return data.images.copy()
    return np.concatenate(parts, axis=0)


def adv_train(model: Model, data: LabeledDataset, pgd: PGDConfig, cfg: TrainConfig) -> Model:
    """Each weight update consumes the PGD-perturbed minibatch with its true labels."""
    logger.info("adversarial training: epsilon=%.5f, %d steps", pgd.epsilon, pgd.steps)
    return train(model, data, cfg, perturb=pgd_perturb(pgd))
