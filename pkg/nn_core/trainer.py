"""
Model Trainer - minibatch SGD with momentum
Deterministic given the config seed; optional per-batch input transform and weight mask
"""
from typing import Callable, Iterator, Optional

import numpy as np

from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, WeightVector, loss_and_gradients
from shared.errors import DivergenceError, NonFiniteError
from shared.logging_config import get_logger
from shared.schemas import TrainConfig

logger = get_logger("nn")

# (model at current weights, images, labels, rng) -> transformed images
BatchPerturb = Callable[[Model, np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


class SGDMomentum:
    """
    Heavy-ball SGD
    v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
    """

    def __init__(self, size: int, learning_rate: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = np.zeros(size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Update params in place."""
        if self.weight_decay:
            grad = grad + self.weight_decay * params
        self.velocity *= self.momentum
        self.velocity += grad
        params -= self.learning_rate * self.velocity


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One shuffled pass over n samples; the last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(
    model: Model,
    data: LabeledDataset,
    cfg: TrainConfig,
    *,
    perturb: Optional[BatchPerturb] = None,
    mask: Optional[np.ndarray] = None,
) -> Model:
    """
    Train a copy of the model on the dataset

    Args:
        perturb: replaces each minibatch's images before the gradient step
            (adversarial training passes PGD here)
        mask: 0/1 vector over the weights; masked coordinates are held at zero

    Returns:
        The trained model; the input model is never modified
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    if data.images.shape[1:] != tuple(model.spec.input_shape):
        raise ValueError(f"dataset images {data.images.shape[1:]} do not match spec {model.spec.input_shape}")

    layout = model.weights.layout
    params = model.weights.data.copy()
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        params *= mask
    if cfg.epochs == 0:
        return Model(model.spec, WeightVector(layout, params))

    rng = np.random.default_rng(cfg.seed)
    optimizer = SGDMomentum(params.size, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    epoch_loss = float("nan")

    for epoch in range(cfg.epochs):
        total = 0.0
        for batch_no, idx in enumerate(iterate_minibatches(len(data), cfg.batch_size, rng)):
            current = Model(model.spec, WeightVector(layout, params))
            images, labels = data.images[idx], data.labels[idx]
            if perturb is not None:
                images = perturb(current, images, labels, rng)
            try:
                step = loss_and_gradients(current, images, labels)
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, batch {batch_no}: {exc}"
                ) from exc

            grad = step.weights.data
            if mask is not None:
                grad = grad * mask
            optimizer.step(params, grad)
            if mask is not None:
                params *= mask
            total += step.loss * len(idx)

        epoch_loss = total / len(data)
        logger.debug("epoch %d/%d mean loss %.6f", epoch + 1, cfg.epochs, epoch_loss)

    logger.info("training finished: %d epochs, last epoch loss %.6f", cfg.epochs, epoch_loss)
    return Model(model.spec, WeightVector(layout, params))
