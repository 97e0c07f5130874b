"""
Batched evaluation helpers: predictions, mean loss, accuracy
"""
from typing import Dict

import numpy as np

from nn_core.engine import Model, forward, sample_losses, softmax

EVAL_BATCH = 256


def logits(model: Model, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    n = images.shape[0]
    if n == 0:
        return np.zeros((0, model.spec.num_classes))
    parts = [forward(model, images[i:i + batch_size]).logits for i in range(0, n, batch_size)]
    return np.concatenate(parts, axis=0)


def predict(model: Model, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    return logits(model, images, batch_size).argmax(axis=1)


def predict_proba(model: Model, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    return softmax(logits(model, images, batch_size))


def mean_loss(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = EVAL_BATCH) -> float:
    """Sample-weighted mean cross-entropy over the whole set."""
    if images.shape[0] == 0:
        raise ValueError("cannot evaluate loss on an empty set")
    out = logits(model, images, batch_size)
    return float(sample_losses(out, np.asarray(labels)).mean())


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = EVAL_BATCH) -> float:
    if images.shape[0] == 0:
        raise ValueError("cannot evaluate accuracy on an empty set")
    return float(np.mean(predict(model, images, batch_size) == np.asarray(labels)))


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray) -> Dict[str, float]:
    """Loss, error and accuracy from a single pass."""
    out = logits(model, images)
    labels = np.asarray(labels)
    acc = float(np.mean(out.argmax(axis=1) == labels))
    return {
        "loss": float(sample_losses(out, labels).mean()),
        "accuracy": acc,
        "error": 1.0 - acc,
    }
