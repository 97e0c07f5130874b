"""
Trigger stamping, training-set poisoning and bonafide subset selection
"""
from typing import Tuple, Union

import numpy as np

from data_forge.dataset import LabeledDataset
from shared.errors import PoisoningError
from shared.logging_config import get_logger
from shared.schemas import AllTargets, SingleTarget, TriggerSpec

logger = get_logger("data")

Rule = Union[SingleTarget, AllTargets]

BONAFIDE_SWEEP = (2500, 1000, 500, 250, 50)


def stamp_trigger(image: np.ndarray, trig: TriggerSpec) -> np.ndarray:
    """Set the bottom-right h x w block of every channel; accepts (..., H, W)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 2:
        raise PoisoningError("image needs at least two spatial dimensions")
    h, w = image.shape[-2:]
    if trig.height > h or trig.width > w:
        raise PoisoningError(f"trigger {trig.height}x{trig.width} does not fit a {h}x{w} image")
    stamped = image.copy()
    stamped[..., h - trig.height:, w - trig.width:] = trig.pixel_value
    return stamped


def target_labels(labels: np.ndarray, rule: Rule, num_classes: int) -> np.ndarray:
    """Adversary labels for the given true labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if isinstance(rule, SingleTarget):
        if rule.target >= num_classes:
            raise PoisoningError(f"target class {rule.target} outside [0, {num_classes})")
        return np.full_like(labels, rule.target)
    if isinstance(rule, AllTargets):
        # (i + 1) mod m taken literally; with m = 9 and 10 classes, class 9 maps to 1
        mapped = (labels + 1) % rule.modulus
        if mapped.size and mapped.max() >= num_classes:
            raise PoisoningError(f"modulus {rule.modulus} yields labels outside [0, {num_classes})")
        return mapped
    raise PoisoningError(f"unknown target rule {rule!r}")


def poison(
    data: LabeledDataset, fraction: float, rule: Rule, trig: TriggerSpec, seed: int
) -> LabeledDataset:
    """
    Stamp and relabel round(fraction * N) samples chosen uniformly without replacement

    Returns:
        New dataset; meta records which samples were poisoned and their true labels
    """
    if not 0.0 <= fraction <= 1.0:
        raise PoisoningError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(data)
    count = int(np.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=count, replace=False)) if count else np.zeros(0, dtype=np.int64)

    images = data.images.copy()
    labels = data.labels.copy()
    poisoned = data.poisoned.copy()
    if count:
        images[chosen] = stamp_trigger(images[chosen], trig)
        labels[chosen] = target_labels(data.original_labels[chosen], rule, data.num_classes)
        poisoned[chosen] = True

    logger.info("poisoned %d/%d samples with %s rule", count, n, rule.variant)
    return data.evolve(images=images, labels=labels, poisoned=poisoned, role="poisoned")


def make_triggered(
    data: LabeledDataset, rule: Rule, trig: TriggerSpec, exclude_target: bool = True
) -> LabeledDataset:
    """
    Fully triggered evaluation set: labels are the adversary targets,
    original_labels keep the true classes

    Samples whose true class already equals their target are dropped when
    exclude_target is set, so accuracy on this set is the attack success rate.
    """
    true_labels = data.original_labels
    targets = target_labels(true_labels, rule, data.num_classes)
    keep = np.flatnonzero(targets != true_labels) if exclude_target else np.arange(len(data))
    subset = data.subset(keep, role="triggered")
    return subset.evolve(
        images=stamp_trigger(subset.images, trig),
        labels=targets[keep],
        poisoned=np.ones(keep.size, dtype=bool),
    )


def split_bonafide(
    test_data: LabeledDataset, size: int, seed: int
) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Draw a clean bonafide subset; everything else is held out

    Raises:
        ValueError when fewer than `size` unpoisoned samples exist
    """
    candidates = np.flatnonzero(~test_data.poisoned)
    if size < 0 or size > candidates.size:
        raise ValueError(f"bonafide size {size} exceeds the {candidates.size} clean samples available")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(candidates, size=size, replace=False))
    heldout = np.setdiff1d(np.arange(len(test_data)), chosen)
    return test_data.subset(chosen, role="bonafide"), test_data.subset(heldout, role="heldout")
