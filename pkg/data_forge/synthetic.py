"""
Synthetic glyph dataset - a desk-scale stand-in for small natural-image sets
Each class is a procedural binary pattern; samples add seeded pixel noise
"""
from typing import Callable, List, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from data_forge.dataset import LabeledDataset
from shared.logging_config import get_logger

logger = get_logger("data")

GlyphFn = Callable[[np.ndarray, np.ndarray, int], np.ndarray]

GLYPHS: List[GlyphFn] = [
    lambda r, c, s: (r // 2) % 2 == 0,
    lambda r, c, s: (c // 2) % 2 == 0,
    lambda r, c, s: np.abs(r - c) <= 1,
    lambda r, c, s: np.abs(r + c - (s - 1)) <= 1,
    lambda r, c, s: ((r // 3) + (c // 3)) % 2 == 0,
    lambda r, c, s: (np.abs(r - s // 2) <= 1) | (np.abs(c - s // 2) <= 1),
    lambda r, c, s: (r < 2) | (c < 2) | (r >= s - 2) | (c >= s - 2),
    lambda r, c, s: (r >= s // 4) & (r < 3 * s // 4) & (c >= s // 4) & (c < 3 * s // 4),
    lambda r, c, s: r < s // 2,
    lambda r, c, s: c < s // 2,
    lambda r, c, s: np.abs(np.hypot(r - (s - 1) / 2, c - (s - 1) / 2) - s / 3) < 1.2,
    lambda r, c, s: (np.abs(r - c) <= 1) | (np.abs(r + c - (s - 1)) <= 1),
    lambda r, c, s: r >= s // 2,
    lambda r, c, s: c >= s // 2,
    lambda r, c, s: (r + c) % 2 == 0,
    lambda r, c, s: (r % 3 == 0) & (c % 3 == 0),
]

MIN_IMAGE_SIZE = 6


def glyph(index: int, size: int) -> np.ndarray:
    """
    Binary pattern for a class, as float64 (size, size)
    The bottom-right corner block stays dark so stamped triggers never look like a glyph
    """
    if not 0 <= index < len(GLYPHS):
        raise ValueError(f"only {len(GLYPHS)} glyph patterns are available, asked for #{index}")
    r, c = np.mgrid[0:size, 0:size]
    pattern = GLYPHS[index](r, c, size).astype(np.float64)
    corner = -(-size // 4)
    pattern[size - corner:, size - corner:] = 0.0
    return pattern


def gen_synthetic(
    num_classes: int,
    samples_per_class: int,
    image_size: int = 12,
    noise_level: float = 0.1,
    seed: int = 0,
    channels: int = 1,
) -> LabeledDataset:
    """
    Generate a shuffled glyph dataset

    Args:
        num_classes: number of distinct glyphs (2..16)
        samples_per_class: images per class
        noise_level: std of additive Gaussian pixel noise before clipping to [0, 1]
        seed: fully determines the output

    Returns:
        LabeledDataset with source tag 'synthetic:seed=<seed>'
    """
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    if num_classes > len(GLYPHS):
        raise ValueError(f"glyph count {num_classes} exceeds the {len(GLYPHS)} available patterns")
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size must be at least {MIN_IMAGE_SIZE}")
    if samples_per_class <= 0 or channels <= 0 or noise_level < 0:
        raise ValueError("samples_per_class and channels must be positive, noise_level non-negative")

    rng = np.random.default_rng(seed)
    bases = np.stack([glyph(k, image_size) for k in range(num_classes)])
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    images = np.repeat(bases[labels][:, None], channels, axis=1)
    images = np.clip(images + noise_level * rng.standard_normal(images.shape), 0.0, 1.0)
    order = rng.permutation(labels.size)

    logger.info(
        "generated %d synthetic samples (%d classes, %dx%d, noise %.3f, seed %d)",
        labels.size, num_classes, image_size, image_size, noise_level, seed,
    )
    return LabeledDataset(
        images=images[order],
        labels=labels[order],
        num_classes=num_classes,
        source=f"synthetic:seed={seed}",
        role="generated",
    )


def split_train_test(
    data: LabeledDataset, test_fraction: float, seed: int
) -> Tuple[LabeledDataset, LabeledDataset]:
    """Stratified disjoint split sharing the parent's id space."""
    train_idx, test_idx = train_test_split(
        np.arange(len(data)),
        test_size=test_fraction,
        stratify=data.labels,
        random_state=seed,
    )
    return data.subset(np.sort(train_idx), role="train"), data.subset(np.sort(test_idx), role="test")
