"""
Labeled image dataset with per-sample poisoning metadata and provenance
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from shared.errors import ProvenanceError, ShapeMismatchError


@dataclass(slots=True)
class LabeledDataset:
    """
    Images (N, C, H, W) in [0, 1] with integer labels

    sample_ids index into the id space named by `source`; two datasets with
    the same source share ids, which is what provenance checks rely on.
    """
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    poisoned: Optional[np.ndarray] = None
    original_labels: Optional[np.ndarray] = None
    sample_ids: Optional[np.ndarray] = None
    source: str = "anonymous"
    role: str = "data"

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        if self.poisoned is None:
            self.poisoned = np.zeros(n, dtype=bool)
        if self.original_labels is None:
            self.original_labels = self.labels.copy()
        if self.sample_ids is None:
            self.sample_ids = np.arange(n, dtype=np.int64)
        self.poisoned = np.asarray(self.poisoned, dtype=bool)
        self.original_labels = np.asarray(self.original_labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)

        if self.images.ndim != 4:
            raise ShapeMismatchError(f"images must be (N, C, H, W), got {self.images.shape}")
        for name in ("labels", "poisoned", "original_labels", "sample_ids"):
            if getattr(self, name).shape != (self.images.shape[0],):
                raise ShapeMismatchError(f"{name} length does not match {self.images.shape[0]} images")
        if n:
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValueError(f"labels must lie in [0, {self.num_classes})")
            if self.original_labels.min() < 0 or self.original_labels.max() >= self.num_classes:
                raise ValueError(f"original labels must lie in [0, {self.num_classes})")
            if self.images.min() < 0.0 or self.images.max() > 1.0:
                raise ValueError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray, role: Optional[str] = None) -> "LabeledDataset":
        """Row selection keeping metadata and provenance."""
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            poisoned=self.poisoned[indices],
            original_labels=self.original_labels[indices],
            sample_ids=self.sample_ids[indices],
            source=self.source,
            role=role or self.role,
        )

    def evolve(self, **changes) -> "LabeledDataset":
        return replace(self, **changes)


def assert_disjoint(a: LabeledDataset, b: LabeledDataset) -> None:
    """Raise when two datasets from the same source share samples."""
    if a.source != b.source:
        return
    overlap = np.intersect1d(a.sample_ids, b.sample_ids)
    if overlap.size:
        raise ProvenanceError(
            f"{a.role} and {b.role} share {overlap.size} samples from source '{a.source}'"
        )
