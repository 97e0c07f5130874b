"""
IDX reader/writer (MNIST-compatible, big-endian dimension fields)

  [offset] [type]          [value]          [description]
  0000     32 bit integer  0x00000803(2051) magic number (images)
  0004     32 bit integer  N                number of images
  0008     32 bit integer  rows
  0012     32 bit integer  columns
  0016     unsigned byte   ...              pixels

Labels use magic 0x00000801 followed by N and one byte per label.
Multi-channel exports use 0x00000804 with (N, C, rows, columns).
"""
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from data_forge.dataset import LabeledDataset
from shared.errors import DatasetFormatError
from shared.logging_config import get_logger
from shared.storage import atomic_write_bytes

logger = get_logger("data")

LABELS_MAGIC = 0x00000801
IMAGES_MAGIC = 0x00000803
IMAGES_4D_MAGIC = 0x00000804


def _read_ubyte_array(path, expected_magics) -> Tuple[int, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated file ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in expected_magics:
        raise DatasetFormatError(f"{path}: magic 0x{magic:08x} is not one of "
                                 + ", ".join(f"0x{m:08x}" for m in expected_magics))
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise DatasetFormatError(f"{path}: truncated payload, expected {count} bytes after header")
    return magic, np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: Optional[int] = None) -> LabeledDataset:
    """
    Load an IDX image/label pair; pixels are scaled to [0, 1]

    Raises:
        DatasetFormatError on magic mismatch, truncation or count mismatch
    """
    magic, pixels = _read_ubyte_array(images_path, (IMAGES_MAGIC, IMAGES_4D_MAGIC))
    _, labels = _read_ubyte_array(labels_path, (LABELS_MAGIC,))
    if pixels.shape[0] != labels.shape[0]:
        raise DatasetFormatError(
            f"count mismatch: {pixels.shape[0]} images vs {labels.shape[0]} labels"
        )
    if magic == IMAGES_MAGIC:
        pixels = pixels[:, None]
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = max(2, int(labels.max()) + 1 if labels.size else 2)
    logger.info("loaded %d IDX samples of shape %s from %s", labels.size, pixels.shape[1:], images_path)
    return LabeledDataset(
        images=pixels.astype(np.float64) / 255.0,
        labels=labels,
        num_classes=num_classes,
        source=f"idx:{Path(images_path).name}",
        role="loaded",
    )


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Export (N, C, H, W) images in [0, 1] and labels; C == 1 uses the 3-D format."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise DatasetFormatError(f"expected (N, C, H, W) images, got {images.shape}")
    pixels = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    if pixels.shape[1] == 1:
        header = struct.pack(">IIII", IMAGES_MAGIC, pixels.shape[0], pixels.shape[2], pixels.shape[3])
        pixels = pixels[:, 0]
    else:
        header = struct.pack(">IIIII", IMAGES_4D_MAGIC, *pixels.shape)
    labels = np.asarray(labels, dtype=np.uint8)
    atomic_write_bytes(images_path, header + pixels.tobytes())
    atomic_write_bytes(labels_path, struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes())
