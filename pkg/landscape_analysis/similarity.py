"""
Input-gradient similarity between path models and the endpoints
"""
from typing import Iterable, List, Optional, Tuple

import numpy as np

from curve_space.curves import CurveSpec
from curve_space.path_trainer import normalize_grid
from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, grad_input
from nn_core.evaluation import EVAL_BATCH
from shared.errors import SimilarityUndefinedError
from shared.logging_config import get_logger
from shared.schemas import SimilarityRecord

logger = get_logger("landscape")


def per_sample_input_grads(model: Model, data: LabeledDataset, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """
    (N, D) input gradients of each sample's own loss

    The gradient of a batch-mean loss w.r.t. sample i only involves sample i,
    so a batch gradient is a scaled per-sample gradient; cosine similarity
    ignores the scale.
    """
    parts = [
        grad_input(model, data.images[i:i + batch_size], data.labels[i:i + batch_size])
        for i in range(0, len(data), batch_size)
    ]
    return np.concatenate(parts, axis=0).reshape(len(data), -1)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise m = |s - 1| / 2 for cosine similarity s

    Returns (m, valid) where rows with a zero gradient on either side are invalid.
    Bit-identical rows give s = 1 exactly.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na > 0.0) & (nb > 0.0)
    s = np.ones(a.shape[0])
    s[valid] = np.clip(np.sum(a[valid] * b[valid], axis=1) / (na[valid] * nb[valid]), -1.0, 1.0)
    s[np.all(a == b, axis=1)] = 1.0
    return np.abs(s - 1.0) / 2.0, valid


def _mean_distance(grads: np.ndarray, endpoint: np.ndarray) -> Tuple[float, int]:
    m, valid = cosine_distance(grads, endpoint)
    if not valid.any():
        raise SimilarityUndefinedError("every sample has a zero input gradient; similarity undefined")
    return float(m[valid].mean()), int((~valid).sum())


def input_grad_similarity(
    curve: CurveSpec,
    data_clean: LabeledDataset,
    data_tampered: LabeledDataset,
    grid: Optional[Iterable[float]] = None,
) -> List[SimilarityRecord]:
    """Per t, mean gradient dissimilarity to w1 and w2 on clean and tampered data."""
    if len(data_clean) == 0 or len(data_tampered) == 0:
        raise ValueError("similarity needs non-empty clean and tampered datasets")
    w1, w2 = curve.endpoint_models()
    ends = {
        "clean": (per_sample_input_grads(w1, data_clean), per_sample_input_grads(w2, data_clean)),
        "tampered": (per_sample_input_grads(w1, data_tampered), per_sample_input_grads(w2, data_tampered)),
    }

    records = []
    for t in normalize_grid(grid):
        model = curve.model_at(t)
        clean = per_sample_input_grads(model, data_clean)
        tampered = per_sample_input_grads(model, data_tampered)
        m_c1, skip_c1 = _mean_distance(clean, ends["clean"][0])
        m_c2, skip_c2 = _mean_distance(clean, ends["clean"][1])
        m_t1, skip_t1 = _mean_distance(tampered, ends["tampered"][0])
        m_t2, skip_t2 = _mean_distance(tampered, ends["tampered"][1])
        skipped_clean, skipped_tampered = max(skip_c1, skip_c2), max(skip_t1, skip_t2)
        if skipped_clean or skipped_tampered:
            logger.warning("t=%.3f: skipped %d clean and %d tampered zero-gradient samples",
                           t, skipped_clean, skipped_tampered)
        records.append(SimilarityRecord(
            t=t,
            m_clean_to_w1=m_c1,
            m_clean_to_w2=m_c2,
            m_tampered_to_w1=m_t1,
            m_tampered_to_w2=m_t2,
            skipped_clean=skipped_clean,
            skipped_tampered=skipped_tampered,
        ))
    return records
