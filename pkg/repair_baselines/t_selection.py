"""
Choosing the repaired model's index on the path by an accuracy-drop threshold
"""
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.model_selection import KFold

from curve_space.curves import CurveSpec
from curve_space.path_trainer import normalize_grid, sample_path, train_path
from data_forge.dataset import LabeledDataset
from landscape_analysis.evaluators import clean_accuracy
from shared.logging_config import get_logger
from shared.schemas import PathTrainConfig, TSelectConfig, TSelection

logger = get_logger("repair")

DELTA_A_FULL_ACCESS = 0.06
DELTA_A_KFOLD = 0.10


def select_t_from_accuracy(
    t_grid: Sequence[float],
    accuracies: Sequence[float],
    endpoint_accuracy: float,
    delta_a: float,
    folds: Optional[int] = None,
) -> TSelection:
    """
    Smallest interior t whose accuracy is at least endpoint_accuracy - delta_a

    Falls back to the most accurate interior t with success=False.
    """
    if len(t_grid) != len(accuracies):
        raise ValueError("t_grid and accuracies must have equal length")
    threshold = endpoint_accuracy - delta_a
    interior = [(t, a) for t, a in zip(t_grid, accuracies) if 0.0 < t < 1.0]
    if not interior:
        raise ValueError("t-selection needs at least one interior grid point")

    chosen, success = None, False
    for t, acc in interior:
        if acc >= threshold:
            chosen, success = t, True
            break
    if chosen is None:
        chosen = max(interior, key=lambda pair: pair[1])[0]
        logger.warning("no t reaches accuracy %.4f; best available t=%.2f", threshold, chosen)

    return TSelection(
        t=chosen,
        success=success,
        threshold=threshold,
        endpoint_accuracy=endpoint_accuracy,
        delta_a=delta_a,
        t_grid=list(t_grid),
        accuracies=[float(a) for a in accuracies],
        folds=folds,
    )


def select_t(
    curve: CurveSpec,
    bonafide: LabeledDataset,
    cfg: TSelectConfig,
    path_cfg: Optional[PathTrainConfig] = None,
    t_grid: Optional[Iterable[float]] = None,
) -> TSelection:
    """
    k-fold selection: train the path on k-1 folds, measure clean accuracy on
    the held-out fold along the grid, average over folds, then apply the
    threshold rule with a = mean accuracy of the two endpoints.

    The given curve is the starting point of every fold's training.
    """
    if cfg.k > len(bonafide):
        raise ValueError(f"k={cfg.k} folds need at least {cfg.k} bonafide samples, got {len(bonafide)}")
    path_cfg = path_cfg or PathTrainConfig(seed=cfg.seed)
    grid = normalize_grid(t_grid)
    folds = KFold(n_splits=cfg.k, shuffle=True, random_state=cfg.seed)

    totals = np.zeros(len(grid))
    for fold, (train_idx, val_idx) in enumerate(folds.split(np.arange(len(bonafide)))):
        fold_curve = train_path(curve, bonafide.subset(train_idx), path_cfg)
        held_out = bonafide.subset(val_idx)
        profile = sample_path(fold_curve, grid, {"clean_accuracy": clean_accuracy(held_out)})
        totals += np.asarray(profile.column("clean_accuracy"))
        logger.debug("fold %d/%d done", fold + 1, cfg.k)

    accuracies = totals / cfg.k
    endpoint = float((accuracies[0] + accuracies[-1]) / 2.0)
    selection = select_t_from_accuracy(grid, accuracies.tolist(), endpoint, cfg.delta_a, folds=cfg.k)
    logger.info("selected t=%.2f (success=%s, threshold %.4f)", selection.t, selection.success, selection.threshold)
    return selection
