"""
Repair by path connection with limited bonafide data
"""
from typing import Iterable, Mapping, Optional, Tuple

import numpy as np

from curve_space.curves import BEZIER2, CurveKind, CurveSpec, init_curve
from curve_space.path_trainer import Evaluator, sample_path, train_path
from data_forge.dataset import LabeledDataset
from landscape_analysis.evaluators import clean_metrics
from nn_core.engine import Model
from repair_baselines.baselines import finetune
from shared.errors import LayoutMismatchError, PoisoningError
from shared.logging_config import get_logger
from shared.schemas import PathProfile, PathTrainConfig, TrainConfig

logger = get_logger("repair")

FINETUNE_SAMPLES = 2000
FINETUNE_EPOCHS = 100


def _check_bonafide(bonafide: LabeledDataset) -> None:
    if len(bonafide) == 0:
        raise ValueError("bonafide set is empty")
    if bonafide.poisoned.any():
        raise PoisoningError(f"bonafide set holds {int(bonafide.poisoned.sum())} poisoned samples")


def repair_by_connection(
    w1: Model,
    w2: Model,
    bonafide: LabeledDataset,
    cfg: PathTrainConfig,
    t_grid: Optional[Iterable[float]] = None,
    evaluators: Optional[Mapping[str, Evaluator]] = None,
    kind: CurveKind = BEZIER2,
) -> Tuple[CurveSpec, PathProfile]:
    """
    Train a path between two (possibly tampered) models on bonafide data only

    Without explicit evaluators the profile records clean metrics on the
    bonafide set itself; callers pass held-out and triggered evaluators for
    reports.
    """
    if w1.spec != w2.spec:
        raise LayoutMismatchError("models to connect have different specs")
    _check_bonafide(bonafide)
    logger.info("connecting models with %d bonafide samples (%s)", len(bonafide), kind)
    curve = train_path(init_curve(w1, w2, kind), bonafide, cfg)
    profile = sample_path(curve, t_grid, evaluators or {"clean": clean_metrics(bonafide)})
    return curve, profile


def repair_single_model(
    w: Model,
    bonafide: LabeledDataset,
    cfg: PathTrainConfig,
    finetune_cfg: Optional[TrainConfig] = None,
    t_grid: Optional[Iterable[float]] = None,
    evaluators: Optional[Mapping[str, Evaluator]] = None,
    kind: CurveKind = BEZIER2,
    finetune_samples: int = FINETUNE_SAMPLES,
) -> Tuple[CurveSpec, PathProfile]:
    """Fine-tune a copy on bonafide data, then connect the original to it."""
    _check_bonafide(bonafide)
    finetune_cfg = finetune_cfg or TrainConfig(epochs=FINETUNE_EPOCHS, seed=cfg.seed)
    subset = bonafide.subset(np.arange(min(finetune_samples, len(bonafide))))
    tuned = finetune(w, subset, finetune_cfg)
    return repair_by_connection(w, tuned, bonafide, cfg, t_grid, evaluators, kind)
