"""
Path ensembling: average the softmax outputs of several models on the curve
"""
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, Field

from attacks.pgd import attack_dataset
from curve_space.curves import CurveSpec
from data_forge.dataset import LabeledDataset
from nn_core.engine import Model
from nn_core.evaluation import predict, predict_proba
from shared.logging_config import get_logger
from shared.schemas import PGDConfig

logger = get_logger("landscape")


class EnsembleReport(BaseModel):
    t_samples: List[float]
    clean_accuracy: float = Field(..., ge=0.0, le=1.0)
    member_clean_accuracy: List[float]
    source_clean_accuracy: float = Field(..., ge=0.0, le=1.0)
    transfer_attack_success: float = Field(..., ge=0.0, le=1.0, description="ensemble error on source-crafted adversarial inputs")
    whitebox_attack_success: float = Field(..., ge=0.0, le=1.0, description="source model error on its own adversarial inputs")


def ensemble_predict(models: Sequence[Model], images: np.ndarray) -> np.ndarray:
    proba = np.mean([predict_proba(m, images) for m in models], axis=0)
    return proba.argmax(axis=1)


def ensemble_eval(
    curve: CurveSpec,
    t_samples: Sequence[float],
    data: LabeledDataset,
    attack_source: Model,
    pgd: PGDConfig,
) -> EnsembleReport:
    """Clean accuracy of the path ensemble and its error on adversarial inputs crafted on attack_source."""
    if not t_samples:
        raise ValueError("ensemble needs at least one t sample")
    members = [curve.model_at(t) for t in t_samples]
    labels = data.labels
    x_adv = attack_dataset(attack_source, data, pgd)

    report = EnsembleReport(
        t_samples=[float(t) for t in t_samples],
        clean_accuracy=float(np.mean(ensemble_predict(members, data.images) == labels)),
        member_clean_accuracy=[float(np.mean(predict(m, data.images) == labels)) for m in members],
        source_clean_accuracy=float(np.mean(predict(attack_source, data.images) == labels)),
        transfer_attack_success=float(np.mean(ensemble_predict(members, x_adv) != labels)),
        whitebox_attack_success=float(np.mean(predict(attack_source, x_adv) != labels)),
    )
    logger.info("ensemble of %d: clean %.4f, transfer %.4f vs white-box %.4f",
                len(members), report.clean_accuracy, report.transfer_attack_success,
                report.whitebox_attack_success)
    return report
