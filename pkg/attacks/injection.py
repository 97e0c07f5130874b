"""
Error injection (fault sneaking) by penalized gradient descent on the weights
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, loss_and_gradients
from nn_core.evaluation import predict
from nn_core.trainer import SGDMomentum
from shared.errors import DivergenceError, InjectionFailure, NonFiniteError
from shared.logging_config import get_logger
from shared.schemas import InjectionSpec

logger = get_logger("attacks")


@dataclass(slots=True)
class InjectionResult:
    model: Model
    success: bool
    steps_used: int
    target_success: float
    keep_agreement: float


def choose_injection_targets(
    data: LabeledDataset,
    n_targets: int = 4,
    n_keep: int = 996,
    seed: int = 0,
    model: Optional[Model] = None,
    **spec_fields,
) -> InjectionSpec:
    """
    Draw disjoint target and keep samples with random wrong target labels

    Target labels differ from the true label and, when a model is given,
    from its current prediction.
    """
    if n_targets + n_keep > len(data):
        raise ValueError(f"need {n_targets + n_keep} samples, dataset has {len(data)}")
    if data.num_classes < 3 and model is not None:
        raise ValueError("at least 3 classes are needed to avoid both truth and prediction")
    rng = np.random.default_rng(seed)
    pool = rng.permutation(len(data))[:n_targets + n_keep]
    targets, keeps = np.sort(pool[:n_targets]), np.sort(pool[n_targets:])

    current = predict(model, data.images[targets]) if model is not None else None
    labels = []
    for pos, idx in enumerate(targets):
        banned = {int(data.labels[idx])}
        if current is not None:
            banned.add(int(current[pos]))
        choices = [c for c in range(data.num_classes) if c not in banned]
        labels.append(int(rng.choice(choices)))

    return InjectionSpec(
        target_indices=[int(i) for i in targets],
        target_labels=labels,
        keep_indices=[int(i) for i in keeps],
        **spec_fields,
    )


def _check_indices(data: LabeledDataset, spec: InjectionSpec) -> None:
    for idx in list(spec.target_indices) + list(spec.keep_indices):
        if not 0 <= idx < len(data):
            raise IndexError(f"sample index {idx} outside dataset of {len(data)}")
    for label in spec.target_labels:
        if not 0 <= label < data.num_classes:
            raise ValueError(f"target label {label} outside [0, {data.num_classes})")


def run_injection(model: Model, data: LabeledDataset, spec: InjectionSpec) -> InjectionResult:
    """
    Minimize L(targets -> target labels) + keep_weight * L(keeps -> current predictions)

    Stops as soon as every target is classified as its target label. Never raises
    on failure; inspect `success`.
    """
    _check_indices(data, spec)
    if not spec.target_indices:
        return InjectionResult(model.copy(), True, 0, 1.0, 1.0)

    x_target = data.images[spec.target_indices]
    y_target = np.asarray(spec.target_labels, dtype=np.int64)
    x_keep = data.images[spec.keep_indices] if spec.keep_indices else None
    y_keep = predict(model, x_keep) if x_keep is not None else None

    params = model.weights.data.copy()
    optimizer = SGDMomentum(params.size, spec.learning_rate, spec.momentum)
    current = model.with_weights(params)
    steps_used = 0
    for step in range(spec.steps):
        if np.array_equal(predict(current, x_target), y_target):
            break
        try:
            grad = loss_and_gradients(current, x_target, y_target).weights.data
            if x_keep is not None:
                grad = grad + spec.keep_weight * loss_and_gradients(current, x_keep, y_keep).weights.data
        except NonFiniteError as exc:
            raise DivergenceError(f"injection diverged at step {step}: {exc}") from exc
        optimizer.step(params, grad)
        current = model.with_weights(params.copy())
        steps_used = step + 1

    hits = predict(current, x_target) == y_target
    agreement = float(np.mean(predict(current, x_keep) == y_keep)) if x_keep is not None else 1.0
    result = InjectionResult(
        model=current,
        success=bool(hits.all()),
        steps_used=steps_used,
        target_success=float(hits.mean()),
        keep_agreement=agreement,
    )
    logger.info("injection: %d/%d targets after %d steps, keep agreement %.4f",
                int(hits.sum()), hits.size, steps_used, agreement)
    return result


def inject_errors(model: Model, data: LabeledDataset, spec: InjectionSpec) -> Model:
    """Tampered model; raises InjectionFailure (carrying the partial result) below 100% target success."""
    result = run_injection(model, data, spec)
    if not result.success:
        raise InjectionFailure(
            f"only {result.target_success:.0%} of targets flipped within {spec.steps} steps",
            result=result,
        )
    return result.model
