"""
Path Trainer - minimizes E_{t ~ U(0,1)} [ loss(phi_theta(t)) ] by SGD
plus per-t sampling of metric evaluators along a trained curve
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Union

import numpy as np

from attacks.pgd import pgd_perturb
from curve_space.curves import CurveSpec, combine, curve_coefficients
from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, WeightVector, loss_and_gradients
from nn_core.trainer import BatchPerturb, SGDMomentum, iterate_minibatches
from shared.errors import CurveDomainError, DivergenceError, LayoutMismatchError, NonFiniteError
from shared.logging_config import get_logger
from shared.schemas import DEFAULT_T_GRID, PathProfile, PathRecord, PathTrainConfig, PGDConfig

logger = get_logger("curve")

Evaluator = Callable[[Model], Union[float, Mapping[str, float]]]


def train_path(
    curve: CurveSpec,
    data: LabeledDataset,
    cfg: PathTrainConfig,
    *,
    perturb: Optional[BatchPerturb] = None,
) -> CurveSpec:
    """
    Train the control point (and the endpoints when endpoints_trainable)

    One t ~ U(0,1) is drawn per minibatch; theta moves along s(t) * grad_w loss
    at phi_theta(t). Returns a new curve; the input curve is untouched.
    """
    if len(data) == 0:
        raise ValueError("path training data is empty")
    if data.image_shape != tuple(curve.spec.input_shape):
        raise LayoutMismatchError(
            f"dataset images {data.image_shape} do not match curve spec {curve.spec.input_shape}"
        )

    layout = curve.w1.layout
    w1, theta, w2 = curve.w1.data.copy(), curve.theta.data.copy(), curve.w2.data.copy()
    trained = curve.endpoints_trainable
    opt_theta = SGDMomentum(theta.size, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    opt_w1 = SGDMomentum(w1.size, cfg.learning_rate, cfg.momentum, cfg.weight_decay) if trained else None
    opt_w2 = SGDMomentum(w2.size, cfg.learning_rate, cfg.momentum, cfg.weight_decay) if trained else None

    rng = np.random.default_rng(cfg.seed)
    epoch_loss = float("nan")
    for epoch in range(cfg.epochs):
        total = 0.0
        for batch_no, idx in enumerate(iterate_minibatches(len(data), cfg.batch_size, rng)):
            t = float(rng.uniform(0.0, 1.0))
            a1, a_theta, a2 = curve_coefficients(curve.kind, t)
            model = Model(curve.spec, WeightVector(layout, combine(curve.kind, t, w1, theta, w2)))
            images, labels = data.images[idx], data.labels[idx]
            if perturb is not None:
                images = perturb(model, images, labels, rng)
            try:
                step = loss_and_gradients(model, images, labels)
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"path training diverged at epoch {epoch}, batch {batch_no}, t={t:.4f}: {exc}"
                ) from exc

            g = step.weights.data
            opt_theta.step(theta, a_theta * g)
            if trained:
                opt_w1.step(w1, a1 * g)
                opt_w2.step(w2, a2 * g)
            total += step.loss * len(idx)

        epoch_loss = total / len(data)
        logger.debug("path epoch %d/%d mean loss %.6f", epoch + 1, cfg.epochs, epoch_loss)

    logger.info("path training finished: %s, %d epochs, last epoch loss %.6f",
                curve.kind, cfg.epochs, epoch_loss)
    return CurveSpec(
        kind=curve.kind,
        spec=curve.spec,
        w1=WeightVector(layout, w1),
        w2=WeightVector(layout, w2),
        theta=WeightVector(layout, theta),
        endpoints_trainable=curve.endpoints_trainable,
    )


def train_path_robust(
    curve: CurveSpec, data: LabeledDataset, pgd: PGDConfig, cfg: PathTrainConfig
) -> CurveSpec:
    """Robust connection: each minibatch is replaced by its PGD maximizer at phi_theta(t)."""
    return train_path(curve, data, cfg, perturb=pgd_perturb(pgd))


def normalize_grid(t_grid: Optional[Iterable[float]] = None) -> List[float]:
    """Sorted unique grid that always contains both endpoints."""
    grid = DEFAULT_T_GRID if t_grid is None else [float(t) for t in t_grid]
    for t in grid:
        if not 0.0 <= t <= 1.0:
            raise CurveDomainError(f"grid point {t} outside [0, 1]")
    return sorted(set(grid) | {0.0, 1.0})


def sample_path(
    curve: CurveSpec,
    t_grid: Optional[Iterable[float]],
    evaluators: Mapping[str, Evaluator],
    max_workers: Optional[int] = None,
) -> PathProfile:
    """
    Evaluate every metric at every grid point

    An evaluator may return a float or a mapping of several named floats.
    A failing evaluator records NaN and an error note for that t only.
    """
    grid = normalize_grid(t_grid)

    def record_at(t: float) -> PathRecord:
        model = curve.model_at(t)
        metrics: Dict[str, float] = {}
        errors: Dict[str, str] = {}
        for name, evaluator in evaluators.items():
            try:
                value = evaluator(model)
            except Exception as exc:
                logger.warning("evaluator %s failed at t=%.3f: %s", name, t, exc)
                metrics[name] = math.nan
                errors[name] = f"{type(exc).__name__}: {exc}"
                continue
            if isinstance(value, Mapping):
                metrics.update({key: float(v) for key, v in value.items()})
            else:
                metrics[name] = float(value)
        return PathRecord(t=t, metrics=metrics, errors=errors)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            records = list(pool.map(record_at, grid))
    else:
        records = [record_at(t) for t in grid]
    return PathProfile(t_grid=grid, records=records)
