"""
Path-aware adaptive attacks: the adversary knows the defender will connect
the released models and tries to keep the whole path compromised
"""
from typing import Optional, Tuple

import numpy as np

from attacks.injection import run_injection
from curve_space.curves import BEZIER2, CurveKind, CurveSpec, combine, curve_coefficients, init_curve
from curve_space.path_trainer import train_path
from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, WeightVector, init_model, loss_and_gradients
from nn_core.evaluation import predict
from nn_core.trainer import SGDMomentum, train
from shared.errors import DivergenceError, InjectionFailure, NonFiniteError, PoisoningError
from shared.logging_config import get_logger
from shared.schemas import DEFAULT_T_GRID, InjectionSpec, ModelSpec, PathTrainConfig, TrainConfig

logger = get_logger("attacks")


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return cfg.model_copy(update={"seed": seed})


def train_endpoint_pair(spec: ModelSpec, data: LabeledDataset, cfg: TrainConfig) -> Tuple[Model, Model]:
    """Two independently initialized models trained with seeds s and s + 1."""
    first = train(init_model(spec, cfg.seed), data, cfg)
    second = train(init_model(spec, cfg.seed + 1), data, _seeded(cfg, cfg.seed + 1))
    return first, second


def adaptive_backdoor_endpoints(
    spec: ModelSpec,
    poisoned: LabeledDataset,
    cfg: PathTrainConfig,
    train_cfg: Optional[TrainConfig] = None,
    kind: CurveKind = BEZIER2,
) -> Tuple[Model, Model]:
    """
    Backdoor two models, then connect them on the same poisoned data with
    trainable endpoints; the released pair is the fine-tuned endpoints.
    """
    if not poisoned.poisoned.any():
        raise PoisoningError("adaptive backdoor needs a dataset that carries triggers")
    train_cfg = train_cfg or TrainConfig(seed=cfg.seed)
    w1, w2 = train_endpoint_pair(spec, poisoned, train_cfg)
    curve = init_curve(w1, w2, kind, endpoints_trainable=True)
    compromised = train_path(curve, poisoned, cfg)
    logger.info("adaptive backdoor: compromised path trained for %d epochs", cfg.epochs)
    return compromised.endpoint_models()


def attack_curve(
    curve: CurveSpec,
    data: LabeledDataset,
    injspec: InjectionSpec,
    steps: int,
    seed: int = 0,
) -> CurveSpec:
    """
    Joint injection into w1, theta and w2

    Each step draws t ~ U(0,1) and descends the injection objective at phi(t),
    distributing the gradient over the three parameter blocks by the curve
    coefficients. Stops once every grid model flips every target.
    """
    x_target = data.images[injspec.target_indices]
    y_target = np.asarray(injspec.target_labels, dtype=np.int64)
    x_keep = data.images[injspec.keep_indices] if injspec.keep_indices else None
    y_keep = predict(curve.model_at(0.0), x_keep) if x_keep is not None else None

    layout = curve.w1.layout
    blocks = [curve.w1.data.copy(), curve.theta.data.copy(), curve.w2.data.copy()]
    optimizers = [SGDMomentum(b.size, injspec.learning_rate, injspec.momentum) for b in blocks]
    rng = np.random.default_rng(seed)

    def model_at(t: float) -> Model:
        return Model(curve.spec, WeightVector(layout, combine(curve.kind, t, *blocks)))

    def all_flipped() -> bool:
        return all(np.array_equal(predict(model_at(t), x_target), y_target) for t in DEFAULT_T_GRID)

    for step in range(steps):
        if all_flipped():
            logger.info("adaptive injection: whole path flipped after %d steps", step)
            break
        t = float(rng.uniform(0.0, 1.0))
        model = model_at(t)
        try:
            grad = loss_and_gradients(model, x_target, y_target).weights.data
            if x_keep is not None:
                grad = grad + injspec.keep_weight * loss_and_gradients(model, x_keep, y_keep).weights.data
        except NonFiniteError as exc:
            raise DivergenceError(f"adaptive injection diverged at step {step}: {exc}") from exc
        for coeff, block, optimizer in zip(curve_coefficients(curve.kind, t), blocks, optimizers):
            if coeff:
                optimizer.step(block, coeff * grad)

    w1, theta, w2 = (WeightVector(layout, b) for b in blocks)
    return CurveSpec(curve.kind, curve.spec, w1, w2, theta, curve.endpoints_trainable)


def adaptive_injection_endpoints(
    spec: ModelSpec,
    data: LabeledDataset,
    injspec: InjectionSpec,
    cfg: PathTrainConfig,
    train_cfg: Optional[TrainConfig] = None,
    attack_steps: Optional[int] = None,
    kind: CurveKind = BEZIER2,
) -> Tuple[Model, Model]:
    """
    Inject errors into two models, connect them on clean data, then inject
    into w1, w2 and theta jointly; returns the attacked endpoints.

    attack_steps defaults to injspec.steps; 0 returns the injected models as they were.
    """
    train_cfg = train_cfg or TrainConfig(seed=cfg.seed)
    clean_pair = train_endpoint_pair(spec, data, train_cfg)
    injected = []
    for model in clean_pair:
        result = run_injection(model, data, injspec)
        if not result.success:
            raise InjectionFailure("endpoint injection did not reach 100% target success", result=result)
        injected.append(result.model)

    steps = injspec.steps if attack_steps is None else attack_steps
    if steps == 0:
        return injected[0].copy(), injected[1].copy()

    path = train_path(init_curve(injected[0], injected[1], kind), data, cfg)
    attacked = attack_curve(path, data, injspec, steps, seed=cfg.seed)
    return attacked.endpoint_models()
