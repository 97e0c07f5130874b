"""
Standard-vs-robust landscape correlation along a path, and the exact
quadratic-family check of the robust loss / top eigenvalue relation
"""
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from attacks.pgd import sign_ascent
from curve_space.curves import CurveSpec
from curve_space.path_trainer import normalize_grid, sample_path
from data_forge.dataset import LabeledDataset
from landscape_analysis.evaluators import clean_loss, lambda_max_stats, robustness_loss_metric
from landscape_analysis.hessian import DEFAULT_HESSIAN_SAMPLES, power_iteration
from landscape_analysis.robustness import pearson
from shared.logging_config import get_logger
from shared.schemas import PathProfile, PGDConfig

logger = get_logger("landscape")


def correlation_profile(
    curve: CurveSpec,
    data: LabeledDataset,
    pgd: PGDConfig,
    grid: Optional[Iterable[float]] = None,
    hessian_samples: Optional[int] = DEFAULT_HESSIAN_SAMPLES,
    seed: int = 0,
    max_workers: Optional[int] = None,
) -> Tuple[PathProfile, Optional[float]]:
    """
    Robustness loss and mean lambda_max at every grid point plus their Pearson
    correlation (raw lambda values; log_lambda_max is recorded for plotting only).
    """
    t_grid = normalize_grid(grid)
    if len(t_grid) < 3:
        raise ValueError("correlation profile needs a grid of at least 3 points")
    profile = sample_path(
        curve,
        t_grid,
        {
            "clean_loss": clean_loss(data),
            "robustness_loss": robustness_loss_metric(data, pgd),
            "lambda_max": lambda_max_stats(data, hessian_samples, seed),
        },
        max_workers=max_workers,
    )
    pcc = pearson(profile.column("robustness_loss"), profile.column("lambda_max"))
    if pcc is None:
        logger.warning("correlation undefined: a profile column is constant or incomplete")
    return profile, pcc


class Prop1Report(BaseModel):
    """Exact robust-loss maxima for a quadratic loss family with c = 1"""
    epsilon: float
    t_grid: List[float]
    lambdas: List[float]
    robust_losses: List[float]
    pgd_robust_losses: List[float]
    estimated_lambdas: List[float]
    grad_norms_at_origin: List[float]
    alignments: List[float]
    pcc: Optional[float]
    pgd_pcc: Optional[float]


def _quadratic_ball_max(base: float, g: float, lam: float, radius: float) -> float:
    """max of base + g*s + lam*s^2/2 over s in [-radius, radius]."""
    candidates = [-radius, radius]
    if lam < 0.0 and abs(g / lam) <= radius:
        candidates.append(-g / lam)
    return max(base + g * s + 0.5 * lam * s * s for s in candidates)


def prop1_toy_validation(
    epsilon: float = 0.1,
    grid: Optional[Iterable[float]] = None,
    lam_fn: Callable[[float], float] = lambda t: 1.0 + t,
    dim: int = 8,
    g0: float = 1.0,
    base_loss: float = 0.5,
    seed: int = 0,
    pgd_steps: int = 10,
) -> Prop1Report:
    """
    Loss family l(t, x) = base + g0 u + lam(t) u^2 / 2 with u = v.(x - c),
    unit v and c the centre of the unit box

    The gradient at c is g0 * v, aligned with the only non-zero Hessian
    direction, and the standard loss at c is base for every t. Over the
    l-infinity ball u ranges over [-eps |v|_1, eps |v|_1], so the robust
    loss has a closed form; the same maximum is also searched with PGD.
    """
    if not 0.0 < epsilon <= 0.5:
        raise ValueError(f"epsilon must lie in (0, 0.5] so the ball stays inside the box, got {epsilon}")
    t_grid = normalize_grid(grid)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    radius = epsilon * float(np.abs(v).sum())
    centre = np.full(dim, 0.5)
    pgd = PGDConfig(epsilon=epsilon, steps=pgd_steps, seed=seed)

    lambdas, robust, searched, estimated, norms, alignments = [], [], [], [], [], []
    for t in t_grid:
        lam = float(lam_fn(t))

        def grad_fn(x: np.ndarray, lam: float = lam) -> np.ndarray:
            return (g0 + lam * float(np.dot(v, x - centre))) * v

        def objective(x: np.ndarray, lam: float = lam) -> Tuple[float, np.ndarray]:
            u = float(np.dot(v, x - centre))
            return base_loss + g0 * u + 0.5 * lam * u * u, (g0 + lam * u) * v

        est = power_iteration(grad_fn, centre, seed=seed)
        x_adv, _ = sign_ascent(objective, centre, pgd)
        lambdas.append(lam)
        robust.append(_quadratic_ball_max(base_loss, g0, lam, radius))
        searched.append(objective(x_adv)[0])
        estimated.append(est.lambda_max)
        norms.append(float(np.linalg.norm(grad_fn(centre))))
        alignments.append(est.alignment_c)

    return Prop1Report(
        epsilon=epsilon,
        t_grid=t_grid,
        lambdas=lambdas,
        robust_losses=robust,
        pgd_robust_losses=searched,
        estimated_lambdas=estimated,
        grad_norms_at_origin=norms,
        alignments=alignments,
        pcc=pearson(robust, lambdas),
        pgd_pcc=pearson(searched, lambdas),
    )
