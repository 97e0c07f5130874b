"""
Input-Hessian eigenanalysis
Finite-difference Hessian-vector products and power iteration on top of them
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, grad_input
from shared.errors import NonFiniteError
from shared.logging_config import get_logger

logger = get_logger("landscape")

GradFn = Callable[[np.ndarray], np.ndarray]
Seed = Union[int, np.random.SeedSequence]

DEFAULT_REL_TOL = 1e-4
DEFAULT_MAX_ITER = 100
DEFAULT_HESSIAN_SAMPLES = 64


@dataclass(slots=True)
class HessianEstimate:
    """
    Dominant input-Hessian eigenpair at one sample

    lambda_max is the signed Rayleigh quotient of the returned direction;
    negative_dominant marks the case where the largest-magnitude eigenvalue
    is negative, so the reported value is not the algebraic maximum.
    """
    lambda_max: float
    eigvec: np.ndarray
    iterations_used: int
    alignment_c: float
    converged: bool
    negative_dominant: bool = False

    def summary(self) -> dict:
        return {
            "lambda_max": self.lambda_max,
            "iterations_used": self.iterations_used,
            "alignment_c": self.alignment_c,
            "converged": self.converged,
            "negative_dominant": self.negative_dominant,
        }


def default_step(x: np.ndarray, v: np.ndarray) -> float:
    return 1e-4 * (1.0 + float(np.linalg.norm(x))) / float(np.linalg.norm(v))


def _hvp_from(grad_fn: GradFn, g0: np.ndarray, x: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    g1 = np.asarray(grad_fn(x + h * v), dtype=np.float64)
    out = (g1 - g0) / h
    if not np.isfinite(out).all():
        raise NonFiniteError("non-finite Hessian-vector product")
    return out


def hvp_fd(grad_fn: GradFn, x: np.ndarray, v: np.ndarray, h: Optional[float] = None) -> np.ndarray:
    """(grad(x + h v) - grad(x)) / h; exact for quadratic losses."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ValueError(f"direction shape {v.shape} does not match point shape {x.shape}")
    if not np.any(v):
        raise ValueError("Hessian-vector product needs a non-zero direction")
    h = default_step(x, v) if h is None else float(h)
    if h <= 0.0:
        raise ValueError("finite-difference step must be positive")
    g0 = np.asarray(grad_fn(x), dtype=np.float64)
    return _hvp_from(grad_fn, g0, x, v, h)


def power_iteration(
    grad_fn: GradFn,
    x: np.ndarray,
    rel_tol: float = DEFAULT_REL_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: Seed = 0,
) -> HessianEstimate:
    """
    Power iteration on finite-difference HVPs from a seeded random unit start

    Stops when the Rayleigh quotient changes by less than rel_tol (relative);
    otherwise returns the last estimate with converged=False.
    """
    x = np.asarray(x, dtype=np.float64)
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.shape)
    v /= np.linalg.norm(v)
    g0 = np.asarray(grad_fn(x), dtype=np.float64)
    h = default_step(x, v)

    lam, previous, converged, iterations = 0.0, None, False, 0
    for iterations in range(1, max_iter + 1):
        hv = _hvp_from(grad_fn, g0, x, v, h)
        lam = float(np.vdot(v, hv))
        norm = float(np.linalg.norm(hv))
        if norm == 0.0:
            lam, converged = 0.0, True
            break
        if previous is not None and abs(lam - previous) <= rel_tol * max(abs(lam), np.finfo(float).tiny):
            converged = True
            break
        previous = lam
        v = hv / norm

    if not converged:
        logger.warning("power iteration stopped at max_iter=%d without reaching rel_tol=%g", max_iter, rel_tol)
    negative = lam < 0.0
    if negative:
        logger.warning("dominant input-Hessian eigenvalue is negative (%.6g); |lambda_min| exceeds lambda_max", lam)

    g_norm = float(np.linalg.norm(g0))
    alignment = min(1.0, abs(float(np.vdot(g0, v))) / g_norm) if g_norm > 0.0 else 0.0
    return HessianEstimate(
        lambda_max=lam,
        eigvec=v,
        iterations_used=iterations,
        alignment_c=alignment,
        converged=converged,
        negative_dominant=negative,
    )


def model_grad_fn(model: Model, label: int) -> GradFn:
    """Input gradient of the per-sample loss at a single (C, H, W) input."""
    labels = np.asarray([label])

    def grad_fn(x: np.ndarray) -> np.ndarray:
        return grad_input(model, x[None], labels)[0]
    return grad_fn


def hvp(model: Model, x: np.ndarray, label: int, v: np.ndarray, h: Optional[float] = None) -> np.ndarray:
    return hvp_fd(model_grad_fn(model, label), x, v, h)


def lambda_max(
    model: Model,
    x: np.ndarray,
    label: int,
    rel_tol: float = DEFAULT_REL_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: Seed = 0,
) -> HessianEstimate:
    return power_iteration(model_grad_fn(model, label), x, rel_tol, max_iter, seed)


def mean_lambda_max(
    model: Model,
    data: LabeledDataset,
    n_samples: Optional[int] = DEFAULT_HESSIAN_SAMPLES,
    seed: int = 0,
    rel_tol: float = DEFAULT_REL_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Tuple[float, List[HessianEstimate]]:
    """
    Mean lambda_max over a seeded evaluation subset (n_samples=None uses every sample)

    Subset choice and each power iteration's start vector come from independent child
    seeds, so results do not depend on evaluation order.
    """
    if len(data) == 0:
        raise ValueError("cannot estimate lambda_max on an empty dataset")
    subset_seed, start_seed = np.random.SeedSequence(seed).spawn(2)
    if n_samples is None or n_samples >= len(data):
        chosen = np.arange(len(data))
    else:
        chosen = np.sort(np.random.default_rng(subset_seed).choice(len(data), size=n_samples, replace=False))
    children = start_seed.spawn(chosen.size)
    estimates = [
        lambda_max(model, data.images[i], int(data.labels[i]), rel_tol, max_iter, child)
        for i, child in zip(chosen, children)
    ]
    return float(np.mean([p.lambda_max for p in estimates])), estimates
