"""
Weight-space curves between two models
Quadratic Bezier and one-bend polygonal chain, both linear in the control point
"""
from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np

from nn_core.engine import Model, WeightVector, build_layout, loss_and_gradients
from shared.errors import CurveDomainError, LayoutMismatchError
from shared.schemas import ModelSpec

CurveKind = Literal["bezier2", "polychain1"]
BEZIER2: CurveKind = "bezier2"
POLYCHAIN1: CurveKind = "polychain1"
CURVE_KINDS = (BEZIER2, POLYCHAIN1)


@dataclass(slots=True)
class CurveSpec:
    """phi_theta(t) with endpoints w1 (t=0) and w2 (t=1)"""
    kind: CurveKind
    spec: ModelSpec
    w1: WeightVector
    w2: WeightVector
    theta: WeightVector
    endpoints_trainable: bool = False

    def __post_init__(self) -> None:
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"unknown curve kind '{self.kind}'")
        layout = build_layout(self.spec)
        for name in ("w1", "w2", "theta"):
            if getattr(self, name).layout != layout:
                raise LayoutMismatchError(f"{name} layout does not match the curve's model spec")

    def copy(self) -> "CurveSpec":
        return CurveSpec(
            self.kind, self.spec, self.w1.copy(), self.w2.copy(), self.theta.copy(), self.endpoints_trainable
        )

    def model_at(self, t: float) -> Model:
        return Model(self.spec, curve_point(self, t))

    def endpoint_models(self) -> Tuple[Model, Model]:
        return Model(self.spec, self.w1.copy()), Model(self.spec, self.w2.copy())


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise CurveDomainError(f"curve index t={t} outside [0, 1]")
    return t


def curve_coefficients(kind: CurveKind, t: float) -> Tuple[float, float, float]:
    """(a_w1, a_theta, a_w2) with phi(t) = a_w1 * w1 + a_theta * theta + a_w2 * w2."""
    t = _check_t(t)
    if kind == BEZIER2:
        return (1.0 - t) ** 2, 2.0 * t * (1.0 - t), t * t
    if kind == POLYCHAIN1:
        if t <= 0.5:
            return 2.0 * (0.5 - t), 2.0 * t, 0.0
        return 0.0, 2.0 * (1.0 - t), 2.0 * (t - 0.5)
    raise ValueError(f"unknown curve kind '{kind}'")


def tangent_scale(kind: CurveKind, t: float) -> float:
    """s(t) with d phi / d theta = s(t) * I."""
    return curve_coefficients(kind, t)[1]


def combine(kind: CurveKind, t: float, w1: np.ndarray, theta: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Curve point on raw arrays; t = 0 and t = 1 return exact endpoint copies."""
    t = _check_t(t)
    if t == 0.0:
        return w1.copy()
    if t == 1.0:
        return w2.copy()
    a1, a_theta, a2 = curve_coefficients(kind, t)
    return a1 * w1 + a_theta * theta + a2 * w2


def curve_point(curve: CurveSpec, t: float) -> WeightVector:
    data = combine(curve.kind, t, curve.w1.data, curve.theta.data, curve.w2.data)
    return WeightVector(curve.w1.layout, data)


def init_curve(w1: Model, w2: Model, kind: CurveKind = BEZIER2, endpoints_trainable: bool = False) -> CurveSpec:
    """theta starts at the midpoint, so the initial curve is the straight segment."""
    if w1.spec != w2.spec:
        raise LayoutMismatchError("endpoint models have different specs")
    theta = (w1.weights.data + w2.weights.data) / 2.0
    return CurveSpec(
        kind=kind,
        spec=w1.spec,
        w1=w1.weights.copy(),
        w2=w2.weights.copy(),
        theta=w1.weights.with_data(theta),
        endpoints_trainable=endpoints_trainable,
    )


def linear_path(w1: Model, w2: Model) -> CurveSpec:
    """Untrained curve; phi(t) = (1 - t) w1 + t w2 for either kind. Baseline for barrier plots."""
    return init_curve(w1, w2, BEZIER2)


@dataclass(slots=True)
class CurveGradients:
    loss: float
    w1: np.ndarray
    theta: np.ndarray
    w2: np.ndarray


def curve_gradients(curve: CurveSpec, images: np.ndarray, labels: np.ndarray, t: float) -> CurveGradients:
    """Chain rule through the scalar coefficients of phi(t)."""
    a1, a_theta, a2 = curve_coefficients(curve.kind, t)
    step = loss_and_gradients(curve.model_at(t), images, labels)
    g = step.weights.data
    return CurveGradients(step.loss, a1 * g, a_theta * g, a2 * g)
