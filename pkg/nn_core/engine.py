"""
Network Engine - deterministic forward pass and exact backpropagation
Gradients are available with respect to the flat weight vector and the input
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from shared.errors import LayoutMismatchError, NonFiniteError, ShapeMismatchError
from shared.schemas import Conv2D, Dense, Flatten, MaxPool2D, ModelSpec, ReLU


@dataclass(frozen=True, slots=True)
class Segment:
    """One parameter tensor inside a WeightVector"""
    layer: int
    name: str
    offset: int
    length: int
    shape: Tuple[int, ...]


Layout = Tuple[Segment, ...]


@lru_cache(maxsize=64)
def _layout_from_json(spec_json: str) -> Layout:
    spec = ModelSpec.model_validate_json(spec_json)
    segments: List[Segment] = []
    offset = 0
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            shapes = [("weight", (layer.out_features, layer.in_features)), ("bias", (layer.out_features,))]
        elif isinstance(layer, Conv2D):
            shapes = [
                ("weight", (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)),
                ("bias", (layer.out_channels,)),
            ]
        else:
            continue
        for name, shape in shapes:
            length = int(np.prod(shape))
            segments.append(Segment(i, name, offset, length, shape))
            offset += length
    return tuple(segments)


def build_layout(spec: ModelSpec) -> Layout:
    """Weight layout is a pure function of the ModelSpec."""
    return _layout_from_json(spec.model_dump_json())


@dataclass(slots=True)
class WeightVector:
    """Flat float64 parameters with a per-tensor segment table"""
    layout: Layout
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        expected = 0
        for seg in self.layout:
            if seg.offset != expected:
                raise LayoutMismatchError(f"segment for layer {seg.layer} is not contiguous")
            expected += seg.length
        if expected != self.data.size:
            raise LayoutMismatchError(f"layout covers {expected} values, data has {self.data.size}")

    def __len__(self) -> int:
        return int(self.data.size)

    def tensor(self, layer: int, name: str) -> np.ndarray:
        """Reshaped view into the flat data."""
        for seg in self.layout:
            if seg.layer == layer and seg.name == name:
                return self.data[seg.offset:seg.offset + seg.length].reshape(seg.shape)
        raise KeyError(f"no parameter '{name}' for layer {layer}")

    def copy(self) -> "WeightVector":
        return WeightVector(self.layout, self.data.copy())

    def with_data(self, data: np.ndarray) -> "WeightVector":
        return WeightVector(self.layout, data)

    def same_layout(self, other: "WeightVector") -> bool:
        return self.layout == other.layout


@dataclass(slots=True)
class Model:
    """A ModelSpec paired with weights laid out for it"""
    spec: ModelSpec
    weights: WeightVector

    def __post_init__(self) -> None:
        if self.weights.layout != build_layout(self.spec):
            raise LayoutMismatchError("weights.layout does not match the model spec")

    def copy(self) -> "Model":
        return Model(self.spec, self.weights.copy())

    def with_weights(self, data: np.ndarray) -> "Model":
        return Model(self.spec, self.weights.with_data(data))


@dataclass(slots=True)
class ForwardResult:
    logits: np.ndarray
    loss: Optional[float]


@dataclass(slots=True)
class Gradients:
    loss: float
    logits: np.ndarray
    weights: Optional[WeightVector]
    inputs: Optional[np.ndarray]


def init_model(spec: ModelSpec, seed: int) -> Model:
    """He-uniform weights, zero biases, drawn in layout order."""
    layout = build_layout(spec)
    rng = np.random.default_rng(seed)
    data = np.zeros(sum(seg.length for seg in layout))
    for seg in layout:
        if seg.name != "weight":
            continue
        fan_in = int(np.prod(seg.shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        data[seg.offset:seg.offset + seg.length] = rng.uniform(-limit, limit, size=seg.length)
    return Model(spec, WeightVector(layout, data))


def zero_model(spec: ModelSpec) -> Model:
    layout = build_layout(spec)
    return Model(spec, WeightVector(layout, np.zeros(sum(seg.length for seg in layout))))


def check_batch(spec: ModelSpec, batch: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
    """Validate shapes and label range; returns the batch as float64."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(spec.input_shape):
        raise ShapeMismatchError(
            f"batch shape {batch.shape} does not match (N, {', '.join(map(str, spec.input_shape))})"
        )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (batch.shape[0],):
            raise ShapeMismatchError(f"expected {batch.shape[0]} labels, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= spec.num_classes):
            raise ShapeMismatchError(f"labels must lie in [0, {spec.num_classes})")
    return batch


def _require_finite(values: np.ndarray, where: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"non-finite values after {where}")


def _conv_forward(x, weight, bias, stride, padding):
    n, c = x.shape[:2]
    oc, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ weight.reshape(oc, -1).T + bias
    out = np.ascontiguousarray(out.reshape(n, ho, wo, oc).transpose(0, 3, 1, 2))
    return out, (cols, xp.shape, ho, wo)


def _conv_backward(dout, weight, cache, stride, padding, need_dx):
    cols, xp_shape, ho, wo = cache
    n = dout.shape[0]
    oc, c, k, _ = weight.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, oc)
    dweight = (d2.T @ cols).reshape(weight.shape)
    dbias = d2.sum(axis=0)
    if not need_dx:
        return dweight, dbias, None
    dcols = (d2 @ weight.reshape(oc, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros(xp_shape)
    # fixed (i, j) accumulation order keeps results bit-reproducible
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        dxp = dxp[:, :, padding:xp_shape[2] - padding, padding:xp_shape[3] - padding]
    return dweight, dbias, dxp


def _pool_forward(x, k):
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    blocks = (
        x[:, :, :ho * k, :wo * k]
        .reshape(n, c, ho, k, wo, k)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, k * k)
    )
    # argmax returns the first maximum: ties go to the lowest flat index
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def _pool_backward(dout, cache, k):
    x_shape, idx = cache
    n, c, ho, wo = dout.shape
    dblocks = np.zeros((n, c, ho, wo, k * k))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, :ho * k, :wo * k] = (
        dblocks.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
    )
    return dx


def _run_forward(model: Model, x: np.ndarray):
    caches = []
    a = x
    for i, layer in enumerate(model.spec.layers):
        if isinstance(layer, Dense):
            weight = model.weights.tensor(i, "weight")
            caches.append(a)
            a = a @ weight.T + model.weights.tensor(i, "bias")
        elif isinstance(layer, Conv2D):
            a, cache = _conv_forward(
                a, model.weights.tensor(i, "weight"), model.weights.tensor(i, "bias"),
                layer.stride, layer.padding,
            )
            caches.append(cache)
        elif isinstance(layer, ReLU):
            mask = a > 0
            caches.append(mask)
            a = np.where(mask, a, 0.0)
        elif isinstance(layer, MaxPool2D):
            a, cache = _pool_forward(a, layer.kernel)
            caches.append(cache)
        elif isinstance(layer, Flatten):
            caches.append(a.shape)
            a = a.reshape(a.shape[0], -1)
        _require_finite(a, f"layer {i} ({layer.kind})")
    return a, caches


def _run_backward(model: Model, caches, dlogits: np.ndarray, need_weights: bool, need_input: bool):
    grad = np.zeros(len(model.weights)) if need_weights else None
    delta = dlogits
    for i in range(len(model.spec.layers) - 1, -1, -1):
        layer = model.spec.layers[i]
        cache = caches[i]
        need_dx = i > 0 or need_input
        if isinstance(layer, Dense):
            weight = model.weights.tensor(i, "weight")
            if need_weights:
                _write_grad(model.weights, grad, i, delta.T @ cache, delta.sum(axis=0))
            delta = delta @ weight if need_dx else None
        elif isinstance(layer, Conv2D):
            dweight, dbias, delta = _conv_backward(
                delta, model.weights.tensor(i, "weight"), cache, layer.stride, layer.padding, need_dx,
            )
            if need_weights:
                _write_grad(model.weights, grad, i, dweight, dbias)
        elif isinstance(layer, ReLU):
            delta = delta * cache
        elif isinstance(layer, MaxPool2D):
            delta = _pool_backward(delta, cache, layer.kernel)
        elif isinstance(layer, Flatten):
            delta = delta.reshape(cache)
        if delta is None:
            break
    return grad, delta


def _write_grad(weights: WeightVector, grad: np.ndarray, layer: int, dweight, dbias) -> None:
    for seg in weights.layout:
        if seg.layer == layer:
            source = dweight if seg.name == "weight" else dbias
            grad[seg.offset:seg.offset + seg.length] = source.reshape(-1)


def sample_losses(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample softmax cross-entropy."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), labels]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    n = logits.shape[0]
    loss = float(sample_losses(logits, labels).mean())
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def forward(model: Model, batch: np.ndarray, labels: Optional[np.ndarray] = None) -> ForwardResult:
    """Logits for a batch; mean cross-entropy when labels are given."""
    x = check_batch(model.spec, batch, labels)
    logits, _ = _run_forward(model, x)
    loss = None
    if labels is not None:
        loss = float(sample_losses(logits, np.asarray(labels)).mean())
        _require_finite(np.asarray(loss), "loss")
    return ForwardResult(logits, loss)


def loss_and_gradients(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    *,
    weights: bool = True,
    inputs: bool = False,
) -> Gradients:
    """One forward/backward pass returning whichever gradients are requested."""
    x = check_batch(model.spec, batch, labels)
    labels = np.asarray(labels)
    logits, caches = _run_forward(model, x)
    loss, dlogits = _cross_entropy(logits, labels)
    _require_finite(np.asarray(loss), "loss")
    grad_w, grad_x = _run_backward(model, caches, dlogits, weights, inputs)
    if grad_w is not None:
        _require_finite(grad_w, "weight gradient")
    if inputs:
        _require_finite(grad_x, "input gradient")
    return Gradients(
        loss=loss,
        logits=logits,
        weights=model.weights.with_data(grad_w) if grad_w is not None else None,
        inputs=grad_x if inputs else None,
    )


def grad_weights(model: Model, batch: np.ndarray, labels: np.ndarray) -> WeightVector:
    """d(mean loss)/dw with the model's layout."""
    return loss_and_gradients(model, batch, labels, weights=True).weights


def grad_input(model: Model, batch: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean loss)/dx, same shape as the batch."""
    return loss_and_gradients(model, batch, labels, weights=False, inputs=True).inputs
