"""
Desk-scale architecture presets
"""
from typing import Sequence, Tuple

from shared.schemas import Conv2D, Dense, Flatten, MaxPool2D, ModelSpec, ReLU


def mlp_spec(input_shape: Tuple[int, int, int], hidden: Sequence[int], num_classes: int) -> ModelSpec:
    """Flatten followed by Dense/ReLU blocks and a linear read-out."""
    layers = [Flatten()]
    width = input_shape[0] * input_shape[1] * input_shape[2]
    for units in hidden:
        layers += [Dense(in_features=width, out_features=units), ReLU()]
        width = units
    layers.append(Dense(in_features=width, out_features=num_classes))
    return ModelSpec(input_shape=input_shape, layers=layers, num_classes=num_classes)


def small_cnn_spec(
    input_shape: Tuple[int, int, int],
    channels: Sequence[int] = (8, 16),
    hidden: Sequence[int] = (32,),
    num_classes: int = 10,
) -> ModelSpec:
    """
    Conv(3x3, same padding)/ReLU/MaxPool(2) blocks, then an MLP head
    Pooling is skipped once the feature map would drop below 2x2
    """
    layers = []
    c, h, w = input_shape
    for out_channels in channels:
        layers += [Conv2D(in_channels=c, out_channels=out_channels, kernel=3, padding=1), ReLU()]
        c = out_channels
        if h // 2 >= 2 and w // 2 >= 2:
            layers.append(MaxPool2D(kernel=2))
            h, w = h // 2, w // 2
    layers.append(Flatten())
    width = c * h * w
    for units in hidden:
        layers += [Dense(in_features=width, out_features=units), ReLU()]
        width = units
    layers.append(Dense(in_features=width, out_features=num_classes))
    return ModelSpec(input_shape=input_shape, layers=layers, num_classes=num_classes)


def build_spec(architecture: str, input_shape, num_classes: int, hidden=(64,), channels=(8, 16)) -> ModelSpec:
    if architecture == "mlp":
        return mlp_spec(tuple(input_shape), hidden, num_classes)
    if architecture == "cnn":
        return small_cnn_spec(tuple(input_shape), channels, hidden, num_classes)
    raise ValueError(f"unknown architecture '{architecture}'")
