"""
Shared data models for the mode connectivity lab
Configs, layer descriptors and reports; arrays live in the component dataclasses
"""
import math
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

DEFAULT_T_GRID: List[float] = [round(0.1 * i, 1) for i in range(11)]


class Dense(BaseModel):
    """Fully connected layer: y = W x + b"""
    kind: Literal["dense"] = "dense"
    in_features: int = Field(..., gt=0)
    out_features: int = Field(..., gt=0)


class Conv2D(BaseModel):
    """2-D convolution over (channels, height, width) inputs"""
    kind: Literal["conv2d"] = "conv2d"
    in_channels: int = Field(..., gt=0)
    out_channels: int = Field(..., gt=0)
    kernel: int = Field(..., gt=0)
    stride: int = Field(default=1, gt=0)
    padding: int = Field(default=0, ge=0)


class ReLU(BaseModel):
    kind: Literal["relu"] = "relu"


class Flatten(BaseModel):
    kind: Literal["flatten"] = "flatten"


class MaxPool2D(BaseModel):
    """Non-overlapping max pooling (stride == kernel)"""
    kind: Literal["maxpool2d"] = "maxpool2d"
    kernel: int = Field(..., gt=0)


LayerSpec = Annotated[
    Union[Dense, Conv2D, ReLU, Flatten, MaxPool2D],
    Field(discriminator="kind"),
]


class ModelSpec(BaseModel):
    """Feed-forward architecture; weight layout is derived from it alone"""
    input_shape: Tuple[int, int, int] = Field(..., description="(channels, height, width)")
    layers: List[LayerSpec] = Field(..., min_length=1)
    num_classes: int = Field(..., ge=2)

    @field_validator("input_shape")
    @classmethod
    def validate_input_shape(cls, v):
        if any(d <= 0 for d in v):
            raise ValueError("input_shape dimensions must be positive")
        return v

    @model_validator(mode="after")
    def validate_composition(self):
        shapes = self.infer_shapes()
        if shapes[-1] != (self.num_classes,):
            raise ValueError(
                f"final layer output {shapes[-1]} does not match num_classes={self.num_classes}"
            )
        return self

    def infer_shapes(self) -> List[Tuple[int, ...]]:
        """Return the activation shape before each layer plus the final output shape."""
        shape: Tuple[int, ...] = tuple(self.input_shape)
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if len(shape) != 1 or shape[0] != layer.in_features:
                    raise ValueError(f"layer {i} (dense) expects ({layer.in_features},), got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv2D):
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise ValueError(f"layer {i} (conv2d) expects {layer.in_channels} channels, got {shape}")
                h = (shape[1] + 2 * layer.padding - layer.kernel) // layer.stride + 1
                w = (shape[2] + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if h <= 0 or w <= 0:
                    raise ValueError(f"layer {i} (conv2d) kernel larger than padded input {shape}")
                shape = (layer.out_channels, h, w)
            elif isinstance(layer, MaxPool2D):
                if len(shape) != 3:
                    raise ValueError(f"layer {i} (maxpool2d) needs a 3-D input, got {shape}")
                h, w = shape[1] // layer.kernel, shape[2] // layer.kernel
                if h <= 0 or w <= 0:
                    raise ValueError(f"layer {i} (maxpool2d) kernel larger than input {shape}")
                shape = (shape[0], h, w)
            elif isinstance(layer, Flatten):
                shape = (math.prod(shape),)
            shapes.append(shape)
        return shapes


class TrainConfig(BaseModel):
    """SGD with momentum; defaults follow the 100-epoch protocol"""
    epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=64, gt=0)
    learning_rate: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    seed: int = Field(default=0)
    weight_decay: float = Field(default=0.0, ge=0.0)


class PathTrainConfig(TrainConfig):
    """Curve training; one t ~ U(0,1) is drawn per minibatch"""
    learning_rate: float = Field(default=0.01, gt=0.0)
    t_sampling: Literal["per_batch_uniform"] = "per_batch_uniform"


class PGDConfig(BaseModel):
    """l-infinity PGD in pixel units"""
    epsilon: float = Field(default=8 / 255, ge=0.0)
    steps: int = Field(default=10, gt=0)
    step_size: Optional[float] = Field(default=None, gt=0.0, description="defaults to epsilon/4")
    random_start: bool = False
    box: Tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    @field_validator("box")
    @classmethod
    def validate_box(cls, v):
        if v[0] >= v[1]:
            raise ValueError("box lower bound must be below upper bound")
        return v

    @property
    def effective_step_size(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 4


class TriggerSpec(BaseModel):
    """White block stamped in the bottom-right corner"""
    height: int = Field(default=3, gt=0)
    width: int = Field(default=3, gt=0)
    anchor: Literal["bottom_right"] = "bottom_right"
    pixel_value: float = Field(default=1.0, ge=0.0, le=1.0)


class SingleTarget(BaseModel):
    variant: Literal["single_target"] = "single_target"
    target: int = Field(default=1, ge=0)


class AllTargets(BaseModel):
    """label -> (label + 1) mod modulus"""
    variant: Literal["all_targets"] = "all_targets"
    modulus: int = Field(default=9, gt=0)


TargetRule = Annotated[Union[SingleTarget, AllTargets], Field(discriminator="variant")]


class InjectionSpec(BaseModel):
    """Error injection: flip targets, keep the rest of the predictions"""
    target_indices: List[int] = Field(default_factory=list)
    target_labels: List[int] = Field(default_factory=list)
    keep_indices: List[int] = Field(default_factory=list)
    keep_weight: float = Field(default=1.0, gt=0.0)
    steps: int = Field(default=500, gt=0)
    learning_rate: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_indices(self):
        if len(self.target_indices) != len(self.target_labels):
            raise ValueError("target_labels must pair one-to-one with target_indices")
        if set(self.target_indices) & set(self.keep_indices):
            raise ValueError("target and keep indices must be disjoint")
        return self


class TSelectConfig(BaseModel):
    """Accuracy-drop threshold rule, optionally under k-fold validation"""
    k: int = Field(default=5, ge=2)
    delta_a: float = Field(default=0.10, ge=0.0, le=1.0)
    seed: int = 0


class PathRecord(BaseModel):
    t: float = Field(..., ge=0.0, le=1.0)
    metrics: Dict[str, float] = Field(default_factory=dict)
    errors: Dict[str, str] = Field(default_factory=dict)


class PathProfile(BaseModel):
    """Per-t metrics sampled along a curve"""
    t_grid: List[float]
    records: List[PathRecord]

    @model_validator(mode="after")
    def validate_grid(self):
        grid = self.t_grid
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("t_grid must be strictly ascending")
        if not grid or grid[0] != 0.0 or grid[-1] != 1.0:
            raise ValueError("t_grid must include 0 and 1")
        if [r.t for r in self.records] != grid:
            raise ValueError("records must follow t_grid")
        return self

    def metric_names(self) -> List[str]:
        names: List[str] = []
        for record in self.records:
            for name in record.metrics:
                if name not in names:
                    names.append(name)
        return names

    def column(self, metric: str) -> List[float]:
        return [r.metrics.get(metric, float("nan")) for r in self.records]


class RepairReport(BaseModel):
    """One row of a repair comparison"""
    method: str
    bonafide_size: int = Field(..., ge=0)
    chosen_t: Optional[float] = None
    clean_accuracy: float = Field(..., ge=0.0, le=1.0)
    attack_success: float = Field(..., ge=0.0, le=1.0)
    runtime: float = Field(default=0.0, ge=0.0, description="wall-clock seconds")
    seed: int = 0
    notes: str = ""


class SimilarityRecord(BaseModel):
    """Mean input-gradient dissimilarity m = |s - 1| / 2 against each endpoint"""
    t: float
    m_clean_to_w1: float = Field(..., ge=0.0, le=1.0)
    m_clean_to_w2: float = Field(..., ge=0.0, le=1.0)
    m_tampered_to_w1: float = Field(..., ge=0.0, le=1.0)
    m_tampered_to_w2: float = Field(..., ge=0.0, le=1.0)
    skipped_clean: int = 0
    skipped_tampered: int = 0


class TSelection(BaseModel):
    """Outcome of choosing the repaired model's index on the path"""
    t: float
    success: bool
    threshold: float
    endpoint_accuracy: float
    delta_a: float
    t_grid: List[float]
    accuracies: List[float]
    folds: Optional[int] = None
