"""
Scenario configuration: YAML files validated into ScenarioConfig,
with dotted-key overrides applied to the raw mapping first
"""
import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from curve_space.curves import CURVE_KINDS
from nn_core.architectures import build_spec
from repair_baselines.t_selection import DELTA_A_FULL_ACCESS
from shared.errors import ConfigError
from shared.schemas import (
    DEFAULT_T_GRID,
    ModelSpec,
    PathTrainConfig,
    PGDConfig,
    SingleTarget,
    TargetRule,
    TrainConfig,
    TriggerSpec,
    TSelectConfig,
)

ScenarioKind = Literal["backdoor", "injection", "evasion", "adaptive_backdoor"]
BaselineName = Literal["finetune", "scratch", "noise", "prune"]


class DatasetBlock(BaseModel):
    """Synthetic glyphs, or IDX files when both idx paths are set"""
    source: Literal["synthetic", "idx"] = "synthetic"
    num_classes: int = Field(default=10, ge=2)
    samples_per_class: int = Field(default=500, gt=0)
    image_size: int = Field(default=12, ge=4)
    noise_level: float = Field(default=0.1, ge=0.0)
    channels: int = Field(default=1, gt=0)
    test_fraction: float = Field(default=0.3, gt=0.0, lt=1.0)
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None

    @model_validator(mode="after")
    def validate_idx(self):
        if self.source == "idx" and not (self.idx_images and self.idx_labels):
            raise ValueError("idx source needs idx_images and idx_labels")
        return self


class ModelBlock(BaseModel):
    architecture: Literal["cnn", "mlp"] = "cnn"
    hidden: List[int] = Field(default_factory=lambda: [32])
    channels: List[int] = Field(default_factory=lambda: [8, 16])


class InjectionBlock(BaseModel):
    n_targets: int = Field(default=4, ge=0)
    n_keep: int = Field(default=996, ge=0)
    keep_weight: float = Field(default=1.0, gt=0.0)
    steps: int = Field(default=500, gt=0)
    learning_rate: float = Field(default=0.01, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)


class AttackBlock(BaseModel):
    poison_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    rule: TargetRule = Field(default_factory=SingleTarget)
    trigger: TriggerSpec = Field(default_factory=TriggerSpec)
    injection: InjectionBlock = Field(default_factory=InjectionBlock)
    pgd: PGDConfig = Field(default_factory=PGDConfig)


class RepairBlock(BaseModel):
    bonafide_sizes: List[int] = Field(default_factory=lambda: [500])
    curve: str = "bezier2"
    path: PathTrainConfig = Field(default_factory=PathTrainConfig)
    finetune: TrainConfig = Field(default_factory=TrainConfig)
    baselines: List[BaselineName] = Field(default_factory=lambda: ["finetune", "scratch", "noise", "prune"])
    noise_repetitions: int = Field(default=50, ge=1)
    prune_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    delta_a: float = Field(default=DELTA_A_FULL_ACCESS, ge=0.0, le=1.0)
    t_select: Optional[TSelectConfig] = None

    @field_validator("curve")
    @classmethod
    def validate_curve(cls, v):
        if v not in CURVE_KINDS:
            raise ValueError(f"curve must be one of {CURVE_KINDS}")
        return v

    @field_validator("bonafide_sizes")
    @classmethod
    def validate_sizes(cls, v):
        if not v or any(size <= 0 for size in v):
            raise ValueError("bonafide_sizes must be a non-empty list of positive sizes")
        return v


class AnalysisBlock(BaseModel):
    t_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_T_GRID))
    eval_samples: int = Field(default=200, gt=0, description="test samples used by the landscape analyses")
    hessian_samples: int = Field(default=64, gt=0)
    similarity: bool = True
    similarity_samples: int = Field(default=200, gt=0)
    ensemble_t: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    stability_seeds: List[int] = Field(default_factory=list)

    @field_validator("t_grid")
    @classmethod
    def validate_grid(cls, v):
        if len(v) < 3 or any(not 0.0 <= t <= 1.0 for t in v):
            raise ValueError("t_grid needs at least 3 points inside [0, 1]")
        return v


class ScenarioConfig(BaseModel):
    """One end-to-end experiment"""
    name: str = Field(..., min_length=1)
    kind: ScenarioKind
    seed: int = 0
    output_dir: Optional[str] = None
    dataset: DatasetBlock = Field(default_factory=DatasetBlock)
    model: ModelBlock = Field(default_factory=ModelBlock)
    training: TrainConfig = Field(default_factory=TrainConfig)
    attack: AttackBlock = Field(default_factory=AttackBlock)
    repair: RepairBlock = Field(default_factory=RepairBlock)
    analysis: AnalysisBlock = Field(default_factory=AnalysisBlock)

    @model_validator(mode="after")
    def validate_consistency(self):
        rule = self.attack.rule
        if isinstance(rule, SingleTarget) and rule.target >= self.dataset.num_classes:
            raise ValueError(f"target class {rule.target} outside [0, {self.dataset.num_classes})")
        if self.attack.trigger.height > self.dataset.image_size or self.attack.trigger.width > self.dataset.image_size:
            raise ValueError("trigger does not fit the image")
        if self.kind == "injection" and self.attack.injection.n_targets == 0:
            raise ValueError("injection scenario needs at least one target")
        self.model_spec()
        return self

    def model_spec(self) -> ModelSpec:
        d = self.dataset
        return build_spec(
            self.model.architecture,
            (d.channels, d.image_size, d.image_size),
            d.num_classes,
            hidden=tuple(self.model.hidden),
            channels=tuple(self.model.channels),
        )

    def digest(self) -> str:
        """sha256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_override(item: str) -> Tuple[List[str], Any]:
    """'repair.path.epochs=5' -> (['repair', 'path', 'epochs'], 5)"""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form dotted.key=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{item}' has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override '{item}' has an unparseable value: {exc}") from exc
    return parts, value


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    merged = copy.deepcopy(raw)
    for item in overrides:
        parts, value = parse_override(item)
        node = merged
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override '{item}' descends into non-mapping key '{part}'")
            node = child
        node[parts[-1]] = value
    return merged


def load_scenario(path: Union[str, Path], overrides: Iterable[str] = ()) -> ScenarioConfig:
    """Read YAML, apply overrides, validate. Missing files raise FileNotFoundError."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ScenarioConfig.model_validate(apply_overrides(raw, overrides))
