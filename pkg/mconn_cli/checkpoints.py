"""
Model, curve and dataset persistence
Checkpoints use the MCONNCK1 container from shared.storage; datasets are .npz
"""
import io
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from curve_space.curves import CurveSpec
from data_forge.dataset import LabeledDataset
from nn_core.engine import Model, WeightVector, build_layout
from shared.errors import CheckpointFormatError, DatasetFormatError
from shared.schemas import ModelSpec
from shared.storage import Manifest, PathLike, atomic_write_bytes, read_checkpoint, write_checkpoint

Loaded = Union[Model, CurveSpec]


def model_header(model: Model) -> Dict[str, Any]:
    return {"kind": "model", "spec": model.spec.model_dump(mode="json")}


def curve_header(curve: CurveSpec) -> Dict[str, Any]:
    return {
        "kind": "curve",
        "curve_kind": curve.kind,
        "endpoints_trainable": curve.endpoints_trainable,
        "spec": curve.spec.model_dump(mode="json"),
    }


def curve_payload(curve: CurveSpec) -> np.ndarray:
    """w1 | w2 | theta"""
    return np.concatenate([curve.w1.data, curve.w2.data, curve.theta.data])


def save_model(path: PathLike, model: Model, lineage: Optional[Dict[str, Any]] = None,
               manifest: Optional[Manifest] = None) -> Path:
    lineage = lineage or {}
    if manifest is not None:
        return manifest.checkpoint(str(path), model_header(model), model.weights.data, lineage)
    return write_checkpoint(path, dict(model_header(model), lineage=lineage), model.weights.data)


def save_curve(path: PathLike, curve: CurveSpec, lineage: Optional[Dict[str, Any]] = None,
               manifest: Optional[Manifest] = None) -> Path:
    lineage = lineage or {}
    if manifest is not None:
        return manifest.checkpoint(str(path), curve_header(curve), curve_payload(curve), lineage)
    return write_checkpoint(path, dict(curve_header(curve), lineage=lineage), curve_payload(curve))


def _spec_from(header: Dict[str, Any]) -> ModelSpec:
    try:
        return ModelSpec.model_validate(header["spec"])
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"checkpoint header carries no valid model spec: {exc}") from exc


def load_checkpoint(path: PathLike) -> Loaded:
    """Model or CurveSpec, depending on the header kind."""
    header, payload = read_checkpoint(path)
    spec = _spec_from(header)
    layout = build_layout(spec)
    size = sum(seg.length for seg in layout)
    kind = header.get("kind")
    if kind == "model":
        if payload.size != size:
            raise CheckpointFormatError(f"model payload has {payload.size} values, spec needs {size}")
        return Model(spec, WeightVector(layout, payload))
    if kind == "curve":
        if payload.size != 3 * size:
            raise CheckpointFormatError(f"curve payload has {payload.size} values, spec needs {3 * size}")
        w1, w2, theta = (WeightVector(layout, payload[i * size:(i + 1) * size].copy()) for i in range(3))
        return CurveSpec(
            kind=header.get("curve_kind", "bezier2"),
            spec=spec,
            w1=w1,
            w2=w2,
            theta=theta,
            endpoints_trainable=bool(header.get("endpoints_trainable", False)),
        )
    raise CheckpointFormatError(f"unknown checkpoint kind {kind!r}")


def load_model(path: PathLike) -> Model:
    loaded = load_checkpoint(path)
    if not isinstance(loaded, Model):
        raise CheckpointFormatError(f"{path} holds a curve, not a model")
    return loaded


def load_curve(path: PathLike) -> CurveSpec:
    loaded = load_checkpoint(path)
    if not isinstance(loaded, CurveSpec):
        raise CheckpointFormatError(f"{path} holds a model, not a curve")
    return loaded


def save_dataset(path: PathLike, data: LabeledDataset) -> Path:
    meta = {"num_classes": data.num_classes, "source": data.source, "role": data.role}
    buffer = io.BytesIO()
    np.savez(
        buffer,
        images=data.images,
        labels=data.labels,
        poisoned=data.poisoned,
        original_labels=data.original_labels,
        sample_ids=data.sample_ids,
        meta=np.array(json.dumps(meta, sort_keys=True)),
    )
    return atomic_write_bytes(path, buffer.getvalue())


def load_dataset(path: PathLike) -> LabeledDataset:
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            return LabeledDataset(
                images=archive["images"],
                labels=archive["labels"],
                num_classes=int(meta["num_classes"]),
                poisoned=archive["poisoned"],
                original_labels=archive["original_labels"],
                sample_ids=archive["sample_ids"],
                source=meta.get("source", "anonymous"),
                role=meta.get("role", "data"),
            )
    except FileNotFoundError:
        raise
    except (KeyError, ValueError, OSError) as exc:
        raise DatasetFormatError(f"{path}: not a dataset archive: {exc}") from exc
