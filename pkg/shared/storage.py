"""
Artifact storage: atomic file writes, checkpoint container codec, CSV/JSON reports
"""
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from shared.errors import CheckpointFormatError

OUTPUT_ROOT = os.getenv("MCONN_OUTPUT_ROOT", "runs")

CHECKPOINT_MAGIC = b"MCONNCK1"
CHECKPOINT_VERSION = 1
SUPPORTED_VERSIONS = {1}
CSV_SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def output_root() -> Path:
    return Path(os.getenv("MCONN_OUTPUT_ROOT", OUTPUT_ROOT))


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and pydantic models for json.dumps."""
    if hasattr(obj, "model_dump"):
        return to_jsonable(obj.model_dump())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, obj: Any) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def write_csv(path: PathLike, rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> Path:
    """Fixed column order, '\\n' line endings, shortest round-trip float text."""
    frame = pd.DataFrame(list(rows), columns=list(columns))
    text = frame.to_csv(index=False, lineterminator="\n")
    return atomic_write_text(path, text)


def encode_checkpoint(header: Dict[str, Any], payload: np.ndarray) -> bytes:
    """MCONNCK1 | uint32 LE header length | JSON header | float64 LE payload"""
    header = dict(header)
    header.setdefault("format_version", CHECKPOINT_VERSION)
    header["payload_length"] = int(payload.size)
    header_bytes = json.dumps(to_jsonable(header), sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + body


def decode_checkpoint(raw: bytes) -> Tuple[Dict[str, Any], np.ndarray]:
    if len(raw) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointFormatError("checkpoint truncated before header")
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {raw[:len(CHECKPOINT_MAGIC)]!r}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<I", raw[offset:offset + 4])
    offset += 4
    if len(raw) < offset + header_len:
        raise CheckpointFormatError("checkpoint truncated inside header")
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from exc
    offset += header_len

    version = header.get("format_version")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    expected = int(header.get("payload_length", -1))
    body = raw[offset:]
    if expected < 0 or len(body) != expected * 8:
        raise CheckpointFormatError(
            f"payload holds {len(body)} bytes, header declares {expected} float64 values"
        )
    payload = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return header, payload


def write_checkpoint(path: PathLike, header: Dict[str, Any], payload: np.ndarray) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(header, payload))


def read_checkpoint(path: PathLike) -> Tuple[Dict[str, Any], np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


class Manifest:
    """
    Run manifest: every artifact written through it is recorded with its seed lineage
    """

    def __init__(self, root: PathLike, run: Dict[str, Any]):
        self.root = Path(root)
        self.run = dict(run)
        self.artifacts: List[Dict[str, Any]] = []

    def _record(self, path: Path, kind: str, lineage: Dict[str, Any]) -> Path:
        self.artifacts.append({
            "path": str(path.relative_to(self.root)),
            "kind": kind,
            "lineage": to_jsonable(lineage),
        })
        return path

    def json(self, name: str, obj: Any, lineage: Dict[str, Any], kind: str = "json") -> Path:
        return self._record(write_json(self.root / name, obj), kind, lineage)

    def csv(self, name: str, rows, columns, lineage: Dict[str, Any], kind: str = "csv") -> Path:
        return self._record(write_csv(self.root / name, rows, columns), kind, lineage)

    def checkpoint(self, name: str, header: Dict[str, Any], payload: np.ndarray, lineage: Dict[str, Any]) -> Path:
        header = dict(header, lineage=lineage)
        return self._record(write_checkpoint(self.root / name, header, payload), "checkpoint", lineage)

    def finalize(self, status: str, failed_stage: Optional[str] = None) -> Path:
        body = {
            "run": self.run,
            "status": status,
            "failed_stage": failed_stage,
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "checkpoint_version": CHECKPOINT_VERSION,
            "artifacts": self.artifacts,
        }
        return write_json(self.root / "manifest.json", body)
