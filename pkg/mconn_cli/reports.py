"""
Tabular report emission: path profiles, repair comparisons, similarity records
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from shared.schemas import PathProfile, RepairReport, SimilarityRecord
from shared.storage import Manifest, PathLike, write_csv

# runtime stays out of the CSV so reruns are byte-identical; JSON keeps it
REPORT_COLUMNS = ["method", "bonafide_size", "chosen_t", "clean_accuracy", "attack_success", "seed", "notes"]
SIMILARITY_COLUMNS = [
    "t", "m_clean_to_w1", "m_clean_to_w2", "m_tampered_to_w1", "m_tampered_to_w2",
    "skipped_clean", "skipped_tampered",
]


def profile_columns(profile: PathProfile) -> List[str]:
    return ["t"] + profile.metric_names() + ["errors"]


def profile_rows(profile: PathProfile) -> List[Dict[str, Any]]:
    """One row per t; evaluator failures are joined into the errors column."""
    rows = []
    for record in profile.records:
        row: Dict[str, Any] = {"t": record.t}
        row.update(record.metrics)
        row["errors"] = "; ".join(f"{k}: {v}" for k, v in sorted(record.errors.items()))
        rows.append(row)
    return rows


def write_profile_csv(path: PathLike, profile: PathProfile, manifest: Optional[Manifest] = None,
                      lineage: Optional[Dict[str, Any]] = None) -> Path:
    if manifest is not None:
        return manifest.csv(str(path), profile_rows(profile), profile_columns(profile), lineage or {}, kind="profile")
    return write_csv(path, profile_rows(profile), profile_columns(profile))


def write_repair_reports(stem: str, reports: Sequence[RepairReport], manifest: Manifest,
                         lineage: Dict[str, Any]) -> None:
    rows = [r.model_dump() for r in reports]
    manifest.csv(f"{stem}.csv", rows, REPORT_COLUMNS, lineage, kind="repair_report")
    manifest.json(f"{stem}.json", rows, lineage, kind="repair_report")


def write_similarity_csv(path: PathLike, records: Sequence[SimilarityRecord], manifest: Optional[Manifest] = None,
                         lineage: Optional[Dict[str, Any]] = None) -> Path:
    rows = [r.model_dump() for r in records]
    if manifest is not None:
        return manifest.csv(str(path), rows, SIMILARITY_COLUMNS, lineage or {}, kind="similarity")
    return write_csv(path, rows, SIMILARITY_COLUMNS)
