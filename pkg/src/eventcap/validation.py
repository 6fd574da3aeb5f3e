"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .data import VideoRecord
from .errors import DataError


def check_feature_matrix(x, expected_dim: Optional[int] = None, name: str = "features") -> np.ndarray:
    """2-d finite float32 matrix with an optional width check."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError(f"{name}: expected a nonempty 2-d matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError(f"{name}: non-finite values present")
    if expected_dim is not None and arr.shape[1] != expected_dim:
        raise DataError(f"{name}: width {arr.shape[1]} does not match expected {expected_dim}")
    return arr


def check_video_records(
    records,
    require_features: bool = True,
    require_events: bool = True,
    expected_dim: Optional[int] = None,
) -> List[VideoRecord]:
    """Validate a record list; all problems are reported in one error."""
    records = list(records)
    if not records:
        raise DataError("no video records given")
    problems = []
    seen = set()
    for r in records:
        if not isinstance(r, VideoRecord):
            problems.append(f"not a VideoRecord: {type(r).__name__}")
            continue
        if r.video_id in seen:
            problems.append(f"{r.video_id}: duplicate video_id")
        seen.add(r.video_id)
        problems.extend(r.validate(require_events=require_events))
        if require_features:
            if r.features is None:
                problems.append(f"{r.video_id}: features missing")
            else:
                try:
                    check_feature_matrix(r.features, expected_dim, name=r.video_id)
                except DataError as exc:
                    problems.append(str(exc))
    if problems:
        head = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise DataError(f"invalid video records: {head}{more}")
    return records
