"""Adapter for predictions from external EL systems.

External rows carry a Wikipedia page ID, a title, or a QID; each is
resolved to a QID through the mapping index with precedence
page_id > title > given qid.  Unresolvable rows stay in the output with no
QID so they cost precision exactly like a hallucinated title would.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .kb import MappingIndex, is_qid, pageid_to_qid, title_to_qid
from .parsing import ORIGIN_CLEAN, STATUS_CLEAN, PredictedLink, PredictionRecord

RESOLUTION_PAGE_ID = "page-id"
RESOLUTION_TITLE = "title"
RESOLUTION_GIVEN_QID = "given-qid"
RESOLUTION_NOT_FOUND = "not-found"


@dataclass(frozen=True)
class ExternalPrediction:
    sentence_id: str
    surface: str
    page_id: Optional[int] = None
    title: Optional[str] = None
    qid: Optional[str] = None


def _resolve(row: ExternalPrediction, idx: MappingIndex) -> Tuple[Optional[str], str]:
    if row.page_id is not None:
        qid = pageid_to_qid(idx, row.page_id)
        if qid is not None:
            return qid, RESOLUTION_PAGE_ID
    if row.title is not None:
        qid = title_to_qid(idx, row.title)
        if qid is not None:
            return qid, RESOLUTION_TITLE
    if row.qid is not None:
        return row.qid, RESOLUTION_GIVEN_QID
    return None, RESOLUTION_NOT_FOUND


def load_external_predictions(path: str, idx: MappingIndex
                              ) -> Tuple[List[PredictionRecord], Dict[str, int]]:
    """Load external rows and attach QIDs.

    Returns the grouped prediction records plus a tally keyed by resolution
    path.  Every input row yields exactly one output link (no silent drops);
    the per-link resolution field documents which path resolved it.
    """
    errors: List[str] = []
    rows: List[ExternalPrediction] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON: {exc}")
                continue
            row = _check_row(raw, lineno, errors)
            if row is not None:
                rows.append(row)
    if errors:
        raise ValueError(f"{path}: {len(errors)} malformed record(s):\n" + "\n".join(errors))

    tally = {RESOLUTION_PAGE_ID: 0, RESOLUTION_TITLE: 0,
             RESOLUTION_GIVEN_QID: 0, RESOLUTION_NOT_FOUND: 0}
    grouped: Dict[str, List[PredictedLink]] = {}
    for row in rows:
        qid, resolution = _resolve(row, idx)
        tally[resolution] += 1
        link = PredictedLink(surface=row.surface, title=row.title, origin=ORIGIN_CLEAN,
                             qid=qid, resolution=resolution)
        grouped.setdefault(row.sentence_id, []).append(link)
    records = [PredictionRecord(sentence_id=sentence_id, links=tuple(links), status=STATUS_CLEAN)
               for sentence_id, links in grouped.items()]
    return records, tally


def _check_row(raw: object, lineno: int, errors: List[str]) -> Optional[ExternalPrediction]:
    if not isinstance(raw, dict):
        errors.append(f"line {lineno}: record must be a JSON object")
        return None
    sentence_id = raw.get("sentence_id")
    surface = raw.get("surface")
    page_id = raw.get("page_id")
    title = raw.get("title")
    qid = raw.get("qid")
    if not isinstance(sentence_id, str) or not sentence_id:
        errors.append(f"line {lineno}: sentence_id must be a non-empty string")
        return None
    if not isinstance(surface, str) or not surface.strip():
        errors.append(f"line {lineno}: surface must be a non-empty string")
        return None
    if page_id is not None and (not isinstance(page_id, int) or page_id < 1):
        errors.append(f"line {lineno}: page_id must be a positive integer, got {page_id!r}")
        return None
    if title is not None and (not isinstance(title, str) or not title.strip()):
        errors.append(f"line {lineno}: title must be a non-empty string when present")
        return None
    if qid is not None and (not isinstance(qid, str) or not is_qid(qid)):
        errors.append(f"line {lineno}: invalid qid {qid!r}")
        return None
    if page_id is None and title is None and qid is None:
        errors.append(f"line {lineno}: at least one of page_id, title, qid must be present")
        return None
    return ExternalPrediction(sentence_id=sentence_id, surface=surface,
                              page_id=page_id, title=title, qid=qid)
