"""Entity popularity (Wikidata statement counts) and θ-stratified scoring.

Popularity is the number of main statements on an entity (qualifiers and
references are not counted).  A slice at threshold θ keeps gold mentions
and predictions whose entity has at most θ statements; predictions that
resolve to no entity are kept, since their popularity is unknowable and
they must still cost precision.  NIL gold mentions pass through every
filter so the scorer's NIL policy stays in charge of them.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import requests

from .benchmark import Benchmark, BenchmarkSentence
from .kb import LiveLookupError, MappingIndex, is_qid, title_to_qid
from .parsing import PredictedLink, PredictionRecord
from .scoring import MatchConfig, ScoreReport, score

INF = math.inf

# The published sweep starts at 20; the full grid is this tool's default.
DEFAULT_THETAS: Tuple[float, ...] = (20, 40, 60, 80, 100, INF)


@dataclass(frozen=True)
class PopularityIndex:
    counts: Dict[str, int]
    source: str = "counts-file"


@dataclass(frozen=True)
class ThresholdSlice:
    theta: float
    report: ScoreReport


def triple_count(entity_document: Mapping) -> int:
    """Total main statements across all properties of one entity document."""
    claims = entity_document.get("claims", {})
    if not isinstance(claims, dict):
        raise ValueError("malformed entity document: claims is not a map")
    total = 0
    for prop, statements in claims.items():
        if not isinstance(statements, list):
            raise ValueError(f"malformed entity document: claims[{prop!r}] is not a list")
        total += len(statements)
    return total


def load_counts(path: str) -> PopularityIndex:
    """Load a counts TSV: qid <TAB> count.  Fails whole, listing bad lines."""
    errors: List[str] = []
    counts: Dict[str, int] = {}
    lines_seen: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = [cell.strip() for cell in line.split("\t")]
            if len(parts) != 2:
                errors.append(f"line {lineno}: expected 2 tab-separated fields, got {len(parts)}")
                continue
            qid, raw_count = parts
            if not is_qid(qid):
                errors.append(f"line {lineno}: invalid qid {qid!r}")
                continue
            if not raw_count.isdigit():
                errors.append(f"line {lineno}: count must be a nonnegative integer, got {raw_count!r}")
                continue
            if qid in lines_seen:
                errors.append(f"line {lineno}: duplicate qid {qid} (first seen on line {lines_seen[qid]})")
                continue
            lines_seen[qid] = lineno
            counts[qid] = int(raw_count)
    if errors:
        raise ValueError(f"{path}: {len(errors)} malformed row(s):\n" + "\n".join(errors))
    return PopularityIndex(counts=counts, source="counts-file")


def save_counts(index: PopularityIndex, path: str) -> None:
    ordered = sorted(index.counts, key=lambda q: int(q[1:]))
    with open(path, "w", encoding="utf-8") as handle:
        for qid in ordered:
            handle.write(f"{qid}\t{index.counts[qid]}\n")


@dataclass(frozen=True)
class CountsFetchConfig:
    wikidata_api: str = "https://www.wikidata.org/w/api.php"
    counts_path: str = "counts.tsv"
    timeout: float = 30.0
    batch_size: int = 50


def fetch_counts(cfg: CountsFetchConfig, qids: Iterable[str]) -> PopularityIndex:
    """Fetch statement counts for qids, using the counts file as a cache.

    Only QIDs absent from the file are queried; every result is written
    back, so a rerun over the same QIDs is a pure cache hit.
    """
    requested = list(dict.fromkeys(qids))
    for qid in requested:
        if not is_qid(qid):
            raise ValueError(f"invalid qid {qid!r}")
    counts: Dict[str, int] = {}
    if os.path.exists(cfg.counts_path):
        counts.update(load_counts(cfg.counts_path).counts)
    missing = [q for q in requested if q not in counts]
    for start in range(0, len(missing), cfg.batch_size):
        batch = missing[start:start + cfg.batch_size]
        try:
            resp = requests.get(cfg.wikidata_api, params={
                "action": "wbgetentities", "format": "json",
                "ids": "|".join(batch), "props": "claims",
            }, timeout=cfg.timeout, headers={"User-Agent": "elbench/0.1"})
        except requests.RequestException as exc:
            raise LiveLookupError(f"{cfg.wikidata_api}: {exc}") from exc
        if resp.status_code != 200:
            raise LiveLookupError(f"{cfg.wikidata_api}: HTTP {resp.status_code}")
        try:
            entities = resp.json()["entities"]
        except (ValueError, KeyError) as exc:
            raise LiveLookupError("malformed Wikidata API response") from exc
        for qid in batch:
            entity = entities.get(qid)
            if entity is None or "missing" in entity:
                raise ValueError(f"entity {qid} not found in Wikidata response")
            counts[qid] = triple_count(entity)
    if missing:
        save_counts(PopularityIndex(counts=counts), cfg.counts_path)
        return PopularityIndex(counts=counts, source="live")
    return PopularityIndex(counts=counts, source="counts-file")


def format_theta(theta: float) -> str:
    return "∞" if math.isinf(theta) else str(int(theta))


def slice_label(theta: float) -> str:
    return f"θ≤{format_theta(theta)}"


def _link_qid(link: PredictedLink, kb: Optional[MappingIndex]) -> Optional[str]:
    # Popularity of a predicted entity: attached qid first, else resolve the
    # title through the mapping (redirects followed; this is resolution, not
    # the scorer's exact-title match).
    if link.qid is not None:
        return link.qid
    if kb is not None and link.title is not None and link.title.strip():
        return title_to_qid(kb, link.title)
    return None


def stratify(gold: Benchmark,
             preds: Sequence[PredictionRecord],
             cfg: MatchConfig,
             kb: Optional[MappingIndex],
             pop: PopularityIndex,
             thetas: Sequence[float] = DEFAULT_THETAS,
             strict: bool = True,
             system_id: str = "system",
             keep_per_sentence: bool = False) -> List[ThresholdSlice]:
    """Score one θ-filtered instance per threshold, ascending.

    strict mode requires a count for every gold QID and every resolvable
    predicted entity; lenient mode treats missing counts as +∞ (excluded
    from every finite slice) and tallies them on each slice report.
    """
    if not thetas:
        raise ValueError("empty theta list")
    ordered: List[float] = []
    for theta in thetas:
        if math.isinf(theta):
            ordered.append(INF)
            continue
        if theta != int(theta) or theta < 1:
            raise ValueError(f"theta must be a positive integer or inf, got {theta!r}")
        ordered.append(float(int(theta)))
    ordered = sorted(set(ordered))

    missing_gold = set()
    for sentence in gold.sentences:
        for mention in sentence.mentions:
            if not mention.is_nil and mention.qid not in pop.counts:
                missing_gold.add(mention.qid)
    resolved: Dict[Tuple[str, int], Optional[str]] = {}
    missing_pred = set()
    for record in preds:
        for i, link in enumerate(record.links):
            qid = _link_qid(link, kb)
            resolved[(record.sentence_id, i)] = qid
            if qid is not None and qid not in pop.counts:
                missing_pred.add(qid)
    if strict and (missing_gold or missing_pred):
        sample = sorted(missing_gold | missing_pred)
        raise ValueError(f"{len(sample)} entity(ies) lack popularity counts: " + ", ".join(sample))

    def count_of(qid: str) -> float:
        value = pop.counts.get(qid)
        return INF if value is None else value

    slices: List[ThresholdSlice] = []
    for theta in ordered:
        filtered_sentences: List[BenchmarkSentence] = []
        for sentence in gold.sentences:
            kept = tuple(m for m in sentence.mentions
                         if m.is_nil or count_of(m.qid) <= theta)
            filtered_sentences.append(replace(sentence, mentions=kept))
        filtered_gold = Benchmark(name=gold.name, sentences=tuple(filtered_sentences))
        filtered_preds: List[PredictionRecord] = []
        for record in preds:
            kept_links = tuple(
                link for i, link in enumerate(record.links)
                if resolved[(record.sentence_id, i)] is None
                or count_of(resolved[(record.sentence_id, i)]) <= theta)
            filtered_preds.append(replace(record, links=kept_links))
        report = score(filtered_gold, filtered_preds, cfg, kb,
                       system_id=system_id, slice_id=slice_label(theta),
                       keep_per_sentence=keep_per_sentence)
        if missing_gold:
            report.tallies["popularity_missing_gold"] = len(missing_gold)
        if missing_pred:
            report.tallies["popularity_missing_preds"] = len(missing_pred)
        slices.append(ThresholdSlice(theta=theta, report=report))
    return slices


STRATIFY_CSV_FIELDS = ("system", "theta", "precision", "recall", "f1")


def stratify_csv_rows(slices: Sequence[ThresholdSlice]) -> List[List[str]]:
    """Plot-ready rows: percentages at one decimal, thresholds ascending."""
    rows = []
    for item in slices:
        report = item.report
        theta = "inf" if math.isinf(item.theta) else str(int(item.theta))
        rows.append([report.system_id, theta, str(report.precision_pct()),
                     str(report.recall_pct()), str(report.f1_pct())])
    return rows
