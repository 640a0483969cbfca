"""Micro-averaged precision/recall/F1 with NIL exclusion.

Matching is identifier-level and one-to-one per sentence: a prediction is a
true positive when its identifier (normalized title in title mode, QID in
qid mode) equals a not-yet-matched gold identifier of the same sentence.
Duplicate predictions of one identifier cost false positives.  Surfaces are
diagnostics only, except for the NIL policy below.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, List, Optional, Sequence, Tuple

from .benchmark import Benchmark
from .kb import MappingIndex, normalize_title, qid_to_title
from .parsing import PredictionRecord

MODE_TITLE = "title"
MODE_QID = "qid"
MODES = (MODE_TITLE, MODE_QID)

# Default: NIL gold mentions leave scoring entirely, and predictions whose
# surface equals a NIL gold surface of the sentence are discarded before
# matching (neither TP nor FP).  The alternative only removes the gold side.
NIL_EXCLUDE_AND_IGNORE = "exclude-gold-and-ignore-matching-preds"
NIL_EXCLUDE_GOLD_ONLY = "exclude-gold-only"
NIL_POLICIES = (NIL_EXCLUDE_AND_IGNORE, NIL_EXCLUDE_GOLD_ONLY)

FLAG_PRECISION_UNDEFINED = "precision-undefined"
FLAG_RECALL_UNDEFINED = "recall-undefined"


@dataclass(frozen=True)
class MatchConfig:
    mode: str = MODE_TITLE
    nil_policy: str = NIL_EXCLUDE_AND_IGNORE

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.nil_policy not in NIL_POLICIES:
            raise ValueError(f"nil_policy must be one of {NIL_POLICIES}, got {self.nil_policy!r}")


@dataclass(frozen=True)
class SentenceScore:
    sentence_id: str
    tp: int
    fp: int
    fn: int


@dataclass
class ScoreReport:
    system_id: str
    slice_id: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    flags: Tuple[str, ...] = ()
    tallies: Dict[str, int] = field(default_factory=dict)
    per_sentence: Optional[Tuple[SentenceScore, ...]] = None

    # Presentation values are computed from the integer counts with decimal
    # arithmetic, so they never inherit binary-float rounding error.
    def precision_pct(self) -> Decimal:
        return percent(self.tp, self.tp + self.fp)

    def recall_pct(self) -> Decimal:
        return percent(self.tp, self.tp + self.fn)

    def f1_pct(self) -> Decimal:
        return percent(2 * self.tp, 2 * self.tp + self.fp + self.fn)


def percent(numerator: int, denominator: int) -> Decimal:
    """numerator/denominator as a percentage, rounded half-up to one decimal."""
    if denominator == 0:
        return Decimal("0.0")
    return (Decimal(100 * numerator) / Decimal(denominator)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP)


def f1_from_counts(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """(precision, recall, f1); zero-denominator terms are defined as 0."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError("counts must be nonnegative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def score(gold: Benchmark,
          preds: Sequence[PredictionRecord],
          cfg: MatchConfig,
          kb: Optional[MappingIndex] = None,
          system_id: str = "system",
          slice_id: str = "all",
          keep_per_sentence: bool = False) -> ScoreReport:
    """Score predictions against a gold benchmark.

    Title mode materializes each gold QID to its canonical title through the
    mapping; gold mentions whose QID has no title there are dropped from the
    denominator and tallied (KB-snapshot drift, not model error).  Predicted
    titles are compared after normalization, with no redirect following:
    the match is exact.  Predictions lacking an identifier (no title in
    title mode, no qid in qid mode) count as false positives.
    """
    cfg.validate()
    if cfg.mode == MODE_TITLE and kb is None:
        raise ValueError("title mode requires a mapping index to materialize gold titles")
    known_ids = {s.sentence_id for s in gold.sentences}
    by_id: Dict[str, PredictionRecord] = {}
    for record in preds:
        if record.sentence_id not in known_ids:
            raise ValueError(f"prediction for unknown sentence_id {record.sentence_id!r}")
        if record.sentence_id in by_id:
            raise ValueError(f"duplicate prediction record for sentence_id {record.sentence_id!r}")
        by_id[record.sentence_id] = record

    tp = fp = fn = 0
    nil_gold_excluded = 0
    gold_title_unresolved = 0
    predictions_discarded_nil = 0
    rows: List[SentenceScore] = []

    for sentence in gold.sentences:
        gold_ids: List[str] = []
        nil_surfaces = set()
        for mention in sentence.mentions:
            if mention.is_nil:
                nil_surfaces.add(mention.surface)
                nil_gold_excluded += 1
                continue
            if cfg.mode == MODE_QID:
                gold_ids.append(mention.qid)
                continue
            title = qid_to_title(kb, mention.qid)
            if title is None:
                gold_title_unresolved += 1
            else:
                gold_ids.append(title)

        pred_ids: List[Optional[str]] = []
        record = by_id.get(sentence.sentence_id)
        if record is not None:
            for link in record.links:
                if cfg.nil_policy == NIL_EXCLUDE_AND_IGNORE and link.surface in nil_surfaces:
                    predictions_discarded_nil += 1
                    continue
                if cfg.mode == MODE_QID:
                    pred_ids.append(link.qid)
                elif link.title is not None and link.title.strip():
                    pred_ids.append(normalize_title(link.title))
                else:
                    pred_ids.append(None)

        gold_counter = Counter(gold_ids)
        pred_counter = Counter(i for i in pred_ids if i is not None)
        sent_tp = sum(min(count, pred_counter[ident]) for ident, count in gold_counter.items())
        sent_fp = len(pred_ids) - sent_tp
        sent_fn = len(gold_ids) - sent_tp
        tp += sent_tp
        fp += sent_fp
        fn += sent_fn
        if keep_per_sentence:
            rows.append(SentenceScore(sentence.sentence_id, sent_tp, sent_fp, sent_fn))

    precision, recall, f1 = f1_from_counts(tp, fp, fn)
    flags: List[str] = []
    if tp + fp == 0:
        flags.append(FLAG_PRECISION_UNDEFINED)
    if tp + fn == 0:
        flags.append(FLAG_RECALL_UNDEFINED)
    tallies = {"nil_gold_excluded": nil_gold_excluded,
               "gold_title_unresolved": gold_title_unresolved,
               "predictions_discarded_nil": predictions_discarded_nil}
    return ScoreReport(system_id=system_id, slice_id=slice_id, tp=tp, fp=fp, fn=fn,
                       precision=precision, recall=recall, f1=f1, flags=tuple(flags),
                       tallies=tallies,
                       per_sentence=tuple(rows) if keep_per_sentence else None)


CSV_FIELDS = ("system", "slice", "tp", "fp", "fn", "precision", "recall", "f1")


def csv_fields(report: ScoreReport) -> List[str]:
    """Row values matching CSV_FIELDS; metrics as 0-1 fractions, 6 decimals."""
    return [report.system_id, report.slice_id, str(report.tp), str(report.fp), str(report.fn),
            f"{report.precision:.6f}", f"{report.recall:.6f}", f"{report.f1:.6f}"]


def report_to_dict(report: ScoreReport) -> Dict[str, object]:
    out: Dict[str, object] = {
        "system": report.system_id,
        "slice": report.slice_id,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "precision_pct": float(report.precision_pct()),
        "recall_pct": float(report.recall_pct()),
        "f1_pct": float(report.f1_pct()),
        "flags": list(report.flags),
        "tallies": dict(report.tallies),
    }
    if report.per_sentence is not None:
        out["per_sentence"] = [{"sentence_id": row.sentence_id, "tp": row.tp,
                                "fp": row.fp, "fn": row.fn} for row in report.per_sentence]
    return out
