"""Text normalization, WER, inverse-frequency weighted F1, and report accounting."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


def normalize_text(raw: str) -> list[str]:
    """Tokenize ``raw``: strip Unicode punctuation (categories P*), lowercase,
    split on whitespace runs."""
    stripped = "".join(
        ch for ch in raw if not unicodedata.category(ch).startswith("P")
    )
    return stripped.lower().split()


def _token_ids(reference: list[str], hypothesis: list[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    ref = np.array([vocab.setdefault(t, len(vocab)) for t in reference], dtype=np.int64)
    hyp = np.array([vocab.setdefault(t, len(vocab)) for t in hypothesis], dtype=np.int64)
    return ref, hyp


def edit_errors(reference: list[str], hypothesis: list[str]) -> int:
    """Minimal substitutions + deletions + insertions turning ``reference``
    into ``hypothesis`` (unit costs)."""
    ref, hyp = _token_ids(reference, hypothesis)
    return int(_kernels.edit_distance(ref, hyp))


def wer(reference: list[str], hypothesis: list[str]) -> float:
    """Word error rate: edit errors divided by reference length.

    Raises ValueError on an empty reference; WER is undefined there and a
    silent 0 or NaN would corrupt corpus pooling.
    """
    if len(reference) == 0:
        raise ValueError("WER is undefined for an empty reference")
    return edit_errors(reference, hypothesis) / len(reference)


def weighted_f1_detail(
    predicted: list[str], actual_top: list[str], class_set: list[str]
) -> tuple[float, dict[str, float], tuple[str, ...]]:
    """Inverse-frequency weighted F1 with per-class values and floor flags.

    Per-class one-vs-rest F1 combined as sum(w_c * F1_c) / sum(w_c) with
    w_c = 1 / max(count of c in actual_top, 1).  A class never occurring in
    actual_top contributes F1 = 0 at floor weight 1 if it was predicted at
    least once, and is excluded entirely if it was never predicted either;
    floored classes are reported so callers can flag them.
    """
    if len(predicted) != len(actual_top):
        raise ValueError(
            f"length mismatch: {len(predicted)} predictions vs {len(actual_top)} labels"
        )
    known = set(class_set)
    for lab in predicted:
        if lab not in known:
            raise ValueError(f"unknown predicted label: {lab!r}")
    for lab in actual_top:
        if lab not in known:
            raise ValueError(f"unknown ground-truth label: {lab!r}")

    num = 0.0
    den = 0.0
    per_class: dict[str, float] = {}
    floored: list[str] = []
    for c in sorted(known):
        tp = sum(1 for p, a in zip(predicted, actual_top) if p == c and a == c)
        pred_n = sum(1 for p in predicted if p == c)
        actual_n = sum(1 for a in actual_top if a == c)
        if actual_n == 0 and pred_n == 0:
            continue
        if actual_n == 0:
            floored.append(c)
        f1 = 2.0 * tp / (pred_n + actual_n) if (pred_n + actual_n) > 0 else 0.0
        w = 1.0 / max(actual_n, 1)
        per_class[c] = f1
        num += w * f1
        den += w
    if den == 0.0:
        return 1.0, per_class, tuple(floored)
    return num / den, per_class, tuple(floored)


def weighted_f1(predicted: list[str], actual_top: list[str], class_set: list[str]) -> float:
    value, _, _ = weighted_f1_detail(predicted, actual_top, class_set)
    return value


@dataclass
class EvaluationReport:
    """Corpus-level quality and cost of one selection policy."""

    corpus_wer: float
    weighted_f1: float | None
    cost_pct: float
    runtime_pct: float
    per_system_selection_counts: dict[str, int]
    mean_segment_wer: float
    n_segments: int
    f1_floor_classes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "corpus_wer": self.corpus_wer,
            "weighted_f1": self.weighted_f1,
            "cost_pct": self.cost_pct,
            "runtime_pct": self.runtime_pct,
            "per_system_selection_counts": dict(
                sorted(self.per_system_selection_counts.items())
            ),
            "mean_segment_wer": self.mean_segment_wer,
            "n_segments": self.n_segments,
            "f1_floor_classes": list(self.f1_floor_classes),
        }


def _segment_errors(record, outcome) -> tuple[float, float]:
    """(edit errors, reference length) for one chosen outcome.

    Recomputes errors from text when both reference and hypothesis exist;
    falls back to the stored WER times the reference length, and to a unit
    weight when the record carries no reference at all (pooling then
    degenerates to the per-segment mean).
    """
    if record.reference is not None:
        n = len(record.reference)
        if n == 0:
            raise ValueError(f"empty reference on segment {record.segment_id!r}")
        if outcome.hypothesis is not None:
            return float(edit_errors(record.reference, normalize_text(outcome.hypothesis))), float(n)
        return outcome.wer * n, float(n)
    return outcome.wer, 1.0


def aggregate_report(
    decisions: list[tuple[str, str]],
    dataset,
    baseline: str,
    extra_cost: float = 0.0,
    extra_runtime: float = 0.0,
    profiles=None,
) -> EvaluationReport:
    """Pool decided outcomes into an EvaluationReport.

    ``decisions`` are (segment_id, chosen system id) pairs.  Cost and
    runtime are percentages of running ``baseline`` on the same segments;
    ``extra_cost``/``extra_runtime`` carry rescoring overhead.  When
    ``profiles`` are given and every decided record has outcomes for all
    systems, weighted F1 against the per-segment true best is included.
    """
    from .datamodel import best_system  # local import to avoid a cycle

    by_id = {r.segment_id: r for r in dataset.records}
    total_err = 0.0
    total_len = 0.0
    seg_wers = []
    cost = 0.0
    runtime = 0.0
    base_cost = 0.0
    base_runtime = 0.0
    counts: dict[str, int] = {}
    chosen_ids: list[str] = []
    records = []
    for segment_id, chosen in decisions:
        rec = by_id.get(segment_id)
        if rec is None:
            raise ValueError(f"decision references unknown segment {segment_id!r}")
        if chosen not in rec.outcomes:
            raise ValueError(
                f"segment {segment_id!r} has no outcome for chosen system {chosen!r}"
            )
        if baseline not in rec.outcomes:
            raise ValueError(
                f"segment {segment_id!r} has no outcome for baseline system {baseline!r}"
            )
        out = rec.outcomes[chosen]
        err, n = _segment_errors(rec, out)
        total_err += err
        total_len += n
        seg_wers.append(err / n)
        cost += out.cost
        runtime += out.runtime
        base_cost += rec.outcomes[baseline].cost
        base_runtime += rec.outcomes[baseline].runtime
        counts[chosen] = counts.get(chosen, 0) + 1
        chosen_ids.append(chosen)
        records.append(rec)

    def pct(total: float, base: float) -> float:
        if base == 0.0:
            return 100.0 if total == 0.0 else float("inf")
        return 100.0 * total / base

    f1 = None
    floor: tuple[str, ...] = ()
    if profiles is not None and records:
        system_ids = list(dataset.schema.system_ids)
        if all(all(s in r.outcomes for s in system_ids) for r in records):
            actual = [best_system(r.outcomes, profiles) for r in records]
            f1, _, floor = weighted_f1_detail(chosen_ids, actual, system_ids)

    return EvaluationReport(
        corpus_wer=total_err / total_len if total_len else 0.0,
        weighted_f1=f1,
        cost_pct=pct(cost + extra_cost, base_cost),
        runtime_pct=pct(runtime + extra_runtime, base_runtime),
        per_system_selection_counts=counts,
        mean_segment_wer=float(np.mean(seg_wers)) if seg_wers else 0.0,
        n_segments=len(seg_wers),
        f1_floor_classes=floor,
    )


def pooled_wer_from_outcomes(records, chosen_ids) -> float:
    """Corpus WER from stored per-outcome WERs, weighted by reference length.

    Trusts the stored values instead of re-running edit distance; used in
    cross-validation where the same records are pooled many times.
    """
    total_err = 0.0
    total_len = 0.0
    for rec, chosen in zip(records, chosen_ids):
        n = float(len(rec.reference)) if rec.reference is not None else 1.0
        total_err += rec.outcomes[chosen].wer * n
        total_len += n
    return total_err / total_len if total_len else 0.0
