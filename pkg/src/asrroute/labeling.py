"""One-vs-pivot binary labels and sample weights from per-system outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import SegmentRecord, SystemProfile

DEFAULT_WEIGHT_FLOOR = 0.01


@dataclass
class PairLabeling:
    """Per-record winner labels for one challenger-vs-pivot pair.

    label 1 means the challenger wins: strictly lower WER, or equal WER
    with a strictly cheaper cost rate.  All remaining ties fall to the
    pivot, keeping the cost bias consistent.
    """

    challenger_id: str
    pivot_id: str
    labels: np.ndarray            # int64, values {0, 1}
    wer_diffs: np.ndarray         # challenger WER - pivot WER, per record
    weights: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


def make_pair_labels(
    records: list[SegmentRecord],
    challenger: SystemProfile,
    pivot: SystemProfile,
) -> PairLabeling:
    labels = np.zeros(len(records), dtype=np.int64)
    diffs = np.zeros(len(records), dtype=np.float64)
    for i, rec in enumerate(records):
        if challenger.id not in rec.outcomes or pivot.id not in rec.outcomes:
            missing = [s for s in (challenger.id, pivot.id) if s not in rec.outcomes]
            raise ValueError(
                f"segment {rec.segment_id!r} lacks outcomes for {missing}"
            )
        cw = rec.outcomes[challenger.id].wer
        pw = rec.outcomes[pivot.id].wer
        diffs[i] = cw - pw
        if cw < pw or (cw == pw and challenger.cost_rate < pivot.cost_rate):
            labels[i] = 1
    counts = {0: int(np.sum(labels == 0)), 1: int(np.sum(labels == 1))}
    abs_diffs = np.abs(diffs)
    meta = {
        "label_counts": counts,
        "wer_diff_range": (float(abs_diffs.min()), float(abs_diffs.max()))
        if len(records) else (0.0, 0.0),
    }
    return PairLabeling(
        challenger_id=challenger.id,
        pivot_id=pivot.id,
        labels=labels,
        wer_diffs=diffs,
        metadata=meta,
    )


def sample_weights(
    labeling: PairLabeling,
    records: list[SegmentRecord],
    epsilon: float = DEFAULT_WEIGHT_FLOOR,
) -> np.ndarray:
    """Per-record training weights: range-normalized |dWER| (floored at
    ``epsilon``) times inverse label frequency N / (2 * count(label)).

    When every |dWER| is identical the range is zero and the first factor
    is 1 for all records, so weighting reduces to pure inverse frequency.
    ``epsilon=0`` reproduces the strict product rule, which zeroes out
    WER-tie segments entirely.
    """
    n = labeling.labels.shape[0]
    if n == 0:
        raise ValueError("sample_weights needs at least one record")
    if len(records) != n:
        raise ValueError(f"labeling covers {n} records, got {len(records)}")
    abs_diffs = np.abs(labeling.wer_diffs)
    lo, hi = abs_diffs.min(), abs_diffs.max()
    rng_span = hi - lo
    if rng_span == 0.0:
        first = np.ones(n)
    else:
        first = np.maximum(abs_diffs / rng_span, epsilon)
    counts = np.array(
        [max(int(np.sum(labeling.labels == v)), 1) for v in (0, 1)],
        dtype=np.float64,
    )
    freq = n / (2.0 * counts)
    return first * freq[labeling.labels]


def export_labeling(labeling: PairLabeling, records: list[SegmentRecord], path) -> None:
    """Write a diagnostic TSV: segment id, dWER, label, weight."""
    weights = labeling.weights
    with open(path, "w", encoding="utf-8") as f:
        f.write("segment_id\twer_diff\tlabel\tweight\n")
        for i, rec in enumerate(records):
            w = "" if weights is None else repr(float(weights[i]))
            f.write(
                f"{rec.segment_id}\t{labeling.wer_diffs[i]!r}\t"
                f"{int(labeling.labels[i])}\t{w}\n"
            )
