import numpy as np
import pytest

from asrroute.datamodel import (
    FeatureBundle,
    SegmentRecord,
    SystemOutcome,
    SystemProfile,
)
from asrroute.labeling import export_labeling, make_pair_labels, sample_weights

PIVOT = SystemProfile("piv", 1.0, 0.5, is_pivot=True)
CHEAP_CHALLENGER = SystemProfile("chal", 0.5, 0.5)
COSTLY_CHALLENGER = SystemProfile("chal", 2.0, 0.5)
EQUAL_COST_CHALLENGER = SystemProfile("chal", 1.0, 0.5)


def rec(i, chal_wer, piv_wer):
    return SegmentRecord(
        segment_id=f"s{i}", language="en", duration=1.0,
        features=FeatureBundle(),
        outcomes={
            "chal": SystemOutcome(wer=chal_wer, cost=1, runtime=1),
            "piv": SystemOutcome(wer=piv_wer, cost=1, runtime=1),
        },
    )


class TestTruthTable:
    @pytest.mark.parametrize(
        "chal_wer,piv_wer,challenger,want",
        [
            (0.10, 0.20, COSTLY_CHALLENGER, 1),   # challenger wins outright
            (0.20, 0.10, CHEAP_CHALLENGER, 0),    # pivot wins outright
            (0.15, 0.15, COSTLY_CHALLENGER, 0),   # tie, pivot cheaper
            (0.15, 0.15, CHEAP_CHALLENGER, 1),    # tie, challenger cheaper
            (0.15, 0.15, EQUAL_COST_CHALLENGER, 0),  # tie, equal cost -> pivot
        ],
    )
    def test_rule(self, chal_wer, piv_wer, challenger, want):
        lab = make_pair_labels([rec(0, chal_wer, piv_wer)], challenger, PIVOT)
        assert lab.labels.tolist() == [want]

    def test_missing_outcome(self):
        r = rec(0, 0.1, 0.2)
        del r.outcomes["piv"]
        with pytest.raises(ValueError, match="piv"):
            make_pair_labels([r], COSTLY_CHALLENGER, PIVOT)

    def test_metadata_counts(self):
        records = [rec(0, 0.1, 0.2), rec(1, 0.3, 0.2), rec(2, 0.0, 0.4)]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        assert lab.metadata["label_counts"] == {0: 1, 1: 2}


class TestSampleWeights:
    def test_range_normalized_first_factor_with_floor(self):
        # |diffs| {0.0, 0.1, 0.4}, labels balanced enough to isolate factor 1
        records = [rec(0, 0.2, 0.2), rec(1, 0.3, 0.2), rec(2, 0.6, 0.2)]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        assert lab.labels.tolist() == [0, 0, 0]
        # single-class labeling: frequency factor is 3/(2*3) = 0.5 for label 0
        w = sample_weights(lab, records)
        first = w / 0.5
        assert first == pytest.approx([0.01, 0.25, 1.0], abs=1e-12)

    def test_inverse_frequency_factors(self):
        records = [rec(i, 0.1, 0.2) for i in range(30)] + [
            rec(30 + i, 0.2, 0.1) for i in range(70)
        ]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        w = sample_weights(lab, records)
        # all |diffs| equal -> zero range -> first factor 1.0 throughout,
        # leaving pure inverse-frequency weights
        pos = w[lab.labels == 1]
        neg = w[lab.labels == 0]
        assert np.allclose(pos, 100 / 60)
        assert np.allclose(neg, 100 / 140)

    def test_all_ties_reduce_to_inverse_frequency(self):
        records = [rec(0, 0.2, 0.2), rec(1, 0.3, 0.3), rec(2, 0.1, 0.1)]
        challenger = CHEAP_CHALLENGER
        lab = make_pair_labels(records, challenger, PIVOT)
        assert lab.labels.tolist() == [1, 1, 1]
        w = sample_weights(lab, records)
        assert np.allclose(w, 3 / (2 * 3))

    def test_weighted_label_mass_balanced(self):
        rng = np.random.default_rng(2)
        records = [rec(i, rng.uniform(0, 0.5), rng.uniform(0, 0.5)) for i in range(200)]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        n = len(records)
        counts = lab.metadata["label_counts"]
        freq = np.where(lab.labels == 1, n / (2 * max(counts[1], 1)),
                        n / (2 * max(counts[0], 1)))
        assert freq[lab.labels == 1].sum() == pytest.approx(n / 2)
        assert freq[lab.labels == 0].sum() == pytest.approx(n / 2)

    def test_order_independence(self):
        rng = np.random.default_rng(3)
        records = [rec(i, rng.uniform(0, 0.5), rng.uniform(0, 0.5)) for i in range(50)]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        w = sample_weights(lab, records)
        perm = rng.permutation(50)
        shuffled = [records[i] for i in perm]
        lab2 = make_pair_labels(shuffled, COSTLY_CHALLENGER, PIVOT)
        w2 = sample_weights(lab2, shuffled)
        assert np.array_equal(lab2.labels, lab.labels[perm])
        assert np.allclose(w2, w[perm])

    def test_wer_scale_invariance(self):
        rng = np.random.default_rng(4)
        pairs = [(rng.uniform(0, 0.5), rng.uniform(0, 0.5)) for _ in range(80)]
        records = [rec(i, c, p) for i, (c, p) in enumerate(pairs)]
        scaled = [rec(i, 3.7 * c, 3.7 * p) for i, (c, p) in enumerate(pairs)]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        lab_s = make_pair_labels(scaled, COSTLY_CHALLENGER, PIVOT)
        assert np.array_equal(lab.labels, lab_s.labels)
        w = sample_weights(lab, records)
        w_s = sample_weights(lab_s, scaled)
        assert np.allclose(w, w_s)

    def test_strict_mode_zeroes_ties(self):
        records = [rec(0, 0.2, 0.2), rec(1, 0.1, 0.4)]
        lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
        w = sample_weights(lab, records, epsilon=0.0)
        assert w[0] == 0.0
        assert w[1] > 0.0


def test_export_labeling(tmp_path):
    records = [rec(0, 0.1, 0.2), rec(1, 0.3, 0.2)]
    lab = make_pair_labels(records, COSTLY_CHALLENGER, PIVOT)
    lab.weights = sample_weights(lab, records)
    p = tmp_path / "pairs.tsv"
    export_labeling(lab, records, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "segment_id\twer_diff\tlabel\tweight"
    assert len(lines) == 3
    assert lines[1].split("\t")[0] == "s0"
