"""Metric unit tests: hand-derived cases and brute-force oracles."""

import functools

import numpy as np
import pytest

from topicsum import metrics as m


def lcs_recursive(a, b):
    """Independent LCS oracle (memoized recursion, not the DP in metrics)."""
    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))
    return go(0, 0)


class TestRougeN:
    def test_identical(self):
        assert m.rouge_n("a b c", "a b c", 1) == pytest.approx(1.0)
        assert m.rouge_n("a b c", "a b c", 2) == pytest.approx(1.0)

    def test_disjoint(self):
        assert m.rouge_n("a b", "c d", 1) == 0.0

    def test_hand_case_unigram(self):
        # cand "a b c" vs ref "a c d": matches {a, c}, P = R = 2/3, F1 = 2/3
        assert m.rouge_n("a b c", "a c d", 1) == pytest.approx(2 / 3)

    def test_empty_inputs(self):
        assert m.rouge_n("", "", 1) == 0.0
        assert m.rouge_n("a", "", 1) == 0.0
        assert m.rouge_n("", "a", 1) == 0.0

    def test_clipping(self):
        # cand "a a a" vs ref "a": overlap clipped to 1; P=1/3, R=1
        score = m.rouge_n("a a a", "a", 1)
        assert score == pytest.approx(2 * (1 / 3) * 1.0 / (1 / 3 + 1.0))

    def test_recall_monotone_in_candidate_coverage(self):
        ref = "a b c d e".split()
        rng = np.random.default_rng(3)
        for _ in range(50):
            base = rng.choice(ref, size=3, replace=False).tolist()
            extra = [t for t in ref if t not in base][0]
            c_counts = m.ngram_counts(base, 1)
            r_counts = m.ngram_counts(ref, 1)
            rec_before = sum(min(c, r_counts[g]) for g, c in c_counts.items()) / 5
            grown = base + [extra]
            c2 = m.ngram_counts(grown, 1)
            rec_after = sum(min(c, r_counts[g]) for g, c in c2.items()) / 5
            assert rec_after >= rec_before

    def test_bounds_random(self):
        rng = np.random.default_rng(4)
        letters = list("abcd")
        for _ in range(200):
            cand = rng.choice(letters, size=rng.integers(0, 8)).tolist()
            ref = rng.choice(letters, size=rng.integers(0, 8)).tolist()
            for n in (1, 2):
                s = m.rouge_n(cand, ref, n)
                assert 0.0 <= s <= 1.0


class TestRougeL:
    def test_identical(self):
        assert m.rouge_l("x y z", "x y z") == pytest.approx(1.0)

    def test_hand_case(self):
        # cand "a x b" vs ref "a b": LCS=2, P=2/3, R=1, F1=0.8
        assert m.rouge_l("a x b", "a b") == pytest.approx(0.8)

    def test_empty(self):
        assert m.rouge_l("", "a b") == 0.0

    def test_lcs_matches_independent_oracle(self):
        rng = np.random.default_rng(5)
        letters = list("abcde")
        for _ in range(1000):
            a = tuple(rng.choice(letters, size=rng.integers(0, 12)).tolist())
            b = tuple(rng.choice(letters, size=rng.integers(0, 12)).tolist())
            assert m.lcs_length(a, b) == lcs_recursive(a, b)


class TestBleu:
    def test_identical(self):
        assert m.bleu("a b c d e", "a b c d e") == pytest.approx(1.0)
        assert m.bleu("a b c d e", "a b c d e",
                      mean="geometric") == pytest.approx(1.0)

    def test_short_candidate_excludes_undefined_orders(self):
        # length-3 candidate: p_4 undefined, average over p_1..p_3 only
        cand, ref = "a b c", "a b c"
        assert m.bleu(cand, ref) == pytest.approx(1.0)

    def test_clipping_hand_case(self):
        # cand "a a" vs ref "a": clipped p_1 = 1/2; p_2 = 0; BP = 1
        score = m.bleu("a a", "a", brevity=True)
        assert score == pytest.approx((0.5 + 0.0) / 2)

    def test_empty_candidate(self):
        assert m.bleu("", "a") == 0.0

    def test_brevity_penalty(self):
        # cand shorter than ref: BP = exp(1 - r/c) < 1
        full = m.bleu("a b", "a b c d", brevity=False)
        penalized = m.bleu("a b", "a b c d", brevity=True)
        assert penalized == pytest.approx(full * np.exp(1 - 4 / 2))

    def test_geometric_zero_when_any_precision_zero(self):
        assert m.bleu("a b c d", "a x y z", mean="geometric") == 0.0

    def test_bounds_random(self):
        rng = np.random.default_rng(6)
        letters = list("abc")
        for _ in range(200):
            cand = rng.choice(letters, size=rng.integers(0, 9)).tolist()
            ref = rng.choice(letters, size=rng.integers(1, 9)).tolist()
            for mean in ("arithmetic", "geometric"):
                s = m.bleu(cand, ref, mean=mean)
                assert 0.0 <= s <= 1.0


class TestEvaluateCorpus:
    def test_perfect_outputs(self):
        outs = ["a b", "c d e"]
        report = m.evaluate_corpus(outs, list(outs))
        for metric in ("rouge1", "rouge2", "rougeL", "bleu"):
            assert report.mean(metric) == pytest.approx(1.0)

    def test_empty_outputs(self):
        report = m.evaluate_corpus(["", ""], ["a b", "c"])
        for metric in ("rouge1", "rouge2", "rougeL", "bleu"):
            assert report.mean(metric) == 0.0

    def test_means_equal_hand_average(self):
        outs = ["a b c", "x"]
        refs = ["a c d", "x"]
        report = m.evaluate_corpus(outs, refs)
        scores = [m.rouge_n(o, r, 1) for o, r in zip(outs, refs)]
        assert report.mean("rouge1") == pytest.approx(np.mean(scores))

    def test_char_mode_splits_code_points(self):
        report = m.evaluate_corpus(["你好"], ["你 好"], mode="char")
        assert report.mean("rouge1") == pytest.approx(1.0)

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            m.evaluate_corpus(["a"], [])

    def test_report_files(self, tmp_path):
        report = m.evaluate_corpus(["a b"], ["a b"], ids=["d0"])
        report.write_report(tmp_path / "r.txt")
        report.write_csv(tmp_path / "r.csv")
        text = (tmp_path / "r.txt").read_text()
        assert "rouge1_f1=1.000000" in text
        assert "bleu_mean=arithmetic" in text
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert len(lines) == 2 and lines[1].startswith("d0,")


class TestMetricLookupAndBootstrap:
    def test_lookup(self):
        assert m.metric_fn("rouge-1")("a", "a") == 1.0
        with pytest.raises(ValueError):
            m.metric_fn("nope")

    def test_identical_strings_reward_one(self):
        for name in ("rouge-1", "rouge-2", "rouge-l", "bleu"):
            assert m.metric_fn(name)("a b c d", "a b c d") == pytest.approx(1.0)

    def test_paired_bootstrap_detects_dominance(self):
        a = [0.9] * 50
        b = [0.1] * 50
        assert m.paired_bootstrap(a, b) == 0.0
        assert m.paired_bootstrap(b, a) == 1.0
