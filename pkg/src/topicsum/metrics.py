"""ROUGE-1/2/L F1, averaged BLEU, and corpus-level reporting.

All metrics operate on token sequences and return values in [0, 1].
F1 with an empty denominator is defined as 0.  Character mode treats
whitespace as removable and scores on code points.

BLEU here follows the "average the per-n-gram scores" convention by
default: modified (clipped) precisions p_1..p_4 are arithmetically
averaged over the orders that are defined for the candidate length, then
multiplied by the standard brevity penalty.  The conventional geometric
mean is available via ``mean="geometric"`` and reports name the variant.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


def _as_tokens(x, mode: str = "whitespace"):
    if isinstance(x, str):
        if mode == "char":
            return tuple(ch for ch in x if not ch.isspace())
        return tuple(x.split())
    return tuple(x)


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) > 0 else 0.0


def rouge_n(candidate, reference, n: int = 1) -> float:
    """Clipped n-gram overlap F1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    c_counts, r_counts = ngram_counts(cand, n), ngram_counts(ref, n)
    overlap = sum(min(c, r_counts[g]) for g, c in c_counts.items())
    c_total, r_total = sum(c_counts.values()), sum(r_counts.values())
    p = overlap / c_total if c_total else 0.0
    r = overlap / r_total if r_total else 0.0
    return _f1(p, r)


def lcs_length(a, b) -> int:
    """Longest common subsequence length, O(len(a)*len(b)) DP."""
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """LCS-based F1."""
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    return _f1(lcs / len(cand), lcs / len(ref))


def bleu(candidate, reference, max_n: int = 4, mean: str = "arithmetic",
         brevity: bool = True) -> float:
    """Single-reference BLEU with clipped n-gram precisions up to `max_n`.

    Orders longer than the candidate are undefined and excluded from the
    average.  ``mean="geometric"`` gives conventional BLEU (zero if any
    precision is zero).
    """
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand:
        return 0.0
    precisions = []
    for n in range(1, min(max_n, len(cand)) + 1):
        c_counts, r_counts = ngram_counts(cand, n), ngram_counts(ref, n)
        total = sum(c_counts.values())
        clipped = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        precisions.append(clipped / total if total else 0.0)
    if not precisions:
        return 0.0
    if mean == "arithmetic":
        score = sum(precisions) / len(precisions)
    elif mean == "geometric":
        if any(p == 0.0 for p in precisions):
            score = 0.0
        else:
            score = float(np.exp(np.mean(np.log(precisions))))
    else:
        raise ValueError(f"unknown BLEU mean {mean!r}")
    if brevity:
        bp = 1.0 if len(cand) >= len(ref) else float(np.exp(1 - len(ref) / len(cand)))
        score *= bp
    return score


# ---------------------------------------------------------------------------
# corpus-level reporting
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-dialogue scores plus corpus means."""

    rouge1: list[float]
    rouge2: list[float]
    rougeL: list[float]
    bleu: list[float]
    token_mode: str
    bleu_mean: str
    ids: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.rouge1)

    def mean(self, metric: str) -> float:
        values = getattr(self, metric)
        return float(np.mean(values)) if values else 0.0

    def to_lines(self) -> list[str]:
        return [
            f"count={self.count}",
            f"token_mode={self.token_mode}",
            f"bleu_mean={self.bleu_mean}",
            f"rouge1_f1={self.mean('rouge1'):.6f}",
            f"rouge2_f1={self.mean('rouge2'):.6f}",
            f"rougeL_f1={self.mean('rougeL'):.6f}",
            f"bleu={self.mean('bleu'):.6f}",
        ]

    def write_report(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "rouge1_f1", "rouge2_f1", "rougeL_f1", "bleu"])
            ids = self.ids or [str(i) for i in range(self.count)]
            for i in range(self.count):
                w.writerow([ids[i], f"{self.rouge1[i]:.6f}",
                            f"{self.rouge2[i]:.6f}", f"{self.rougeL[i]:.6f}",
                            f"{self.bleu[i]:.6f}"])


def evaluate_corpus(outputs, references, mode: str = "whitespace",
                    bleu_mean: str = "arithmetic", ids=None) -> MetricReport:
    """Score aligned output/reference lists (strings or token sequences)."""
    if len(outputs) != len(references):
        raise ValueError(
            f"outputs ({len(outputs)}) and references ({len(references)}) "
            "must align")
    report = MetricReport(rouge1=[], rouge2=[], rougeL=[], bleu=[],
                          token_mode=mode, bleu_mean=bleu_mean,
                          ids=list(ids) if ids else [])
    for out, ref in zip(outputs, references):
        cand = _as_tokens(out, mode)
        gold = _as_tokens(ref, mode)
        report.rouge1.append(rouge_n(cand, gold, 1))
        report.rouge2.append(rouge_n(cand, gold, 2))
        report.rougeL.append(rouge_l(cand, gold))
        report.bleu.append(bleu(cand, gold, mean=bleu_mean))
    return report


def metric_fn(name: str):
    """Look up a sequence metric by id (used for rewards and oracles)."""
    table = {
        "rouge-1": lambda c, r: rouge_n(c, r, 1),
        "rouge-2": lambda c, r: rouge_n(c, r, 2),
        "rouge-l": rouge_l,
        "bleu": bleu,
    }
    if name not in table:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(table)}")
    return table[name]


def paired_bootstrap(scores_a, scores_b, n_resamples: int = 1000,
                     seed: int = 0) -> float:
    """Fraction of resamples where system A does not beat system B.

    Small values mean A's advantage is stable under resampling.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need equal-length, non-empty score lists")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, a.size, size=(n_resamples, a.size))
    diffs = (a[idx] - b[idx]).mean(axis=1)
    return float(np.mean(diffs <= 0.0))
