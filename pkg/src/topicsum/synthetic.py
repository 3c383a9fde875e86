"""Synthetic dialogue corpus with planted word groups.

Stands in for real customer-service data and doubles as a topic-recovery
oracle: each dialogue activates a small set of informative word groups,
utterances mix active-group words with words from a shared noise pool at a
fixed injection rate, and the reference summary is drawn only from the
active groups.  The generator records ground-truth group assignments so
tests can check that recovered topics line up with the planted groups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .corpus import Dialogue, Utterance, ROLES


class SyntheticSpecError(ValueError):
    """Inconsistent generator specification."""


@dataclass(frozen=True)
class SyntheticSpec:
    num_groups: int = 3
    words_per_group: int = 10
    noise_pool_size: int = 10
    num_dialogues: int = 200
    utterances_per_dialogue: int = 6
    active_groups: int = 1
    noise_rate: float = 0.35
    tokens_per_utterance: int = 8
    summary_tokens: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.num_groups < 1 or self.words_per_group < 1:
            raise SyntheticSpecError("need at least one group with one word")
        if not (1 <= self.active_groups <= self.num_groups):
            raise SyntheticSpecError(
                f"active_groups={self.active_groups} must be in "
                f"[1, {self.num_groups}]")
        if not (0.0 <= self.noise_rate <= 1.0):
            raise SyntheticSpecError("noise_rate must be in [0, 1]")
        if self.noise_rate >= 1.0:
            raise SyntheticSpecError(
                "noise_rate=1 leaves no informative words in dialogues, so "
                "summaries could never overlap them; lower the rate")
        if self.noise_rate > 0.0 and self.noise_pool_size < 1:
            raise SyntheticSpecError("noise_rate > 0 needs a noise pool")
        if self.num_dialogues < 1 or self.utterances_per_dialogue < 1:
            raise SyntheticSpecError("corpus dimensions must be positive")
        if self.tokens_per_utterance < 1 or self.summary_tokens < 1:
            raise SyntheticSpecError("token counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def group_words(spec: SyntheticSpec) -> list[list[str]]:
    return [[f"g{g}w{i}" for i in range(spec.words_per_group)]
            for g in range(spec.num_groups)]


def noise_words(spec: SyntheticSpec) -> list[str]:
    return [f"noise{i}" for i in range(spec.noise_pool_size)]


def generate_synthetic(spec: SyntheticSpec):
    """Generate (dialogues, truth) where truth maps dialogue id -> group ids.

    Deterministic for a fixed spec (including the seed).  Group word sets
    and the noise pool are disjoint by construction.  When noise is enabled
    every dialogue carries at least one noise token, so the pool is present
    corpus-wide.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    groups = group_words(spec)
    noise = noise_words(spec)

    dialogues: list[Dialogue] = []
    truth: dict[str, list[int]] = {}
    for n in range(spec.num_dialogues):
        active = sorted(rng.choice(spec.num_groups, size=spec.active_groups,
                                   replace=False).tolist())
        active_pool = [w for g in active for w in groups[g]]

        utterances = []
        saw_noise = False
        for u in range(spec.utterances_per_dialogue):
            role = ROLES[u % 2]
            toks = []
            for _ in range(spec.tokens_per_utterance):
                if spec.noise_rate > 0 and rng.random() < spec.noise_rate:
                    toks.append(noise[rng.integers(len(noise))])
                    saw_noise = True
                else:
                    toks.append(active_pool[rng.integers(len(active_pool))])
            utterances.append(Utterance(role=role, tokens=tuple(toks)))
        if spec.noise_rate > 0 and not saw_noise:
            # guarantee the pool shows up in every dialogue
            last = utterances[-1]
            toks = last.tokens[:-1] + (noise[rng.integers(len(noise))],)
            utterances[-1] = Utterance(role=last.role, tokens=toks)

        present = sorted({t for u in utterances for t in u.tokens
                          if t in set(active_pool)})
        if present:
            k = min(spec.summary_tokens, len(present))
            summary = tuple(sorted(rng.choice(present, size=k,
                                              replace=False).tolist()))
        else:
            # degenerate dialogue (all noise); summary still uses only
            # active-group words, the empty-subset fallback handles training
            k = min(spec.summary_tokens, len(active_pool))
            summary = tuple(sorted(rng.choice(active_pool, size=k,
                                              replace=False).tolist()))

        did = f"syn{n:05d}"
        dialogues.append(Dialogue(id=did, utterances=tuple(utterances),
                                  summary=summary))
        truth[did] = active
    return dialogues, truth


def write_truth_sidecar(truth: dict[str, list[int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_truth_sidecar(path) -> dict[str, list[int]]:
    with open(path, encoding="utf-8") as fh:
        return {k: list(v) for k, v in json.load(fh).items()}
