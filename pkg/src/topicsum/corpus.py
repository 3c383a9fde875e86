"""Dialogue ingestion, vocabulary, and bag-of-words extraction.

A corpus file is UTF-8 JSON-lines: one record per line with fields
``id`` (string), ``utterances`` (array of ``{"role": "customer"|"agent",
"text": str}``) and an optional ``summary`` string.  Role tags are strict:
anything other than the two exact strings is a parse error naming the line.

Two deterministic tokenizers are provided: ``whitespace`` (split on runs of
whitespace) and ``char`` (one token per non-space code point, for scripts
where word segmentation is unreliable).

The vocabulary keeps two index spaces: the bag-of-words space (stop words
and below-min-count tokens removed) used by the topic models, and the
sequence space (every token retained, plus the special markers) used by the
summarizer.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ROLE_CUSTOMER = "customer"
ROLE_AGENT = "agent"
ROLES = (ROLE_CUSTOMER, ROLE_AGENT)

BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"
UNK = "<unk>"
SPECIAL_TOKENS = (BOS, EOS, SEP, UNK)

# Minimal default stop lists; override with a stop-word file for real data.
DEFAULT_STOPWORDS_WHITESPACE = frozenset(
    "a an and are as at be but by for if in into is it no not of on or such "
    "that the their then there these they this to was will with i you he she "
    "we do did done have has had what when where who how why own same so than "
    "too very can just don should now".split()
)
DEFAULT_STOPWORDS_CHAR = frozenset(
    list("的了是我你他她它们在有和就不都一也这那吗呢吧啊哦嗯把被与及或等着过") +
    list("，。！？、；：“”‘’（）()[]【】《》.,!?;:'\"-—…~·")
)


class CorpusError(ValueError):
    """Malformed corpus input."""


@dataclass(frozen=True)
class Utterance:
    role: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise CorpusError(f"unknown role tag {self.role!r}")
        if not self.tokens:
            raise CorpusError("empty utterance")


@dataclass(frozen=True)
class Dialogue:
    """Ordered role-tagged utterances plus an optional reference summary."""

    id: str
    utterances: tuple[Utterance, ...]
    summary: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.utterances:
            raise CorpusError(f"dialogue {self.id!r} has no utterances")

    def tokens_by_role(self, role: str):
        for utt in self.utterances:
            if utt.role == role:
                yield from utt.tokens

    def all_tokens(self):
        for utt in self.utterances:
            yield from utt.tokens


def tokenize(text: str, mode: str = "whitespace") -> tuple[str, ...]:
    if mode == "whitespace":
        return tuple(text.split())
    if mode == "char":
        return tuple(ch for ch in text if not ch.isspace())
    raise CorpusError(f"unknown token mode {mode!r}")


def load_corpus(path, token_mode: str = "whitespace") -> list[Dialogue]:
    """Parse a JSON-lines corpus file, preserving record order."""
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {e}") from e
            try:
                dialogues.append(_record_to_dialogue(rec, token_mode))
            except (CorpusError, KeyError, TypeError) as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
    return dialogues


def _record_to_dialogue(rec: dict, token_mode: str) -> Dialogue:
    if not isinstance(rec, dict):
        raise CorpusError("record is not an object")
    if "id" not in rec or "utterances" not in rec:
        raise CorpusError("record needs 'id' and 'utterances' fields")
    utts = []
    for u in rec["utterances"]:
        role = u["role"]
        if role not in ROLES:
            raise CorpusError(f"unknown role tag {role!r}")
        toks = tokenize(u["text"], token_mode)
        if not toks:
            raise CorpusError("utterance with empty text")
        utts.append(Utterance(role=role, tokens=toks))
    summary = None
    if rec.get("summary") is not None:
        summary = tokenize(rec["summary"], token_mode)
    return Dialogue(id=str(rec["id"]), utterances=tuple(utts), summary=summary)


def save_corpus(dialogues, path, token_mode: str = "whitespace") -> None:
    joiner = " " if token_mode == "whitespace" else ""
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            rec = {
                "id": d.id,
                "utterances": [
                    {"role": u.role, "text": joiner.join(u.tokens)}
                    for u in d.utterances
                ],
            }
            if d.summary is not None:
                rec["summary"] = joiner.join(d.summary)
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_stopwords(path) -> frozenset[str]:
    """One token per line; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    """Token/index maps for the bag-of-words and sequence spaces."""

    bow_tokens: tuple[str, ...]
    seq_tokens: tuple[str, ...]
    stop_words: frozenset[str]
    min_count: int
    bow_index: dict[str, int] = field(repr=False, default_factory=dict)
    seq_index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.bow_index:
            self.bow_index = {t: i for i, t in enumerate(self.bow_tokens)}
        if not self.seq_index:
            self.seq_index = {t: i for i, t in enumerate(self.seq_tokens)}

    @property
    def bow_size(self) -> int:
        return len(self.bow_tokens)

    @property
    def seq_size(self) -> int:
        return len(self.seq_tokens)

    def bow_id(self, token: str):
        return self.bow_index.get(token)

    def seq_id(self, token: str) -> int:
        return self.seq_index.get(token, self.seq_index[UNK])

    def seq_ids(self, tokens) -> list[int]:
        return [self.seq_id(t) for t in tokens]

    def to_dict(self) -> dict:
        return {
            "bow_tokens": list(self.bow_tokens),
            "seq_tokens": list(self.seq_tokens),
            "stop_words": sorted(self.stop_words),
            "min_count": self.min_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            bow_tokens=tuple(d["bow_tokens"]),
            seq_tokens=tuple(d["seq_tokens"]),
            stop_words=frozenset(d["stop_words"]),
            min_count=int(d["min_count"]),
        )


def build_vocab(corpus, stop_words=None, min_count: int = 1) -> Vocabulary:
    """Build both index spaces from a corpus.

    Bag-of-words tokens are dialogue tokens with stop words removed and
    counts >= `min_count`; order is (count desc, token lexicographic).
    Sequence tokens cover everything seen in dialogues and summaries
    (stop words retained) after the four special markers.
    """
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    if stop_words is None:
        stop_words = DEFAULT_STOPWORDS_WHITESPACE
    stop_words = frozenset(stop_words)

    dialogue_counts: Counter[str] = Counter()
    all_counts: Counter[str] = Counter()
    for d in corpus:
        toks = list(d.all_tokens())
        dialogue_counts.update(toks)
        all_counts.update(toks)
        if d.summary:
            all_counts.update(d.summary)

    def ordered(counter):
        return sorted(counter, key=lambda t: (-counter[t], t))

    bow_tokens = tuple(
        t for t in ordered(dialogue_counts)
        if t not in stop_words and dialogue_counts[t] >= min_count
    )
    seq_tokens = SPECIAL_TOKENS + tuple(ordered(all_counts))
    return Vocabulary(bow_tokens=bow_tokens, seq_tokens=seq_tokens,
                      stop_words=stop_words, min_count=min_count)


# ---------------------------------------------------------------------------
# bags of words
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BagOfWords:
    """Sparse nonnegative count vector over the bag-of-words vocabulary."""

    counts: dict[int, int]
    total: int

    def __post_init__(self):
        if any(c <= 0 for c in self.counts.values()):
            raise CorpusError("bag counts must be positive")
        if sum(self.counts.values()) != self.total:
            raise CorpusError("bag total does not match counts")

    @classmethod
    def from_tokens(cls, tokens, vocab: Vocabulary) -> "BagOfWords":
        counts: dict[int, int] = {}
        for t in tokens:
            idx = vocab.bow_id(t)
            if idx is not None:
                counts[idx] = counts.get(idx, 0) + 1
        return cls(counts=counts, total=sum(counts.values()))

    def to_dense(self, size: int) -> np.ndarray:
        vec = np.zeros(size, dtype=np.float64)
        for i, c in self.counts.items():
            if i >= size:
                raise CorpusError(f"bag index {i} out of range for |V|={size}")
            vec[i] = c
        return vec

    @property
    def is_empty(self) -> bool:
        return self.total == 0


def bow_add(a: BagOfWords, b: BagOfWords) -> BagOfWords:
    counts = dict(a.counts)
    for i, c in b.counts.items():
        counts[i] = counts.get(i, 0) + c
    return BagOfWords(counts=counts, total=a.total + b.total)


def bow_subtract(d: BagOfWords, s: BagOfWords) -> BagOfWords:
    """d - s elementwise; raises if s exceeds d anywhere."""
    counts = dict(d.counts)
    for i, c in s.counts.items():
        have = counts.get(i, 0)
        if c > have:
            raise CorpusError(f"subset count exceeds bag at index {i}")
        if c == have:
            counts.pop(i, None)
        else:
            counts[i] = have - c
    return BagOfWords(counts=counts, total=d.total - s.total)


def bags_for_dialogue(dialogue: Dialogue, vocab: Vocabulary):
    """Whole-dialogue, customer, and agent bags; d = d_C + d_A elementwise."""
    d_c = BagOfWords.from_tokens(dialogue.tokens_by_role(ROLE_CUSTOMER), vocab)
    d_a = BagOfWords.from_tokens(dialogue.tokens_by_role(ROLE_AGENT), vocab)
    d = bow_add(d_c, d_a)
    if d.is_empty:
        logger.debug("dialogue %s has an empty bag (all tokens OOV/stop)",
                     dialogue.id)
    return d, d_c, d_a


def summary_subset_for_bag(summary_tokens, bag: BagOfWords,
                           vocab: Vocabulary) -> BagOfWords:
    """Vocabulary words present in both the summary and the bag.

    Each shared word carries its full bag count: the informative/other
    factorization splits the bag over word types, so all occurrences of a
    shared type are attributed to the informative term.
    """
    summary_ids = {vocab.bow_id(t) for t in summary_tokens}
    summary_ids.discard(None)
    counts = {i: c for i, c in bag.counts.items() if i in summary_ids}
    return BagOfWords(counts=counts, total=sum(counts.values()))


def summary_subset(dialogue: Dialogue, vocab: Vocabulary,
                   bag: BagOfWords | None = None) -> BagOfWords:
    """The word subset s of the whole-dialogue bag d (see above)."""
    if dialogue.summary is None:
        raise CorpusError(f"dialogue {dialogue.id!r} has no summary")
    if bag is None:
        bag, _, _ = bags_for_dialogue(dialogue, vocab)
    s = summary_subset_for_bag(dialogue.summary, bag, vocab)
    if s.is_empty:
        logger.debug("dialogue %s: summary shares no vocabulary word with the "
                     "dialogue; informative term will be skipped", dialogue.id)
    return s
