"""Two-stage dialogue summarizer with topic-informed attention.

Stage one encodes each utterance with a word-level transformer (the role
embedding is prepended as position 0 and its output state is the utterance
representation), contextualizes utterance states with an utterance-level
transformer, and extracts salient utterances with a pointer-style decoder
over the utterance states plus a learned stop element.  Stage two refines
the extracted utterances into an abstractive summary with a transformer
decoder over the concatenated word states, separator tokens between
utterances, using the shared word embedding table as output projection.

Both decoders replace their cross-attention with the topic-informed
variant; self-attention everywhere stays standard.  Layers are pre-norm
with a final layer norm per stack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import corpus as cp
from .attention import (AttentionTrace, TopicInformedAttention, causal_mask,
                        init_mha_weights, init_topic_attention_weights,
                        multi_head_attention, sinusoidal_positions)
from .topic import MultiRoleTopicState, glorot

ROLE_INDEX = {cp.ROLE_CUSTOMER: 0, cp.ROLE_AGENT: 1}


@dataclass
class SummarizerConfig:
    dmodel: int = 32
    nheads: int = 2
    ff: int = 64
    word_layers: int = 1
    utt_layers: int = 1
    ext_layers: int = 1
    ref_layers: int = 1
    max_word_len: int = 16
    max_utts: int = 32
    max_extract: int = 3
    max_summary_len: int = 16
    min_summary_len: int = 1
    topic_dim: int = 16
    share_embeddings: bool = True

    def __post_init__(self):
        if self.dmodel % self.nheads != 0:
            raise ValueError("dmodel must be divisible by nheads")


@dataclass
class ExtractResult:
    indices: list[int]
    stopped: bool
    log_probs: list[Tensor] = field(default_factory=list)
    trace: AttentionTrace | None = None


class SummarizerModel:
    """Parameter container and forward passes for the two-stage summarizer."""

    def __init__(self, vocab: cp.Vocabulary, cfg: SummarizerConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab = vocab
        self.cfg = cfg
        dm = cfg.dmodel
        tau_dim = 3 * cfg.topic_dim

        p: dict[str, np.ndarray] = {}
        p["word_emb"] = rng.standard_normal((vocab.seq_size, dm)) * 0.1
        if not cfg.share_embeddings:
            p["out_emb"] = rng.standard_normal((vocab.seq_size, dm)) * 0.1
        p["role_emb"] = rng.standard_normal((2, dm)) * 0.1
        p["utt_pos"] = rng.standard_normal((cfg.max_utts, dm)) * 0.1
        p["ext_start"] = rng.standard_normal((1, dm)) * 0.1
        p["ext_stop"] = rng.standard_normal((1, dm)) * 0.1

        def add_ln(prefix):
            p[f"{prefix}.g"] = np.ones(dm)
            p[f"{prefix}.b"] = np.zeros(dm)

        def add_ff(prefix):
            p[f"{prefix}.w1"] = glorot(rng, dm, cfg.ff)
            p[f"{prefix}.b1"] = np.zeros(cfg.ff)
            p[f"{prefix}.w2"] = glorot(rng, cfg.ff, dm)
            p[f"{prefix}.b2"] = np.zeros(dm)

        def add_encoder_stack(name, layers):
            for i in range(layers):
                p.update(init_mha_weights(rng, dm, f"{name}{i}.att"))
                add_ln(f"{name}{i}.ln1")
                add_ln(f"{name}{i}.ln2")
                add_ff(f"{name}{i}.ff")
            add_ln(f"{name}.lnf")

        def add_decoder_stack(name, layers):
            for i in range(layers):
                p.update(init_mha_weights(rng, dm, f"{name}{i}.self"))
                p.update(init_topic_attention_weights(rng, dm, tau_dim,
                                                      f"{name}{i}.cross"))
                add_ln(f"{name}{i}.ln1")
                add_ln(f"{name}{i}.ln2")
                add_ln(f"{name}{i}.ln3")
                add_ff(f"{name}{i}.ff")
            add_ln(f"{name}.lnf")

        add_encoder_stack("wenc", cfg.word_layers)
        add_encoder_stack("uenc", cfg.utt_layers)
        add_decoder_stack("ext", cfg.ext_layers)
        add_decoder_stack("ref", cfg.ref_layers)

        self.params = {k: ad.parameter(v, name=k) for k, v in p.items()}
        pos_len = max(cfg.max_word_len + 1, cfg.max_summary_len + 2,
                      cfg.max_extract + 2)
        self._pos = sinusoidal_positions(pos_len, dm)
        self._emb_scale = np.sqrt(dm)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            arr = np.asarray(arrays[k], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"checkpoint array {k!r} has shape {arr.shape}, "
                                 f"expected {t.data.shape}")
            t.data = arr.copy()

    @property
    def output_table(self) -> Tensor:
        return self.params["word_emb" if self.cfg.share_embeddings else "out_emb"]

    # -- building blocks ----------------------------------------------------

    def _ln(self, x: Tensor, prefix: str, eps: float = 1e-5) -> Tensor:
        m = ad.tmean(x, axis=-1, keepdims=True)
        xc = x - m
        v = ad.tmean(xc * xc, axis=-1, keepdims=True)
        normed = xc / ad.sqrt(v + eps)
        return normed * self.params[f"{prefix}.g"] + self.params[f"{prefix}.b"]

    def _ff(self, x: Tensor, prefix: str) -> Tensor:
        h = ad.relu(ad.matmul(x, self.params[f"{prefix}.w1"])
                    + self.params[f"{prefix}.b1"])
        return ad.matmul(h, self.params[f"{prefix}.w2"]) + self.params[f"{prefix}.b2"]

    def _encoder_layer(self, x: Tensor, prefix: str, mask=None) -> Tensor:
        normed = self._ln(x, f"{prefix}.ln1")
        x = x + multi_head_attention(normed, normed, self.params,
                                     f"{prefix}.att", self.cfg.nheads, mask)
        return x + self._ff(self._ln(x, f"{prefix}.ln2"), f"{prefix}.ff")

    def _decoder_layer(self, x: Tensor, prefix: str,
                       cross: TopicInformedAttention, mask,
                       trace: AttentionTrace | None = None) -> Tensor:
        normed = self._ln(x, f"{prefix}.ln1")
        x = x + multi_head_attention(normed, normed, self.params,
                                     f"{prefix}.self", self.cfg.nheads, mask)
        x = x + cross(self._ln(x, f"{prefix}.ln2"), trace)
        return x + self._ff(self._ln(x, f"{prefix}.ln3"), f"{prefix}.ff")

    def _embed_tokens(self, ids) -> Tensor:
        emb = ad.gather_rows(self.params["word_emb"], ids)
        return emb * self._emb_scale

    def _make_crosses(self, name: str, layers: int, memory: Tensor, roles,
                      topics, roles_enabled):
        return [TopicInformedAttention(self.params, f"{name}{i}.cross",
                                       self.cfg.nheads, memory, roles, topics,
                                       roles_enabled)
                for i in range(layers)]

    # -- encoding -----------------------------------------------------------

    def encode_dialogue(self, dialogue: cp.Dialogue):
        """Utterance states [M, dmodel], per-utterance word states, roles."""
        if not dialogue.utterances:
            raise cp.CorpusError("cannot encode an empty dialogue")
        utts = dialogue.utterances[: self.cfg.max_utts]
        h_rows, word_states, utt_roles = [], [], []
        for utt in utts:
            toks = utt.tokens[: self.cfg.max_word_len]
            ids = self.vocab.seq_ids(toks)
            emb = self._embed_tokens(ids)
            role_row = ad.gather_rows(self.params["role_emb"],
                                      [ROLE_INDEX[utt.role]])
            seq = ad.concat([role_row, emb], axis=0)
            seq = seq + ad.tensor(self._pos[: len(ids) + 1])
            for i in range(self.cfg.word_layers):
                seq = self._encoder_layer(seq, f"wenc{i}")
            seq = self._ln(seq, "wenc.lnf")
            h_rows.append(seq[0:1, :])
            word_states.append(seq[1:, :])
            utt_roles.append(utt.role)

        h = ad.concat(h_rows, axis=0)
        h = h + ad.gather_rows(self.params["utt_pos"], list(range(len(utts))))
        for i in range(self.cfg.utt_layers):
            h = self._encoder_layer(h, f"uenc{i}")
        utt_states = self._ln(h, "uenc.lnf")
        return utt_states, word_states, utt_roles

    # -- utterance extraction -------------------------------------------------

    def _pointer_logits(self, state: Tensor, candidates: Tensor,
                        banned: set[int]) -> Tensor:
        logits = ad.reshape(ad.matmul(candidates, ad.transpose(state)),
                            (candidates.shape[0],))
        logits = logits * (1.0 / self._emb_scale)
        if banned:
            mask = np.zeros(candidates.shape[0])
            for b in banned:
                mask[b] = -1e9
            logits = logits + ad.tensor(mask)
        return logits

    def _run_extractor(self, input_rows, crosses, trace):
        x = ad.concat(input_rows, axis=0)
        x = x + ad.tensor(self._pos[: len(input_rows)])
        mask = causal_mask(len(input_rows))
        for i in range(self.cfg.ext_layers):
            layer_trace = trace if i == 0 else None
            x = self._decoder_layer(x, f"ext{i}", crosses[i], mask, layer_trace)
        x = self._ln(x, "ext.lnf")
        return x[x.shape[0] - 1: x.shape[0], :]

    def extract_utterances(self, utt_states: Tensor, utt_roles,
                           topics: MultiRoleTopicState | None,
                           mode: str = "greedy", rng=None,
                           max_extract: int | None = None,
                           collect_trace: bool = False,
                           roles_enabled=cp.ROLES) -> ExtractResult:
        """Decode an ordered, duplicate-free utterance index list.

        ``greedy`` takes the argmax until the stop element; ``sample`` draws
        from the pointer distribution (requires `rng`).  If stop is chosen
        first, the fallback selects the top utterance by the first step's
        combined attention, so at least one utterance always comes back.
        """
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown extraction mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ValueError("sampling extraction requires an rng")
        M = utt_states.shape[0]
        limit = min(max_extract or self.cfg.max_extract, M)
        crosses = self._make_crosses("ext", self.cfg.ext_layers, utt_states,
                                     utt_roles, topics, roles_enabled)
        trace = AttentionTrace()
        candidates = ad.concat([utt_states, self.params["ext_stop"]], axis=0)
        stop_index = M

        selected: list[int] = []
        log_probs: list[Tensor] = []
        input_rows = [self.params["ext_start"]]
        stopped = False
        for _ in range(limit):
            # the decoder re-runs the whole prefix; keep only the current
            # step's (last) query row in the persistent trace
            step_trace = AttentionTrace()
            state = self._run_extractor(input_rows, crosses, step_trace)
            trace.add_step(step_trace.alpha_q[-1], step_trace.alpha_t[-1],
                           step_trace.alpha[-1], step_trace.p_sel[-1])
            logits = self._pointer_logits(state, candidates, set(selected))
            logp = ad.log_softmax(logits, axis=-1)
            if mode == "greedy":
                action = int(np.argmax(logits.data))
            else:
                probs = np.exp(logp.data)
                probs = probs / probs.sum()
                action = int(rng.choice(M + 1, p=probs))
            log_probs.append(logp[action])
            if action == stop_index:
                stopped = True
                break
            selected.append(action)
            input_rows.append(utt_states[action:action + 1, :])

        if not selected:
            # stop-first decode: back off to the strongest first-step element
            first_alpha = trace.alpha[0]
            selected = [int(np.argmax(first_alpha))]
        return ExtractResult(indices=selected, stopped=stopped,
                             log_probs=log_probs,
                             trace=trace if collect_trace else None)

    def extractor_nll(self, utt_states: Tensor, utt_roles,
                      topics: MultiRoleTopicState | None, oracle_indices,
                      roles_enabled=cp.ROLES) -> Tensor:
        """Teacher-forced pointer cross-entropy against the oracle sequence.

        Targets are the oracle indices in dialogue order followed by the
        stop element; already-targeted indices are masked exactly as at
        decode time.
        """
        M = utt_states.shape[0]
        crosses = self._make_crosses("ext", self.cfg.ext_layers, utt_states,
                                     utt_roles, topics, roles_enabled)
        candidates = ad.concat([utt_states, self.params["ext_stop"]], axis=0)
        targets = list(oracle_indices) + [M]
        input_rows = [self.params["ext_start"]]
        for t in oracle_indices:
            input_rows.append(utt_states[t:t + 1, :])

        nll = None
        for step, target in enumerate(targets):
            state = self._run_extractor(input_rows[: step + 1], crosses, None)
            logits = self._pointer_logits(state, candidates,
                                          set(targets[:step]))
            term = -ad.log_softmax(logits, axis=-1)[target]
            nll = term if nll is None else nll + term
        return nll

    # -- refinement -----------------------------------------------------------

    def build_refiner_memory(self, word_states, utt_roles, extracted):
        """Concatenate word states of the extracted utterances in dialogue
        order, a separator element after each utterance, roles per element."""
        if not extracted:
            raise ValueError("refiner needs at least one extracted utterance")
        sep = self._embed_tokens([self.vocab.seq_index[cp.SEP]])
        parts, roles = [], []
        for i in sorted(extracted):
            parts.append(word_states[i])
            roles.extend([utt_roles[i]] * word_states[i].shape[0])
            parts.append(sep)
            roles.append(utt_roles[i])
        return ad.concat(parts, axis=0), roles

    def _run_refiner(self, ids, crosses, trace=None):
        x = self._embed_tokens(ids)
        x = x + ad.tensor(self._pos[: len(ids)])
        mask = causal_mask(len(ids))
        for i in range(self.cfg.ref_layers):
            layer_trace = trace if i == 0 else None
            x = self._decoder_layer(x, f"ref{i}", crosses[i], mask, layer_trace)
        return self._ln(x, "ref.lnf")

    def refiner_nll(self, memory: Tensor, memory_roles,
                    topics: MultiRoleTopicState | None, target_ids,
                    roles_enabled=cp.ROLES):
        """Teacher-forced token cross-entropy; returns (nll sum, token count)."""
        crosses = self._make_crosses("ref", self.cfg.ref_layers, memory,
                                     memory_roles, topics, roles_enabled)
        bos = self.vocab.seq_index[cp.BOS]
        eos = self.vocab.seq_index[cp.EOS]
        targets = list(target_ids) + [eos]
        inputs = [bos] + list(target_ids)
        states = self._run_refiner(inputs, crosses)
        logits = ad.matmul(states, ad.transpose(self.output_table))
        logp = ad.log_softmax(logits, axis=-1)
        onehot = np.zeros((len(targets), self.vocab.seq_size))
        for t, tid in enumerate(targets):
            onehot[t, tid] = 1.0
        nll = -ad.tsum(logp * ad.tensor(onehot))
        return nll, len(targets)

    def refine(self, memory: Tensor, memory_roles,
               topics: MultiRoleTopicState | None, max_len: int | None = None,
               min_len: int | None = None, beam: int = 1,
               collect_trace: bool = False, roles_enabled=cp.ROLES):
        """Decode a summary token-id sequence (greedy when beam=1).

        Runs without building a graph.  Special markers other than the
        end-of-summary token are never generated; the end token is masked
        until `min_len` tokens have been produced.
        """
        if memory.shape[0] < 1:
            raise ValueError("refiner needs a non-empty memory")
        if beam < 1:
            raise ValueError("beam width must be >= 1")
        max_len = max_len or self.cfg.max_summary_len
        min_len = self.cfg.min_summary_len if min_len is None else min_len
        bos = self.vocab.seq_index[cp.BOS]
        eos = self.vocab.seq_index[cp.EOS]
        banned = [self.vocab.seq_index[t] for t in (cp.BOS, cp.SEP, cp.UNK)]

        with ad.no_grad():
            crosses = self._make_crosses("ref", self.cfg.ref_layers, memory,
                                         memory_roles, topics, roles_enabled)
            trace = AttentionTrace() if collect_trace else None
            beams = [(0.0, [bos], False)]
            for _ in range(max_len):
                expansions = []
                for score, ids, done in beams:
                    if done:
                        expansions.append((score, ids, True))
                        continue
                    step_trace = AttentionTrace() if (trace is not None
                                                      and beam == 1) else None
                    states = self._run_refiner(ids, crosses, step_trace)
                    if step_trace is not None:
                        trace.add_step(step_trace.alpha_q[-1],
                                       step_trace.alpha_t[-1],
                                       step_trace.alpha[-1],
                                       step_trace.p_sel[-1])
                    logits = ad.matmul(states, ad.transpose(self.output_table))
                    logp = ad.log_softmax(logits, axis=-1).data[-1].copy()
                    logp[banned] = -np.inf
                    if len(ids) - 1 < min_len:
                        logp[eos] = -np.inf
                    top = np.argsort(-logp, kind="stable")[:beam]
                    for tok in top:
                        tok = int(tok)
                        expansions.append((score + float(logp[tok]),
                                           ids + [tok], tok == eos))
                expansions.sort(key=lambda e: (-e[0], e[1]))
                beams = expansions[:beam]
                if all(done for _, _, done in beams):
                    break
            best = max(beams, key=lambda e: (e[0], tuple(-i for i in e[1])))
            ids = best[1][1:]
            if ids and ids[-1] == eos:
                ids = ids[:-1]
        return ids, trace


def write_attention_csv(trace: AttentionTrace, path, dialogue_id: str = "") -> None:
    """Export (decode step, element index, alpha_q, alpha_t, alpha, p_sel)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dialogue", "step", "element", "alpha_q", "alpha_t",
                    "alpha", "p_sel"])
        for step, j, aq, at, a, p in trace.rows():
            w.writerow([dialogue_id, step, j, f"{aq:.10g}", f"{at:.10g}",
                        f"{a:.10g}", f"{p:.10g}"])
