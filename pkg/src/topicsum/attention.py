"""Attention operations: standard multi-head and topic-informed variants.

The topic-informed cross-attention mixes two distributions per head:

* a query-based distribution over memory elements (the usual scaled dot
  product), and
* a query-independent distribution scored contrastively against the
  role-conditional topic vectors: logits are the projected difference of
  informative and other topic representations dotted with a key projection
  of each memory element.

A sigmoid gate computed once per query step from [query; query-fused
memory; topic-fused memory] selects softly between the two, so the
combined weights stay a convex mixture on the simplex.  The topic-side
attention and its fused vector depend only on the memory and are computed
once per decode and cached.

Role-conditional topic vectors concatenate the whole-dialogue block with
exactly one role block and one zero block: customer elements carry
[t; t_customer; 0], agent elements [t; 0; t_agent].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import ROLE_CUSTOMER, ROLE_AGENT
from .topic import MultiRoleTopicState, glorot

GATE_LOGIT_LIMIT = 30.0  # keeps the sigmoid gate strictly inside (0, 1)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Classic fixed sin/cos position table [length, dim]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table


def causal_mask(n: int) -> np.ndarray:
    """Additive mask blocking attention to future positions."""
    return np.triu(np.full((n, n), -1e9), k=1)


def init_mha_weights(rng, dmodel: int, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w_q": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_k": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_v": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_o": glorot(rng, dmodel, dmodel),
    }


def init_topic_attention_weights(rng, dmodel: int, tau_dim: int,
                                 prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w_q": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_kq": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_v": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_o": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_t": glorot(rng, tau_dim, dmodel),
        f"{prefix}.w_kt": glorot(rng, dmodel, dmodel),
        f"{prefix}.w_p": glorot(rng, 3 * dmodel, 1),
        f"{prefix}.b_p": np.zeros(1),
    }


def multi_head_attention(q_in: Tensor, kv_in: Tensor, w: dict[str, Tensor],
                         prefix: str, nheads: int, mask=None) -> Tensor:
    """Standard scaled-dot multi-head attention (self or plain cross)."""
    dm = q_in.shape[1]
    dh = dm // nheads
    scale = 1.0 / np.sqrt(dh)
    mask_t = ad.tensor(mask) if mask is not None else None
    heads = []
    for h in range(nheads):
        sl = slice(h * dh, (h + 1) * dh)
        q = ad.matmul(q_in, w[f"{prefix}.w_q"][:, sl])
        k = ad.matmul(kv_in, w[f"{prefix}.w_k"][:, sl])
        v = ad.matmul(kv_in, w[f"{prefix}.w_v"][:, sl])
        scores = ad.matmul(q, ad.transpose(k)) * scale
        if mask_t is not None:
            scores = scores + mask_t
        heads.append(ad.matmul(ad.softmax(scores, axis=-1), v))
    return ad.matmul(ad.concat(heads, axis=1), w[f"{prefix}.w_o"])


def build_role_topic_vectors(role: str, topics: MultiRoleTopicState,
                             roles_enabled=(ROLE_CUSTOMER, ROLE_AGENT)):
    """Role-conditional (tau_s, tau_o), each of width 3H.

    tau_o is None in plain (single-group) topic mode; a disabled role
    contributes a zero block, which removes that model from the pathway.
    """
    if role not in (ROLE_CUSTOMER, ROLE_AGENT):
        raise ValueError(f"unknown role {role!r}")

    def vec(t: Tensor) -> Tensor:
        return ad.reshape(t, (t.size,))

    h = topics.dialogue.t_s.shape[-1]
    zero = ad.tensor(np.zeros(h))
    split_mode = topics.dialogue.t_o is not None

    def build(part: str) -> Tensor:
        whole = vec(getattr(topics.dialogue, part))
        if role == ROLE_CUSTOMER:
            role_block = (vec(getattr(topics.customer, part))
                          if ROLE_CUSTOMER in roles_enabled else zero)
            return ad.concat([whole, role_block, zero])
        role_block = (vec(getattr(topics.agent, part))
                      if ROLE_AGENT in roles_enabled else zero)
        return ad.concat([whole, zero, role_block])

    tau_s = build("t_s")
    tau_o = build("t_o") if split_mode else None
    return tau_s, tau_o


@dataclass
class AttentionTrace:
    """Head-averaged attention rows per decode step (export format)."""

    alpha_q: list[np.ndarray] = field(default_factory=list)
    alpha_t: list[np.ndarray] = field(default_factory=list)
    alpha: list[np.ndarray] = field(default_factory=list)
    p_sel: list[float] = field(default_factory=list)

    def add_step(self, alpha_q, alpha_t, alpha, p_sel):
        self.alpha_q.append(np.asarray(alpha_q))
        self.alpha_t.append(np.asarray(alpha_t))
        self.alpha.append(np.asarray(alpha))
        self.p_sel.append(float(p_sel))

    def rows(self):
        """(step, element, alpha_q, alpha_t, alpha, p_sel) tuples."""
        for step in range(len(self.p_sel)):
            for j in range(self.alpha[step].shape[0]):
                yield (step, j, float(self.alpha_q[step][j]),
                       float(self.alpha_t[step][j]),
                       float(self.alpha[step][j]), self.p_sel[step])


class TopicInformedAttention:
    """Cross-attention over a fixed memory, topic parts precomputed.

    Instantiate once per decode with the memory, its per-element roles and
    the multi-role topic state; call with query matrices (one row per
    step).  ``topics=None`` zeroes the topic vectors, which makes the
    topic-side attention exactly uniform (the detached ablation).
    """

    def __init__(self, weights: dict[str, Tensor], prefix: str, nheads: int,
                 memory: Tensor, roles, topics: MultiRoleTopicState | None,
                 roles_enabled=(ROLE_CUSTOMER, ROLE_AGENT)):
        if memory.shape[0] < 1:
            raise ValueError("empty attention memory")
        if len(roles) != memory.shape[0]:
            raise ValueError("one role tag per memory element is required")
        self.w = weights
        self.prefix = prefix
        self.nheads = nheads
        self.memory = memory
        dm = memory.shape[1]
        if dm % nheads != 0:
            raise ValueError("model width must divide evenly into heads")
        self.dh = dm // nheads
        self.scale = 1.0 / np.sqrt(self.dh)
        self._build_topic_side(roles, topics, roles_enabled)

    def _w(self, name: str) -> Tensor:
        return self.w[f"{self.prefix}.{name}"]

    def _build_topic_side(self, roles, topics, roles_enabled):
        J = self.memory.shape[0]
        tau_dim = self._w("w_t").shape[0]
        if topics is None:
            contrast = ad.tensor(np.zeros((J, tau_dim)))
        else:
            cache: dict[str, Tensor] = {}
            rows = []
            for role in roles:
                if role not in cache:
                    tau_s, tau_o = build_role_topic_vectors(
                        role, topics, roles_enabled)
                    cache[role] = tau_s - tau_o if tau_o is not None else tau_s
                rows.append(cache[role])
            contrast = ad.stack_rows(rows)

        self.k_t = []      # per head [J, dh]
        self.v = []        # per head [J, dh]
        self.k_q = []      # per head [J, dh]
        self.alpha_t = []  # per head [1, J]
        mu_t_heads = []
        for h in range(self.nheads):
            sl = slice(h * self.dh, (h + 1) * self.dh)
            ct = ad.matmul(contrast, self._w("w_t")[:, sl])
            kt = ad.matmul(self.memory, self._w("w_kt")[:, sl])
            logits = ad.tsum(ct * kt, axis=1, keepdims=False) * self.scale
            alpha_t = ad.reshape(ad.softmax(logits, axis=-1), (1, J))
            v = ad.matmul(self.memory, self._w("w_v")[:, sl])
            self.k_t.append(kt)
            self.v.append(v)
            self.k_q.append(ad.matmul(self.memory, self._w("w_kq")[:, sl]))
            self.alpha_t.append(alpha_t)
            mu_t_heads.append(ad.matmul(alpha_t, v))
        self.mu_t = ad.concat(mu_t_heads, axis=1)  # [1, dm]

    def __call__(self, q: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        """Fuse memory for queries q [T, dm]; optionally record the trace."""
        T = q.shape[0]
        alpha_q_heads, mu_q_heads = [], []
        for h in range(self.nheads):
            sl = slice(h * self.dh, (h + 1) * self.dh)
            qh = ad.matmul(q, self._w("w_q")[:, sl])
            scores = ad.matmul(qh, ad.transpose(self.k_q[h])) * self.scale
            alpha_q = ad.softmax(scores, axis=-1)
            alpha_q_heads.append(alpha_q)
            mu_q_heads.append(ad.matmul(alpha_q, self.v[h]))
        mu_q = ad.concat(mu_q_heads, axis=1)
        ones = ad.tensor(np.ones((T, 1)))
        gate_in = ad.concat([q, mu_q, ad.matmul(ones, self.mu_t)], axis=1)
        logit = ad.clip(ad.matmul(gate_in, self._w("w_p")) + self._w("b_p"),
                        -GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT)
        p_sel = ad.sigmoid(logit)  # [T, 1]

        fused_heads = []
        combined_heads = []
        for h in range(self.nheads):
            alpha = (1.0 - p_sel) * alpha_q_heads[h] + p_sel * self.alpha_t[h]
            combined_heads.append(alpha)
            fused_heads.append(ad.matmul(alpha, self.v[h]))
        out = ad.matmul(ad.concat(fused_heads, axis=1), self._w("w_o"))

        if trace is not None:
            aq = np.mean([a.data for a in alpha_q_heads], axis=0)
            at = np.mean([a.data[0] for a in self.alpha_t], axis=0)
            ac = np.mean([a.data for a in combined_heads], axis=0)
            for t in range(T):
                trace.add_step(aq[t], at, ac[t], p_sel.data[t, 0])
        return out
