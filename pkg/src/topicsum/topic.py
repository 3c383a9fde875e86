"""Variational neural topic models with a saliency-aware generative split.

Two modes share one parameter container:

* plain mode (``ntm``): a single topic group over the whole bag; the loss is
  the reconstruction of every bag word plus the Gaussian KL term.
* split mode (``satm``): topics divide into an informative group (size K_s)
  and an "other" group (size K_o).  Bag words shared with the reference
  summary are generated only by informative topics, every remaining word
  only by the other group.  The KL term is unchanged.

The inference network is a two-layer feed-forward encoder over the
log(1+count) bag producing a diagonal Gaussian (mu, log sigma^2); the
latent sample uses the reparameterization z = mu + eps * sigma, with
z = mu when no noise source is supplied (deterministic inference).

Topic-word rows are softmax(phi_k . e^T) over the bag vocabulary; topic
representations are expectations of topic vectors under the inferred
distributions.  One model instance covers one role; the multi-role helper
runs three instances (whole dialogue, customer, agent).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal((fan_in, fan_out)) * scale


class TopicModelParams:
    """Inference-network weights plus topic vectors phi and word vectors e."""

    def __init__(self, vocab_size: int, mode: str = "satm", k_informative: int = 3,
                 k_other: int = 2, hidden: int = 32, embed_dim: int = 16,
                 latent: int | None = None, rng=None, word_vectors=None):
        if mode not in ("satm", "ntm"):
            raise ValueError(f"unknown topic model mode {mode!r}")
        if vocab_size < 1:
            raise ValueError("vocabulary must be non-empty")
        if k_informative < 1 or (mode == "satm" and k_other < 1):
            raise ValueError("topic group sizes must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mode = mode
        self.vocab_size = vocab_size
        self.k_informative = k_informative
        self.k_other = k_other if mode == "satm" else 0
        self.k_total = k_informative + self.k_other
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.latent = latent if latent is not None else self.k_total

        p = {}
        p["enc_w1"] = glorot(rng, vocab_size, hidden)
        p["enc_b1"] = np.zeros(hidden)
        p["enc_w_mu"] = glorot(rng, hidden, self.latent)
        p["enc_b_mu"] = np.zeros(self.latent)
        p["enc_w_lv"] = glorot(rng, hidden, self.latent)
        p["enc_b_lv"] = np.zeros(self.latent)
        if mode == "satm":
            p["w_theta_s"] = glorot(rng, self.latent, k_informative)
            p["b_theta_s"] = np.zeros(k_informative)
            p["w_theta_o"] = glorot(rng, self.latent, k_other)
            p["b_theta_o"] = np.zeros(k_other)
            p["phi_s"] = rng.standard_normal((k_informative, embed_dim)) * 0.1
            p["phi_o"] = rng.standard_normal((k_other, embed_dim)) * 0.1
        else:
            p["w_theta"] = glorot(rng, self.latent, self.k_total)
            p["b_theta"] = np.zeros(self.k_total)
            p["phi"] = rng.standard_normal((self.k_total, embed_dim)) * 0.1
        if word_vectors is not None:
            e = np.asarray(word_vectors, dtype=np.float64)
            if e.shape != (vocab_size, embed_dim):
                raise ValueError("word vector table has the wrong shape")
            p["e"] = e.copy()
        else:
            p["e"] = rng.standard_normal((vocab_size, embed_dim)) * 0.1
        self._params = {k: ad.parameter(v, name=k) for k, v in p.items()}

    def __getitem__(self, key: str) -> Tensor:
        return self._params[key]

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            arr = np.asarray(arrays[k], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"checkpoint array {k!r} has shape {arr.shape}, "
                                 f"expected {t.data.shape}")
            t.data = arr.copy()


@dataclass
class TopicState:
    """Per-document inferred distributions and topic representations."""

    mu: Tensor
    logvar: Tensor
    z: Tensor
    theta_s: Tensor | None  # [B, K_s] (split mode) or [B, K] (plain mode)
    theta_o: Tensor | None  # [B, K_o], absent in plain mode
    t_s: Tensor             # [B, H]
    t_o: Tensor | None      # [B, H], absent in plain mode


@dataclass
class MultiRoleTopicState:
    dialogue: TopicState
    customer: TopicState
    agent: TopicState


def _as_matrix(bow) -> np.ndarray:
    arr = np.asarray(bow, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError("bag input must be a vector or matrix of counts")
    return arr


def infer_latent(bow, params: TopicModelParams, rng=None, eps=None):
    """Encode bags [B, |V|] into (mu, logvar, z).

    `rng` draws one eps sample per row (training); `eps` passes a fixed
    sample (gradient checking); with neither, z = mu exactly.
    """
    x = _as_matrix(bow)
    if x.shape[1] != params.vocab_size:
        raise ValueError(f"bag width {x.shape[1]} does not match |V|="
                         f"{params.vocab_size}")
    xt = ad.tensor(np.log1p(x))
    h = ad.tanh(ad.matmul(xt, params["enc_w1"]) + params["enc_b1"])
    mu = ad.matmul(h, params["enc_w_mu"]) + params["enc_b_mu"]
    logvar = ad.matmul(h, params["enc_w_lv"]) + params["enc_b_lv"]
    if eps is None and rng is not None:
        eps = rng.standard_normal(mu.shape)
    if eps is None:
        z = mu
    else:
        sigma = ad.exp(logvar * 0.5)
        z = mu + ad.tensor(np.asarray(eps, dtype=np.float64)) * sigma
    return mu, logvar, z


def topic_distributions(z: Tensor, params: TopicModelParams):
    """Simplex distributions from the latent: (theta_s, theta_o) or theta."""
    if params.mode == "satm":
        theta_s = ad.softmax(ad.matmul(z, params["w_theta_s"]) + params["b_theta_s"])
        theta_o = ad.softmax(ad.matmul(z, params["w_theta_o"]) + params["b_theta_o"])
        return theta_s, theta_o
    return ad.softmax(ad.matmul(z, params["w_theta"]) + params["b_theta"])


def topic_word_matrix(phi: Tensor, e: Tensor) -> Tensor:
    """Rows softmax(e . phi_k^T): one word distribution per topic."""
    if phi.shape[1] != e.shape[1]:
        raise ValueError(f"phi dim {phi.shape[1]} != word vector dim {e.shape[1]}")
    return ad.softmax(ad.matmul(phi, ad.transpose(e)), axis=-1)


def topic_representations(theta_s: Tensor, theta_o: Tensor,
                          phi_s: Tensor, phi_o: Tensor):
    """Expected topic vectors t = phi^T . theta per group."""
    return ad.matmul(theta_s, phi_s), ad.matmul(theta_o, phi_o)


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL[N(mu, sigma^2) || N(0, I)], summed over all entries."""
    return ad.tsum(ad.exp(logvar) + mu * mu - logvar - 1.0) * 0.5


def infer_state(bow, params: TopicModelParams, rng=None, eps=None) -> TopicState:
    mu, logvar, z = infer_latent(bow, params, rng=rng, eps=eps)
    if params.mode == "satm":
        theta_s, theta_o = topic_distributions(z, params)
        t_s, t_o = topic_representations(theta_s, theta_o,
                                         params["phi_s"], params["phi_o"])
        return TopicState(mu, logvar, z, theta_s, theta_o, t_s, t_o)
    theta = topic_distributions(z, params)
    t = ad.matmul(theta, params["phi"])
    return TopicState(mu, logvar, z, theta, None, t, None)


def _reconstruction(counts: np.ndarray, theta: Tensor, beta: Tensor) -> Tensor:
    """-sum_n log p(w_n | beta, theta) with bag counts as multiplicities.

    Rows with all-zero counts contribute exactly zero, including their
    gradient, which is what routes the split losses to exactly one group.
    """
    word_probs = ad.matmul(theta, beta)
    return -ad.tsum(ad.tensor(counts) * ad.log(word_probs))


def satm_loss(d_counts, s_counts, state: TopicState,
              params: TopicModelParams) -> Tensor:
    """Split-generative loss, summed over the batch rows.

    loss = -sum log p(w^s | beta_s, theta_s)
           -sum log p(w^{d-s} | beta_o, theta_o)
           + KL[q(z|d) || N(0, I)]
    """
    if params.mode != "satm":
        raise ValueError("satm_loss needs split-mode parameters")
    d = _as_matrix(d_counts)
    s = _as_matrix(s_counts)
    if d.shape != s.shape:
        raise ValueError("d and s count matrices must align")
    rest = d - s
    if (s < 0).any() or (rest < 0).any():
        raise ValueError("s must satisfy 0 <= s <= d elementwise")
    beta_s = topic_word_matrix(params["phi_s"], params["e"])
    beta_o = topic_word_matrix(params["phi_o"], params["e"])
    rec_s = _reconstruction(s, state.theta_s, beta_s)
    rec_o = _reconstruction(rest, state.theta_o, beta_o)
    return rec_s + rec_o + gaussian_kl(state.mu, state.logvar)


def ntm_loss(d_counts, state: TopicState, params: TopicModelParams) -> Tensor:
    """Single-group loss over the whole bag, summed over the batch rows."""
    if params.mode != "ntm":
        raise ValueError("ntm_loss needs plain-mode parameters")
    d = _as_matrix(d_counts)
    beta = topic_word_matrix(params["phi"], params["e"])
    rec = _reconstruction(d, state.theta_s, beta)
    return rec + gaussian_kl(state.mu, state.logvar)


def infer_multi_role(d_bow, d_c_bow, d_a_bow,
                     params_by_role: dict[str, TopicModelParams],
                     rng=None) -> MultiRoleTopicState:
    """Run the three role models on their bags.

    `params_by_role` maps 'dialogue'/'customer'/'agent' to parameter sets.
    A zero bag (e.g. a dialogue without agent turns) is inferred from the
    encoder bias alone, which is the degenerate-input policy.
    """
    states = {}
    for role, bow in (("dialogue", d_bow), ("customer", d_c_bow),
                      ("agent", d_a_bow)):
        states[role] = infer_state(bow, params_by_role[role], rng=rng)
    return MultiRoleTopicState(dialogue=states["dialogue"],
                               customer=states["customer"],
                               agent=states["agent"])


def top_words(beta: np.ndarray, topic: int, k: int, vocab) -> list[tuple[str, float]]:
    """Top-k (token, probability) of one topic row, ties broken lexically."""
    if not (0 <= topic < beta.shape[0]):
        raise IndexError(f"topic {topic} out of range for {beta.shape[0]} topics")
    if k > len(vocab.bow_tokens):
        raise ValueError(f"k={k} exceeds |V|={len(vocab.bow_tokens)}")
    row = beta[topic]
    order = sorted(range(len(row)), key=lambda i: (-row[i], vocab.bow_tokens[i]))
    return [(vocab.bow_tokens[i], float(row[i])) for i in order[:k]]


def beta_matrices(params: TopicModelParams) -> dict[str, np.ndarray]:
    """Current topic-word matrices as plain arrays, keyed by group name."""
    with ad.no_grad():
        if params.mode == "satm":
            return {
                "informative": topic_word_matrix(params["phi_s"], params["e"]).data,
                "other": topic_word_matrix(params["phi_o"], params["e"]).data,
            }
        return {"general": topic_word_matrix(params["phi"], params["e"]).data}


def export_topic_words(params: TopicModelParams, vocab, k: int, path) -> None:
    """CSV rows (group, topic id, rank, token, probability)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "topic", "rank", "token", "probability"])
        for group, beta in beta_matrices(params).items():
            for topic in range(beta.shape[0]):
                for rank, (token, prob) in enumerate(
                        top_words(beta, topic, k, vocab), start=1):
                    w.writerow([group, topic, rank, token, f"{prob:.10g}"])


def export_topic_vectors(params: TopicModelParams, path) -> None:
    """CSV rows (group, topic id, H floats) for external 2-D projection."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        header = ["group", "topic"] + [f"h{i}" for i in range(params.embed_dim)]
        w.writerow(header)
        if params.mode == "satm":
            parts = [("informative", params["phi_s"].data),
                     ("other", params["phi_o"].data)]
        else:
            parts = [("general", params["phi"].data)]
        for group, phi in parts:
            for topic in range(phi.shape[0]):
                w.writerow([group, topic] + [f"{x:.17g}" for x in phi[topic]])


def load_topic_vectors(path) -> dict[str, np.ndarray]:
    """Parse an export back into group -> [K_part, H] arrays."""
    rows: dict[str, list[list[float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            rows.setdefault(rec[0], []).append([float(x) for x in rec[2:]])
    return {g: np.asarray(v, dtype=np.float64) for g, v in rows.items()}
