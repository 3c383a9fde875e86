"""Training: greedy selection oracle, pre-training, policy-gradient
bridging, and the joint loss.

Phase schedule: extractor pre-training (pointer cross-entropy against the
oracle index sequence), refiner pre-training (teacher forcing on the gold
summary given the oracle utterances), topic-model warmup (topic losses
only), then the joint phase, where every batch minimizes

    L  =  L_S + lambda * (L_T^customer + L_T^agent + L_T^dialogue)

in a single backward pass.  L_S combines the self-critical policy-gradient
term for the extractor (sampled rollout reward minus greedy rollout reward,
weighting the sampled action log-probabilities) with the teacher-forced
refiner cross-entropy on the greedy extraction, so gradients reach the
topic pathway through both decoders' attention sites even at lambda = 0.

Topic states are sampled (one epsilon per dialogue per step) in the warmup
and joint phases and deterministic (z = mu) in the summarizer-only
pre-training phases and at evaluation time.

Everything is seeded and single-threaded: identical configs produce
bit-identical logs and checkpoints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import corpus as cp
from .metrics import evaluate_corpus, metric_fn
from .optim import Adam
from .summarizer import SummarizerConfig, SummarizerModel
from .topic import (MultiRoleTopicState, TopicModelParams, infer_state,
                    ntm_loss, satm_loss)

logger = logging.getLogger(__name__)

TOPIC_ROLES = ("dialogue", "customer", "agent")


@dataclass
class TrainConfig:
    # topic models
    topic_mode: str = "satm"           # satm | ntm
    k_informative: int = 3
    k_other: int = 2
    topic_hidden: int = 32
    topic_dim: int = 16                # width of phi rows and word vectors
    latent: int | None = None          # defaults to total topic count
    # summarizer
    dmodel: int = 32
    nheads: int = 2
    ff: int = 64
    word_layers: int = 1
    utt_layers: int = 1
    ext_layers: int = 1
    ref_layers: int = 1
    max_word_len: int = 16
    max_utts: int = 32
    max_extract: int = 2
    max_summary_len: int = 12
    min_summary_len: int = 1
    # optimization
    lr_pretrain: float = 2e-3
    lr_topic: float = 5e-3
    lr_joint: float = 5e-4
    clip_norm: float = 2.0
    batch_size: int = 16
    epochs_extractor: int = 3
    epochs_refiner: int = 5
    epochs_topic_warmup: int = 40
    epochs_joint: int = 3
    # behaviour
    lambda_topic: float = 1.0
    reward_metric: str = "rouge-l"
    oracle_metric: str = "rouge-1"
    topics_enabled: bool = True        # False: tau zeroed and lambda forced 0
    roles_enabled: tuple[str, ...] = cp.ROLES
    seed: int = 0
    grad_check_mode: bool = False      # float64 everywhere; kept for reporting

    def __post_init__(self):
        if self.lambda_topic < 0:
            raise ValueError("lambda_topic must be >= 0")
        if self.k_informative < 1 or self.k_other < 1:
            raise ValueError("topic group sizes must be >= 1")
        if self.topic_mode not in ("satm", "ntm"):
            raise ValueError(f"unknown topic mode {self.topic_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roles_enabled"] = list(self.roles_enabled)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "roles_enabled" in d:
            d["roles_enabled"] = tuple(d["roles_enabled"])
        return cls(**d)

    def summarizer_config(self) -> SummarizerConfig:
        return SummarizerConfig(
            dmodel=self.dmodel, nheads=self.nheads, ff=self.ff,
            word_layers=self.word_layers, utt_layers=self.utt_layers,
            ext_layers=self.ext_layers, ref_layers=self.ref_layers,
            max_word_len=self.max_word_len, max_utts=self.max_utts,
            max_extract=self.max_extract,
            max_summary_len=self.max_summary_len,
            min_summary_len=self.min_summary_len, topic_dim=self.topic_dim)


@dataclass
class RewardRecord:
    step_rewards: list[float]
    baseline: float
    advantage: float

    def __post_init__(self):
        reward = self.step_rewards[-1] if self.step_rewards else 0.0
        if abs(self.advantage - (reward - self.baseline)) > 1e-12:
            raise ValueError("advantage must equal reward - baseline")


def ext_oracle(dialogue: cp.Dialogue, metric: str = "rouge-1",
               max_count: int | None = None):
    """Greedy utterance selection maximizing the metric against the summary.

    Repeatedly adds the utterance that most increases the score of the
    concatenated selection (in dialogue order); stops when no utterance
    strictly improves it or `max_count` is reached.  Returns (indices in
    dialogue order, final score); the index set may be empty.
    """
    if dialogue.summary is None:
        raise cp.CorpusError(f"dialogue {dialogue.id!r} has no summary")
    score_fn = metric_fn(metric)
    summary = list(dialogue.summary)
    utts = [list(u.tokens) for u in dialogue.utterances]
    limit = max_count if max_count is not None else len(utts)

    selected: list[int] = []
    best_score = 0.0
    while len(selected) < limit:
        best_idx, best_new = None, best_score
        for i in range(len(utts)):
            if i in selected:
                continue
            cand_idx = sorted(selected + [i])
            cand = [t for j in cand_idx for t in utts[j]]
            s = score_fn(cand, summary)
            if s > best_new + 1e-12:  # strict improvement; first index wins ties
                best_idx, best_new = i, s
        if best_idx is None:
            break
        selected.append(best_idx)
        best_score = best_new
    return sorted(selected), best_score


def best_single_utterance(dialogue: cp.Dialogue, metric: str = "rouge-1"):
    """Brute-force best single utterance (oracle lower bound)."""
    score_fn = metric_fn(metric)
    summary = list(dialogue.summary)
    scores = [score_fn(list(u.tokens), summary) for u in dialogue.utterances]
    best = int(np.argmax(scores))
    return best, float(scores[best])


@dataclass
class DialogueBundle:
    """Preprocessed per-dialogue training inputs."""

    dialogue: cp.Dialogue
    d: np.ndarray
    d_customer: np.ndarray
    d_agent: np.ndarray
    s: np.ndarray
    s_customer: np.ndarray
    s_agent: np.ndarray
    oracle_indices: list[int]
    oracle_score: float
    summary_ids: list[int]


def prepare_bundle(dialogue: cp.Dialogue, vocab: cp.Vocabulary,
                   config: TrainConfig) -> DialogueBundle:
    d, d_c, d_a = cp.bags_for_dialogue(dialogue, vocab)
    size = vocab.bow_size
    if dialogue.summary is not None:
        s = cp.summary_subset(dialogue, vocab, bag=d)
        s_c = cp.summary_subset_for_bag(dialogue.summary, d_c, vocab)
        s_a = cp.summary_subset_for_bag(dialogue.summary, d_a, vocab)
        oracle_indices, oracle_score = ext_oracle(
            dialogue, config.oracle_metric, config.max_extract)
        if not oracle_indices:
            oracle_indices = [0]  # pseudo-label fallback
        summary_ids = vocab.seq_ids(
            dialogue.summary[: config.max_summary_len])
    else:
        s = cp.BagOfWords(counts={}, total=0)
        s_c = s_a = s
        oracle_indices, oracle_score, summary_ids = [0], 0.0, []
    return DialogueBundle(
        dialogue=dialogue, d=d.to_dense(size), d_customer=d_c.to_dense(size),
        d_agent=d_a.to_dense(size), s=s.to_dense(size),
        s_customer=s_c.to_dense(size), s_agent=s_a.to_dense(size),
        oracle_indices=oracle_indices, oracle_score=oracle_score,
        summary_ids=summary_ids)


def batches_by_length(bundles, batch_size: int, rng=None):
    """Group dialogues with similar utterance counts to limit padding waste;
    batch order is shuffled per call when an rng is supplied."""
    order = sorted(range(len(bundles)),
                   key=lambda i: (len(bundles[i].dialogue.utterances),
                                  bundles[i].dialogue.id))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None and len(chunks) > 1:
        rng.shuffle(chunks)
    return [[bundles[i] for i in chunk] for chunk in chunks]


class Trainer:
    """Owns all parameters and runs the phase schedule."""

    def __init__(self, train_dialogues, vocab: cp.Vocabulary,
                 config: TrainConfig, log_path=None):
        self.config = config
        self.vocab = vocab
        self.rng = np.random.default_rng(config.seed)
        self.summarizer = SummarizerModel(vocab, config.summarizer_config(),
                                          rng=self.rng)
        self.topics: dict[str, TopicModelParams] = {}
        for role in TOPIC_ROLES:
            self.topics[role] = TopicModelParams(
                vocab_size=vocab.bow_size, mode=config.topic_mode,
                k_informative=config.k_informative, k_other=config.k_other,
                hidden=config.topic_hidden, embed_dim=config.topic_dim,
                latent=config.latent, rng=self.rng)
        self.bundles = [prepare_bundle(d, vocab, config)
                        for d in train_dialogues]
        self.step = 0
        self.phase = "init"
        self.joint_loss_history: list[float] = []
        self._log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    # -- bookkeeping ---------------------------------------------------------

    def close(self):
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = None

    def log(self, **fields):
        line = " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())
        if self._log_fh:
            self._log_fh.write(line + "\n")
            self._log_fh.flush()
        logger.debug("%s", line)

    def all_parameters(self) -> dict[str, Tensor]:
        params = {f"summ.{k}": v
                  for k, v in self.summarizer.parameters().items()}
        for role, tm in self.topics.items():
            params.update({f"topic.{role}.{k}": v
                           for k, v in tm.parameters().items()})
        return params

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.summarizer.load_arrays(
            {k[len("summ."):]: v for k, v in arrays.items()
             if k.startswith("summ.")})
        for role, tm in self.topics.items():
            prefix = f"topic.{role}."
            tm.load_arrays({k[len(prefix):]: v for k, v in arrays.items()
                            if k.startswith(prefix)})

    # -- topic plumbing --------------------------------------------------------

    def _multi_role_state(self, bundle: DialogueBundle,
                          rng=None) -> MultiRoleTopicState | None:
        if not self.config.topics_enabled:
            return None
        states = {}
        for role, bow in (("dialogue", bundle.d),
                          ("customer", bundle.d_customer),
                          ("agent", bundle.d_agent)):
            states[role] = infer_state(bow, self.topics[role], rng=rng)
        return MultiRoleTopicState(**states)

    def _topic_losses(self, bundle: DialogueBundle,
                      state: MultiRoleTopicState):
        pairs = (("dialogue", bundle.d, bundle.s, state.dialogue),
                 ("customer", bundle.d_customer, bundle.s_customer,
                  state.customer),
                 ("agent", bundle.d_agent, bundle.s_agent, state.agent))
        losses = {}
        for role, d, s, st in pairs:
            tm = self.topics[role]
            if tm.mode == "satm":
                losses[role] = satm_loss(d, s, st, tm)
            else:
                losses[role] = ntm_loss(d, st, tm)
        return losses

    # -- phases ----------------------------------------------------------------

    def train(self, checkpoint_cb=None) -> None:
        """Run the full phase schedule.

        `checkpoint_cb(trainer)` is invoked after every epoch of every
        phase (the CLI wires checkpoint writing through it).
        """
        cb = checkpoint_cb or (lambda trainer: None)
        cfg = self.config
        opt = Adam(self.summarizer.parameters(), lr=cfg.lr_pretrain,
                   clip_norm=cfg.clip_norm)
        for epoch in range(cfg.epochs_extractor):
            self._run_extractor_epoch(opt, epoch)
            cb(self)
        opt = Adam(self.summarizer.parameters(), lr=cfg.lr_pretrain,
                   clip_norm=cfg.clip_norm)
        for epoch in range(cfg.epochs_refiner):
            self._run_refiner_epoch(opt, epoch)
            cb(self)
        if cfg.topics_enabled:
            topic_params = {}
            for role, tm in self.topics.items():
                topic_params.update({f"{role}.{k}": v
                                     for k, v in tm.parameters().items()})
            opt = Adam(topic_params, lr=cfg.lr_topic, clip_norm=cfg.clip_norm)
            for epoch in range(cfg.epochs_topic_warmup):
                self._run_topic_warmup_epoch(opt, epoch)
                cb(self)
        opt = Adam(self.all_parameters(), lr=cfg.lr_joint,
                   clip_norm=cfg.clip_norm)
        for epoch in range(cfg.epochs_joint):
            self._run_joint_epoch(opt, epoch)
            cb(self)
        self.phase = "done"

    def continue_joint(self, checkpoint_cb=None) -> None:
        """Resume: run `epochs_joint` more joint epochs on loaded weights."""
        cb = checkpoint_cb or (lambda trainer: None)
        cfg = self.config
        opt = Adam(self.all_parameters(), lr=cfg.lr_joint,
                   clip_norm=cfg.clip_norm)
        for epoch in range(cfg.epochs_joint):
            self._run_joint_epoch(opt, epoch)
            cb(self)
        self.phase = "done"

    def _run_extractor_epoch(self, opt: Adam, epoch: int) -> float:
        self.phase = "extractor"
        total, count = 0.0, 0
        for batch in batches_by_length(self.bundles, self.config.batch_size,
                                       self.rng):
            losses = []
            for b in batch:
                topics = self._multi_role_state(b)  # deterministic z = mu
                utt_states, _, roles = self.summarizer.encode_dialogue(
                    b.dialogue)
                losses.append(self.summarizer.extractor_nll(
                    utt_states, roles, topics, b.oracle_indices,
                    self.config.roles_enabled))
            loss = _mean_losses(losses)
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.step += 1
            total += loss.item() * len(batch)
            count += len(batch)
            self.log(phase=self.phase, epoch=epoch, step=self.step,
                     loss_ext=loss.item())
        return total / max(count, 1)

    def _run_refiner_epoch(self, opt: Adam, epoch: int) -> float:
        self.phase = "refiner"
        total, count = 0.0, 0
        for batch in batches_by_length(self.bundles, self.config.batch_size,
                                       self.rng):
            losses = []
            for b in batch:
                topics = self._multi_role_state(b)
                _, word_states, roles = self.summarizer.encode_dialogue(
                    b.dialogue)
                memory, mem_roles = self.summarizer.build_refiner_memory(
                    word_states, roles, b.oracle_indices)
                nll, n = self.summarizer.refiner_nll(
                    memory, mem_roles, topics, b.summary_ids,
                    self.config.roles_enabled)
                losses.append(nll * (1.0 / n))
            loss = _mean_losses(losses)
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.step += 1
            total += loss.item() * len(batch)
            count += len(batch)
            self.log(phase=self.phase, epoch=epoch, step=self.step,
                     loss_ref=loss.item(),
                     ppl=float(np.exp(min(loss.item(), 50.0))))
        return total / max(count, 1)

    def _run_topic_warmup_epoch(self, opt: Adam, epoch: int) -> float:
        self.phase = "topic"
        d = np.stack([b.d for b in self.bundles])
        d_c = np.stack([b.d_customer for b in self.bundles])
        d_a = np.stack([b.d_agent for b in self.bundles])
        s = np.stack([b.s for b in self.bundles])
        s_c = np.stack([b.s_customer for b in self.bundles])
        s_a = np.stack([b.s_agent for b in self.bundles])
        losses = {}
        total = None
        for role, dd, ss in (("dialogue", d, s), ("customer", d_c, s_c),
                             ("agent", d_a, s_a)):
            tm = self.topics[role]
            state = infer_state(dd, tm, rng=self.rng)
            loss = (satm_loss(dd, ss, state, tm) if tm.mode == "satm"
                    else ntm_loss(dd, state, tm)) * (1.0 / len(self.bundles))
            losses[role] = loss.item()
            total = loss if total is None else total + loss
        opt.zero_grad()
        total.backward()
        opt.step()
        self.step += 1
        self.log(phase=self.phase, epoch=epoch, step=self.step,
                 loss_t=losses["dialogue"], loss_tc=losses["customer"],
                 loss_ta=losses["agent"])
        return total.item()

    def rl_step(self, bundle: DialogueBundle,
                topics: MultiRoleTopicState | None):
        """Self-critical policy-gradient contribution for one dialogue.

        Returns (L_S tensor, RewardRecord, sampled reward).  The sampled
        rollout's action log-probs are weighted by (sampled reward - greedy
        rollout reward); the refiner keeps learning through a teacher-forced
        term on the greedy extraction.
        """
        cfg = self.config
        reward = metric_fn(cfg.reward_metric)
        gold = list(bundle.dialogue.summary or ())
        utt_states, word_states, roles = self.summarizer.encode_dialogue(
            bundle.dialogue)

        with ad.no_grad():
            greedy = self.summarizer.extract_utterances(
                utt_states.detach(), roles, _detached_topics(topics),
                mode="greedy", roles_enabled=cfg.roles_enabled)
            greedy_tokens = self._decode_tokens(word_states, roles,
                                                greedy.indices, topics)
        baseline = reward(greedy_tokens, gold)

        sampled = self.summarizer.extract_utterances(
            utt_states, roles, topics, mode="sample", rng=self.rng,
            roles_enabled=cfg.roles_enabled)
        if sampled.indices == greedy.indices:
            sample_tokens = greedy_tokens
        else:
            with ad.no_grad():
                sample_tokens = self._decode_tokens(word_states, roles,
                                                    sampled.indices, topics)
        sample_reward = reward(sample_tokens, gold)
        advantage = sample_reward - baseline

        logp_sum = None
        for lp in sampled.log_probs:
            logp_sum = lp if logp_sum is None else logp_sum + lp
        l_rl = logp_sum * (-advantage) if logp_sum is not None else None

        memory, mem_roles = self.summarizer.build_refiner_memory(
            word_states, roles, greedy.indices)
        nll, n = self.summarizer.refiner_nll(memory, mem_roles, topics,
                                             bundle.summary_ids,
                                             cfg.roles_enabled)
        l_s = nll * (1.0 / n)
        if l_rl is not None:
            l_s = l_s + l_rl
        record = RewardRecord(
            step_rewards=[sample_reward] * max(len(sampled.log_probs), 1),
            baseline=baseline, advantage=advantage)
        return l_s, record, sample_reward

    def _run_joint_epoch(self, opt: Adam, epoch: int) -> float:
        self.phase = "joint"
        cfg = self.config
        lam = cfg.lambda_topic if cfg.topics_enabled else 0.0
        epoch_loss, epoch_n = 0.0, 0
        for batch in batches_by_length(self.bundles, cfg.batch_size, self.rng):
            losses, rewards = [], []
            sums = {"loss_s": 0.0, "loss_t": 0.0, "loss_tc": 0.0,
                    "loss_ta": 0.0}
            for b in batch:
                topics = self._multi_role_state(b, rng=self.rng)
                l_s, record, r = self.rl_step(b, topics)
                total = l_s
                if topics is not None and lam > 0.0:
                    tl = self._topic_losses(b, topics)
                    total = total + (tl["dialogue"] + tl["customer"]
                                     + tl["agent"]) * lam
                    sums["loss_t"] += tl["dialogue"].item()
                    sums["loss_tc"] += tl["customer"].item()
                    sums["loss_ta"] += tl["agent"].item()
                sums["loss_s"] += l_s.item()
                losses.append(total)
                rewards.append(r)
            loss = _mean_losses(losses)
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.step += 1
            n = len(batch)
            self.log(phase=self.phase, epoch=epoch, step=self.step,
                     loss=loss.item(), loss_s=sums["loss_s"] / n,
                     loss_t=sums["loss_t"] / n, loss_tc=sums["loss_tc"] / n,
                     loss_ta=sums["loss_ta"] / n,
                     reward_mean=float(np.mean(rewards)))
            epoch_loss += loss.item() * n
            epoch_n += n
        mean_loss = epoch_loss / max(epoch_n, 1)
        self.joint_loss_history.append(mean_loss)
        return mean_loss

    # -- inference --------------------------------------------------------------

    def _decode_tokens(self, word_states, roles, indices,
                       topics) -> list[str]:
        memory, mem_roles = self.summarizer.build_refiner_memory(
            word_states, roles, indices)
        ids, _ = self.summarizer.refine(memory, mem_roles, topics,
                                        roles_enabled=self.config.roles_enabled)
        return [self.vocab.seq_tokens[i] for i in ids]

    def summarize_dialogue(self, dialogue: cp.Dialogue, beam: int = 1,
                           collect_trace: bool = False):
        """Greedy-extract then refine; returns (tokens, extract result)."""
        bundle_bags = cp.bags_for_dialogue(dialogue, self.vocab)
        d, d_c, d_a = (b.to_dense(self.vocab.bow_size) for b in bundle_bags)
        with ad.no_grad():
            topics = None
            if self.config.topics_enabled:
                states = {role: infer_state(bow, self.topics[role])
                          for role, bow in (("dialogue", d), ("customer", d_c),
                                            ("agent", d_a))}
                topics = MultiRoleTopicState(**states)
            utt_states, word_states, roles = self.summarizer.encode_dialogue(
                dialogue)
            extract = self.summarizer.extract_utterances(
                utt_states, roles, topics, mode="greedy",
                collect_trace=collect_trace,
                roles_enabled=self.config.roles_enabled)
            memory, mem_roles = self.summarizer.build_refiner_memory(
                word_states, roles, extract.indices)
            ids, _ = self.summarizer.refine(
                memory, mem_roles, topics, beam=beam,
                roles_enabled=self.config.roles_enabled)
        return [self.vocab.seq_tokens[i] for i in ids], extract

    def extractive_tokens(self, dialogue: cp.Dialogue) -> list[str]:
        """The extractor's own selection, concatenated (pre-refinement)."""
        bags = cp.bags_for_dialogue(dialogue, self.vocab)
        d, d_c, d_a = (b.to_dense(self.vocab.bow_size) for b in bags)
        with ad.no_grad():
            topics = None
            if self.config.topics_enabled:
                states = {role: infer_state(bow, self.topics[role])
                          for role, bow in (("dialogue", d), ("customer", d_c),
                                            ("agent", d_a))}
                topics = MultiRoleTopicState(**states)
            utt_states, _, roles = self.summarizer.encode_dialogue(dialogue)
            extract = self.summarizer.extract_utterances(
                utt_states, roles, topics, mode="greedy",
                roles_enabled=self.config.roles_enabled)
        return [t for i in sorted(extract.indices)
                for t in dialogue.utterances[i].tokens]

    def evaluate(self, dialogues, beam: int = 1, mode: str = "whitespace"):
        outputs, refs, ids = [], [], []
        for d in dialogues:
            tokens, _ = self.summarize_dialogue(d, beam=beam)
            outputs.append(tokens)
            refs.append(list(d.summary or ()))
            ids.append(d.id)
        return evaluate_corpus(outputs, refs, mode=mode, ids=ids)


def _detached_topics(topics: MultiRoleTopicState | None):
    if topics is None:
        return None

    def detach_state(st):
        return type(st)(
            mu=st.mu.detach(), logvar=st.logvar.detach(), z=st.z.detach(),
            theta_s=st.theta_s.detach() if st.theta_s is not None else None,
            theta_o=st.theta_o.detach() if st.theta_o is not None else None,
            t_s=st.t_s.detach(),
            t_o=st.t_o.detach() if st.t_o is not None else None)

    return MultiRoleTopicState(dialogue=detach_state(topics.dialogue),
                               customer=detach_state(topics.customer),
                               agent=detach_state(topics.agent))


def _mean_losses(losses) -> Tensor:
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / len(losses))


def trainer_from_checkpoint(ckpt) -> Trainer:
    """Rebuild a ready-to-infer trainer from a loaded checkpoint."""
    cfg_dict = ckpt.config.get("train", ckpt.config)
    config = TrainConfig.from_dict(cfg_dict)
    trainer = Trainer([], ckpt.vocab, config)
    trainer.load_arrays(ckpt.params)
    trainer.step = ckpt.step
    trainer.phase = ckpt.phase
    return trainer


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)
