"""Command-line entry point.

Subcommands: gen-data, train, summarize, evaluate, inspect-topics,
export-attention, export-topic-vectors, sweep.  Exit codes: 0 success,
1 validation error, 2 runtime failure.  Every training-style run writes
its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import dataclasses

import numpy as np
import yaml

from . import corpus as cp
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint)
from .config import (ConfigError, RunConfig, apply_overrides,
                     load_config_file, write_resolved_config)
from .metrics import evaluate_corpus
from .summarizer import write_attention_csv
from .synthetic import (SyntheticSpec, SyntheticSpecError, generate_synthetic,
                        write_truth_sidecar)
from .topic import export_topic_vectors, export_topic_words
from .training import TrainConfig, Trainer, trainer_from_checkpoint

VALIDATION_ERRORS = (ConfigError, SyntheticSpecError, CheckpointError,
                     cp.CorpusError, FileNotFoundError)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        if f.name == "roles_enabled":
            p.add_argument("--roles-enabled", type=str, default=None,
                           help="comma list of roles with topic models "
                                "(customer,agent)")
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            p.add_argument(flag, type=_parse_bool, default=None,
                           metavar="BOOL")
        elif isinstance(f.default, float):
            p.add_argument(flag, type=float, default=None)
        elif isinstance(f.default, int) or f.name == "latent":
            p.add_argument(flag, type=int, default=None)
        else:
            p.add_argument(flag, type=str, default=None)


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def _run_overrides(args) -> dict:
    keys = ("corpus_dir", "train_path", "dev_path", "test_path",
            "stopwords_path", "token_mode", "min_count", "beam", "bleu_mean",
            "out_dir")
    out = {k: getattr(args, k, None) for k in keys}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "roles_enabled":
            raw = getattr(args, "roles_enabled", None)
            if raw is not None:
                out["roles_enabled"] = tuple(
                    r.strip() for r in raw.split(",") if r.strip())
            continue
        out[f.name] = getattr(args, f.name, None)
    return out


def _resolve_config(args) -> RunConfig:
    cfg = load_config_file(args.config) if getattr(args, "config", None) \
        else RunConfig()
    return apply_overrides(cfg, _run_overrides(args))


def _load_stopwords(cfg: RunConfig):
    if cfg.stopwords_path:
        return cp.load_stopwords(cfg.stopwords_path)
    if cfg.token_mode == "char":
        return cp.DEFAULT_STOPWORDS_CHAR
    return cp.DEFAULT_STOPWORDS_WHITESPACE


def _join_tokens(tokens, mode: str) -> str:
    return ("" if mode == "char" else " ").join(tokens)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        num_groups=args.groups, words_per_group=args.words_per_group,
        noise_pool_size=args.noise_pool, num_dialogues=args.dialogues,
        utterances_per_dialogue=args.utterances,
        active_groups=args.active_groups, noise_rate=args.noise_rate,
        tokens_per_utterance=args.tokens_per_utterance,
        summary_tokens=args.summary_tokens, seed=args.seed)
    ratios = [float(x) for x in args.split.split(",")]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ConfigError("--split needs three nonnegative numbers, e.g. 90,5,5")
    dialogues, truth = generate_synthetic(spec)
    n = len(dialogues)
    total = sum(ratios)
    n_train = int(n * ratios[0] / total)
    n_dev = int(n * ratios[1] / total)
    splits = {
        "train.jsonl": dialogues[:n_train],
        "dev.jsonl": dialogues[n_train:n_train + n_dev],
        "test.jsonl": dialogues[n_train + n_dev:],
    }
    os.makedirs(args.out_dir, exist_ok=True)
    for name, part in splits.items():
        cp.save_corpus(part, os.path.join(args.out_dir, name))
    write_truth_sidecar(truth, os.path.join(args.out_dir, "truth.json"))
    with open(os.path.join(args.out_dir, "gen-data.resolved.yaml"), "w",
              encoding="utf-8") as fh:
        yaml.safe_dump({"spec": spec.to_dict(), "split": ratios}, fh,
                       sort_keys=True)
    print(f"wrote {n_train}/{n_dev}/{n - n_train - n_dev} dialogues to "
          f"{args.out_dir}")
    return 0


def _checkpoint_writer(cfg: RunConfig, path):
    def write(trainer: Trainer) -> None:
        save_checkpoint(path, config=cfg.to_dict(), vocab=trainer.vocab,
                        params={k: v.data for k, v in
                                trainer.all_parameters().items()},
                        phase=trainer.phase, step=trainer.step)
    return write


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    cfg.validate_for_training()
    train_path, dev_path, _ = cfg.resolved_paths()
    os.makedirs(cfg.out_dir, exist_ok=True)

    train_dialogues = cp.load_corpus(train_path, cfg.token_mode)
    if not train_dialogues:
        raise ConfigError(f"training corpus {train_path} is empty")

    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.tsck")
    log_path = os.path.join(cfg.out_dir, "train.log")
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        vocab = ckpt.vocab
        trainer = Trainer(train_dialogues, vocab, cfg.train,
                          log_path=log_path)
        trainer.load_arrays(ckpt.params)
        trainer.step = ckpt.step
        writer = _checkpoint_writer(cfg, ckpt_path)
        trainer.continue_joint(writer)
    else:
        vocab = cp.build_vocab(train_dialogues, _load_stopwords(cfg),
                               cfg.min_count)
        trainer = Trainer(train_dialogues, vocab, cfg.train,
                          log_path=log_path)
        writer = _checkpoint_writer(cfg, ckpt_path)
        trainer.train(writer)
    writer(trainer)
    trainer.close()
    write_resolved_config(cfg, os.path.join(cfg.out_dir,
                                            "config.resolved.yaml"))

    if dev_path and os.path.exists(dev_path):
        dev = cp.load_corpus(dev_path, cfg.token_mode)
        if dev:
            report = trainer.evaluate(dev, beam=cfg.beam, mode=cfg.token_mode)
            report.write_report(os.path.join(cfg.out_dir, "dev.report.txt"))
            for line in report.to_lines():
                print("dev." + line)
    print(f"checkpoint written to {ckpt_path}")
    return 0


def cmd_summarize(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trainer = trainer_from_checkpoint(ckpt)
    token_mode = ckpt.config.get("token_mode", "whitespace")
    dialogues = cp.load_corpus(args.input, token_mode)
    beam = args.beam if args.beam is not None else 1
    with open(args.output, "w", encoding="utf-8") as fh:
        for d in dialogues:
            tokens, _ = trainer.summarize_dialogue(d, beam=beam)
            fh.write(json.dumps(
                {"id": d.id, "summary": _join_tokens(tokens, token_mode)},
                ensure_ascii=False) + "\n")
    print(f"wrote {len(dialogues)} summaries to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    refs_dialogues = cp.load_corpus(args.references, args.token_mode)
    refs = {d.id: _join_tokens(list(d.summary or ()), args.token_mode)
            for d in refs_dialogues}
    outputs, references, ids = [], [], []
    with open(args.outputs, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["id"] not in refs:
                raise ConfigError(
                    f"output id {rec['id']!r} missing from references")
            outputs.append(rec["summary"])
            references.append(refs[rec["id"]])
            ids.append(rec["id"])
    report = evaluate_corpus(outputs, references, mode=args.token_mode,
                             bleu_mean=args.bleu_mean, ids=ids)
    for line in report.to_lines():
        print(line)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        report.write_report(os.path.join(args.out_dir, "report.txt"))
        report.write_csv(os.path.join(args.out_dir, "per_dialogue.csv"))
    return 0


def cmd_inspect_topics(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trainer = trainer_from_checkpoint(ckpt)
    if args.role not in trainer.topics:
        raise ConfigError(f"unknown topic role {args.role!r}; choose from "
                          f"{sorted(trainer.topics)}")
    export_topic_words(trainer.topics[args.role], trainer.vocab, args.k,
                       args.out)
    print(f"wrote top-{args.k} topic words to {args.out}")
    return 0


def cmd_export_topic_vectors(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trainer = trainer_from_checkpoint(ckpt)
    if args.role not in trainer.topics:
        raise ConfigError(f"unknown topic role {args.role!r}; choose from "
                          f"{sorted(trainer.topics)}")
    export_topic_vectors(trainer.topics[args.role], args.out)
    print(f"wrote topic vectors to {args.out}")
    return 0


def cmd_export_attention(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    trainer = trainer_from_checkpoint(ckpt)
    token_mode = ckpt.config.get("token_mode", "whitespace")
    dialogues = cp.load_corpus(args.input, token_mode)[: args.limit]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dialogue", "step", "element", "alpha_q", "alpha_t",
                    "alpha", "p_sel"])
        for d in dialogues:
            _, extract = trainer.summarize_dialogue(d, collect_trace=True)
            for step, j, aq, at, a, p in extract.trace.rows():
                w.writerow([d.id, step, j, f"{aq:.10g}", f"{at:.10g}",
                            f"{a:.10g}", f"{p:.10g}"])
    print(f"wrote attention traces for {len(dialogues)} dialogues to "
          f"{args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    cfg.validate_for_training()
    train_path, _, test_path = cfg.resolved_paths()
    if not test_path or not os.path.exists(test_path):
        raise ConfigError("sweep needs a test split next to the train split")
    values = [int(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    train_dialogues = cp.load_corpus(train_path, cfg.token_mode)
    test_dialogues = cp.load_corpus(test_path, cfg.token_mode)
    vocab = cp.build_vocab(train_dialogues, _load_stopwords(cfg),
                           cfg.min_count)
    os.makedirs(cfg.out_dir, exist_ok=True)

    rows = []
    k_total = cfg.train.k_informative + cfg.train.k_other
    for value in values:
        scores = {"rouge1": [], "rouge2": [], "rougeL": [], "bleu": []}
        for seed in seeds:
            tc = TrainConfig.from_dict(cfg.train.to_dict())
            tc.seed = seed
            if args.param == "k":
                tc.k_informative = max(value // 2, 1)
                tc.k_other = max(value - tc.k_informative, 1)
            elif args.param == "ko":
                if value >= k_total:
                    raise ConfigError(
                        f"ko={value} must be below the total topic count "
                        f"{k_total}")
                tc.k_other = value
                tc.k_informative = k_total - value
            else:
                raise ConfigError("--param must be 'k' or 'ko'")
            tc.latent = None
            trainer = Trainer(train_dialogues, vocab, tc)
            trainer.train()
            report = trainer.evaluate(test_dialogues, beam=cfg.beam,
                                      mode=cfg.token_mode)
            for m in scores:
                scores[m].append(report.mean(m))
            trainer.close()
        rows.append([args.param, value, len(seeds),
                     float(np.mean(scores["rouge1"])),
                     float(np.var(scores["rouge1"])),
                     float(np.mean(scores["rouge2"])),
                     float(np.mean(scores["rougeL"])),
                     float(np.mean(scores["bleu"]))])
    out_path = os.path.join(cfg.out_dir, "sweep.csv")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "seeds", "rouge1_mean", "rouge1_var",
                    "rouge2_mean", "rougeL_mean", "bleu_mean"])
        for row in rows:
            w.writerow(row)
    write_resolved_config(cfg, os.path.join(cfg.out_dir,
                                            "config.resolved.yaml"))
    print(f"wrote {len(rows)} sweep rows to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicsum",
        description="Topic-aware two-stage dialogue summarization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--groups", type=int, default=3)
    p.add_argument("--words-per-group", type=int, default=10)
    p.add_argument("--noise-pool", type=int, default=10)
    p.add_argument("--dialogues", type=int, default=200)
    p.add_argument("--utterances", type=int, default=6)
    p.add_argument("--active-groups", type=int, default=1)
    p.add_argument("--noise-rate", type=float, default=0.35)
    p.add_argument("--tokens-per-utterance", type=int, default=8)
    p.add_argument("--summary-tokens", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=str, default="90,5,5")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the full training schedule")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--corpus-dir", type=str, default=None)
    p.add_argument("--train-path", type=str, default=None)
    p.add_argument("--dev-path", type=str, default=None)
    p.add_argument("--test-path", type=str, default=None)
    p.add_argument("--stopwords-path", type=str, default=None)
    p.add_argument("--token-mode", type=str, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--resume", type=str, default=None,
                   help="checkpoint to continue joint training from")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", help="summarize a corpus file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="score summaries against references")
    p.add_argument("--outputs", required=True)
    p.add_argument("--references", required=True,
                   help="corpus file carrying gold summaries")
    p.add_argument("--token-mode", type=str, default="whitespace")
    p.add_argument("--bleu-mean", type=str, default="arithmetic",
                   choices=("arithmetic", "geometric"))
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-topics", help="export top-k topic words")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--role", type=str, default="dialogue")
    p.set_defaults(func=cmd_inspect_topics)

    p = sub.add_parser("export-topic-vectors",
                       help="export topic vectors for external projection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--role", type=str, default="dialogue")
    p.set_defaults(func=cmd_export_topic_vectors)

    p = sub.add_parser("export-attention",
                       help="export extractor attention traces")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=10)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("sweep", help="repeat training over a topic-count grid")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--corpus-dir", type=str, default=None)
    p.add_argument("--train-path", type=str, default=None)
    p.add_argument("--dev-path", type=str, default=None)
    p.add_argument("--test-path", type=str, default=None)
    p.add_argument("--stopwords-path", type=str, default=None)
    p.add_argument("--token-mode", type=str, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--param", required=True, choices=("k", "ko"))
    p.add_argument("--values", required=True,
                   help="comma-separated grid values")
    p.add_argument("--seeds", type=str, default="0",
                   help="comma-separated seeds per grid point")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
