"""Command-line entry point: ``degla {synth,gen-neg,train,eval,gradcheck}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import dataio, evaluation, trainer
from .encoders import load_checkpoint
from .errors import (CheckpointError, ClientUnavailable, DatasetInvalid, DeglaError, NonFiniteLoss, SchemaError,
                     VocabTooSmall)
from .lexicon import load_lexicon
from .negcap import LlmGenerator, generate_for_records, load_templates
from .negcap.llm import HttpChatClient
from .verify import GRAD_TOL, gradcheck_suite

log = logging.getLogger("degla")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SERVICE = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 5
EXIT_USAGE = 64


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; remap to 64 (EX_USAGE)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_CONFIG_HELP = {
    "batch_size": "items per batch",
    "negatives": "hard negatives per caption (0 disables the local losses)",
    "epochs": "passes over the training set",
    "learning_rate": "peak AdamW learning rate (cosine-decayed to 0)",
    "weight_decay": "decoupled weight decay (biases and temperature excluded)",
    "adam_beta1": "AdamW first-moment decay",
    "adam_beta2": "AdamW second-moment decay",
    "adam_epsilon": "AdamW denominator epsilon",
    "ema_alpha": "teacher EMA coefficient",
    "lambda1": "weight of the image-side local contrast",
    "lambda2": "weight of the text-side local contrast",
    "lambda3": "weight of the teacher distillation term",
    "schedule": "learning-rate schedule (only 'cosine')",
    "seed": "seed for initialisation and batch order",
    "embed_dim": "token embedding width",
    "hidden_dim": "perceptron hidden width",
    "out_dim": "joint embedding width",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(trainer.TrainConfig):
        kind = f.type if callable(f.type) else {"int": int, "float": float, "str": str}[f.type]
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None,
                       help=f"{_CONFIG_HELP.get(f.name, f.name)} (preset value if omitted)")


def build_parser() -> Parser:
    parser = Parser(prog="degla", description="Hard-negative contrastive training with EMA self-distillation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic compositional corpus",
                       description="Write template captions with noisy slot-indicator features as JSONL.")
    p.add_argument("out", type=Path, help="output JSONL path")
    p.add_argument("--n", type=int, default=1000, help="number of records (default 1000)")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--noise", type=float, default=0.1, help="Gaussian feature noise sigma (default 0.1)")
    p.add_argument("--id-prefix", default="syn", help="record id prefix (default 'syn')")

    p = sub.add_parser("gen-neg", help="attach 4 hard negatives to every caption",
                       description="Generate hard negative captions for a JSONL corpus.")
    p.add_argument("input", type=Path, help="input JSONL corpus")
    p.add_argument("output", type=Path, help="output JSONL with negatives")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--llm", action="store_true",
                   help="use the chat-completions endpoint in DEGLA_LLM_URL (model DEGLA_LLM_MODEL, "
                        "key DEGLA_LLM_KEY) with rule-based fallback")
    p.add_argument("--jobs", type=int, default=1, help="maximum captions processed concurrently (default 1)")

    p = sub.add_parser("train", help="train a dual encoder",
                       description="Train on a JSONL corpus with negatives; writes metrics.csv and checkpoint.json.")
    p.add_argument("data", type=Path, help="training JSONL (with negatives unless --negatives 0)")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory (default .)")
    p.add_argument("--preset", choices=sorted(trainer.PRESETS), default="desk",
                   help="base hyper-parameters: 'paper' (full-scale fine-tuning values) or 'desk' (default)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint",
                       description="Compositional accuracy, retrieval recall, zero-shot accuracy and drift.")
    p.add_argument("checkpoint", type=Path, help="checkpoint JSON")
    p.add_argument("benchmark", type=Path, help="JSONL with features and negatives")
    p.add_argument("--report-path", type=Path, default=None, help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default=None,
                   help="report format (default: from --report-path suffix, else json)")
    p.add_argument("--reference", type=Path, default=None, help="checkpoint to measure drift against")
    p.add_argument("--seed", type=int, default=0, help="seed for retrieval tie-breaking (default 0)")

    p = sub.add_parser("gradcheck", help="verify loss gradients by central differences",
                       description=f"Check every loss over 10 random instances; fails if any error >= {GRAD_TOL}.")
    p.add_argument("--seed", type=int, default=0, help="first of 10 consecutive seeds (default 0)")
    return parser


def _fail(code: int, message: str, *args) -> int:
    print(f"degla: error: {message % args if args else message}", file=sys.stderr)
    return code


def cmd_synth(args) -> int:
    try:
        records = dataio.synth_corpus(dataio.VocabSpec(), args.n, args.seed, args.noise, args.id_prefix)
    except VocabTooSmall as exc:
        return _fail(EXIT_INPUT, "%s", exc)
    dataio.write_corpus(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def cmd_gen_neg(args) -> int:
    try:
        records = dataio.load_corpus(args.input, require_feature=False)
    except (OSError, DatasetInvalid) as exc:
        return _fail(EXIT_INPUT, "%s", exc)
    lexicon = load_lexicon()
    generator = None
    try:
        if args.llm:
            generator = LlmGenerator(HttpChatClient.from_env(), load_templates(), lexicon)
        out, stats = generate_for_records(records, lexicon, args.seed, generator, jobs=max(1, args.jobs))
    except ClientUnavailable as exc:
        return _fail(EXIT_SERVICE, "language model unavailable: %s", exc)
    except DeglaError as exc:
        return _fail(EXIT_INPUT, "%s", exc)
    dataio.write_corpus(out, args.output)
    print(f"{len(out)} records, {sum(len(r['negatives']) for r in out)} negatives | {stats.summary()}")
    return EXIT_OK


def config_from_args(args) -> trainer.TrainConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(trainer.TrainConfig)
                 if getattr(args, f.name, None) is not None}
    return trainer.PRESETS[args.preset].with_(**overrides)


def cmd_train(args) -> int:
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        return _fail(EXIT_USAGE, "%s", exc)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = trainer.run_training(args.data, cfg, args.out_dir / "checkpoint.json",
                                      args.out_dir / "metrics.csv")
    except NonFiniteLoss as exc:
        return _fail(EXIT_NUMERIC, "%s", exc)
    except (OSError, DatasetInvalid) as exc:
        return _fail(EXIT_INPUT, "%s", exc)
    last = result.metrics[-1]
    print(f"trained {len(result.metrics)} steps: total={last.losses.total:.4f} tau={last.tau:.4f} "
          f"-> {args.out_dir / 'checkpoint.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
        reference = load_checkpoint(args.reference)[0] if args.reference else None
    except CheckpointError as exc:
        return _fail(EXIT_INPUT, "%s", exc)
    try:
        records = dataio.load_corpus(args.benchmark)
        report = evaluation.evaluate(model, records, load_lexicon(), reference, seed=args.seed)
    except (OSError, SchemaError, DatasetInvalid) as exc:
        return _fail(EXIT_INPUT, "%s", exc)
    except (DeglaError, ValueError) as exc:
        return _fail(EXIT_INPUT, "cannot evaluate: %s", exc)
    fmt = args.format or ("csv" if args.report_path and args.report_path.suffix == ".csv" else "json")
    body = report.to_csv() if fmt == "csv" else report.to_json() + "\n"
    if args.report_path:
        args.report_path.write_text(body)
    else:
        sys.stdout.write(body)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(seeds=range(args.seed, args.seed + 10))
    for r in results:
        print(f"{r.loss:<14} worst relative error {r.worst:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r.loss for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "gen-neg": cmd_gen_neg, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
