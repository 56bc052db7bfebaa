"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 runtime failure (including a failed
gradient check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="bidaflab",
                     description="Desk-scale BiDAF variants: train, evaluate "
                                 "and compare deep model-encoder stacks.")
    parser.add_argument("--check-finite", action="store_true",
                        help="raise on any NaN/Inf produced by tensor ops")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth",
                       help="generate a synthetic corpus + vector file")
    p.add_argument("--task", required=True,
                   choices=["copy", "char-sensitive", "multi-hop",
                            "char-multi-hop"])
    p.add_argument("--n", type=int, required=True, help="number of examples")
    p.add_argument("--vocab-size", type=int, default=60)
    p.add_argument("--context-len", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vector-dim", type=int, default=50)
    p.add_argument("--out", required=True, help="corpus JSON path")
    p.add_argument("--vectors", help="vector file path (default: alongside corpus)")

    p = sub.add_parser("prepare",
                       help="build and save vocabulary artifacts for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--config", required=True, help="RunConfig JSON path")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out-dir", help="override config out_dir")
    p.add_argument("--max-steps", type=int, help="override config max_steps")
    p.add_argument("--variant", help="override config variant")

    p = sub.add_parser("eval",
                       help="score a checkpoint against a gold corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the prediction JSON map here")
    p.add_argument("--split", choices=["train", "dev"], default="dev")
    p.add_argument("--workers", type=int, default=0)

    p = sub.add_parser("predict",
                       help="write the id->answer prediction map")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "dev"], default="dev")

    p = sub.add_parser("sweep",
                       help="train several encoder variants on identical data")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every op family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--seeds", type=int, default=1,
                   help="number of consecutive seeds to run")

    p = sub.add_parser("plot",
                       help="emit an SVG curve plot from metric logs")
    p.add_argument("--metric", required=True,
                   choices=["f1", "em", "avna", "loss"])
    p.add_argument("--log", action="append", required=True,
                   metavar="PATH:LABEL",
                   help="metric CSV and its legend label (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--split", choices=["train", "dev"], default="dev")
    p.add_argument("--smooth", type=int, default=0,
                   help="moving-average window (off by default)")
    return parser


def _cmd_synth(args) -> int:
    from .data import write_squad_json
    from .synthetic import (generate_synthetic_corpus, synthetic_vector_rows,
                            vector_file_tokens, write_vector_file)
    spec = {"task": args.task, "n_examples": args.n,
            "vocab_size": args.vocab_size, "context_len": args.context_len}
    examples = generate_synthetic_corpus(spec, args.seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_squad_json(examples, args.out)
    vectors_path = args.vectors or os.path.join(
        os.path.dirname(os.path.abspath(args.out)), "vectors.txt")
    rows = synthetic_vector_rows(vector_file_tokens(examples),
                                 args.vector_dim, args.seed)
    write_vector_file(rows, vectors_path)
    n_imp = sum(e.is_impossible for e in examples)
    print(f"wrote {len(examples)} examples ({n_imp} unanswerable) to {args.out}")
    print(f"wrote {len(rows)} vectors to {vectors_path}")
    return 0


def _cmd_prepare(args) -> int:
    from .data import (build_char_vocab, build_vocab_tokens, load_glove_vectors,
                       load_squad_json, prepare_examples)
    examples = load_squad_json(args.corpus)
    vocab_tokens = build_vocab_tokens(examples)
    vocab = load_glove_vectors(args.vectors, args.dim, vocab_tokens)
    char_vocab = build_char_vocab(examples)
    kept, dropped = prepare_examples(examples, char_vocab)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "vocab.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"tokens": vocab.itos, "chars": sorted(char_vocab.stoi),
                   "dim": args.dim, "n_examples": len(examples),
                   "n_prepared": len(kept), "n_dropped": dropped}, fh, indent=2)
    covered = int(np.count_nonzero(np.abs(vocab.matrix).sum(axis=1)))
    print(f"vocabulary: {len(vocab)} tokens ({covered} with vectors), "
          f"{len(char_vocab)} chars")
    print(f"prepared {len(kept)}/{len(examples)} examples "
          f"({dropped} dropped); wrote {out_path}")
    if len(examples) and dropped / len(examples) >= 0.02:
        print("warning: drop rate above 2%", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    from .train import RunConfig, train
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out_dir:
        config.out_dir = args.out_dir
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    if args.variant:
        config.variant = args.variant
    result = train(config)
    print(f"best F1 {result.best_f1:.2f} (EM {result.best_em:.2f}, "
          f"AvNA {result.best_avna:.2f}) at step {result.best_step}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _eval_common(args):
    from .train import RunConfig, load_corpora, load_model_from_checkpoint
    config = RunConfig.load(args.config)
    data = load_corpora(config)
    model = load_model_from_checkpoint(args.checkpoint, config, data)
    if args.split == "train":
        return model, data.train_raw, data.train, data
    return model, data.dev_raw, data.dev, data


def _cmd_eval(args) -> int:
    from .train import evaluate_split
    model, raw, examples, data = _eval_common(args)
    result, preds = evaluate_split(model, raw, examples, data.vocab,
                                   64, args.workers)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(preds, fh, ensure_ascii=False)
    print(json.dumps(result.as_dict()))
    print(f"{'metric':8s} value")
    for key, value in result.as_dict().items():
        print(f"{key:8s} {value:.2f}" if key != "N" else f"{key:8s} {value}")
    return 0


def _cmd_predict(args) -> int:
    from .train import predict_split
    model, raw, examples, data = _eval_common(args)
    preds = predict_split(model, examples, data.vocab, 64)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(preds, fh, ensure_ascii=False)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    from .train import RunConfig, sweep
    config = RunConfig.load(args.config)
    sweep(config, args.variants, args.out_dir)
    print(f"comparison table: {os.path.join(args.out_dir, 'comparison.csv')}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .verify import run_all_families
    worst = {}
    for offset in range(args.seeds):
        results = run_all_families(args.seed + offset, h=args.h)
        for family, err in results.items():
            worst[family] = max(worst.get(family, 0.0), err)
    failed = False
    for family in sorted(worst):
        err = worst[family]
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        if status == "FAIL":
            failed = True
        print(f"{family:24s} max relative error {err:.3e}  {status}")
    if failed:
        raise RuntimeError(
            f"gradient check exceeded tolerance {GRADCHECK_TOLERANCE}")
    return 0


def _parse_log_arg(value: str) -> tuple[str, str]:
    if ":" not in value:
        raise UsageError(f"--log expects PATH:LABEL, got {value!r}")
    path, _, label = value.rpartition(":")
    return label, path


def _cmd_plot(args) -> int:
    from .plots import PlotSpec, emit_plot
    logs = [_parse_log_arg(v) for v in args.log]
    emit_plot(PlotSpec(metric=args.metric, logs=logs, out_path=args.out,
                       title=args.title, split=args.split, smooth=args.smooth))
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage())
        if args.check_finite:
            from .tensor import set_check_finite
            set_check_finite(True)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help exits 0 through here
        return int(e.code or 0)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
