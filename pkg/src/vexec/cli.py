"""Command-line front end.

Subcommands
-----------
trace    lower one file and print its instruction trace
train    fit a model on a corpus and write a checkpoint
eval     score a checkpoint on a corpus
misuse   run the variable-misuse pipeline from a checkpoint
stats    filter a corpus and print the retention report
synth    generate a synthetic corpus (optionally with injected misuse)

Exit codes: 0 success, 1 usage or configuration error, 2 the input program
was rejected by the lowering, 3 internal fault.
"""

from __future__ import annotations

import argparse
import json
import sys

from .autodiff import EngineFault
from .checkpoint import CheckpointError, load_model, save_checkpoint
from .codegen import CodegenError
from .config import Config, ConfigError, config_from
from .corpus import (apply_filters, load_corpus, make_misuse_corpus,
                     synthesize, write_histograms)
from .guesser import Vocabulary
from .interpreter import InterpreterFault, format_trace
from .misuse import (evaluate_misuse, load_misuse_corpus, train_misuse,
                     write_predictions)
from .model import Model
from .training import evaluate, train


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _resolve_config(args) -> Config:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    cfg = config_from(getattr(args, "config", None), overrides)
    if getattr(args, "jobs", None) is not None:
        cfg = cfg.replaced(jobs=args.jobs)
    return cfg


def _load_filtered(path: str, cfg: Config):
    scripts = load_corpus(path)
    kept, report = apply_filters(scripts, cfg)
    return kept, report


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


def _commentary(event) -> str:
    op, f = event.op, event.fields
    if op == "GUESS":
        return f"{f[1]} = guess {f[0]!r}"
    if op == "STORE":
        return f"memory[{f[0]!r}] = {f[1]}"
    if op == "LOOKUP":
        return f"{f[1]} = memory[{f[0]!r}]"
    if op == "LAMBDA":
        args = "" if f[2] == "-" else f[2].replace(",", ", ")
        ctx = "" if f[1] == "0" else f"  [{f[1]} enclosing context(s)]"
        return f"{f[3]} = {f[0]}({args}){ctx}"
    if op == "PUSH_CTX":
        return f"enter {f[0]} context keyed by {f[1]}"
    if op == "POP_CTX":
        return f"leave {f[0]} context"
    if op == "PUSH_SCOPE":
        return f"enter scope {f[0]}"
    if op == "POP_SCOPE":
        return f"leave scope {f[0]}"
    if op == "RETURN":
        return f"return {f[0]}"
    return ""


def cmd_trace(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        source = fh.read()
    if args.ckpt:
        model = load_model(args.ckpt)
    else:
        cfg = _resolve_config(args)
        model = Model.fresh(cfg, Vocabulary([], cfg.oov_buckets), seed=cfg.seed)
    result = model.run(source)
    if args.pseudocode:
        lines = [e.line() for e in result.trace]
        width = max((len(l) for l in lines), default=0)
        for line, event in zip(lines, result.trace):
            print(f"{line:<{width}}  # {_commentary(event)}")
    else:
        sys.stdout.write(format_trace(result.trace))
    if args.dump_memory:
        sys.stdout.write(result.interp.dump_memory())
    if args.dump_vectors:
        sys.stdout.write(result.interp.dump_vectors())
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    kept, report = _load_filtered(args.corpus, cfg)
    if not kept:
        raise ConfigError(f"no scripts survive filtering in {args.corpus!r}")
    codes = [s.code for s in kept]
    vocab = Vocabulary.build(codes, cfg.vocab_size, cfg.oov_buckets)
    model = Model.fresh(cfg, vocab, seed=cfg.seed)
    log_path = args.log or args.out + ".metrics.jsonl"
    header = {"event": "config", "config": cfg.to_dict(),
              "filter_report": json.loads(report.to_json())}
    train(model, codes, cfg, log_path=log_path, log_header=header)
    if args.misuse:
        examples = load_misuse_corpus(args.misuse)
        if not examples:
            raise ConfigError(f"no labeled scripts in {args.misuse!r}")
        mis_log = args.misuse_log or args.out + ".misuse.jsonl"
        train_misuse(model, examples, cfg, log_path=mis_log,
                     log_header={"event": "config", "config": cfg.to_dict()})
    final = {"event": "final_train_eval", **evaluate(model, codes, cfg)}
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(final, sort_keys=True) + "\n")
    save_checkpoint(args.out, model)
    _emit(final)
    print(f"checkpoint written to {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    cfg = model.config
    if args.jobs is not None:
        cfg = cfg.replaced(jobs=args.jobs)
    kept, _report = _load_filtered(args.corpus, cfg)
    codes = [s.code for s in kept]
    _emit({"event": "eval", **evaluate(model, codes, cfg)})
    return 0


# ---------------------------------------------------------------------------
# misuse / stats / synth
# ---------------------------------------------------------------------------


def cmd_misuse(args) -> int:
    model = load_model(args.ckpt)
    examples = load_misuse_corpus(args.corpus)
    if not examples:
        raise ConfigError(f"no labeled scripts in {args.corpus!r}")
    metrics = evaluate_misuse(model, examples, model.config)
    pred_path = args.pred or args.corpus + ".predictions.jsonl"
    write_predictions(model, examples, pred_path)
    _emit({"event": "misuse_eval", **metrics})
    print(f"predictions written to {pred_path}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    cfg = _resolve_config(args)
    kept, report = _load_filtered(args.corpus, cfg)
    print(report.to_json())
    if args.hist_dir:
        paths = write_histograms(kept, args.hist_dir, cfg)
        for name in sorted(paths):
            print(f"{name} histogram written to {paths[name]}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    if not 0.0 <= args.misuse_fraction <= 1.0:
        raise ConfigError("--misuse-fraction must lie in [0, 1]")
    if args.min_stmts < 1 or args.max_stmts < args.min_stmts:
        raise ConfigError("need 1 <= --min-stmts <= --max-stmts")
    scripts = synthesize(args.seed, args.n,
                         size_range=(args.min_stmts, args.max_stmts))
    with open(args.out, "w", encoding="utf-8") as fh:
        if args.misuse_fraction > 0:
            examples = make_misuse_corpus(scripts, seed=args.seed,
                                          fraction=args.misuse_fraction)
            positives = sum(1 for e in examples if e.has_misuse)
            for example in examples:
                fh.write(example.to_json() + "\n")
            print(f"wrote {len(examples)} scripts "
                  f"({positives} with injected misuse) to {args.out}",
                  file=sys.stderr)
        else:
            for script in scripts:
                fh.write(json.dumps({"code": script.code}) + "\n")
            print(f"wrote {len(scripts)} scripts to {args.out}",
                  file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_config_opts(parser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="key=value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        default=[], help="override one field (repeatable)")
    parser.add_argument("--jobs", type=int, metavar="N",
                        help="worker thread cap (0 = serial)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vexec",
                     description="vector execution of generic Python")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                                required=True)

    p = sub.add_parser("trace", help="print the instruction trace of a file")
    p.add_argument("file", help="Python source file")
    p.add_argument("--pseudocode", action="store_true",
                   help="annotate each instruction with a commentary column")
    p.add_argument("--dump-memory", action="store_true",
                   help="append the final scope table")
    p.add_argument("--dump-vectors", action="store_true",
                   help="append every object vector")
    p.add_argument("--ckpt", metavar="FILE",
                   help="run under trained parameters instead of fresh ones")
    _add_config_opts(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("train", help="train on a corpus, write a checkpoint")
    p.add_argument("corpus", help="directory of .py files or a JSONL file")
    p.add_argument("--out", required=True, metavar="CKPT",
                   help="checkpoint output path")
    p.add_argument("--log", metavar="FILE",
                   help="metrics JSONL path (default: CKPT.metrics.jsonl)")
    p.add_argument("--misuse", metavar="FILE",
                   help="labeled JSONL to also fit the misuse heads on")
    p.add_argument("--misuse-log", metavar="FILE",
                   help="misuse metrics path (default: CKPT.misuse.jsonl)")
    _add_config_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("corpus", help="directory of .py files or a JSONL file")
    p.add_argument("ckpt", help="checkpoint path")
    p.add_argument("--jobs", type=int, metavar="N",
                   help="worker thread cap (0 = serial)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("misuse", help="detect, locate, and repair misuse")
    p.add_argument("corpus", help="labeled JSONL file")
    p.add_argument("ckpt", help="checkpoint path")
    p.add_argument("--pred", metavar="FILE",
                   help="prediction JSONL path (default: CORPUS.predictions.jsonl)")
    p.set_defaults(func=cmd_misuse)

    p = sub.add_parser("stats", help="filter a corpus and print the report")
    p.add_argument("corpus", help="directory of .py files or a JSONL file")
    p.add_argument("--hist-dir", metavar="DIR",
                   help="also write char/lambda histogram CSVs here")
    _add_config_opts(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("out", help="JSONL output path")
    p.add_argument("--n", type=int, default=100, help="number of scripts")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--min-stmts", type=int, default=10, metavar="N",
                   help="smallest script, in statements")
    p.add_argument("--max-stmts", type=int, default=120, metavar="N",
                   help="largest script, in statements")
    p.add_argument("--misuse-fraction", type=float, default=0.0, metavar="F",
                   help="fraction of scripts to corrupt with a misuse label")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0; usage errors exit 1
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"vexec: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"vexec: {exc}", file=sys.stderr)
        return 1
    except CodegenError as exc:
        print(f"vexec: rejected: {exc}", file=sys.stderr)
        return 2
    except SyntaxError as exc:
        print(f"vexec: rejected: {exc}", file=sys.stderr)
        return 2
    except (InterpreterFault, EngineFault, CheckpointError) as exc:
        print(f"vexec: internal fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
