#!/usr/bin/env python3
"""Variable-misuse experiment.

Builds a labeled synthetic corpus (half the scripts get one argument swapped
for another in-scope name), pretrains a small model on the clean programs,
fine-tunes the misuse heads, and reports detection AUC plus localization and
repair accuracy against the chance level.

Example:
    python3 scripts/run_misuse.py --out runs/misuse --seed 0
"""

import argparse
import json
import os
import time

from vexec.config import Config
from vexec.corpus import make_misuse_corpus, synthesize
from vexec.checkpoint import save_checkpoint
from vexec.guesser import Vocabulary
from vexec.misuse import evaluate_misuse, train_misuse, write_predictions
from vexec.model import Model
from vexec.training import train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/misuse", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-scripts", type=int, default=1200)
    ap.add_argument("--held-scripts", type=int, default=300)
    ap.add_argument("--min-stmts", type=int, default=6)
    ap.add_argument("--max-stmts", type=int, default=20)
    ap.add_argument("--h", type=int, default=32)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--pretrain-epochs", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=8,
                    help="misuse fine-tuning epochs")
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--jobs", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    size_range = (args.min_stmts, args.max_stmts)
    train_scripts = synthesize(200 + args.seed, args.train_scripts, size_range)
    held_scripts = synthesize(999, args.held_scripts, size_range)
    train_examples = make_misuse_corpus(train_scripts, seed=args.seed)
    held_examples = make_misuse_corpus(held_scripts, seed=77)

    cfg = Config().replaced(
        h=args.h, encoder_layers=args.layers, executor_layers=args.layers,
        encoder_heads=4, executor_heads=4, epochs=args.pretrain_epochs,
        lr=args.lr, lambda_cap_per_batch=512, jobs=args.jobs, seed=args.seed)
    clean_codes = [s.code for s in train_scripts]
    vocab = Vocabulary.build(clean_codes, cfg.vocab_size, cfg.oov_buckets)
    model = Model.fresh(cfg, vocab, seed=args.seed)

    started = time.time()
    train(model, clean_codes, cfg)
    fine_cfg = cfg.replaced(epochs=args.epochs)
    log_path = os.path.join(args.out, f"misuse_metrics_seed{args.seed}.jsonl")
    train_misuse(model, train_examples, fine_cfg, log_path=log_path,
                 log_header={"event": "config", "config": fine_cfg.to_dict()})
    minutes = (time.time() - started) / 60.0

    metrics = evaluate_misuse(model, held_examples, fine_cfg)
    pred_path = os.path.join(args.out, f"predictions_seed{args.seed}.jsonl")
    write_predictions(model, held_examples, pred_path)
    ckpt = os.path.join(args.out, f"model_seed{args.seed}.ckpt")
    save_checkpoint(ckpt, model)
    summary = {"seed": args.seed, "train_minutes": round(minutes, 2),
               "held_out": metrics, "checkpoint": ckpt,
               "predictions": pred_path}
    with open(os.path.join(args.out, f"summary_seed{args.seed}.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
