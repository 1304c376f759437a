#!/usr/bin/env python3
"""Desk-scale learning experiment.

Synthesizes a themed training corpus, fits a small model, and reports
held-out accuracy on the three execution objectives: return-variable
classification, argument discrimination, and data-flow discrimination.

Example:
    python3 scripts/run_learning.py --out runs/learning --seed 0
"""

import argparse
import json
import os
import time

from vexec.config import Config
from vexec.corpus import synthesize
from vexec.guesser import Vocabulary
from vexec.checkpoint import save_checkpoint
from vexec.model import Model
from vexec.training import evaluate, train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/learning", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-scripts", type=int, default=2000)
    ap.add_argument("--held-scripts", type=int, default=200)
    ap.add_argument("--min-stmts", type=int, default=10)
    ap.add_argument("--max-stmts", type=int, default=40)
    ap.add_argument("--h", type=int, default=32)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--lambda-cap", type=int, default=512)
    ap.add_argument("--jobs", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    size_range = (args.min_stmts, args.max_stmts)
    train_codes = [s.code for s in
                   synthesize(100 + args.seed, args.train_scripts, size_range)]
    held_codes = [s.code for s in
                  synthesize(99, args.held_scripts, size_range)]

    cfg = Config().replaced(
        h=args.h, encoder_layers=args.layers, executor_layers=args.layers,
        encoder_heads=4, executor_heads=4, epochs=args.epochs, lr=args.lr,
        batch_size=args.batch_size, lambda_cap_per_batch=args.lambda_cap,
        jobs=args.jobs, seed=args.seed)
    vocab = Vocabulary.build(train_codes, cfg.vocab_size, cfg.oov_buckets)
    model = Model.fresh(cfg, vocab, seed=args.seed)

    log_path = os.path.join(args.out, f"metrics_seed{args.seed}.jsonl")
    started = time.time()
    train(model, train_codes, cfg, log_path=log_path,
          log_header={"event": "config", "config": cfg.to_dict()})
    minutes = (time.time() - started) / 60.0

    held = evaluate(model, held_codes, cfg)
    ckpt = os.path.join(args.out, f"model_seed{args.seed}.ckpt")
    save_checkpoint(ckpt, model)
    summary = {"seed": args.seed, "train_minutes": round(minutes, 2),
               "held_out": held, "checkpoint": ckpt, "metrics": log_path}
    with open(os.path.join(args.out, f"summary_seed{args.seed}.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
