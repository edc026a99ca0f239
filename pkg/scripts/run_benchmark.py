#!/usr/bin/env python3
"""Reproduce the benchmark table: 1-shot ablation grid, 5-shot margins,
and the query-size sweep on the 5-shot transductive model.

Roughly two minutes with --workers 4. All numbers are deterministic;
rerunning prints the same table bit for bit.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from textshot.config import load_config
from textshot.datagen import generate_dataset
from textshot.episodes import make_class_split
from textshot.evaluator import ablate, evaluate, format_table, query_size_sweep
from textshot.trainer import init_model, meta_train, pretrain_backbone

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "benchmark.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--workers", type=int, default=4)
    args = parser.parse_args()

    t0 = time.time()
    config = load_config(args.config)
    dataset = generate_dataset(config.data.synthetic)
    split = make_class_split(dataset.classes, config.split.counts, config.split.seed)

    pre = pretrain_backbone(dataset, split.train_classes, config.encoder, config.train)
    print(f"stage 1: base-class accuracy {pre.train_accuracy:.4f} "
          f"({time.time() - t0:.0f}s)")

    rows = ablate(pre.encoder, config.encoder, config.conditioner, config.classifier,
                  dataset, split, config.variants, config.train, config.eval,
                  workers=args.workers)
    print(f"\n1-shot ablation, {config.eval.n_episodes} episodes "
          f"({time.time() - t0:.0f}s)")
    print(format_table([(v, r) for v, r, _ in rows]))

    # 5-shot rows are trained by hand (not through ablate) so the TNT state
    # can be reused for the sweep; pairing is identical either way.
    train5 = replace(config.train, k_shot=5)
    eval5 = replace(config.eval, k_shot=5)
    rows5, states5 = [], {}
    for variant in ("TNI", "TNT"):
        state = init_model(config.encoder, config.conditioner, config.classifier,
                           variant, train5.seed, encoder=pre.encoder)
        meta_train(state, dataset, split.train_classes, train5)
        report = evaluate(state, dataset, split.test_classes,
                          replace(eval5, variant=variant), workers=args.workers)
        rows5.append((variant, report))
        states5[variant] = state
    print(f"\n5-shot, {eval5.n_episodes} episodes ({time.time() - t0:.0f}s)")
    print(format_table(rows5))

    points = query_size_sweep(states5["TNT"], dataset, split.test_classes,
                              config.sweep_b, replace(eval5, variant="TNT"),
                              workers=args.workers)
    print(f"\n5-shot query-size sweep ({time.time() - t0:.0f}s)")
    print(format_table([(f"B={b}", r) for b, r in points]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
