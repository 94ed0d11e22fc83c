#!/usr/bin/env python3
"""Dataset-size ablation on a synthetic corpus.

Generates a corpus under --out unless --corpus points at an existing one,
trains on nested 25/50/100% subsets of the training split, and prints the
RMSE table.  Everything is seeded; rerunning reproduces the numbers.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vtinv import experiment, synth, training  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus", default=None,
                    help="existing corpus directory (default: generate one)")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--n-acq", type=int, default=20)
    ap.add_argument("--frames", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--units", type=int, default=48)
    args = ap.parse_args(argv)

    corpus = Path(args.corpus) if args.corpus else Path(args.out) / "corpus"
    if not (corpus / "corpus.json").exists():
        synth.generate_corpus(
            synth.SynthConfig(seed=args.seed, n_acquisitions=args.n_acq,
                              frames_per_acq=args.frames,
                              with_embeddings=False), corpus)
        print(f"generated corpus: {corpus}")

    cfg = experiment.ExperimentConfig(
        corpus_dir=str(corpus), out_dir=args.out, seed=args.seed,
        fractions=(0.25, 0.5, 1.0), ablation_kind="lcc30",
        train=training.TrainConfig(epochs=args.epochs, batch_size=8,
                                   learning_rate=0.003,
                                   dense_units=args.units,
                                   lstm_units=args.units,
                                   early_stop_patience=12))
    result = experiment.run_ablation_experiment(cfg)
    for name in result["order_by_size"]:
        c = result["conditions"][name]
        print(f"{name}: rmse={c['overall_mean']:.3f} mm"
              f"  median={c['overall_median']:.3f} mm"
              f"  baseline={c['baseline_overall_mean']:.3f} mm"
              f"  train_data={c['train_seconds']:.0f}s")
    print("full table:", Path(cfg.out_dir) / "comparison.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
