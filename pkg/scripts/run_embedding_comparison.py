#!/usr/bin/env python3
"""Feature-kind comparison: MFCC vs LCC vs precomputed embeddings.

One model per feature kind on the identical split, then per-articulator
Wilcoxon tests between conditions.  The synthetic corpus ships 768-dim
stand-in embeddings; drop the kind (--kinds mfcc39 lcc30) for corpora
without an embeddings/ directory.
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
    ap.add_argument("--out", default="runs/comparison")
    ap.add_argument("--seed", type=int, default=17)
    ap.add_argument("--n-acq", type=int, default=20)
    ap.add_argument("--frames", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--units", type=int, default=48)
    ap.add_argument("--kinds", nargs="+",
                    default=["mfcc39", "lcc30", "embeddings"])
    args = ap.parse_args(argv)

    corpus = Path(args.corpus) if args.corpus else Path(args.out) / "corpus"
    if not (corpus / "corpus.json").exists():
        synth.generate_corpus(
            synth.SynthConfig(seed=args.seed, n_acquisitions=args.n_acq,
                              frames_per_acq=args.frames,
                              with_embeddings="embeddings" in args.kinds),
            corpus)
        print(f"generated corpus: {corpus}")

    cfg = experiment.ExperimentConfig(
        corpus_dir=str(corpus), out_dir=args.out, seed=args.seed,
        kinds=tuple(args.kinds),
        train=training.TrainConfig(epochs=args.epochs, batch_size=8,
                                   learning_rate=0.003,
                                   dense_units=args.units,
                                   lstm_units=args.units,
                                   early_stop_patience=12))
    result = experiment.run_embedding_experiment(cfg)
    for name in sorted(result["conditions"]):
        c = result["conditions"][name]
        print(f"{name}: rmse={c['overall_mean']:.3f} mm"
              f"  median={c['overall_median']:.3f} mm"
              f"  vel_acc={c['vel_accuracy']}")
    sig = result["significance"]
    for pair in sorted(sig):
        fm = sig[pair].get("frame_mean")
        if fm and "p_value" in fm:
            print(f"{pair}: frame-mean Wilcoxon p={fm['p_value']:.4g}"
                  f" significant={fm['significant']}")
    print("full table:", Path(cfg.out_dir) / "comparison.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
