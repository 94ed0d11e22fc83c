"""Command line: extract_embeddings --wav-dir in/ --out-dir out/."""

import argparse
import sys
from pathlib import Path

from .extractor import DEFAULT_MODEL, ExtractorConfig, extract_embeddings


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="extract_embeddings",
        description="Export 768-dim speech embeddings at 50 Hz as FeatureFiles.")
    p.add_argument("--wav-dir", required=True, help="directory of 16 kHz mono wavs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", default=DEFAULT_MODEL,
                   help="model identifier or local path (HuBERT-Base by default; "
                        "multilingual variants work the same way)")
    p.add_argument("--layer", type=int, default=None,
                   help="hidden layer to export (default: final layer; 0 = "
                        "convolutional front-end output)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    wav_dir = Path(args.wav_dir)
    if not wav_dir.is_dir():
        print(f"error: not a directory: {wav_dir}", file=sys.stderr)
        return 1
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        print(f"error: no .wav files in {wav_dir}", file=sys.stderr)
        return 1
    cfg = ExtractorConfig(wav_paths=[str(w) for w in wavs],
                          out_dir=args.out_dir, model_id=args.model,
                          layer=args.layer)
    try:
        written = extract_embeddings(cfg)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
