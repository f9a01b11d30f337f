#!/usr/bin/env python3
"""Generate a small synthetic dataset plus a ready-to-run config.

The written config pins a recipe that a desk machine can overfit in a
few minutes: train AUC reaches 1.0 well within 30 epochs and held-out
AUC lands near 0.99.

Usage:
    python scripts/make_toy_data.py --out runs/toy
    digat build-sag --config runs/toy/config.yaml
    digat train     --config runs/toy/config.yaml
    digat evaluate  --config runs/toy/config.yaml
"""

import argparse
import sys
from pathlib import Path

import yaml

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from digat.synth import SynthSpec, generate  # noqa: E402


def toy_config(paths: dict, out_dir: Path) -> dict:
    return {
        "seed": 7,
        "deterministic": True,
        "data": {
            "news": str(paths["news"]),
            "train_behaviors": str(paths["train_behaviors"]),
            "eval_behaviors": str(paths["eval_behaviors"]),
            "embeddings": str(paths["embeddings"]),
            "title_len": 8,
            "history_len": 10,
        },
        "sag": {"provider": "tfidf", "neighbors": 2, "hops": 1,
                "cache": str(out_dir / "sag_cache.jsonl")},
        "model": {"d": 32, "word_dim": 16, "heads": 4, "att_hidden": 16,
                  "dropout": 0.0, "layers": 2, "sa_mode": "graph"},
        "train": {"epochs": 30, "batch_size": 32,
                  "learning_rate": 2e-3, "negatives": 4},
        "outputs": {"run_dir": str(out_dir / "run")},
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/toy",
                        help="directory for data files and config")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out_dir = Path(args.out)
    spec = SynthSpec(seed=args.seed)
    paths = generate(spec).write(out_dir / "data")
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")

    config_path = out_dir / "config.yaml"
    config_path.write_text(yaml.safe_dump(toy_config(paths, out_dir),
                                          sort_keys=False),
                           encoding="utf-8")
    print(f"config: {config_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
