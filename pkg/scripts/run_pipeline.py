#!/usr/bin/env python3
"""Run every CLI stage in order for one config: generate -> compare.

    python3 scripts/run_pipeline.py configs/default.yaml --out runs/default
"""
import argparse
import sys

from gammassl import cli

STAGES = ("generate", "train-task", "train-uncertainty", "evaluate", "compare")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    extra = ["--seed", str(args.seed)] if args.seed is not None else []
    for stage in STAGES:
        print(f"== {stage}", flush=True)
        code = cli.main([stage, "--config", args.config, "--out", args.out, *extra])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
