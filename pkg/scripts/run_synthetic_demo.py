#!/usr/bin/env python3
"""Run the synthetic end-to-end experiment and print the report.

Equivalent to `stacst demo`, exposed as a script for quick iteration on the
demo configuration (steps, learning rate, corpus shape).
"""

import argparse
import json

from stacst.demo import DemoConfig, run_demo


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--outdir", default="demo-out")
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--peak-lr", type=float, default=None)
    parser.add_argument("--max-segment-duration", type=float, default=None)
    args = parser.parse_args()

    overrides = {
        k: v
        for k, v in {
            "steps": args.steps,
            "peak_lr": args.peak_lr,
            "max_segment_duration": args.max_segment_duration,
        }.items()
        if v is not None
    }
    report = run_demo(DemoConfig(seed=args.seed, **overrides), args.outdir)
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
