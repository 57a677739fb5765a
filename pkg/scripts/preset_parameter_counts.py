#!/usr/bin/env python3
"""Print analytic parameter counts for the named model presets.

Counts are closed-form (no weights allocated), so the L preset is cheap to
inspect. The tiny preset's formula is checked against an allocated module in
the test suite.
"""

import argparse

from stacst.model import PRESETS, ModelConfig, count_parameters


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--vocab-size", type=int, default=5000)
    parser.add_argument("--feature-dim", type=int, default=80)
    args = parser.parse_args()

    print(f"{'preset':>7} {'d_model':>8} {'enc':>4} {'dec':>4} {'heads':>6} {'params':>14}")
    for name in PRESETS:
        cfg = ModelConfig.preset(name, vocab_size=args.vocab_size, feature_dim=args.feature_dim)
        n = count_parameters(cfg)
        print(
            f"{name:>7} {cfg.d_model:>8} {cfg.n_enc_layers:>4} {cfg.n_dec_layers:>4} "
            f"{cfg.n_heads:>6} {n:>14,}"
        )


if __name__ == "__main__":
    main()
