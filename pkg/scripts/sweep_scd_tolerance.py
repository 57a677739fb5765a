#!/usr/bin/env python3
"""Sweep the speaker-change matching tolerance over reference/hypothesis RTTMs.

Prints an F1/MDR/FAR row per tolerance; F1 should rise and MDR/FAR fall as
the tolerance grows. Point it at the ref.rttm/hyp.rttm a demo run emits.
"""

import argparse

from stacst.evaluation import rttm_read, scd_score


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("ref_rttm")
    parser.add_argument("hyp_rttm")
    parser.add_argument(
        "--tolerances", default="0.1,0.25,0.5,1.0", help="comma-separated seconds"
    )
    args = parser.parse_args()

    refs = sorted(r.onset for r in rttm_read(args.ref_rttm))
    hyps = sorted(r.onset for r in rttm_read(args.hyp_rttm))
    print(f"{'tol(s)':>7} {'F1':>7} {'MDR':>7} {'FAR':>7}")
    for tol in (float(t) for t in args.tolerances.split(",")):
        s = scd_score(refs, hyps, tol)
        print(f"{tol:7.2f} {s.f1:7.2f} {s.mdr:7.2f} {s.far:7.2f}")


if __name__ == "__main__":
    main()
