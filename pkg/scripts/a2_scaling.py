"""Power-weight ladder for the quadratic-exponent scaling check.

Sweeps w = t^a on a balanced tree, computes the exact scalar A_2 constant and
a measured lower bound on the weighted operator norm of the dyadic shift,
then fits log(bound) against log(constant).  Emits one CSV row per rung.

Usage: python3 scripts/a2_scaling.py [--leaves 256] [--out a2.csv]
"""
import argparse
import csv
import sys
from dataclasses import dataclass, field

from homsparse import harness


@dataclass
class Config:
    leaves: int = 256
    exponents: tuple = (0.0, 0.75, 1.5, 2.25, 3.0, 3.75)
    seed: int = 0
    out: str | None = None
    slope_cap: float = 1.5 + 0.1


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--leaves", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    cfg = Config(leaves=args.leaves, seed=args.seed, out=args.out)

    rep = harness.verify_a2_scaling(leaves=cfg.leaves, exponents=cfg.exponents,
                                    seed=cfg.seed, slope_cap=cfg.slope_cap)
    writer = csv.writer(open(cfg.out, "w", newline="") if cfg.out else sys.stdout)
    writer.writerow(["exponent", "ap2", "bound"])
    for e in rep.entries:
        writer.writerow([repr(e.exponent), repr(e.ap2), repr(e.bound)])
    print(f"# slope={rep.slope!r} decades={rep.decades!r} "
          f"cap={rep.slope_cap!r} passed={rep.passed}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
