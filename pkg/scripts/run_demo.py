"""End-to-end demo: constants, sparse decomposition, and the three weighted
bounds on a 32-leaf tree with a rotating n = 2 weight and the dyadic shift.

Usage: python3 scripts/run_demo.py [--out DIR]
"""
import argparse
import sys

from homsparse import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()
    argv = ["demo"]
    if args.out:
        argv += ["--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
