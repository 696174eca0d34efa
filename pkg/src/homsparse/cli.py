"""Command line front end.

Subcommands: constants, decompose, verify, demo.  Exit codes: 0 when every
certificate passes, 2 on invalid input (unparseable scenario, bad flags), 1
otherwise with the first failed certificate named on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import harness
from .errors import CertificateError


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--scenario", help="path to a scenario JSON file")
    sub.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sub.add_argument("--out", default=None, help="directory for report.csv / summary.json")
    sub.add_argument("--certify", action="store_true",
                     help="stop at the first failed certificate")
    sub.add_argument("--campaign", type=int, default=None,
                     help="run this many seeded instances instead of one")


def _demo_scenario() -> harness.Scenario:
    return harness.scenario_from_dict({
        "scenario_id": "demo-shift-rotation",
        "inequality": "all",
        "space": {"kind": "tree", "leaves": 32},
        "weight": {"kind": "rotation", "u": 3.0, "omega": 1.0},
        "operator": {"kind": "petermichl"},
        "p": 2.0,
        "r": 1.0,
        "seed": 7,
    })


def _load(args) -> harness.Scenario:
    if getattr(args, "demo", False) or args.scenario is None:
        sc = _demo_scenario()
    else:
        sc = harness.load_scenario(args.scenario)
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    return sc


def _emit(payload: dict, out: str | None, name: str) -> None:
    text = json.dumps(payload, indent=1, sort_keys=True)
    print(text)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def cmd_constants(args) -> int:
    sc = _load(args)
    consts = harness.scenario_constants(sc)
    _emit({"scenario_id": sc.scenario_id, "constants": consts}, args.out,
          "constants.json")
    return 0


def cmd_decompose(args) -> int:
    sc = _load(args)
    dec, certs = harness.decompose_certificates(sc)
    payload = {
        "scenario_id": sc.scenario_id,
        "kappa_measured": dec.kappa_measured,
        "n_cubes": len(dec.nodes),
        "certificates": [c.to_dict() for c in certs],
    }
    _emit(payload, args.out, "decompose.json")
    for cert in certs:
        status = "pass" if cert.passed else "FAIL"
        print(f"  {cert.name}: {status} ({cert.detail})")
        if not cert.passed:
            print(f"certificate failed: {cert.name}", file=sys.stderr)
            return 1
    return 0


def cmd_verify(args) -> int:
    sc = _load(args)
    result = harness.run_scenario(sc, out_dir=args.out, certify=args.certify,
                                  campaign=args.campaign)
    for cert in result.certificates:
        status = "pass" if cert.passed else "FAIL"
        print(f"  {cert.name}: {status} ({cert.detail})")
    if result.reports:
        print(harness.reports_csv_text(result.reports), end="")
    if result.exit_code != 0:
        print(f"certificate failed: {result.summary['first_failure']}",
              file=sys.stderr)
    return result.exit_code


def cmd_demo(args) -> int:
    args.demo = True
    return cmd_verify(args)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="homsparse",
        description="weighted-inequality verification on finite metric measure spaces")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("constants", cmd_constants), ("decompose", cmd_decompose),
                     ("verify", cmd_verify), ("demo", cmd_demo)):
        sub = subs.add_parser(name)
        _add_common(sub)
        sub.set_defaults(fn=fn)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except CertificateError as exc:
        print(f"certificate failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
