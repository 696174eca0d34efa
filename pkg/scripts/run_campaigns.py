"""Run the reference boundedness campaigns and track their maxima.

Each campaign replays one of the weighted inequalities across k seeded
instances (spaces, weights, and operators drawn per instance) and records the
largest observed lhs/rhs ratio.  With --write-golden the maxima are frozen
into tests/golden/campaign_maxima.json, which the acceptance suite
regression-checks at +-5%.

Usage: python3 scripts/run_campaigns.py [--k 200] [--out DIR] [--write-golden]
"""
import argparse
import json
import os
import time
from dataclasses import dataclass

from homsparse import harness

GOLDEN_PATH = os.path.join(os.path.dirname(__file__), "..", "tests", "golden",
                           "campaign_maxima.json")


@dataclass
class Config:
    k: int = 200
    out: str | None = None
    write_golden: bool = False


def run(cfg: Config) -> dict:
    maxima: dict = {}
    for name, sc in harness.reference_campaigns().items():
        t0 = time.time()
        reports = harness.run_campaign(sc, cfg.k)
        maxima.update(harness.campaign_maxima(reports))
        bad = [r for r in reports if not (r.ratio >= 0.0 and r.ratio < float("inf"))]
        assert not bad, f"non-finite ratio in campaign {name}"
        print(f"{name}: {len(reports)} reports in {time.time() - t0:.1f}s")
        if cfg.out:
            os.makedirs(cfg.out, exist_ok=True)
            harness.write_reports_csv(
                reports, os.path.join(cfg.out, f"campaign_{name}.csv"))
    payload = {"campaign": cfg.k, "maxima": maxima}
    print(json.dumps(payload, indent=1, sort_keys=True))
    return payload


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--k", type=int, default=200)
    parser.add_argument("--out", default=None)
    parser.add_argument("--write-golden", action="store_true")
    args = parser.parse_args()
    cfg = Config(k=args.k, out=args.out, write_golden=args.write_golden)
    payload = run(cfg)
    if cfg.write_golden:
        path = os.path.normpath(GOLDEN_PATH)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
