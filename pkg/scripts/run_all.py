#!/usr/bin/env python3
"""Run every shipped experiment through the command-line driver.

Two-dimensional reach-set configs get a DP gold set first and are then
audited; the pursuit config runs its rollouts. Outputs land under
--output (default ./outputs). Exit status is the worst one seen.
"""

import argparse
import sys
import time
from pathlib import Path

from hopfreach import config as cfgmod
from hopfreach.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def run(args):
    code = cli(args)
    print(f"  -> exit {code}")
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--output", default="outputs")
    ap.add_argument("--only", nargs="*", help="config stems to run (default: all)")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    worst = 0
    for path in sorted((ROOT / "configs").glob("*.toml")):
        if args.only and path.stem not in args.only:
            continue
        cfg = cfgmod.load(path)
        extra = ["--output", args.output] + ([] if args.seed is None else ["--seed", str(args.seed)])
        t0 = time.perf_counter()
        print(f"== {path.stem}")
        if cfg.kind == "pursuit":
            codes = [run(["pursuit", str(path)] + extra)]
        elif cfg.error.variant == "zero":
            # negative control: the audit is expected to report violations
            codes = [run(["dp-gold", str(path)] + extra), run(["audit", str(path)] + extra)]
            codes[-1] = 0 if codes[-1] == 3 else max(codes[-1], 1)
        else:
            codes = [run(["dp-gold", str(path)] + extra), run(["reachset", str(path)] + extra),
                     run(["audit", str(path)] + extra)]
        print(f"   {time.perf_counter() - t0:.1f} s")
        worst = max([worst] + codes)
    return worst


if __name__ == "__main__":
    sys.exit(main())
