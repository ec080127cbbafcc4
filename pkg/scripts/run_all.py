#!/usr/bin/env python3
"""Reproduce every shipped result in one go.

Verifies each fixture config in ``fixtures/``, certifies the device-bench
config, audits the instance brackets of one scenario, then runs the
randomized suite.  All reports land in the output directory; the exit code
is the number of failed steps.

    python scripts/run_all.py --seed 20250817 --out results/ [--sizes tiny]
"""

import argparse
import sys
from pathlib import Path

from qkdcert.cli import EXIT_INVARIANT, EXIT_OK, main as cli

REPO = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO / "fixtures"

# config stem -> (subcommand, expected exit code); bad_stipulated must be
# refused, everything else must verify clean
STEPS = [
    ("good_device", "verify", EXIT_OK),
    ("coherent_laser", "verify", EXIT_OK),
    ("counterexample_l4", "verify", EXIT_OK),
    ("bad_stipulated", "verify", EXIT_INVARIANT),
    ("adaptive_degrading", "verify", EXIT_OK),
    ("device_cert", "certify", EXIT_OK),
    ("good_device", "audit", EXIT_OK),
]


def run(seed: int, out: str, sizes: str) -> int:
    failures = 0
    for stem, command, expected in STEPS:
        argv = [command, "--config", str(FIXTURE_DIR / f"{stem}.cfg"),
                "--seed", str(seed), "--out", out]
        if command == "verify" and stem.startswith("adaptive"):
            argv.append("--adaptive")
        code = cli(argv)
        status = "ok" if code == expected else f"EXIT {code}, expected {expected}"
        print(f"{command} {stem}: {status}")
        failures += code != expected

    code = cli(["suite", "--seed", str(seed), "--sizes", sizes, "--out", out])
    print(f"suite ({sizes}): {'ok' if code == EXIT_OK else f'EXIT {code}'}")
    failures += code != EXIT_OK
    return failures


def main_script() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=20250817)
    ap.add_argument("--out", default="results")
    ap.add_argument("--sizes", default="default",
                    choices=("tiny", "default", "large"))
    args = ap.parse_args()
    failures = run(args.seed, args.out, args.sizes)
    if failures:
        print(f"{failures} step(s) failed", file=sys.stderr)
    return failures


if __name__ == "__main__":
    sys.exit(main_script())
