#!/usr/bin/env python3
"""Two-advertiser repeated ad auction experiment: click and purchase
beliefs evolve as capped Beta posteriors while the mechanism allocates
by transformed indices.  Runs the environment validator, a simulated
episode, and the audit suites; artifacts land in the config's output
directory.  The full audit pass takes a few minutes."""

import sys
from pathlib import Path

from dynamech.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "sponsored_search_2.cfg"


def run() -> int:
    base = ["--config", str(CONFIG)]
    for step in (
        ["validate-env"],
        ["index", "--agent", "0", "--report", "0.9"],
        ["simulate"],
        ["audit", "--suite", "monotone"],
        ["audit", "--suite", "coupling"],
        ["bound"],
    ):
        print(f"\n$ dynamech {' '.join(step)}")
        code = main(base + step)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
