#!/usr/bin/env python3
"""End-to-end posted-price experiment: validate the environment, dump the
transform and index tables, simulate one episode, then run every audit
suite.  All artifacts land under the config's output directory."""

import sys
from pathlib import Path

from dynamech.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "posted_price.cfg"


def run() -> int:
    base = ["--config", str(CONFIG)]
    for step in (
        ["validate-env"],
        ["transform"],
        ["index", "--agent", "0", "--report", "0.8"],
        ["simulate"],
        ["audit", "--suite", "all"],
    ):
        print(f"\n$ dynamech {' '.join(step)}")
        code = main(base + step)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
