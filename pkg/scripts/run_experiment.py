#!/usr/bin/env python3
"""Run the full seeded experiment grid and summarize it.

Thin driver over the library: builds the clearance maps, flies every
(difficulty level x track x mode) trial, writes metrics + trajectories +
manifest into the output directory, then prints the summary table.

Usage:
    python3 scripts/run_experiment.py --out results/ [--config cfg.yaml]
        [--levels 0,0.5,1.0,1.5] [--tracks 10]
        [--modes baseline,filtered,filtered_uncertainty]
"""
import sys

from gatesafe.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    rc = main(["run", *argv])
    if rc == 0:
        out = argv[argv.index("--out") + 1]
        rc = main(["report", "--run", out])
    sys.exit(rc)
