#!/usr/bin/env python3
"""Export safest-action fields for the nominal and the inflated map.

Builds both clearance maps at the configured resolution, then writes two
CSVs of per-node safest actions on the gate plane (yz at x = 0 by default)
so the widening of the unsafe region under estimation uncertainty can be
plotted side by side.

Usage:
    python3 scripts/export_action_maps.py --out-dir maps/ [--config cfg.yaml]
        [--plane yz] [--offset 0.0] [--speed 2.0] [--samples 72]
"""
import argparse
import os
import sys

from gatesafe.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", required=True, help="directory for maps and CSVs")
    parser.add_argument("--config", help="YAML config (defaults when omitted)")
    parser.add_argument("--plane", choices=("xy", "yz"), default="yz")
    parser.add_argument("--offset", type=float, default=0.0)
    parser.add_argument("--speed", type=float, default=2.0)
    parser.add_argument("--samples", type=int, default=72)
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    cfg_flags = ["--config", args.config] if args.config else []
    nominal = os.path.join(args.out_dir, "nominal.esdf")
    inflated = os.path.join(args.out_dir, "inflated.esdf")

    rc = cli_main(["build-map", *cfg_flags, "--out", nominal])
    if rc:
        return rc
    # Inflate by the gate-pose estimation bound so the map already prices in
    # the worst-case perception error.
    from gatesafe.config import load_config, Config

    cfg = load_config(args.config) if args.config else Config()
    dv = ",".join(f"{v:g}" for v in cfg.noise.dv)
    rc = cli_main(["build-map", *cfg_flags, "--out", inflated, "--inflate", dv])
    if rc:
        return rc

    common = [
        "--plane", args.plane,
        "--offset", f"{args.offset:g}",
        "--speed", f"{args.speed:g}",
        "--samples", str(args.samples),
        *cfg_flags,
    ]
    rc = cli_main(["field", "--map", nominal, *common,
                   "--out", os.path.join(args.out_dir, "actions_nominal.csv")])
    if rc:
        return rc
    return cli_main(["field", "--map", inflated, *common,
                     "--out", os.path.join(args.out_dir, "actions_inflated.csv")])


if __name__ == "__main__":
    sys.exit(main())
