#!/usr/bin/env python3
"""Reproduce the buffer-regulation experiment end to end.

Runs the three control scenarios on the bundled production-line
configuration, writes their CSV logs under --out, and (when the figure
frontend has been built) renders the three figure families.

    python scripts/run_experiment.py --out out/experiment
"""
import argparse
import shutil
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ("compensated", "uncompensated", "open_loop")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/experiment")
    parser.add_argument("--skip-figures", action="store_true")
    args = parser.parse_args()
    out = Path(args.out)

    from delayline.cli import main as cli_main

    run_dirs = []
    for scenario in SCENARIOS:
        cfg = ROOT / "configs" / f"production_line_{scenario}.cfg"
        dest = out / scenario
        print(f"== {scenario} ==")
        rc = cli_main(["run", str(cfg), "--out", str(dest)])
        if rc != 0:
            return rc
        run_dirs.append(dest)

    fig_cli = ROOT / "frontend" / "dist" / "cli.js"
    if args.skip_figures:
        return 0
    if not fig_cli.exists() or shutil.which("node") is None:
        print("figure frontend not built (see frontend/README note); skipping figures")
        return 0
    fig_out = out / "figures"
    cmd = ["node", str(fig_cli), *map(str, run_dirs), "--out", str(fig_out)]
    print("== figures ==")
    return subprocess.run(cmd).returncode


if __name__ == "__main__":
    sys.exit(main())
