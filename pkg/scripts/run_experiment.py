"""Run an experiment config and print the coverage table.

    python scripts/run_experiment.py scripts/configs/setting1.json --jobs 2
"""

import argparse
import sys

from postcp.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    a = p.parse_args()
    argv = ["run", "--config", a.config, "--jobs", str(a.jobs)]
    if a.out:
        argv += ["--out", a.out]
    if a.seed is not None:
        argv += ["--seed", str(a.seed)]
    sys.exit(main(argv))
