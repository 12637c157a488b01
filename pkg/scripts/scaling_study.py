"""Runtime of PCP against the validation size, and the PAC spread of miscoverage."""

import argparse

import numpy as np

from postcp.studies import pac_study, timing_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--pac-reps", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--skip-pac", action="store_true")
    a = p.parse_args()
    t = timing_study()
    for n, s in zip(t.sizes, t.seconds):
        print(f"n={n:6.0f}  {s:.2f} s")
    print(f"R^2 of the linear fit {t.r2:.4f}")
    if not a.skip_pac:
        rows = pac_study(reps=a.pac_reps, jobs=a.jobs)
        print(f"per-repetition miscoverage: mean {rows[:, 0].mean():.4f}, "
              f"sd {rows[:, 0].std(ddof=1):.4f}, 90th percentile "
              f"{np.quantile(rows[:, 0], 0.9):.4f}")


if __name__ == "__main__":
    main()
