"""Deterministic against randomized weights, and the law of H - H_min."""

import argparse

from postcp.studies import counterexample_bound, counterexample_study, h_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--samples", type=int, default=5000)
    a = p.parse_args()

    res = counterexample_study()
    print(f"counterexample miscoverage: nonrandomized {res.nonrandomized:.4f} "
          f"(population {counterexample_bound():.4f}), randomized {res.randomized:.4f}")
    for key, (x0, x1) in res.by_x.items():
        print(f"  {key:14s} x=0 {x0:.4f}  x=1 {x1:.4f}")

    for rounded in (False, True):
        print("integer counts" if rounded else "expected counts")
        for c in h_study(m=a.m, n_samples=a.samples, round_counts=rounded):
            print(f"  lambda {c.lam}: KS {c.ks:.4f}, mean {c.mean:.4f} vs limit "
                  f"{c.target_mean:.4f} (z {c.mean_z:+.2f}), exact finite-m mean "
                  f"{c.exact_mean:.4f}")


if __name__ == "__main__":
    main()
