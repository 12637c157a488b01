"""Calibration of level-adaptive prediction sets."""

import argparse

from postcp.studies import classification_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--window", type=int, default=1000)
    a = p.parse_args()
    res = classification_study(m=a.m, window=a.window)
    print(f"max |local coverage - local mean level| {res.max_deviation:.4f}")
    print("level  n      miscoverage  alpha")
    for lv, n, mis in zip(res.bucket_level, res.bucket_size, res.bucket_miscoverage):
        print(f"{lv:.2f}   {n:<6d} {mis:.4f}       {1 - lv:.2f}")


if __name__ == "__main__":
    main()
