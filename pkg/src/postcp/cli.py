"""Command line entry point: ``run``, ``gen``, ``fit``, ``interval`` and ``timing``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import PcpConfig, rng_stream
from .experiment import ConfigError, ExperimentConfig, coverage_table, run_experiment
from .fairness import gen_fairness_data
from .models import Standardizer, make_regressor, read_csv, write_csv
from .pcp import PcpModel
from .scp_baselines import rlcp_interval, scp_interval
from .synthetic import gen_known_mixture, gen_setting

log = logging.getLogger("postcp")

GENERATORS = ("setting1", "setting2", "fairness", "known_mixture")


def _setup_logging():
    level = os.environ.get("PCP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _pcp_config(args) -> dict:
    if not args.config:
        return {}
    with Path(args.config).open() as fh:
        d = json.load(fh)
    return dict(d.get("pcp", d))


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out or cfg.output_dir)
    outcome = run_experiment(cfg, out, jobs=args.jobs)
    table = coverage_table(outcome.rows)
    for (method, metric), value in sorted(table.items()):
        if metric in ("coverage", "mean_length", "worst_slice_coverage"):
            print(f"{method:15s} {metric:22s} {value:.4f}")
    if outcome.failures:
        print(f"{len(outcome.failures)} of {cfg.reps} repetitions failed", file=sys.stderr)
        return 1
    return 0


def cmd_gen(args) -> int:
    rng = rng_stream(args.seed or 0, 0)
    if args.experiment in ("setting1", "setting2"):
        data = gen_setting(1 if args.experiment == "setting1" else 2, args.n, rng)
    elif args.experiment == "fairness":
        data = gen_fairness_data(args.n, rng)[0]
    else:
        data = gen_known_mixture(args.n, args.components, rng=rng).dataset()
    write_csv(args.out, data)
    return 0


def _fit_model(args) -> PcpModel:
    pcp = _pcp_config(args)
    mode = pcp.pop("mode", "project")
    cfg = PcpConfig(alpha=args.alpha, seed=args.seed or 0,
                    **{k: pcp[k] for k in ("K", "m", "s", "folds") if k in pcp})
    return PcpModel.fit(read_csv(args.train), read_csv(args.val), cfg,
                        make_regressor({"name": "knn", "k": 20}), mode=mode)


def cmd_fit(args) -> int:
    model = _fit_model(args)
    text = model.membership_model().to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_interval(args) -> int:
    test = read_csv(args.test)
    if not 0 <= args.row < len(test):
        raise ConfigError(f"row {args.row} out of range for {len(test)} rows")
    x = test.features[args.row]
    if args.method == "pcp":
        model = _fit_model(args)
        iv = model.interval(x, index=args.row)
        extra = {"K": model.K, "m": model.m, "counts": iv.trace["counts"]}
    else:
        train, val = read_csv(args.train), read_csv(args.val)
        mu = make_regressor({"name": "knn", "k": 20})(train.features, train.responses)
        R = np.abs(val.responses - mu.predict(val.features))
        center = float(mu.predict(x[None])[0])
        if args.method == "scp":
            iv = scp_interval(R, center, args.alpha)
        else:
            sc = Standardizer.fit(val.features)
            iv = rlcp_interval(sc.transform(val.features), R, sc.transform(x[None])[0],
                               center, args.alpha, rng=rng_stream(args.seed or 0, 21))
        extra = {}
    print(json.dumps({"method": args.method, "row": args.row, "lower": iv.lower,
                      "upper": iv.upper, "flags": list(iv.flags), **extra}))
    return 0


def cmd_timing(args) -> int:
    from .studies import timing_study
    sizes = [int(s) for s in args.sizes.split(",")]
    res = timing_study(sizes, n_test=args.n_test, seed=args.seed or 0, repeats=args.repeats)
    rows = list(zip(res.sizes.astype(int), res.seconds))
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "seconds"])
            w.writerows(rows)
    for n, s in rows:
        print(f"n={n:6d}  {s:8.3f} s")
    print(f"linear fit R^2 = {res.r2:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="postcp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("run", help="run an experiment config")
    common(sp, config_required=True)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    common(sp)
    sp.add_argument("experiment", choices=GENERATORS)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--components", type=int, default=3)
    sp.set_defaults(fn=cmd_gen)

    for name, fn, help_ in (("fit", cmd_fit, "fit PCP and dump the membership model"),
                            ("interval", cmd_interval, "interval for one test row")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--train", required=True)
        sp.add_argument("--val", required=True)
        sp.add_argument("--alpha", type=float, default=0.1)
        if name == "interval":
            sp.add_argument("--test", required=True)
            sp.add_argument("--row", type=int, default=0)
            sp.add_argument("--method", choices=("pcp", "scp", "rlcp"), default="pcp")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("timing", help="interval time against validation size")
    common(sp)
    sp.add_argument("--sizes", default="2000,4000,6000,8000,10000")
    sp.add_argument("--n-test", type=int, default=1000)
    sp.add_argument("--repeats", type=int, default=3)
    sp.set_defaults(fn=cmd_timing)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "gen" and not args.out:
        build_parser().error("gen needs --out")
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
