"""Repetition harness: configs, per-repetition method runs and CSV emission."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import PcpConfig, rng_stream
from .evaluation import length_summary, write_metrics, worst_slice_coverage
from .fairness import equalized_pcp_intervals, fit_propensity, gen_fairness_data
from .models import Standardizer, TabularDataset, make_regressor, read_csv
from .pcp import PcpModel
from .scp_baselines import PredictionInterval, rlcp_intervals, scp_radius
from .synthetic import gen_setting

log = logging.getLogger(__name__)

EXPERIMENTS = ("setting1", "setting2", "fairness")
METHODS = ("scp", "rlcp", "pcp", "scp_partition", "equalized_pcp")
GROUP_METHODS = ("scp_partition", "equalized_pcp")
FAILURE_SHARE = 0.05


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class PcpSection:
    K: int | None = None
    m: int | None = None
    s: int = 9
    folds: int = 20
    mode: str = "project"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    Exactly one of ``experiment`` (a synthetic generator) and ``data_csv``
    (rows split at random per repetition) must be given.
    """

    methods: tuple
    reps: int
    seed: int = 0
    alpha: float = 0.1
    experiment: str | None = None
    data_csv: str | None = None
    sizes: dict = field(default_factory=lambda: {"train": 1000, "val": 1000, "test": 1000})
    pcp: PcpSection = PcpSection()
    regressor: dict = field(default_factory=lambda: {"name": "knn", "k": 20})
    fair_m: int = 50
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "pcp" in d:
            pcp = dict(d["pcp"] or {})
            bad = set(pcp) - set(PcpSection.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown pcp keys: {sorted(bad)}")
            d["pcp"] = PcpSection(**pcp)
        for key in ("methods", "reps"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        d["methods"] = tuple(d["methods"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with Path(path).open() as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        if (self.experiment is None) == (self.data_csv is None):
            raise ConfigError("give exactly one of 'experiment' and 'data_csv'")
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not self.methods:
            raise ConfigError("no methods given")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if not isinstance(self.reps, int) or self.reps <= 0:
            raise ConfigError("reps must be a positive integer")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        for key in ("train", "val", "test"):
            if int(self.sizes.get(key, 0)) < 1:
                raise ConfigError(f"sizes.{key} must be positive")
        if set(self.sizes) - {"train", "val", "test"}:
            raise ConfigError("sizes accepts only train, val and test")
        if self.pcp.mode not in ("project", "augmented", "refit"):
            raise ConfigError(f"unknown pcp mode {self.pcp.mode!r}")
        try:
            make_regressor(self.regressor)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.experiment in ("setting1", "setting2") and set(self.methods) & set(GROUP_METHODS):
            raise ConfigError("group methods need the fairness experiment or a group column")

    def to_json(self) -> str:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return json.dumps(d, indent=2, sort_keys=True)


# ----------------------------------------------------------------- data


def make_splits(cfg: ExperimentConfig, rep: int, source: TabularDataset | None = None):
    """Train, validation and test splits for one repetition."""
    rng = rng_stream(cfg.seed, rep, 0)
    n = {k: int(cfg.sizes[k]) for k in ("train", "val", "test")}
    if cfg.experiment in ("setting1", "setting2"):
        mode = 1 if cfg.experiment == "setting1" else 2
        return tuple(gen_setting(mode, n[k], rng) for k in ("train", "val", "test"))
    if cfg.experiment == "fairness":
        return tuple(gen_fairness_data(n[k], rng)[0] for k in ("train", "val", "test"))
    total = sum(n.values())
    if total > len(source):
        raise ConfigError(f"split sizes need {total} rows, the CSV has {len(source)}")
    perm = rng.permutation(len(source))
    a, b = n["train"], n["train"] + n["val"]
    return source.subset(perm[:a]), source.subset(perm[a:b]), source.subset(perm[b:total])


# -------------------------------------------------------------- methods


@dataclass
class MethodResult:
    covered: np.ndarray
    lengths: np.ndarray
    intervals: list
    seconds: float


def _pack(intervals, y, seconds) -> MethodResult:
    covered = np.array([iv.contains(v) for iv, v in zip(intervals, y)], dtype=bool)
    lengths = np.array([iv.length for iv in intervals])
    return MethodResult(covered, lengths, intervals, seconds)


def run_methods(train, val, test, methods, alpha: float, pcp_cfg: PcpSection,
                seed: int, regressor=None, fair_m: int = 50) -> tuple[dict, object]:
    """Fit the shared predictor and produce intervals for each method.

    Returns ``(results, pcp_model)`` where ``pcp_model`` is ``None`` unless
    ``"pcp"`` was requested.
    """
    fit_fn = make_regressor(regressor or {"name": "knn", "k": 20})
    t0 = time.perf_counter()
    mu = fit_fn(train.features, train.responses)
    R = np.abs(val.responses - mu.predict(val.features))
    mu_test = mu.predict(test.features)
    base = time.perf_counter() - t0
    out, model = {}, None
    for name in methods:
        t0 = time.perf_counter()
        if name == "scp":
            r = scp_radius(R, alpha)
            ivs = [PredictionInterval.symmetric(c, r) for c in mu_test]
        elif name == "rlcp":
            sc = Standardizer.fit(val.features)
            ivs = rlcp_intervals(sc.transform(val.features), R, sc.transform(test.features),
                                 mu_test, alpha, rng=rng_stream(seed, 21))
        elif name == "pcp":
            cfg = PcpConfig(alpha, pcp_cfg.K, pcp_cfg.m, pcp_cfg.s, pcp_cfg.folds, seed)
            model = PcpModel.fit(train, val, cfg, fit_fn, mode=pcp_cfg.mode, mu_hat=mu)
            ivs = model.intervals(test.features)
        elif name == "scp_partition":
            _need_groups(val, test)
            radius = {a: scp_radius(R[val.group == a], alpha) for a in (0, 1)
                      if np.any(val.group == a)}
            if any(a not in radius for a in test.group):
                raise ValueError("empty partition cell")
            ivs = [PredictionInterval.symmetric(c, radius[a]) for c, a in zip(mu_test, test.group)]
        elif name == "equalized_pcp":
            _need_groups(val, test)
            prop = fit_propensity(train.features, train.group)
            ivs, _ = equalized_pcp_intervals(R, val.group, prop.predict(val.features),
                                             prop.predict(test.features), test.group,
                                             mu_test, alpha, fair_m, rng_stream(seed, 22))
        else:
            raise ConfigError(f"unknown method {name!r}")
        out[name] = _pack(ivs, test.responses, base + time.perf_counter() - t0)
    return out, model


def _need_groups(*datasets):
    if any(d.group is None for d in datasets):
        raise ValueError("method needs a group column")


def rep_metrics(rep: int, results: dict, test, seed: int) -> list[tuple]:
    """Deterministic metrics for one repetition; wall-clock times are kept apart."""
    rows = []
    for name, res in results.items():
        centers = np.array([iv.center for iv in res.intervals])
        summary = length_summary(res.lengths, test.responses - centers)
        rows += [
            (rep, name, "coverage", res.covered.mean()),
            (rep, name, "mean_length", summary.mean_length),
            (rep, name, "n_infinite", summary.n_infinite),
        ]
        if len(res.covered) >= 50:
            ws = worst_slice_coverage(test.features, res.covered, rng_stream(seed, rep, 3),
                                      n_dirs=500)
            rows.append((rep, name, "worst_slice_coverage", ws))
        if test.group is not None:
            for a in (0, 1):
                sel = test.group == a
                if sel.any():
                    rows.append((rep, name, f"coverage_group{a}", res.covered[sel].mean()))
    return rows


def run_rep(cfg: ExperimentConfig, rep: int) -> list[tuple]:
    source = read_csv(cfg.data_csv) if cfg.data_csv else None
    train, val, test = make_splits(cfg, rep, source)
    seed = int(rng_stream(cfg.seed, rep, 1).integers(2**31))
    results, _ = run_methods(train, val, test, cfg.methods, cfg.alpha, cfg.pcp, seed,
                             cfg.regressor, cfg.fair_m)
    timings = [(rep, name, "seconds", r.seconds) for name, r in results.items()]
    return rep_metrics(rep, results, test, seed), timings


def _safe_rep(args):
    cfg, rep = args
    try:
        rows, timings = run_rep(cfg, rep)
        return rep, rows, timings, None
    except Exception as exc:  # a failed repetition is logged and skipped
        return rep, [], [], f"{type(exc).__name__}: {exc}"


@dataclass
class ExperimentOutcome:
    rows: list
    failures: dict

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> ExperimentOutcome:
    """Run every repetition, write ``metrics.csv`` and echo the config.

    Rows are merged in repetition order, so ``metrics.csv`` does not depend
    on ``jobs``. Wall-clock times go to ``timings.csv``.
    """
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.to_json() + "\n")
    tasks = [(cfg, rep) for rep in range(cfg.reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_safe_rep, tasks))
    else:
        done = [_safe_rep(t) for t in tasks]
    rows, timings, failures = [], [], {}
    for rep, r, t, err in sorted(done, key=lambda x: x[0]):
        if err:
            log.error("repetition %d failed: %s", rep, err)
            failures[rep] = err
        rows += r
        timings += t
    if len(failures) > FAILURE_SHARE * cfg.reps:
        log.error("%d of %d repetitions failed", len(failures), cfg.reps)
    write_metrics(out_dir / "metrics.csv", rows)
    write_metrics(out_dir / "timings.csv", timings)
    return ExperimentOutcome(rows, failures)


def coverage_table(rows) -> dict:
    """Mean of each (method, metric) over repetitions."""
    acc = {}
    for _, method, metric, value in rows:
        acc.setdefault((method, metric), []).append(value)
    return {k: float(np.mean(v)) for k, v in acc.items()}
