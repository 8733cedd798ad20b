"""Monte Carlo experiments: null distributions, power curves and radius tables.

Randomness layout (all from ``RngSpec(seed, experiment << 32 | trial)``):

* experiment 0 - null replicates used to calibrate goodness-of-fit tests
* experiment 1 - alternative / pair construction for trial ``t``
* experiment 2, 3 - the first and second samples of trial ``t``
* experiment 4 - permutations of trial ``t``
* experiment 5 - oracle calibration, keyed by a checksum of the null

Trial ``t`` uses the same streams at every grid epsilon, so curves are
built from common random numbers and each row is a pure function of
``(config, trial)``. Worker count only changes scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from hdmulti.alternatives import (
    ALTERNATIVE_KINDS,
    NULL_FAMILIES,
    PAIR_KINDS,
    AlternativeSpec,
    InfeasibleEpsilon,
    make_pair,
    perturb,
)
from hdmulti.calibration import (
    GofTest,
    NullCalibration,
    calibrate,
    conservative_rank,
    parse_method,
    permute_counts,
    statistic_test,
)
from hdmulti.gof import GOF_STATISTICS
from hdmulti.local import (
    DEFAULT_SIGMA_GRID,
    bonferroni_gof_test,
    bulk_tail_gof_test,
    global_rate,
    solve_local_radius,
)
from hdmulti.prob import ProbVector, RngSpec, read_prob_vector, sample_counts_batch, two_thirds_norm
from hdmulti.twosample import TWO_SAMPLE_STATISTICS

MODES = ("null-dist", "gof-power", "two-sample-power", "radius")
GOF_TESTS = tuple(GOF_STATISTICS) + ("bulk-tail", "bonferroni", "bonferroni-strict")
TWO_SAMPLE_TESTS = tuple(TWO_SAMPLE_STATISTICS) + ("oracle",)
DEFAULT_BULK_TAIL_SIGMA = 0.125

POWER_COLUMNS = ("scenario", "test", "eps_nominal", "eps_realized_mean", "power", "trials",
                 "n1", "n2", "d", "alpha", "calib", "seed")
NULL_COLUMNS = ("scenario", "test", "record", "key", "value", "bin_lo", "bin_hi", "count",
                "M", "n", "d", "calib", "seed")
RADIUS_COLUMNS = ("scenario", "null", "d", "n", "ell_n", "u_n", "global_rate", "two_thirds_norm")

_EXP_CALIB, _EXP_ALT, _EXP_X, _EXP_Y, _EXP_PERM, _EXP_ORACLE = range(6)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    null: str = "uniform"
    d: int = 100
    alt: str | None = None
    tests: list[str] = field(default_factory=list)
    n: int | None = None
    n1: int | None = None
    n2: int | None = None
    alpha: float = 0.05
    trials: int = 1000
    eps_grid: list[float] = field(default_factory=list)
    calib: str = "mc:5000"
    seed: int = 0
    scenario: str = ""
    oracle_calib: str = "mc:1000"
    pair_n: int | None = None
    sigma_grid: list[float] = field(default_factory=lambda: list(DEFAULT_SIGMA_GRID))
    bins: int = 50
    d_grid: list[int] = field(default_factory=list)
    n_grid: list[int] = field(default_factory=list)
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}; valid keys are {sorted(known)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> ExperimentConfig:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {list(MODES)}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if any(b <= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ConfigError("eps grid must be strictly increasing")
        if any(e < 0 for e in self.eps_grid):
            raise ConfigError("eps grid must be non-negative")
        if not self.null.startswith("file:") and self.null not in NULL_FAMILIES:
            raise ConfigError(f"unknown null {self.null!r}; choose from {sorted(NULL_FAMILIES)} or file:PATH")
        try:
            parse_method(self.calib)
            parse_method(self.oracle_calib)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.mode in ("null-dist", "gof-power"):
            if not self.n or self.n < 1:
                raise ConfigError(f"{self.mode} needs n >= 1")
            for name in self.tests:
                _check_gof_name(name)
            if self.mode == "gof-power":
                if self.alt not in ALTERNATIVE_KINDS:
                    raise ConfigError(f"unknown alternative {self.alt!r}; choose from {list(ALTERNATIVE_KINDS)}")
                if not self.tests or not self.eps_grid:
                    raise ConfigError("gof-power needs tests and an eps grid")
        if self.mode == "two-sample-power":
            if not self.n1 or not self.n2 or self.n1 < 1 or self.n2 < 1:
                raise ConfigError("two-sample-power needs n1, n2 >= 1")
            if self.alt not in PAIR_KINDS:
                raise ConfigError(f"unknown pair {self.alt!r}; choose from {list(PAIR_KINDS)}")
            for name in self.tests:
                if name not in TWO_SAMPLE_TESTS:
                    raise ConfigError(f"unknown two-sample test {name!r}; choose from {list(TWO_SAMPLE_TESTS)}")
            if "chi2" in self.tests and self.n1 != self.n2:
                raise ConfigError("test chi2 needs n1 == n2; use chi2-imbalanced")
            if not self.tests or not self.eps_grid:
                raise ConfigError("two-sample-power needs tests and an eps grid")
            if parse_method(self.calib)[0] != "perm":
                raise ConfigError("two-sample tests are calibrated by permutation (perm:B)")
        if self.mode == "radius" and not (self.d_grid or self.d):
            raise ConfigError("radius needs d or d_grid")
        return self


def _check_gof_name(name: str):
    base, _, arg = name.partition(":")
    if base not in GOF_TESTS:
        raise ConfigError(f"unknown test {name!r}; choose from {list(GOF_TESTS)}")
    if arg:
        if base != "bulk-tail":
            raise ConfigError(f"test {base!r} takes no parameter")
        try:
            sigma = float(arg)
        except ValueError:
            raise ConfigError(f"bad sigma in {name!r}") from None
        if not 0 <= sigma <= 1:
            raise ConfigError(f"sigma must lie in [0, 1] in {name!r}")


def resolve_null(spec: str, d: int) -> ProbVector:
    if spec.startswith("file:"):
        return read_prob_vector(spec[5:])
    try:
        return NULL_FAMILIES[spec](d)
    except KeyError:
        raise ConfigError(f"unknown null {spec!r}; choose from {sorted(NULL_FAMILIES)} or file:PATH") from None


def build_gof_test(name: str, p0: ProbVector, n: int, sigma_grid=DEFAULT_SIGMA_GRID) -> GofTest:
    """Registry lookup: plain statistic, ``bulk-tail[:sigma]`` or ``bonferroni``."""
    _check_gof_name(name)
    base, _, arg = name.partition(":")
    if base == "bulk-tail":
        test = bulk_tail_gof_test(p0, float(arg) if arg else DEFAULT_BULK_TAIL_SIGMA, n)
    elif base in ("bonferroni", "bonferroni-strict"):
        test = bonferroni_gof_test(p0, n, sigma_grid, joint=base == "bonferroni")
    else:
        test = statistic_test(base, p0)
    return GofTest(name, test.arms, test.details, test.joint)


@dataclass(frozen=True)
class PowerRow:
    scenario: str
    test: str
    eps_nominal: float
    eps_realized_mean: float | None
    power: float | None
    trials: int
    n1: int
    n2: int | None
    d: int
    alpha: float
    calib: str
    seed: int


@dataclass
class PowerCurve:
    rows: list[PowerRow]

    def for_test(self, test: str) -> list[PowerRow]:
        return [r for r in self.rows if r.test == test]

    def to_csv(self) -> str:
        return _write_csv(POWER_COLUMNS, (asdict(r) for r in self.rows))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.10g}"
    return str(value)


def _write_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _mc_size(calib: str) -> int | None:
    kind, size = parse_method(calib)
    return size if kind == "mc" else None


def _calibrate_gof(config: ExperimentConfig, p0: ProbVector, n: int) -> dict[str, object]:
    """Calibrated decision rule per test: a ``NullCalibration`` or analytic thresholds."""
    kind, M = parse_method(config.calib)
    tests = {name: build_gof_test(name, p0, n, config.sigma_grid) for name in config.tests}
    if kind == "analytic":
        out = {}
        for name, test in tests.items():
            if any(arm.analytic is None for arm in test.arms):
                raise ConfigError(f"test {name!r} has no analytic threshold; use mc:M")
            out[name] = (test, np.array([arm.analytic(config.alpha * arm.share) for arm in test.arms]))
        return out
    if kind != "mc":
        raise ConfigError("goodness-of-fit power curves are calibrated with mc:M or analytic")
    for test in tests.values():
        for arm in () if test.joint else test.arms:
            try:
                conservative_rank(M, config.alpha * arm.share)
            except ValueError as exc:
                raise ConfigError(f"{test.name}: {exc}") from None
    null_counts = sample_counts_batch(p0, n, M, RngSpec(config.seed).substream(_EXP_CALIB, 0))
    return {name: calibrate(test, p0, n, M, None, null_counts) for name, test in tests.items()}


def _decide(rule, counts: np.ndarray, alpha: float) -> np.ndarray:
    if isinstance(rule, NullCalibration):
        return rule.decide(counts, alpha)
    test, thresholds = rule
    return np.any(test.evaluate(counts) > thresholds[:, None], axis=0)


def run_gof_power(config: ExperimentConfig) -> PowerCurve:
    config.validate()
    if config.mode != "gof-power":
        raise ConfigError("run_gof_power needs mode gof-power")
    p0 = resolve_null(config.null, config.d)
    d, n = p0.d, config.n
    rules = _calibrate_gof(config, p0, n)
    root = RngSpec(config.seed)
    rows = []
    for eps in config.eps_grid:
        fixed_q = None
        if config.alt == "sparse" or eps == 0:
            try:
                fixed_q = perturb(p0, AlternativeSpec(config.alt, eps)).probs
            except InfeasibleEpsilon:
                rows += _skipped(config, eps, d)
                continue

        def trial(t, eps=eps, fixed_q=fixed_q):
            q = fixed_q
            if q is None:
                q = perturb(p0, AlternativeSpec(config.alt, eps, root.substream(_EXP_ALT, t))).probs
            x = root.substream(_EXP_X, t).generator().multinomial(n, q)
            return x, float(np.abs(q - p0.probs).sum())

        try:
            results = _map(trial, range(config.trials), config.workers)
        except InfeasibleEpsilon:
            rows += _skipped(config, eps, d)
            continue
        counts = np.stack([r[0] for r in results]).astype(np.int64)
        realized = float(np.mean([r[1] for r in results]))
        for name in config.tests:
            power = float(np.mean(_decide(rules[name], counts, config.alpha)))
            rows.append(PowerRow(config.scenario, name, eps, realized, power, config.trials,
                                 n, None, d, config.alpha, config.calib, config.seed))
    return PowerCurve(rows)


def _skipped(config, eps, d):
    n1 = config.n if config.mode == "gof-power" else config.n1
    n2 = None if config.mode == "gof-power" else config.n2
    return [PowerRow(config.scenario, name, eps, None, None, config.trials, n1, n2, d,
                     config.alpha, config.calib, config.seed) for name in config.tests]


class _OracleCache:
    """Monte Carlo null of the oracle's truncated chi-square, one per distinct ``p``."""

    def __init__(self, n2: int, M: int, seed: int):
        self.n2, self.M, self.seed = n2, M, seed
        self._store: dict[bytes, NullCalibration] = {}
        self._lock = threading.Lock()

    def get(self, p: ProbVector) -> NullCalibration:
        key = p.probs.tobytes()
        with self._lock:
            cal = self._store.get(key)
        if cal is not None:
            return cal
        rng = RngSpec(self.seed).substream(_EXP_ORACLE, zlib.crc32(key))
        cal = calibrate(statistic_test("trunc-chi2", p), p, self.n2, self.M, rng)
        with self._lock:
            return self._store.setdefault(key, cal)


def run_two_sample_power(config: ExperimentConfig) -> PowerCurve:
    config.validate()
    if config.mode != "two-sample-power":
        raise ConfigError("run_two_sample_power needs mode two-sample-power")
    _, B = parse_method(config.calib)
    alpha, n1, n2 = config.alpha, config.n1, config.n2
    try:
        conservative_rank(B, alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    stats = [t for t in config.tests if t != "oracle"]
    oracle = None
    if "oracle" in config.tests:
        M = _mc_size(config.oracle_calib)
        if M is None:
            raise ConfigError("oracle_calib must be mc:M")
        oracle = _OracleCache(n2, M, config.seed)
    pair_n = config.pair_n or n1
    root = RngSpec(config.seed)
    rows = []
    for eps in config.eps_grid:

        def trial(t, eps=eps):
            p, q = make_pair(config.alt, config.d, pair_n, eps, root.substream(_EXP_ALT, t))
            x = root.substream(_EXP_X, t).generator().multinomial(n1, p.probs)
            y = root.substream(_EXP_Y, t).generator().multinomial(n2, q.probs)
            out = {}
            if stats:
                xb, yb = permute_counts(x, y, B, root.substream(_EXP_PERM, t))
                xs = np.vstack([x[None, :], xb])
                ys = np.vstack([y[None, :], yb])
                for name in stats:
                    values = np.asarray(TWO_SAMPLE_STATISTICS[name](xs, ys))
                    pvalue = (1 + np.count_nonzero(values[1:] >= values[0])) / (B + 1)
                    out[name] = pvalue <= alpha
            if oracle is not None:
                out["oracle"] = bool(oracle.get(p).decide(y, alpha)[0])
            return out, float(np.abs(p.probs - q.probs).sum())

        try:
            results = _map(trial, range(config.trials), config.workers)
        except InfeasibleEpsilon:
            rows += _skipped(config, eps, config.d)
            continue
        realized = float(np.mean([r[1] for r in results]))
        for name in config.tests:
            power = float(np.mean([r[0][name] for r in results]))
            rows.append(PowerRow(config.scenario, name, eps, realized, power, config.trials,
                                 n1, n2, config.d, alpha, config.calib, config.seed))
    return PowerCurve(rows)


def _skewness(values: np.ndarray) -> float:
    centered = values - values.mean()
    var = np.mean(centered**2)
    if var == 0:
        return 0.0
    return float(np.mean(centered**3) / var**1.5)


QUANTILES = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


def run_null_dist(config: ExperimentConfig) -> list[dict]:
    """Summary and histogram records of each statistic under the null.

    Multi-arm tests contribute one series per arm.
    """
    config.validate()
    if config.mode != "null-dist":
        raise ConfigError("run_null_dist needs mode null-dist")
    M = _mc_size(config.calib)
    if M is None:
        raise ConfigError("null-dist needs calib mc:M")
    p0 = resolve_null(config.null, config.d)
    n = config.n
    counts = sample_counts_batch(p0, n, M, RngSpec(config.seed).substream(_EXP_CALIB, 0))
    base = dict(scenario=config.scenario, M=M, n=n, d=p0.d, calib=config.calib, seed=config.seed)
    records = []
    for name in config.tests or list(GOF_STATISTICS):
        test = build_gof_test(name, p0, n, config.sigma_grid)
        values = test.evaluate(counts)
        for arm, series in zip(test.arms, values):
            label = name if len(test.arms) == 1 else f"{name}/{arm.label}"
            records += _summarize(label, series, config.bins, base)
    return records


def _summarize(label, series, bins, base):
    out = []
    finite = series[np.isfinite(series)]
    stats = {
        "mean": float(finite.mean()) if finite.size else math.nan,
        "variance": float(finite.var(ddof=1)) if finite.size > 1 else 0.0,
        "skewness": _skewness(finite) if finite.size else math.nan,
        "infinite_fraction": float(1 - finite.size / series.size),
    }
    for q in QUANTILES:
        stats[f"q{round(q * 100):02d}"] = float(np.quantile(finite, q)) if finite.size else math.nan
    for key, value in stats.items():
        out.append(dict(base, test=label, record="summary", key=key, value=value))
    if finite.size:
        lo, hi = float(finite.min()), float(finite.max())
        if lo == hi:
            hi = lo + 1.0
        hist, edges = np.histogram(finite, bins=bins, range=(lo, hi))
        for i, c in enumerate(hist):
            out.append(dict(base, test=label, record="hist", key=str(i),
                            bin_lo=float(edges[i]), bin_hi=float(edges[i + 1]), count=int(c)))
    return out


def null_dist_csv(records: list[dict]) -> str:
    return _write_csv(NULL_COLUMNS, records)


def run_radius(config: ExperimentConfig) -> list[dict]:
    config.validate()
    d_grid = config.d_grid or [config.d]
    n_grid = config.n_grid or [config.n or 100]
    rows = []
    for d in d_grid:
        p0 = resolve_null(config.null, d)
        norm = two_thirds_norm(p0)
        for n in n_grid:
            bounds = solve_local_radius(p0, n)
            rows.append(dict(scenario=config.scenario, null=config.null, d=p0.d, n=n,
                             ell_n=bounds.ell_n, u_n=bounds.u_n,
                             global_rate=global_rate(p0.d, n), two_thirds_norm=norm))
    return rows


def radius_csv(rows: list[dict]) -> str:
    return _write_csv(RADIUS_COLUMNS, rows)


def run(config: ExperimentConfig) -> str:
    """Run any experiment and return its CSV text."""
    config.validate()
    if config.mode == "gof-power":
        return run_gof_power(config).to_csv()
    if config.mode == "two-sample-power":
        return run_two_sample_power(config).to_csv()
    if config.mode == "null-dist":
        return null_dist_csv(run_null_dist(config))
    return radius_csv(run_radius(config))
