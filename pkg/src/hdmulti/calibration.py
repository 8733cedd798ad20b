"""Simulation and permutation critical values.

A goodness-of-fit test is a set of *arms*: each arm is a statistic that
rejects when it exceeds its own threshold, calibrated at a fixed share of
the overall level. Plain statistics have a single arm at full level; the
bulk/tail test has two arms at half level each; the Bonferroni test has two
arms per grid point. The test rejects when any arm does.

Monte Carlo thresholds are the ``ceil((M+1)(1-alpha))``-th order statistic
of ``M`` null replicates, which makes ``stat > threshold`` equivalent to
the add-one p-value ``(1 + #{rep >= stat}) / (M + 1)`` being at most alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from hdmulti.gof import GOF_STATISTICS
from hdmulti.prob import CountVector, ProbVector, RngSpec, _as_generator, sample_counts_batch
from hdmulti.twosample import TWO_SAMPLE_STATISTICS, TwoSampleData

MIN_REPLICATES = 100
# bounds the (M, d) count matrix held in memory at once
_CHUNK_CELLS = 4_000_000


def conservative_rank(size: int, alpha: float) -> int:
    """1-based order statistic used as the level-``alpha`` threshold."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    k = math.ceil((size + 1) * (1 - alpha) - 1e-9)
    if k > size:
        need = math.ceil(1 / alpha - 1)
        raise ValueError(
            f"{size} replicates cannot resolve level {alpha:g}; use at least {need}"
        )
    return max(k, 1)


def add_one_pvalue(observed: float, replicates: np.ndarray) -> float:
    return (1 + int(np.count_nonzero(replicates >= observed))) / (replicates.size + 1)


@dataclass(frozen=True)
class Threshold:
    value: float
    alpha: float
    method: str  # "mc", "perm" or "analytic"
    size: int | None = None  # M or B
    seed: RngSpec | None = None

    def __post_init__(self):
        if self.method in ("mc", "perm") and (self.size is None or self.size < MIN_REPLICATES):
            raise ValueError(f"{self.method} calibration needs at least {MIN_REPLICATES} replicates")

    @property
    def label(self) -> str:
        return self.method if self.size is None else f"{self.method}:{self.size}"


@dataclass(frozen=True)
class ArmResult:
    label: str
    value: float
    threshold: float
    level: float
    pvalue: float | None = None

    @property
    def reject(self) -> bool:
        return self.value > self.threshold


@dataclass(frozen=True)
class TestReport:
    """Outcome of one test.

    For single-arm tests ``statistic`` is the raw statistic and
    ``threshold.value`` its critical value. For multi-arm tests
    ``statistic`` is the largest excess ``T_k - t_k`` over the arms and the
    threshold is 0, so ``reject == statistic > threshold.value`` holds for
    both. ``pvalue`` is Bonferroni-adjusted across arms, or the simulated
    family-wise p-value for jointly calibrated tests.
    """

    __test__ = False

    test: str
    statistic: float
    threshold: Threshold
    reject: bool
    pvalue: float | None = None
    arms: tuple[ArmResult, ...] = ()
    details: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = [
            f"test       {self.test}",
            f"statistic  {self.statistic:.6g}",
            f"threshold  {self.threshold.value:.6g}  ({self.threshold.label}, alpha={self.threshold.alpha:g})",
            f"reject     {self.reject}",
        ]
        if self.pvalue is not None:
            lines.append(f"p-value    {self.pvalue:.6g}")
        for arm in self.arms if len(self.arms) > 1 else ():
            lines.append(
                f"  arm {arm.label:<18} value={arm.value:.6g} threshold={arm.threshold:.6g} level={arm.level:.4g}"
            )
        for key, val in self.details.items():
            lines.append(f"{key:<10} {val}")
        return "\n".join(lines)


@dataclass(frozen=True)
class Arm:
    label: str
    statistic: Callable[[np.ndarray], np.ndarray]
    share: float = 1.0
    analytic: Callable[[float], float] | None = None


@dataclass(frozen=True)
class GofTest:
    """A union of arms.

    With ``joint=True`` all arms share one level and simulated calibration
    picks the largest common level whose family-wise null rejection rate
    stays within alpha (min-p calibration); analytic thresholds still use
    the fixed ``share`` split.
    """

    name: str
    arms: tuple[Arm, ...]
    details: dict = field(default_factory=dict)
    joint: bool = False

    def evaluate(self, counts) -> np.ndarray:
        """Arm statistics for a batch: array of shape (len(arms), m)."""
        batch = np.atleast_2d(np.asarray(counts))
        return np.stack([np.asarray(arm.statistic(batch), dtype=np.float64).reshape(-1) for arm in self.arms])


def statistic_test(name: str, p0) -> GofTest:
    """Single-arm test for one of the named goodness-of-fit statistics."""
    try:
        fn = GOF_STATISTICS[name]
    except KeyError:
        raise ValueError(f"unknown statistic {name!r}; choose from {sorted(GOF_STATISTICS)}") from None
    probs = np.asarray(p0, dtype=np.float64)
    return GofTest(name, (Arm(name, lambda batch: fn(batch, probs)),))


def simulate_null(p0, n: int, M: int, rng) -> np.ndarray:
    """``M`` count vectors drawn from the null, shape (M, d)."""
    if M < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} null replicates, got {M}")
    return sample_counts_batch(p0, n, M, rng)


@dataclass(frozen=True)
class NullCalibration:
    """Sorted null replicates of every arm of one test."""

    test: GofTest
    replicates: np.ndarray  # (arms, M), each row sorted ascending
    n: int
    seed: RngSpec | None = None
    raw: np.ndarray | None = None  # unsorted, columns are replicates; joint tests only

    @property
    def size(self) -> int:
        return self.replicates.shape[1]

    def thresholds(self, alpha: float) -> np.ndarray:
        if self.test.joint:
            j = self._joint_rank(alpha)
            return self.replicates[:, self.size - j] if j > 0 else np.full(len(self.test.arms), np.inf)
        out = np.empty(len(self.test.arms))
        for i, arm in enumerate(self.test.arms):
            k = conservative_rank(self.size, alpha * arm.share)
            out[i] = self.replicates[i, k - 1]
        return out

    def _exceed_counts(self, values: np.ndarray) -> np.ndarray:
        """``#{replicates >= v}`` per arm, for values of shape (arms, m)."""
        out = np.empty(values.shape, dtype=np.int64)
        for i in range(values.shape[0]):
            out[i] = self.size - np.searchsorted(self.replicates[i], values[i], side="left")
        return out

    def _null_min_ranks(self) -> np.ndarray:
        if self.raw is None:
            raise ValueError("joint calibration needs the unsorted replicates")
        cached = getattr(self, "_min_ranks", None)
        if cached is None:
            cached = np.sort(self._exceed_counts(self.raw).min(axis=0))
            object.__setattr__(self, "_min_ranks", cached)
        return cached

    def _joint_rank(self, alpha: float) -> int:
        """Largest ``j`` whose family-wise null rejection count fits in alpha.

        An arm value ``v`` is among the top ``j`` replicates when
        ``#{reps >= v} <= j - 1``. Replicate ``m`` ranked against the others
        is rejected at ``j`` when ``r_m <= j``, where ``r_m`` is its smallest
        exceed count over arms (self included). ``j`` is the largest value
        with ``(1 + #{m : r_m <= j}) / (M + 1) <= alpha``.
        """
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        ranks = self._null_min_ranks()
        budget = math.floor(alpha * (self.size + 1) + 1e-9) - 1
        if budget < 0:
            return 0
        if budget >= ranks.size:
            return self.size
        return int(ranks[budget]) - 1

    def joint_pvalue(self, values: np.ndarray) -> float:
        # the observation joins the reference set, like a replicate counting itself
        observed = int(self._exceed_counts(values[:, None]).min()) + 1
        return (1 + int(np.count_nonzero(self._null_min_ranks() <= observed))) / (self.size + 1)

    def decide(self, counts, alpha: float) -> np.ndarray:
        """Boolean rejections for a batch of count vectors."""
        values = self.test.evaluate(counts)
        return np.any(values > self.thresholds(alpha)[:, None], axis=0)

    def report(self, x, alpha: float) -> TestReport:
        values = self.test.evaluate(x)[:, 0]
        thresholds = self.thresholds(alpha)
        common = self._joint_rank(alpha) / (self.size + 1) if self.test.joint else None
        arms = tuple(
            ArmResult(
                arm.label,
                float(v),
                float(t),
                alpha * arm.share if common is None else common,
                add_one_pvalue(v, self.replicates[i]),
            )
            for i, (arm, v, t) in enumerate(zip(self.test.arms, values, thresholds))
        )
        threshold = Threshold(0.0 if len(arms) > 1 else float(thresholds[0]), alpha, "mc", self.size, self.seed)
        if self.test.joint:
            pvalue = self.joint_pvalue(values)
        else:
            pvalue = min(1.0, min(a.pvalue / arm.share for a, arm in zip(arms, self.test.arms)))
        return _assemble(self.test, arms, threshold, pvalue)


def _assemble(test: GofTest, arms: tuple[ArmResult, ...], threshold: Threshold, pvalue) -> TestReport:
    if len(arms) == 1:
        statistic = arms[0].value
    else:
        statistic = max(a.value - a.threshold for a in arms)
    reject = any(a.reject for a in arms)
    details = dict(test.details)
    rejecting = [a.label for a in arms if a.reject]
    if len(arms) > 1:
        details["rejecting_arms"] = rejecting
    return TestReport(test.name, float(statistic), threshold, reject, pvalue, arms, details)


def calibrate(test: GofTest, p0, n: int, M: int, rng, null_counts: np.ndarray | None = None) -> NullCalibration:
    """Null replicates of every arm of ``test``.

    ``null_counts`` lets several tests share one simulated null sample.
    """
    if null_counts is None:
        if M < MIN_REPLICATES:
            raise ValueError(f"need at least {MIN_REPLICATES} null replicates, got {M}")
        d = np.asarray(p0).shape[-1]
        gen = _as_generator(rng)
        chunk = max(1, _CHUNK_CELLS // max(d, 1))
        parts = []
        done = 0
        while done < M:
            m = min(chunk, M - done)
            parts.append(test.evaluate(sample_counts_batch(p0, n, m, gen)))
            done += m
        values = np.concatenate(parts, axis=1)
    else:
        if null_counts.shape[0] < MIN_REPLICATES:
            raise ValueError(f"need at least {MIN_REPLICATES} null replicates")
        values = test.evaluate(null_counts)
    raw = values.copy() if test.joint else None
    values.sort(axis=1)
    return NullCalibration(test, values, n, rng if isinstance(rng, RngSpec) else None, raw)


def mc_threshold(p0, statistic: str, n: int, alpha: float, M: int, rng) -> Threshold:
    """Level-``alpha`` Monte Carlo critical value for a named statistic."""
    test = statistic_test(statistic, p0)
    conservative_rank(M, alpha)
    cal = calibrate(test, p0, n, M, rng)
    return Threshold(float(cal.thresholds(alpha)[0]), alpha, "mc", M, rng if isinstance(rng, RngSpec) else None)


def parse_method(method) -> tuple[str, int | None]:
    """``"mc:5000"`` -> ("mc", 5000); ``"analytic"`` -> ("analytic", None)."""
    if isinstance(method, tuple):
        return method
    text = str(method).strip().lower()
    if text == "analytic":
        return "analytic", None
    kind, _, size = text.partition(":")
    if kind not in ("mc", "perm") or not size.isdigit():
        raise ValueError(f"bad calibration {method!r}; expected mc:M, perm:B or analytic")
    return kind, int(size)


def gof_test(x, p0, statistic, alpha: float, method="mc:5000", rng=None, calibration: NullCalibration | None = None) -> TestReport:
    """Test ``x`` against ``p0``; reject when the statistic exceeds its critical value.

    ``statistic`` is a name from ``GOF_STATISTICS`` or a prebuilt ``GofTest``.
    A precomputed ``calibration`` skips the null simulation.
    """
    x = x if isinstance(x, CountVector) else CountVector(x)
    p0 = p0 if isinstance(p0, ProbVector) else ProbVector(p0)
    if x.d != p0.d:
        raise ValueError(f"dimension mismatch: counts d={x.d}, null d={p0.d}")
    test = statistic if isinstance(statistic, GofTest) else statistic_test(statistic, p0)
    if calibration is not None:
        return calibration.report(x.counts, alpha)
    kind, size = parse_method(method)
    if kind == "analytic":
        if any(arm.analytic is None for arm in test.arms):
            raise ValueError(f"{test.name} has no analytic threshold; use mc:M")
        values = test.evaluate(x.counts)[:, 0]
        arms = tuple(
            ArmResult(arm.label, float(v), float(arm.analytic(alpha * arm.share)), alpha * arm.share)
            for arm, v in zip(test.arms, values)
        )
        threshold = Threshold(0.0 if len(arms) > 1 else arms[0].threshold, alpha, "analytic")
        return _assemble(test, arms, threshold, None)
    if kind != "mc":
        raise ValueError("goodness-of-fit tests are calibrated with mc:M or analytic")
    if not test.joint:
        for arm in test.arms:
            conservative_rank(size, alpha * arm.share)
    rng = RngSpec(0) if rng is None else rng
    return calibrate(test, p0, x.n, size, rng).report(x.counts, alpha)


def permute_counts(x, y, B: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``B`` random relabellings of the pooled sample, as count matrices.

    Drawing the first group's counts from the multivariate hypergeometric
    law of the pooled counts is the same as shuffling the pooled
    observations and splitting them into groups of size ``n1`` and ``n2``.
    """
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    pooled = x + y
    gen = _as_generator(rng)
    xb = gen.multivariate_hypergeometric(pooled, int(x.sum()), size=B).astype(np.int64)
    return xb, pooled[None, :] - xb


def permutation_test(data: TwoSampleData, statistic: str, alpha: float, B: int, rng) -> TestReport:
    """Permutation test: reject when the add-one p-value is at most ``alpha``."""
    return permutation_tests(data, [statistic], alpha, B, rng)[statistic]


def permutation_tests(data: TwoSampleData, statistics, alpha: float, B: int, rng) -> dict[str, TestReport]:
    """Several statistics evaluated on one shared set of ``B`` permutations."""
    if B < MIN_REPLICATES:
        raise ValueError(f"permutation tests need at least {MIN_REPLICATES} shuffles, got {B}")
    rank = conservative_rank(B, alpha)
    fns = {}
    for name in statistics:
        try:
            fns[name] = TWO_SAMPLE_STATISTICS[name]
        except KeyError:
            raise ValueError(f"unknown two-sample statistic {name!r}; choose from {sorted(TWO_SAMPLE_STATISTICS)}") from None
    xb, yb = permute_counts(data.x.counts, data.y.counts, B, rng)
    xs = np.vstack([data.x.counts[None, :], xb])
    ys = np.vstack([data.y.counts[None, :], yb])
    seed = rng if isinstance(rng, RngSpec) else None
    reports = {}
    for name, fn in fns.items():
        values = np.asarray(fn(xs, ys), dtype=np.float64)
        observed, reps = values[0], values[1:]
        pvalue = add_one_pvalue(observed, reps)
        threshold = Threshold(float(np.sort(reps)[rank - 1]), alpha, "perm", B, seed)
        reports[name] = TestReport(name, float(observed), threshold, bool(observed > threshold.value), pvalue)
    return reports
