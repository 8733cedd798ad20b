"""Locally minimax testing: the bulk/tail test and local critical radii.

Indices in ``BulkTailSplit`` are 0-based positions in the *sorted* null,
so position 0 is the largest entry. The split rule: position ``i`` is in
the tail when the mass of positions ``i..d-1`` is at most ``sigma``; the
bulk is every non-tail position except 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hdmulti.calibration import Arm, GofTest, TestReport, gof_test
from hdmulti.prob import CountVector, SortedNull

# slack on suffix-sum comparisons so that e.g. sigma = 1 always captures everything
SUFFIX_TOL = 1e-12
DEFAULT_SIGMA_GRID = tuple(2.0**-k for k in range(1, 9)) + (0.0,)


@dataclass(frozen=True)
class BulkTailSplit:
    sigma: float
    tail: tuple[int, ...]
    bulk: tuple[int, ...]


@dataclass(frozen=True)
class RadiusBounds:
    lower: float
    upper: float
    ell_n: float
    u_n: float


def _check_sigma(sigma):
    if not 0 <= sigma <= 1:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")


def _suffix_mass(sorted_probs: np.ndarray) -> np.ndarray:
    return np.cumsum(sorted_probs[::-1])[::-1]


def _tail_start(suffix: np.ndarray, sigma: float) -> int:
    # suffix is non-increasing; first position whose suffix mass fits under sigma
    return int(np.searchsorted(-suffix, -(sigma + SUFFIX_TOL), side="left"))


def split_bulk_tail(p0, sigma: float) -> BulkTailSplit:
    _check_sigma(sigma)
    p0 = SortedNull.of(p0)
    start = _tail_start(_suffix_mass(p0.sorted_probs), sigma)
    return BulkTailSplit(sigma, tuple(range(start, p0.d)), tuple(range(1, start)))


def v_functional(p0, sigma: float) -> float:
    """``(sum over the sigma-bulk of p0^(2/3))^(3/2)``; 0 for an empty bulk."""
    p0 = SortedNull.of(p0)
    split = split_bulk_tail(p0, sigma)
    if not split.bulk:
        return 0.0
    bulk = p0.sorted_probs[list(split.bulk)]
    return float(np.sum(bulk ** (2.0 / 3.0)) ** 1.5)


class _SplitIndex:
    """Original-order index arrays for the tail and bulk of one split."""

    def __init__(self, p0: SortedNull, sigma: float):
        split = split_bulk_tail(p0, sigma)
        self.split = split
        self.tail = p0.perm[list(split.tail)] if split.tail else np.empty(0, dtype=np.intp)
        self.bulk = p0.perm[list(split.bulk)] if split.bulk else np.empty(0, dtype=np.intp)
        probs = p0.base.probs
        self.p_tail = probs[self.tail]
        self.p_bulk = probs[self.bulk]
        self.w_bulk = self.p_bulk ** (2.0 / 3.0)
        self.tail_mass = float(self.p_tail.sum())


def _arm_values(idx: _SplitIndex, batch: np.ndarray):
    counts = np.atleast_2d(batch).astype(np.float64)
    n = counts.sum(axis=-1)
    t1 = (counts[:, idx.tail] - n[:, None] * idx.p_tail).sum(axis=-1)
    xb = counts[:, idx.bulk]
    num = (xb - n[:, None] * idx.p_bulk) ** 2 - xb
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = num / idx.w_bulk
    zero = idx.w_bulk == 0
    terms = np.where(zero, np.where(xb > 0, np.inf, 0.0), terms)
    return t1, terms.sum(axis=-1)


def bulk_tail_statistics(x, p0, sigma: float) -> tuple[float, float]:
    """``(T1, T2)``: tail count excess and bulk 2/3-weighted centered chi-square.

    ``x`` is in the original category order of ``p0``.
    """
    p0 = SortedNull.of(p0)
    counts = np.asarray(x)
    if counts.shape[-1] != p0.d:
        raise ValueError(f"counts have d={counts.shape[-1]} but the null has d={p0.d}")
    t1, t2 = _arm_values(_SplitIndex(p0, sigma), counts)
    return float(t1[0]), float(t2[0])


def _t1_threshold(n, tail_mass, alpha):
    return math.sqrt(n * tail_mass / alpha)


def _t2_threshold(n, w_bulk_sum, alpha):
    return math.sqrt(2.0 * n * n * w_bulk_sum / alpha)


def bulk_tail_thresholds(p0, sigma: float, n: int, alpha: float) -> tuple[float, float]:
    """Analytic ``(t1, t2)`` at level ``alpha`` for each arm."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    idx = _SplitIndex(SortedNull.of(p0), sigma)
    return _t1_threshold(n, idx.tail_mass, alpha), _t2_threshold(n, float(idx.w_bulk.sum()), alpha)


def bulk_tail_arms(p0, sigma: float, n: int, share: float = 0.5) -> tuple[Arm, Arm]:
    """The two arms of the bulk/tail test, each calibrated at ``share`` of alpha."""
    idx = _SplitIndex(SortedNull.of(p0), sigma)
    w_sum = float(idx.w_bulk.sum())
    return (
        Arm(f"T1[sigma={sigma:g}]", lambda b: _arm_values(idx, b)[0], share,
            lambda a: _t1_threshold(n, idx.tail_mass, a)),
        Arm(f"T2[sigma={sigma:g}]", lambda b: _arm_values(idx, b)[1], share,
            lambda a: _t2_threshold(n, w_sum, a)),
    )


def bulk_tail_gof_test(p0, sigma: float, n: int) -> GofTest:
    return GofTest(f"bulk-tail[sigma={sigma:g}]", bulk_tail_arms(p0, sigma, n, 0.5), {"sigma": sigma})


def bonferroni_gof_test(p0, n: int, grid=DEFAULT_SIGMA_GRID, joint: bool = True) -> GofTest:
    """Union of bulk/tail tests over ``grid``.

    Each arm nominally gets ``alpha / (2 len(grid))``. With ``joint`` the
    simulated thresholds instead share the largest common arm level whose
    family-wise null rate is within alpha; the nominal split is conservative
    because neighbouring splits are strongly correlated.
    """
    grid = tuple(float(s) for s in grid)
    if not grid:
        raise ValueError("sigma grid is empty")
    for s in grid:
        _check_sigma(s)
    share = 1.0 / (2 * len(grid))
    p0 = SortedNull.of(p0)
    arms = tuple(arm for s in grid for arm in bulk_tail_arms(p0, s, n, share))
    name = "bonferroni" if joint else "bonferroni-strict"
    return GofTest(name, arms, {"grid": list(grid)}, joint=joint)


def _mode_to_method(mode):
    if mode == "analytic":
        return "analytic"
    if isinstance(mode, int):
        return f"mc:{mode}"
    return mode


def bulk_tail_test(x, p0, sigma: float, n: int | None = None, alpha: float = 0.05, mode="analytic", rng=None) -> TestReport:
    """Reject when ``T1 > t1`` or ``T2 > t2``, each arm at level ``alpha/2``.

    ``mode`` is ``"analytic"`` for the closed-form thresholds or ``"mc:M"``
    (or an integer ``M``) for simulated per-arm quantiles.
    """
    x = x if isinstance(x, CountVector) else CountVector(x)
    if n is not None and n != x.n:
        raise ValueError(f"n={n} but the counts sum to {x.n}")
    p0 = SortedNull.of(p0)
    method = _mode_to_method(mode)
    if method != "analytic" and int(method.split(":")[1]) < 1000:
        raise ValueError("simulated bulk/tail thresholds need M >= 1000")
    return gof_test(x, p0.base, bulk_tail_gof_test(p0, sigma, x.n), alpha, method, rng)


def bonferroni_adaptive_test(x, p0, grid=DEFAULT_SIGMA_GRID, n: int | None = None, alpha: float = 0.05, mode="analytic", rng=None, joint: bool = True) -> TestReport:
    """Bulk/tail tests over a sigma grid; reject if any of them rejects.

    ``joint=False`` runs each at level ``alpha/len(grid)``. With the default
    ``joint=True`` simulated calibration uses a common per-arm level tuned on
    the null replicates (see ``bonferroni_gof_test``); analytic mode always
    uses the ``alpha/len(grid)`` split.
    """
    x = x if isinstance(x, CountVector) else CountVector(x)
    if n is not None and n != x.n:
        raise ValueError(f"n={n} but the counts sum to {x.n}")
    p0 = SortedNull.of(p0)
    test = bonferroni_gof_test(p0, x.n, grid, joint)
    report = gof_test(x, p0.base, test, alpha, _mode_to_method(mode), rng)
    sigmas = sorted({s for s, arm_pair in zip(test.details["grid"], _pairs(report.arms)) if any(a.reject for a in arm_pair)})
    report.details["rejecting_sigmas"] = sigmas
    return report


def _pairs(arms):
    return [arms[i:i + 2] for i in range(0, len(arms), 2)]


def global_rate(d: int, n: int) -> float:
    return d**0.25 / math.sqrt(n)


class _VCurve:
    """``sigma -> V_sigma(p0)`` in O(log d) per query."""

    def __init__(self, p0: SortedNull):
        probs = p0.sorted_probs
        self.suffix = _suffix_mass(probs)
        self.cum = np.concatenate([[0.0], np.cumsum(probs ** (2.0 / 3.0))])

    def __call__(self, sigma: float) -> float:
        start = _tail_start(self.suffix, min(max(sigma, 0.0), 1.0))
        if start <= 1:
            return 0.0
        return float(max(self.cum[start] - self.cum[1], 0.0) ** 1.5)


def _smallest_crossing(rhs, n: int, tol: float) -> float:
    # smallest eps in [1/n, 1] with eps >= rhs(eps); rhs is non-increasing
    lo = 1.0 / n
    if lo >= rhs(lo):
        return lo
    hi = 1.0
    if hi < rhs(hi):
        return 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid >= rhs(mid):
            hi = mid
        else:
            lo = mid
    return hi


def solve_local_radius(p0, n: int, tol: float = 1e-9) -> RadiusBounds:
    """Lower and upper local critical radii (universal constants set to 1).

    ``ell_n`` solves ``eps = max(1/n, sqrt(V_eps / n))`` and ``u_n`` the same
    with ``V_{eps/16}``. Both right-hand sides are non-increasing step
    functions of ``eps``, so bisection finds the smallest ``eps`` at or above
    its right-hand side. Returns 1 if no crossing exists below 1.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    vcurve = _VCurve(SortedNull.of(p0))
    floor = 1.0 / n
    ell = _smallest_crossing(lambda e: max(floor, math.sqrt(vcurve(e) / n)), n, tol)
    u = _smallest_crossing(lambda e: max(floor, math.sqrt(vcurve(e / 16.0) / n)), n, tol)
    return RadiusBounds(lower=ell, upper=u, ell_n=ell, u_n=u)
