"""Two-sample statistics and minimax rates.

Statistics take count arrays ``x`` and ``y`` of shape ``(d,)`` or ``(m, d)``
(rows paired) and read the sample sizes from the row sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hdmulti.prob import CountVector


@dataclass(frozen=True)
class TwoSampleData:
    x: CountVector
    y: CountVector

    def __post_init__(self):
        x = self.x if isinstance(self.x, CountVector) else CountVector(self.x)
        y = self.y if isinstance(self.y, CountVector) else CountVector(self.y)
        if x.d != y.d:
            raise ValueError(f"samples have different category counts: {x.d} vs {y.d}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n1(self) -> int:
        return self.x.n

    @property
    def n2(self) -> int:
        return self.y.n


def _prepare(x, y):
    a = np.asarray(x)
    b = np.asarray(y)
    single = a.ndim == 1 and b.ndim == 1
    a = np.atleast_2d(a).astype(np.float64)
    b = np.atleast_2d(b).astype(np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    n1 = a.sum(axis=-1, keepdims=True)
    n2 = b.sum(axis=-1, keepdims=True)
    return a, b, n1, n2, single


def _finish(values, single):
    return float(values[0]) if single else values


def _centered_ratio(num, total):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = num / total
    return np.where(total == 0, 0.0, terms).sum(axis=-1)


def ts_chi2_balanced(x, y):
    """Centered chi-square ``sum ((X-Y)^2 - X - Y) / (X + Y)`` over non-empty bins."""
    a, b, n1, n2, single = _prepare(x, y)
    if np.any(n1 != n2):
        raise ValueError("balanced chi-square needs equal sample sizes; use ts_chi2_imbalanced")
    return _finish(_centered_ratio((a - b) ** 2 - a - b, a + b), single)


def ts_chi2_imbalanced(x, y):
    """``sum ((n2 X - n1 Y)^2 - n2^2 X - n1^2 Y) / (X + Y)`` over non-empty bins."""
    a, b, n1, n2, single = _prepare(x, y)
    num = (n2 * a - n1 * b) ** 2 - n2 * n2 * a - n1 * n1 * b
    return _finish(_centered_ratio(num, a + b), single)


def ts_l1(x, y):
    a, b, n1, n2, single = _prepare(x, y)
    return _finish(np.abs(a / n1 - b / n2).sum(axis=-1), single)


def ts_l2(x, y):
    a, b, n1, n2, single = _prepare(x, y)
    diff = a / n1 - b / n2
    return _finish((diff * diff).sum(axis=-1), single)


TWO_SAMPLE_STATISTICS = {
    "chi2": ts_chi2_balanced,
    "chi2-imbalanced": ts_chi2_imbalanced,
    "l1": ts_l1,
    "l2": ts_l2,
}


def ts_rate_balanced(d: int, n: int) -> float:
    return max(d**0.5 / n**0.75, d**0.25 / n**0.5)


def ts_rate_unbalanced(d: int, n1: int, n2: int) -> float:
    if n1 < n2:
        n1, n2 = n2, n1
    return max(d**0.5 / (n1**0.25 * n2**0.5), d**0.25 / n2**0.5)
