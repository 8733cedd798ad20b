"""Goodness-of-fit statistics against a simple null.

Every statistic accepts a single count vector of shape ``(d,)`` or a batch
of shape ``(m, d)`` and returns a float or an array of ``m`` floats. Batch
and single evaluation go through the same reduction, so ties between an
observed value and Monte Carlo replicates are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hdmulti.prob import CountVector, ProbVector


def _prepare(x, p0):
    counts = np.asarray(x)
    probs = np.asarray(p0, dtype=np.float64)
    single = counts.ndim == 1
    counts = np.atleast_2d(counts).astype(np.float64)
    if counts.shape[-1] != probs.shape[-1]:
        raise ValueError(f"dimension mismatch: counts have d={counts.shape[-1]}, null has d={probs.shape[-1]}")
    n = counts.sum(axis=-1, keepdims=True)
    return counts, probs, n, single


def _finish(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def chi2_statistic(x, p0):
    """Pearson's statistic ``sum (X - n p0)^2 / (n p0)``.

    Bins with ``p0 = 0`` and no counts are skipped; a count in such a bin
    gives ``inf``.
    """
    counts, probs, n, single = _prepare(x, p0)
    expected = n * probs
    zero = probs == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (counts - expected) ** 2 / expected
    terms = np.where(zero, np.where(counts > 0, np.inf, 0.0), terms)
    return _finish(terms.sum(axis=-1), single)


def lrt_statistic(x, p0):
    """``sum phat log(phat / p0)`` with ``phat = X / n`` and ``0 log 0 = 0``.

    No ``2n`` factor: thresholds come from simulation, so the scale is moot.
    """
    counts, probs, n, single = _prepare(x, p0)
    phat = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = phat * np.log(phat / probs)
    terms = np.where(phat == 0, 0.0, terms)
    terms = np.where((phat > 0) & (probs == 0), np.inf, terms)
    return _finish(terms.sum(axis=-1), single)


def trunc_chi2_statistic(x, p0):
    """``sum ((X - n p0)^2 - X) / max(p0, 1/d)``."""
    counts, probs, n, single = _prepare(x, p0)
    d = probs.shape[-1]
    denom = np.maximum(probs, 1.0 / d)
    terms = ((counts - n * probs) ** 2 - counts) / denom
    return _finish(terms.sum(axis=-1), single)


def l1_statistic(x, p0):
    counts, probs, n, single = _prepare(x, p0)
    return _finish(np.abs(counts - n * probs).sum(axis=-1), single)


def l2_statistic(x, p0):
    counts, probs, n, single = _prepare(x, p0)
    diff = counts - n * probs
    return _finish((diff * diff).sum(axis=-1), single)


GOF_STATISTICS = {
    "chi2": chi2_statistic,
    "lrt": lrt_statistic,
    "trunc-chi2": trunc_chi2_statistic,
    "l1": l1_statistic,
    "l2": l2_statistic,
}


@dataclass(frozen=True)
class GofStatistic:
    kind: str
    value: float
    n: int
    d: int

    @classmethod
    def evaluate(cls, kind: str, x: CountVector, p0: ProbVector) -> GofStatistic:
        try:
            fn = GOF_STATISTICS[kind]
        except KeyError:
            raise ValueError(f"unknown statistic {kind!r}; choose from {sorted(GOF_STATISTICS)}") from None
        x = x if isinstance(x, CountVector) else CountVector(x)
        return cls(kind, fn(x, p0), x.n, x.d)
