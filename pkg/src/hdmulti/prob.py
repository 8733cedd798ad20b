"""Probability vectors, count vectors, distances and seeded multinomial sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ProbVector:
    """A pmf over ``d`` categories.

    Sums within ``SUM_TOL`` of one are renormalized; anything further off,
    negative, non-finite or all-zero is rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64).ravel()
        if p.size == 0:
            raise ValueError("probability vector is empty")
        if not np.all(np.isfinite(p)):
            raise ValueError("probability vector has non-finite entries")
        if np.any(p < 0):
            raise ValueError(f"negative probability at index {int(np.argmin(p))}")
        total = p.sum()
        if total == 0:
            raise ValueError("probability vector is all zeros")
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1 (tolerance {SUM_TOL})")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def d(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __len__(self):
        return self.d


@dataclass(frozen=True, eq=False)
class SortedNull:
    """A null pmf together with its descending order.

    ``perm[k]`` is the original index of the k-th largest entry; ties keep
    their original order.
    """

    base: ProbVector
    perm: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.perm is None:
            perm = np.argsort(-self.base.probs, kind="stable")
        else:
            perm = np.asarray(self.perm, dtype=np.intp)
            if sorted(perm.tolist()) != list(range(self.base.d)):
                raise ValueError("perm is not a permutation of the categories")
            if np.any(np.diff(self.base.probs[perm]) > 0):
                raise ValueError("perm does not sort the null in descending order")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    @classmethod
    def of(cls, p) -> SortedNull:
        if isinstance(p, SortedNull):
            return p
        if not isinstance(p, ProbVector):
            p = ProbVector(p)
        return cls(p)

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def sorted_probs(self) -> np.ndarray:
        return self.base.probs[self.perm]


@dataclass(frozen=True, eq=False)
class CountVector:
    counts: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.counts)
        c = raw.astype(np.int64).ravel()
        if raw.size and not np.array_equal(c, raw.ravel()):
            raise ValueError("counts must be integers")
        if c.size == 0:
            raise ValueError("count vector is empty")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        if c.sum() < 1:
            raise ValueError("sample size must be at least 1")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def d(self) -> int:
        return self.counts.size

    def __array__(self, dtype=None, copy=None):
        return self.counts if dtype is None else self.counts.astype(dtype)

    def __len__(self):
        return self.d


@dataclass(frozen=True)
class RngSpec:
    """Reproducible random stream: ``(seed, stream)`` fixes every draw.

    Distinct stream indices give statistically independent generators
    through ``SeedSequence`` spawn keys, so trial ``t`` can be replayed in
    isolation no matter how trials are scheduled.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.default_rng(ss)

    def substream(self, experiment: int, trial: int) -> RngSpec:
        return RngSpec(self.seed, (experiment << 32) + trial)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return np.random.default_rng(rng)


def sample_counts(p, n: int, rng) -> CountVector:
    """Draw ``n`` observations from ``p`` and return the category counts."""
    if n < 1:
        raise ValueError("sample size must be at least 1")
    probs = np.asarray(p, dtype=np.float64)
    return CountVector(_as_generator(rng).multinomial(n, probs))


def sample_counts_batch(p, n: int, size: int, rng) -> np.ndarray:
    """``size`` independent count vectors as an int64 array of shape (size, d)."""
    if n < 1:
        raise ValueError("sample size must be at least 1")
    probs = np.asarray(p, dtype=np.float64)
    return _as_generator(rng).multinomial(n, probs, size=size).astype(np.int64)


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(p, dtype=np.float64)
    b = np.asarray(q, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a, b


def lp_distance(p, q, which: str = "l1") -> float:
    """``l1``: sum |p-q|.  ``l2``: sum (p-q)^2 (squared, no root)."""
    a, b = _pair(p, q)
    diff = a - b
    if which == "l1":
        return float(np.abs(diff).sum(axis=-1))
    if which == "l2":
        return float((diff * diff).sum(axis=-1))
    raise ValueError(f"unknown norm {which!r}; expected 'l1' or 'l2'")


def tv_distance(p, q) -> float:
    return 0.5 * lp_distance(p, q, "l1")


def two_thirds_norm(p) -> float:
    probs = np.asarray(p, dtype=np.float64)
    return float(np.sum(probs ** (2.0 / 3.0)) ** 1.5)


def read_prob_vector(path) -> ProbVector:
    """Read a pmf from a text file (one value per line) or a CSV with a ``p`` column."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: no probabilities found")
    header = [h.strip() for h in lines[0].split(",")]
    if "p" in header:
        rows = csv.DictReader(lines)
        values = [float(row["p"]) for row in rows]
    else:
        values = [float(ln) for ln in lines if not ln.startswith("#")]
    return ProbVector(values)


def read_counts(path) -> CountVector:
    """Counts file: one integer per line, or a CSV with a ``count`` column."""
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: no counts found")
    header = [h.strip() for h in lines[0].split(",")]
    if "count" in header:
        values = [row["count"] for row in csv.DictReader(lines)]
    else:
        values = [ln for ln in lines if not ln.startswith("#")]
    return CountVector([int(v) for v in values])
