"""Null families and alternatives at a prescribed l1 distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hdmulti.prob import ProbVector, RngSpec, _as_generator

ALTERNATIVE_KINDS = ("minimax", "dense", "sparse", "proportional")
PAIR_KINDS = ("uniform-dense", "powerlaw-sparse", "batu")
EPS_BAND = 0.10


class InfeasibleEpsilon(ValueError):
    pass


@dataclass(frozen=True)
class AlternativeSpec:
    kind: str
    epsilon: float
    rng: RngSpec = RngSpec(0)

    def __post_init__(self):
        if self.kind not in ALTERNATIVE_KINDS:
            raise ValueError(f"unknown alternative {self.kind!r}; choose from {list(ALTERNATIVE_KINDS)}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def null_uniform(d: int) -> ProbVector:
    if d < 1:
        raise ValueError("d must be at least 1")
    return ProbVector(np.full(d, 1.0 / d))


def null_powerlaw(d: int) -> ProbVector:
    if d < 1:
        raise ValueError("d must be at least 1")
    w = 1.0 / np.arange(1, d + 1)
    return ProbVector(w / w.sum())


def null_pointmass(d: int) -> ProbVector:
    if d < 1:
        raise ValueError("d must be at least 1")
    p = np.zeros(d)
    p[0] = 1.0
    return ProbVector(p)


NULL_FAMILIES = {"uniform": null_uniform, "powerlaw": null_powerlaw, "pointmass": null_pointmass}


def _l1(a, b) -> float:
    return float(np.abs(a - b).sum())


def _solve_scale(build: Callable[[float], np.ndarray], p0: np.ndarray, eps: float, c_cap: float, kind: str):
    """Bisect ``c`` so that ``||build(c) - p0||_1`` hits ``eps``.

    ``build`` is continuous in ``c``; bisection keeps
    ``dist(lo) < eps <= dist(hi)`` so it converges even where the distance
    is not monotone.
    """
    cap = _l1(build(c_cap), p0)
    if eps > cap * (1 + EPS_BAND):
        raise InfeasibleEpsilon(f"{kind} perturbation reaches at most l1 distance {cap:.4g}; requested {eps:g}")
    if eps >= cap:
        return build(c_cap)
    lo, hi = 0.0, c_cap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _l1(build(mid), p0) < eps:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * c_cap:
            break
    return build(hi)


def _signed_builder(p0: np.ndarray, weights: np.ndarray, signs: np.ndarray):
    delta = signs * weights
    delta = delta - delta.mean()

    def build(c):
        q = np.clip(p0 + c * delta, 0.0, None)
        return q / q.sum()

    return build, delta


def _top_two(p0: np.ndarray) -> np.ndarray:
    return np.argsort(-p0, kind="stable")[:2]


def perturb(p0, spec: AlternativeSpec) -> ProbVector:
    """Alternative ``q`` with ``||p0 - q||_1`` within 10% of ``spec.epsilon``.

    Signed kinds draw Rademacher signs, centre the perturbation, clip at 0
    and renormalize; ``sparse`` adds equal mass to the two largest entries
    and renormalizes. The scale is found by bisection on realized distance.
    """
    probs = np.asarray(p0, dtype=np.float64)
    if spec.epsilon == 0:
        return p0 if isinstance(p0, ProbVector) else ProbVector(probs)
    d = probs.size
    if spec.kind == "sparse":
        top = _top_two(probs)
        bump = np.zeros(d)
        bump[top] = 1.0

        def build(c):
            q = probs + c * bump
            return q / q.sum()

        q = _solve_scale(build, probs, spec.epsilon, 1e9, spec.kind)
        return ProbVector(q)

    gen = _as_generator(spec.rng)
    signs = gen.choice(np.array([-1.0, 1.0]), size=d)
    weights = {
        "minimax": probs ** (2.0 / 3.0),
        "dense": np.ones(d),
        "proportional": probs,
    }[spec.kind]
    build, delta = _signed_builder(probs, weights, signs)
    scale = np.abs(delta).max()
    if scale == 0:
        raise InfeasibleEpsilon(f"{spec.kind} perturbation is degenerate for this null (reaches l1 distance 0)")
    # at this scale every negative direction is clipped to 0
    c_cap = 1e6 / scale
    return ProbVector(_solve_scale(build, probs, spec.epsilon, c_cap, spec.kind))


def batu_pair(d: int, n1: int, epsilon: float, rng) -> tuple[ProbVector, ProbVector]:
    """Heavy/light mixture pair that is hard for two-sample tests.

    Each category is heavy (mass ``1/n1`` in both) with probability
    ``n1/(2d)``, otherwise light: ``1/(2d)`` in ``p`` and
    ``(1 + eps R)/(2d)`` in ``q`` for a Rademacher ``R``. Both are then
    normalized.
    """
    if n1 < 1 or d < 1:
        raise ValueError("d and n1 must be positive")
    if n1 > 2 * d:
        raise ValueError(f"batu pair needs n1 <= 2d (heavy probability n1/2d <= 1); got n1={n1}, d={d}")
    if not 0 <= epsilon <= 1:
        raise InfeasibleEpsilon(f"batu pair needs epsilon in [0, 1], got {epsilon}")
    gen = _as_generator(rng)
    heavy = gen.random(d) < n1 / (2 * d)
    signs = gen.choice(np.array([-1.0, 1.0]), size=d)
    p = np.where(heavy, 1.0 / n1, 1.0 / (2 * d))
    q = np.where(heavy, 1.0 / n1, (1.0 + epsilon * signs) / (2 * d))
    return _normalized(p), _normalized(q)


def _normalized(v: np.ndarray) -> ProbVector:
    return ProbVector(v / v.sum())


def make_pair(kind: str, d: int, n1: int, epsilon: float, rng) -> tuple[ProbVector, ProbVector]:
    """Two-sample pair ``(p, q)`` of the named kind."""
    if kind == "uniform-dense":
        p = null_uniform(d)
        return p, perturb(p, AlternativeSpec("dense", epsilon, rng))
    if kind == "powerlaw-sparse":
        p = null_powerlaw(d)
        return p, perturb(p, AlternativeSpec("sparse", epsilon, rng))
    if kind == "batu":
        return batu_pair(d, n1, epsilon, rng)
    raise ValueError(f"unknown pair {kind!r}; choose from {list(PAIR_KINDS)}")
