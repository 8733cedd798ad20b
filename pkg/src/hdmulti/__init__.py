"""Goodness-of-fit and two-sample tests for high-dimensional multinomials."""

from hdmulti.prob import (
    CountVector,
    ProbVector,
    RngSpec,
    SortedNull,
    lp_distance,
    sample_counts,
    tv_distance,
    two_thirds_norm,
)

__version__ = "0.1.0"
