"""Exact Gaussian transition kernel over partition regions.

With ``y = T f(x, u)`` in whitened coordinates the next state is
``y + w`` with ``w ~ N(0, I)``, so the probability of landing in a region is
a product of one-dimensional window probabilities. The unsafe mass is the
complement of the row sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .geometry import Partition, Whitening
from .system import SystemSpec


def erf_window(y, lo, hi):
    """P(lo <= y + w <= hi) for standard normal w."""
    lo_a, hi_a = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if np.any(lo_a > hi_a):
        raise ValueError("window lower bound exceeds upper bound")
    out = _core.phi(y, lo_a, hi_a)
    return float(out) if np.ndim(out) == 0 else out


def transition_prob(spec: SystemSpec, whitening: Whitening, lo, hi, x, u) -> float:
    """Probability that f(x, u) + w lands in the whitened box [lo, hi]."""
    y = whitening.apply(spec.evaluate(np.asarray(x, dtype=float), np.asarray(u, dtype=float)))
    return float(np.prod(_core.phi(y, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))))


@dataclass(frozen=True)
class KernelRow:
    probs: np.ndarray  # (K,)
    unsafe: float

    @property
    def full(self) -> np.ndarray:
        return np.append(self.probs, self.unsafe)


def window_factors(partition: Partition, y: np.ndarray) -> list[np.ndarray]:
    """Per-dimension window probabilities, one (S, counts_d) array per dimension."""
    y = np.atleast_2d(y)
    out = []
    for d, e in enumerate(partition.edges):
        out.append(_core.phi(y[:, d:d + 1], e[None, :-1], e[None, 1:]))
    return out


def kernel_matrix(spec: SystemSpec, partition: Partition, xs, us) -> tuple[np.ndarray, np.ndarray]:
    """Kernel rows for a batch of (x, u) pairs: (S, K) probabilities and (S,) unsafe mass."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    y = partition.whitening.apply(spec.evaluate(xs, us))
    factors = window_factors(partition, y)
    probs = np.ones((len(y), partition.K))
    for d, fac in enumerate(factors):
        probs *= fac[:, partition.cell_coords[:, d]]
    unsafe = 1.0 - probs.sum(axis=1)
    # only accumulated rounding can push the complement outside [0, 1]
    unsafe = np.clip(unsafe, 0.0, 1.0)
    return probs, unsafe


def kernel_row(spec: SystemSpec, partition: Partition, x, u) -> KernelRow:
    probs, unsafe = kernel_matrix(spec, partition, x, u)
    return KernelRow(probs[0], float(unsafe[0]))
