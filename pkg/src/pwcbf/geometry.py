"""Noise whitening and the hyperrectangular partition of the safe set.

All partition boxes live in whitened coordinates ``v = T x`` where
``T Sigma T^T = I``. Region positions are 0-based throughout the API and the
CSV exports.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .system import SystemSpec

UNSAFE = -1


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Whitening:
    t_matrix: np.ndarray
    t_inverse: np.ndarray

    @property
    def is_diagonal(self) -> bool:
        t = self.t_matrix
        return bool(np.all(t[~np.eye(t.shape[0], dtype=bool)] == 0.0))

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.t_matrix.T

    def invert(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.t_inverse.T


def whiten(sigma) -> Whitening:
    """T = Gamma^(-1/2) V^T from the eigendecomposition Sigma = V Gamma V^T.

    Rows are reordered and sign-normalised so that a diagonal covariance gives
    a positive diagonal T.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise ValueError("covariance must be symmetric")
    n = sigma.shape[0]
    if np.all(sigma[~np.eye(n, dtype=bool)] == 0.0):
        d = np.diag(sigma)
        if np.any(d <= 0.0):
            raise ValueError("covariance not positive-definite")
        return Whitening(np.diag(1.0 / np.sqrt(d)), np.diag(np.sqrt(d)))
    gamma, v = np.linalg.eigh(sigma)
    if gamma.min() <= 0.0:
        raise ValueError("covariance not positive-definite")
    t = np.diag(gamma ** -0.5) @ v.T
    t_inv = v @ np.diag(gamma ** 0.5)
    lead = np.argmax(np.abs(t), axis=1)
    order = np.argsort(lead, kind="stable")
    t, t_inv = t[order], t_inv[:, order]
    signs = np.sign(t[np.arange(n), lead[order]])
    signs[signs == 0] = 1.0
    return Whitening(t * signs[:, None], t_inv * signs[None, :])


def _image_bounds(whitening: Whitening, box: np.ndarray) -> np.ndarray:
    """Bounding box (n, 2) of T(box); exact for diagonal T."""
    t = whitening.t_matrix
    lo = np.where(t >= 0, t * box[:, 0], t * box[:, 1]).sum(axis=1)
    hi = np.where(t >= 0, t * box[:, 1], t * box[:, 0]).sum(axis=1)
    return np.stack([lo, hi], axis=1)


@dataclass(frozen=True)
class Region:
    index: int
    lo: np.ndarray
    hi: np.ndarray
    touches_initial: bool


@dataclass(frozen=True, eq=False)
class Partition:
    """Uniform grid over T(domain) with obstacle cells removed."""

    whitening: Whitening
    grid_counts: tuple[int, ...]
    edges: tuple[np.ndarray, ...]
    cell_coords: np.ndarray  # (K, n) integer grid coordinates of each region
    lo: np.ndarray  # (K, n) whitened lower corners
    hi: np.ndarray  # (K, n)
    touches_initial: np.ndarray  # (K,) bool
    region_of_cell: np.ndarray  # flat cell index -> region position or UNSAFE
    obstacle_cells: tuple[int, ...]

    @property
    def K(self) -> int:
        return int(self.lo.shape[0])

    @property
    def n(self) -> int:
        return len(self.grid_counts)

    @property
    def regions(self) -> list[Region]:
        return [Region(i, self.lo[i], self.hi[i], bool(self.touches_initial[i])) for i in range(self.K)]

    @property
    def initial_regions(self) -> np.ndarray:
        return np.flatnonzero(self.touches_initial)

    def region_box_x(self, i: int) -> np.ndarray:
        """Bounding box of the region's preimage in original coordinates."""
        inv = Whitening(self.whitening.t_inverse, self.whitening.t_matrix)
        return _image_bounds(inv, np.stack([self.lo[i], self.hi[i]], axis=1))

    def locate(self, x) -> int:
        return int(self.locate_many(np.asarray(x, dtype=float)[None, :])[0])

    def locate_many(self, xs) -> np.ndarray:
        """Region position for each row of xs, UNSAFE outside the partition.

        Points on a shared face go to the lower grid coordinate.
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        v = self.whitening.apply(xs)
        inside = np.ones(len(v), dtype=bool)
        flat = np.zeros(len(v), dtype=np.int64)
        for d, e in enumerate(self.edges):
            vd = v[:, d]
            inside &= (vd >= e[0]) & (vd <= e[-1])
            k = np.clip(np.searchsorted(e, vd, side="left") - 1, 0, len(e) - 2)
            flat = flat * (len(e) - 1) + k
        out = np.full(len(v), UNSAFE, dtype=np.int64)
        out[inside] = self.region_of_cell[flat[inside]]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.n
        w.writerow(["region_index", *[f"lo_{d + 1}" for d in range(n)],
                    *[f"hi_{d + 1}" for d in range(n)], "touches_initial"])
        for i in range(self.K):
            w.writerow([i, *[repr(float(a)) for a in self.lo[i]],
                        *[repr(float(a)) for a in self.hi[i]], int(self.touches_initial[i])])
        return buf.getvalue()


def _overlaps(lo_a, hi_a, lo_b, hi_b, closed: bool) -> bool:
    gap = np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)
    return bool(np.all(gap >= 0.0) if closed else np.all(gap > 0.0))


def _suggest_counts(edges_lo, edges_hi, obstacle, counts) -> tuple[int, ...]:
    out = []
    for d, c in enumerate(counts):
        width = edges_hi[d] - edges_lo[d]
        pick = c
        for cand in range(c, 20 * c + 1):
            h = width / cand
            ok = all(abs((b - edges_lo[d]) / h - round((b - edges_lo[d]) / h)) < 1e-9 for b in obstacle[d])
            if ok:
                pick = cand
                break
        out.append(pick)
    return tuple(out)


def build_partition(spec: SystemSpec, grid_counts: Sequence[int],
                    whitening: Whitening | None = None) -> Partition:
    counts = tuple(int(c) for c in grid_counts)
    if len(counts) != spec.n or any(c < 1 for c in counts):
        raise PartitionError(f"grid_counts must be {spec.n} positive integers, got {grid_counts}")
    wh = whitening or whiten(spec.sigma)
    dom = _image_bounds(wh, spec.domain_box)
    edges = tuple(np.linspace(dom[d, 0], dom[d, 1], counts[d] + 1) for d in range(spec.n))
    # pin the outer edges exactly to the image bounds
    for d, e in enumerate(edges):
        e[0], e[-1] = dom[d, 0], dom[d, 1]
    total = math.prod(counts)
    coords = np.array(list(itertools.product(*[range(c) for c in counts])), dtype=np.int64)
    lo = np.stack([edges[d][coords[:, d]] for d in range(spec.n)], axis=1)
    hi = np.stack([edges[d][coords[:, d] + 1] for d in range(spec.n)], axis=1)

    excluded = np.zeros(total, dtype=bool)
    if not wh.is_diagonal:
        # cells must map back inside the domain; test all corners
        for cell in range(total):
            corners = np.array(list(itertools.product(*zip(lo[cell], hi[cell]))))
            xs = wh.invert(corners)
            if np.any(xs < spec.domain_box[:, 0] - 1e-12) or np.any(xs > spec.domain_box[:, 1] + 1e-12):
                excluded[cell] = True

    init_w = _image_bounds(wh, spec.initial_box)
    init_degenerate = bool(np.any(spec.initial_box[:, 0] == spec.initial_box[:, 1]))
    for k, ob in enumerate(spec.obstacles):
        ob_w = _image_bounds(wh, ob)
        hit = np.all((np.minimum(hi, ob_w[:, 1]) - np.maximum(lo, ob_w[:, 0])) > 0.0, axis=1)
        for cell in np.flatnonzero(hit):
            if _overlaps(lo[cell], hi[cell], init_w[:, 0], init_w[:, 1], closed=init_degenerate):
                suggestion = _suggest_counts(dom[:, 0], dom[:, 1], ob_w, counts)
                raise PartitionError(
                    f"obstacles[{k}] is not representable as whole grid cells without covering "
                    f"the initial set; try grid counts {','.join(map(str, suggestion))}")
        excluded |= hit

    region_of_cell = np.full(total, -1, dtype=np.int64)
    keep = np.flatnonzero(~excluded)
    region_of_cell[keep] = np.arange(len(keep))
    if len(keep) == 0:
        raise PartitionError("every grid cell is excluded")
    r_lo, r_hi = lo[keep], hi[keep]
    touches = np.array([
        _overlaps(r_lo[i], r_hi[i], init_w[:, 0], init_w[:, 1], closed=init_degenerate)
        for i in range(len(keep))], dtype=bool)
    return Partition(
        whitening=wh, grid_counts=counts, edges=edges, cell_coords=coords[keep],
        lo=r_lo, hi=r_hi, touches_initial=touches, region_of_cell=region_of_cell,
        obstacle_cells=tuple(int(c) for c in np.flatnonzero(excluded)))
