"""Piecewise-constant controllers and the worst-case inner problem.

For fixed barrier values the worst expected next barrier value of region i
under control u is

    V_i(u) = max { bbar . T : lo_i(x, u) <= T <= hi_i(x, u), sum(T) = 1, x in X_i }.

The bounds are affine in (x, u) and the state is shared by all entries, so
this is a small LP (``inner_value``). Folding the state out entry by entry
(``fold_x``) gives a box-and-simplex relaxation solved by a greedy fill; it
upper-bounds V_i and is used for warm starts and pruning.

V_i is concave in u (an LP value whose right-hand side is affine in u), so
its minimum over the control box sits at a vertex. Controls are therefore
picked from a finite candidate set: the box center (kept for ties) and the
corners, optionally refined by a regular grid.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import _core
from .geometry import UNSAFE, Partition
from .relaxation import BoundsMatrix, RowBounds, _max_over, _min_over


@dataclass(frozen=True, eq=False)
class FoldedRow:
    """Bounds affine in u for the kept destinations plus the lumped unsafe entry (last)."""

    dest: np.ndarray
    lo_c: np.ndarray  # (E,)
    lo_a: np.ndarray  # (E, m)
    hi_c: np.ndarray
    hi_a: np.ndarray
    rng: np.ndarray  # (E, 2)

    def at(self, us) -> tuple[np.ndarray, np.ndarray]:
        """Box bounds at each control in us: two (C, E) arrays."""
        us = np.atleast_2d(np.asarray(us, dtype=float))
        lo = us @ self.lo_a.T + self.lo_c
        hi = us @ self.hi_a.T + self.hi_c
        lo = np.clip(lo, self.rng[:, 0], self.rng[:, 1])
        hi = np.clip(hi, self.rng[:, 0], self.rng[:, 1])
        return lo, np.maximum(hi, lo)


@dataclass(frozen=True, eq=False)
class FoldedBounds:
    rows: tuple[FoldedRow, ...]
    K: int
    m: int


def fold_x(bounds: BoundsMatrix, partition: Partition) -> FoldedBounds:
    """Eliminate the state from every bound by optimizing its part over the region.

    The lower form takes the minimum of its state part, the upper form the
    maximum, so both stay valid for every state in the region.
    """
    n = bounds.n
    rows = []
    for row in bounds.rows:
        vbox = row.box[:n]
        lumped_lo = row.lumped_lower
        lumped_hi = row.lumped_upper
        la_v = np.vstack([row.a_lo_v, lumped_lo[1]])
        ua_v = np.vstack([row.a_hi_v, lumped_hi[1]])
        lc = np.append(row.c_lo, lumped_lo[2])
        uc = np.append(row.c_hi, lumped_hi[2])
        lo_c = _min_over(la_v[:, :n], lc, vbox)
        hi_c = _max_over(ua_v[:, :n], uc, vbox)
        rng = np.vstack([row.rng, row.lumped_range])
        rows.append(FoldedRow(row.dest, lo_c, la_v[:, n:].copy(), hi_c, ua_v[:, n:].copy(), rng))
    return FoldedBounds(tuple(rows), bounds.K, bounds.m)


def greedy_inner(bbar, lo, hi):
    """Exact max of bbar.T over {lo <= T <= hi, sum T = 1}: (value, T, split)."""
    return _core.greedy_inner(bbar, lo, hi)


@dataclass(frozen=True, eq=False)
class InnerBlock:
    """Kernel bound set of one source box under one fixed control.

    Entries follow ``dest`` with the lumped unsafe entry last. The state
    enters through centered whitened coordinates d in [-half, half].
    """

    source: int
    dest: np.ndarray  # (E-1,)
    la: np.ndarray  # (E, n)
    lc: np.ndarray  # (E,)
    ua: np.ndarray
    uc: np.ndarray
    rng: np.ndarray  # (E, 2)
    half: np.ndarray  # (n,)

    @property
    def size(self) -> int:
        return len(self.lc)

    def folded(self) -> tuple[np.ndarray, np.ndarray]:
        """Entry boxes valid for every state in the box."""
        lo = np.maximum(self.lc - np.abs(self.la) @ self.half, self.rng[:, 0])
        hi = np.minimum(self.uc + np.abs(self.ua) @ self.half, self.rng[:, 1])
        return lo, np.maximum(hi, lo)

    def at(self, d) -> tuple[np.ndarray, np.ndarray]:
        """Entry boxes at one centered state d."""
        d = np.asarray(d, dtype=float)
        lo = np.maximum(self.la @ d + self.lc, self.rng[:, 0])
        hi = np.minimum(self.ua @ d + self.uc, self.rng[:, 1])
        return lo, np.maximum(hi, lo)

    def bbar(self, b) -> np.ndarray:
        return np.append(np.asarray(b, dtype=float)[self.dest], 1.0)


def inner_block(row: RowBounds, u, n: int, lump_below: float = 0.0, coef_tol: float = 1e-13) -> InnerBlock:
    """Substitute the control u into a row's bounds and center the state box.

    Entries whose upper range is below ``lump_below`` are merged into the
    unsafe entry (it carries weight 1, the largest barrier value), and state
    coefficients too small to matter over the box are folded into the
    offsets. Both only enlarge the bound set.
    """
    u = np.asarray(u, dtype=float)
    _, lav, lcu = row.lumped_lower
    _, uav, ucu = row.lumped_upper
    la_v = np.vstack([row.a_lo_v, lav])
    ua_v = np.vstack([row.a_hi_v, uav])
    center = row.box[:n].mean(axis=1)
    half = 0.5 * (row.box[:n, 1] - row.box[:n, 0])
    lc = np.append(row.c_lo, lcu) + la_v[:, n:] @ u + la_v[:, :n] @ center
    uc = np.append(row.c_hi, ucu) + ua_v[:, n:] @ u + ua_v[:, :n] @ center
    la, ua = la_v[:, :n].copy(), ua_v[:, :n].copy()
    rng = np.vstack([row.rng, row.lumped_range])
    dest = row.dest
    if lump_below > 0.0:
        small = np.flatnonzero(rng[:-1, 1] < lump_below)
        if len(small):
            la[-1] += la[small].sum(axis=0)
            lc[-1] += lc[small].sum()
            ua[-1] += ua[small].sum(axis=0)
            uc[-1] += uc[small].sum()
            rng[-1] = np.minimum(rng[-1] + rng[small].sum(axis=0), 1.0)
            keep = np.ones(len(lc), dtype=bool)
            keep[small] = False
            la, lc, ua, uc, rng = la[keep], lc[keep], ua[keep], uc[keep], rng[keep]
            dest = np.delete(dest, small)
    tiny = np.abs(la) * half <= coef_tol
    lc = lc - (np.abs(la) * tiny) @ half
    la[tiny] = 0.0
    tiny = np.abs(ua) * half <= coef_tol
    uc = uc + (np.abs(ua) * tiny) @ half
    ua[tiny] = 0.0
    return InnerBlock(row.source, dest, la, lc, ua, uc, rng, half)


def folded_value(block: InnerBlock, b) -> float:
    """Greedy value over the folded boxes; an upper bound on ``inner_value``."""
    lo, hi = block.folded()
    return float(_core.greedy_values(block.bbar(b), lo[None], hi[None])[0])


_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10, "presolve": False}


def inner_solve(block: InnerBlock, b) -> tuple[float, np.ndarray]:
    """Exact worst case over kernel entries and states, with a maximizing kernel vector."""
    bbar = block.bbar(b)
    if not np.any(block.half > 0) or (not block.la.any() and not block.ua.any()):
        lo, hi = block.folded()
        value, T, _ = _core.greedy_inner(bbar, lo, hi)
        return float(value), np.asarray(T)
    E, n = block.la.shape
    a_ub = np.block([[-np.eye(E), block.la], [np.eye(E), -block.ua]])
    b_ub = np.concatenate([-block.lc, block.uc])
    a_eq = np.concatenate([np.ones(E), np.zeros(n)])[None]
    bounds = np.vstack([block.rng, np.stack([-block.half, block.half], axis=1)])
    res = linprog(np.concatenate([-bbar, np.zeros(n)]), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=bounds, method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status != 0:
        # the sound bounds always contain the true kernel; fall back to the relaxation
        lo, hi = block.folded()
        value, T, _ = _core.greedy_inner(bbar, lo, hi)
        return float(value), np.asarray(T)
    return float(-res.fun), np.asarray(res.x[:E])


def inner_value(block: InnerBlock, b) -> float:
    """Exact worst-case expected barrier value over kernel entries and states."""
    return inner_solve(block, b)[0]


def region_value(blocks, b) -> float:
    """Worst case over the sub-boxes of one region."""
    return max(inner_value(blk, b) for blk in blocks)


def best_response(options, b, current: int | None = None, tol: float = 1e-9) -> tuple[int, float]:
    """Candidate index minimizing the exact region value; keeps ``current`` unless beaten by tol.

    ``options[c]`` is the list of sub-box blocks under candidate c. Candidates
    whose center-state value already reaches the incumbent are skipped.
    """
    best = current
    best_val = region_value(options[current], b) if current is not None else np.inf
    for c, blocks in enumerate(options):
        if c == current:
            continue
        floor = max(float(_core.greedy_values(blk.bbar(b), *(a[None] for a in blk.at(np.zeros(len(blk.half)))))[0])
                    for blk in blocks)
        if floor >= best_val - tol:
            continue
        val = region_value(blocks, b)
        if val < best_val - tol or best is None:
            best, best_val = c, val
    return int(best), float(best_val)


def candidate_controls(control_box: np.ndarray, include_center: bool = True, points: int = 0) -> np.ndarray:
    """Box center first, then the distinct corners in lexicographic order.

    With ``points >= 2`` the corners are followed by the remaining nodes of a
    regular grid with that many points per control dimension.
    """
    box = np.asarray(control_box, dtype=float)
    pts = [tuple(box.mean(axis=1))] if include_center else []
    for c in itertools.product(*[sorted({lo, hi}) for lo, hi in box]):
        if c not in pts:
            pts.append(c)
    if points >= 2:
        for c in itertools.product(*[np.linspace(lo, hi, points).tolist() for lo, hi in box]):
            if c not in pts:
                pts.append(c)
    return np.array(pts, dtype=float)


def bbar_for(row: FoldedRow, b: np.ndarray) -> np.ndarray:
    return np.append(np.asarray(b, dtype=float)[row.dest], 1.0)


def values_at(row: FoldedRow, b: np.ndarray, us) -> np.ndarray:
    """V_i at each control in us; infeasible boxes get 1 + sum(bbar)."""
    lo, hi = row.at(us)
    return _core.greedy_values(bbar_for(row, b), lo, hi)


def extract_control(i: int, b, folded: FoldedBounds, control_box: np.ndarray,
                    candidates: np.ndarray | None = None, prefer: int | None = None) -> tuple[np.ndarray, int]:
    """Control minimizing V_i over the candidates; returns (u, candidate index).

    Ties go to ``prefer`` when given, otherwise to the lowest index (the
    center comes first).
    """
    cands = candidate_controls(control_box) if candidates is None else candidates
    vals = values_at(folded.rows[i], getattr(b, "b", b), cands)
    best = int(np.argmin(vals))
    if prefer is not None and vals[prefer] <= vals[best]:
        best = prefer
    return cands[best].copy(), best


@dataclass(frozen=True, eq=False)
class Controller:
    controls: np.ndarray  # (K, m)
    fallback: np.ndarray  # (m,)
    grid_counts: tuple[int, ...] = ()

    def lookup(self, partition: Partition, x) -> np.ndarray:
        return self.lookup_many(partition, np.atleast_2d(x))[0]

    def lookup_many(self, partition: Partition, xs) -> np.ndarray:
        idx = partition.locate_many(xs)
        out = np.broadcast_to(self.fallback, (len(idx), len(self.fallback))).copy()
        ok = idx != UNSAFE
        out[ok] = self.controls[idx[ok]]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        m = self.controls.shape[1]
        buf.write(f"# grid={','.join(map(str, self.grid_counts))} fallback="
                  f"{','.join(repr(float(v)) for v in self.fallback)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region_index", *[f"u_{k + 1}" for k in range(m)]])
        for i, row in enumerate(self.controls):
            w.writerow([i, *[repr(float(v)) for v in row]])
        return buf.getvalue()


def default_fallback(control_box: np.ndarray) -> np.ndarray:
    box = np.asarray(control_box, dtype=float)
    return np.clip(np.zeros(len(box)), box[:, 0], box[:, 1])


def controller_from_csv(text: str, control_box: np.ndarray | None = None) -> Controller:
    grid: tuple[int, ...] = ()
    fallback = None
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            for part in line[1:].split():
                key, _, val = part.partition("=")
                if key == "grid" and val:
                    grid = tuple(int(v) for v in val.split(","))
                elif key == "fallback" and val:
                    fallback = np.array([float(v) for v in val.split(",")])
        elif line.strip():
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, None)
    if not header or header[0] != "region_index":
        raise ValueError("controller CSV needs a region_index header")
    rows = [r for r in reader]
    idx = [int(r[0]) for r in rows]
    if idx != list(range(len(rows))):
        raise ValueError("controller CSV region indices must be 0..K-1 in order")
    controls = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    if fallback is None:
        fallback = default_fallback(control_box) if control_box is not None else np.zeros(controls.shape[1])
    return Controller(controls, fallback, grid)
