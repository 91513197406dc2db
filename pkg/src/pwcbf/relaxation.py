"""Sound affine bounds on the transition kernel over a region times the control box.

The pipeline per source region:

1. relax every node of the dynamics graph into affine lower/upper forms over
   the joint variable, working in whitened state coordinates ``v = T x`` so
   that the region is an exact box;
2. push the outputs through ``T`` to get forms for each ``y_d``;
3. relax each one-dimensional window probability over the enclosing
   interval of ``y_d`` (one relaxation per grid coordinate, shared by every
   destination with that coordinate);
4. compose the outer window bounds with the inner ``y`` forms by the sign of
   the outer slope, and fold the per-dimension factors with McCormick
   products.

Forms are finally expressed over ``z = (x, u)`` in original coordinates.
Destinations whose product of factor maxima is below ``TAIL_CUTOFF`` are
truncated to a constant ``[0, ub]`` bound.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _core
from .geometry import UNSAFE, Partition
from .interval import Interval, icos, isin
from .system import ADD, AFFINE, CONST, COS, MUL, SIN, SUB, UVAR, XVAR, SystemSpec

TAIL_CUTOFF = 1e-12
ENTRY_PAD = 1e-13
TINY = 1e-200
MODES = ("affine", "constant")


@dataclass(frozen=True, eq=False)
class AffineForm:
    coeffs: np.ndarray  # over z = (x, u)
    offset: float

    def __call__(self, x, u):
        z = np.concatenate([np.atleast_2d(np.asarray(x, dtype=float)),
                            np.atleast_2d(np.asarray(u, dtype=float))], axis=-1)
        out = z @ self.coeffs + self.offset
        return float(out[0]) if out.shape == (1,) else out


@dataclass(frozen=True, eq=False)
class AffineBound:
    lower: AffineForm
    upper: AffineForm
    range: tuple[float, float]


# -- affine relaxations over a box ------------------------------------------------

def _min_over(a: np.ndarray, c, box: np.ndarray):
    """min of a.z + c over the box; a may be (p,) or (J, p)."""
    return c + np.where(a >= 0, a * box[:, 0], a * box[:, 1]).sum(axis=-1)


def _max_over(a: np.ndarray, c, box: np.ndarray):
    return c + np.where(a >= 0, a * box[:, 1], a * box[:, 0]).sum(axis=-1)


@dataclass
class Rel:
    """Affine lower/upper forms plus a range enclosure over a fixed box."""

    la: np.ndarray
    lc: float
    ua: np.ndarray
    uc: float
    rng: Interval

    @classmethod
    def constant(cls, lo: float, hi: float, dim: int) -> "Rel":
        return cls(np.zeros(dim), lo, np.zeros(dim), hi, Interval(lo, hi))

    def tighten(self, box: np.ndarray) -> "Rel":
        lo = float(_min_over(self.la, self.lc, box))
        hi = float(_max_over(self.ua, self.uc, box))
        self.rng = self.rng.intersect(Interval(lo, hi))
        return self


def _scaled(r: Rel, w: float):
    """Forms of w * r, picking lower/upper by the sign of w."""
    if w >= 0:
        return w * r.la, w * r.lc, w * r.ua, w * r.uc
    return w * r.ua, w * r.uc, w * r.la, w * r.lc


def _linear(terms, const: float, dim: int) -> tuple[np.ndarray, float, np.ndarray, float]:
    la, ua = np.zeros(dim), np.zeros(dim)
    lc = uc = const
    for w, r in terms:
        a, b, c, d = _scaled(r, w)
        la, lc, ua, uc = la + a, lc + b, ua + c, uc + d
    return la, lc, ua, uc


def _pad(a: np.ndarray, c: float, box: np.ndarray) -> float:
    return 1e-15 * (1.0 + abs(c) + float(np.abs(a) @ np.abs(box).max(axis=1)))


def _mccormick(p: Rel, q: Rel, box: np.ndarray, center: np.ndarray) -> Rel:
    pl, ph = p.rng
    ql, qh = q.rng
    if pl == ph or ql == qh:
        # one factor is a constant: exact scaling
        c, r = (pl, q) if pl == ph else (ql, p)
        la, lc, ua, uc = _scaled(r, c)
        return Rel(la, lc, ua, uc, p.rng * q.rng)
    lows = []
    for a, b in ((pl, ql), (ph, qh)):
        # pq >= a*q + b*p - a*b
        la, lc, _, _ = _linear(((a, q), (b, p)), -a * b, len(box))
        lows.append((float(la @ center + lc), la, lc))
    highs = []
    for a, b in ((ph, ql), (pl, qh)):
        # pq <= a*q + b*p - a*b
        _, _, ua, uc = _linear(((a, q), (b, p)), -a * b, len(box))
        highs.append((float(ua @ center + uc), ua, uc))
    _, la, lc = max(lows, key=lambda t: t[0])
    _, ua, uc = min(highs, key=lambda t: t[0])
    lc -= _pad(la, lc, box)
    uc += _pad(ua, uc, box)
    return Rel(la, lc, ua, uc, p.rng * q.rng)


def _trig(kind: str, p: Rel, box: np.ndarray, center: np.ndarray) -> Rel:
    f, df = (math.sin, math.cos) if kind == SIN else (math.cos, lambda t: -math.sin(t))
    rng = isin(p.rng) if kind == SIN else icos(p.rng)
    dim = len(box)
    a, b = p.rng
    const = Rel.constant(rng.lo, rng.hi, dim)
    if not (b - a > 1e-12 and math.isfinite(a) and math.isfinite(b)):
        return const
    # f'' = -f, so the sign of f over [a, b] certifies the curvature; the
    # enclosure is rounded outward, so a zero endpoint shows up as -1e-323.
    # Curvature of that size moves the chord by far less than the pads below.
    concave, convex = rng.lo >= -TINY, rng.hi <= TINY
    if not (concave or convex):
        return const
    s = (f(b) - f(a)) / (b - a)
    chord = (s, f(a) - s * a)
    mid = 0.5 * (a + b)
    t = df(mid)
    tangent = (t, f(mid) - t * mid)
    low, high = (chord, tangent) if concave else (tangent, chord)
    la, lc, _, _ = _linear(((low[0], p),), low[1], dim)
    _, _, ua, uc = _linear(((high[0], p),), high[1], dim)
    span = max(abs(a), abs(b))
    lc -= 4e-16 * (1.0 + abs(low[1]) + abs(low[0]) * span) + _pad(la, lc, box)
    uc += 4e-16 * (1.0 + abs(high[1]) + abs(high[0]) * span) + _pad(ua, uc, box)
    if la @ center + lc <= rng.lo:
        la, lc = np.zeros(dim), rng.lo
    if ua @ center + uc >= rng.hi:
        ua, uc = np.zeros(dim), rng.hi
    return Rel(la, lc, ua, uc, rng)


def relax_primitive(kind: str, inputs: list[Rel], box: np.ndarray, *, value: float = 0.0,
                    weights: tuple[float, ...] = ()) -> Rel:
    """Sound affine relaxation of one graph node given relaxations of its inputs."""
    dim = len(box)
    center = box.mean(axis=1)
    if kind == ADD:
        out = Rel(*_linear(((1.0, inputs[0]), (1.0, inputs[1])), 0.0, dim), inputs[0].rng + inputs[1].rng)
    elif kind == SUB:
        out = Rel(*_linear(((1.0, inputs[0]), (-1.0, inputs[1])), 0.0, dim), inputs[0].rng - inputs[1].rng)
    elif kind == AFFINE:
        rng = Interval.point(value)
        for w, r in zip(weights, inputs):
            rng = rng + r.rng.scale(w)
        la, lc, ua, uc = _linear(tuple(zip(weights, inputs)), value, dim)
        out = Rel(la, lc - _pad(la, lc, box), ua, uc + _pad(ua, uc, box), rng)
    elif kind == MUL:
        out = _mccormick(inputs[0], inputs[1], box, center)
    elif kind in (SIN, COS):
        out = _trig(kind, inputs[0], box, center)
    else:
        raise ValueError(f"no relaxation rule for {kind!r}")
    return out.tighten(box)


def relax_graph(spec: SystemSpec, t_inverse: np.ndarray, box: np.ndarray) -> list[Rel]:
    """Relax f over the joint box (whitened state, control) of dimension n + m."""
    n, dim = spec.n, spec.n + spec.m
    vals: list[Rel] = []
    for node in spec.f.nodes:
        if node.kind == CONST:
            r = Rel.constant(node.value, node.value, dim)
        elif node.kind == XVAR:
            a = np.zeros(dim)
            a[:n] = t_inverse[node.index]
            r = Rel(a, 0.0, a.copy(), 0.0, Interval(-math.inf, math.inf))
            pad = _pad(a, 0.0, box)
            r.lc, r.uc = -pad, pad
            r.rng = Interval(float(_min_over(a, -pad, box)), float(_max_over(a, pad, box)))
        elif node.kind == UVAR:
            a = np.zeros(dim)
            a[n + node.index] = 1.0
            r = Rel(a, 0.0, a.copy(), 0.0, Interval(*box[n + node.index]))
        else:
            r = relax_primitive(node.kind, [vals[k] for k in node.args], box,
                                value=node.value, weights=node.weights)
        vals.append(r)
    return [vals[o] for o in spec.f.outputs]


def relax_window(y_interval, lo: float, hi: float) -> AffineBound:
    """One-dimensional affine envelope of the window probability in y."""
    if not lo < hi:
        raise ValueError("window needs lo < hi")
    yl, yu = float(y_interval[0]), float(y_interval[1])
    al, cl, au, cu, vmin, vmax = (float(v) for v in _core.relax_windows(yl, yu, lo, hi))
    return AffineBound(AffineForm(np.array([al]), cl), AffineForm(np.array([au]), cu), (vmin, vmax))


# -- rows ------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RowBounds:
    """Bounds for one source region.

    Kept destinations carry affine forms in both coordinate systems: ``*_v``
    over (v, u) and plain over (x, u). ``lumped_*`` bounds the unsafe mass
    plus all truncated destinations, i.e. ``1 - sum of kept entries``.
    """

    source: int
    dest: np.ndarray  # (J,) kept destination positions
    a_lo: np.ndarray  # (J, n+m)
    c_lo: np.ndarray  # (J,)
    a_hi: np.ndarray
    c_hi: np.ndarray
    a_lo_v: np.ndarray
    a_hi_v: np.ndarray
    rng: np.ndarray  # (J, 2)
    trunc_dest: np.ndarray
    trunc_ub: np.ndarray
    box: np.ndarray  # (n+m, 2) joint box in (v, u)
    # direct bounds on the unsafe mass, over (v, u) and over (x, u)
    u_lo_v: np.ndarray
    u_lo_c: float
    u_hi_v: np.ndarray
    u_hi_c: float
    u_lo_x: np.ndarray
    u_hi_x: np.ndarray
    u_rng: tuple[float, float]

    @property
    def lumped_lower(self) -> tuple[np.ndarray, np.ndarray, float]:
        """(coeffs_x, coeffs_v, offset) of a lower bound on unsafe plus truncated mass."""
        return self.u_lo_x, self.u_lo_v, self.u_lo_c

    @property
    def lumped_upper(self) -> tuple[np.ndarray, np.ndarray, float]:
        return self.u_hi_x, self.u_hi_v, self.u_hi_c + float(self.trunc_ub.sum())

    @property
    def lumped_range(self) -> tuple[float, float]:
        trunc = float(self.trunc_ub.sum())
        lo = max(self.u_rng[0], 1.0 - float(self.rng[:, 1].sum()), 0.0)
        hi = min(self.u_rng[1] + trunc, 1.0 - float(self.rng[:, 0].sum()), 1.0)
        return lo, max(lo, hi)


def _factor_forms(al, cl, au, cu, y_lo, y_hi):
    """Compose window bounds (slopes al/au, offsets cl/cu) with y forms."""
    (ya_lo, yc_lo), (ya_hi, yc_hi) = y_lo, y_hi
    pos = (al >= 0)[:, None]
    la = np.where(pos, al[:, None] * ya_lo, al[:, None] * ya_hi)
    lc = np.where(al >= 0, al * yc_lo, al * yc_hi) + cl
    pos = (au >= 0)[:, None]
    ua = np.where(pos, au[:, None] * ya_hi, au[:, None] * ya_lo)
    uc = np.where(au >= 0, au * yc_hi, au * yc_lo) + cu
    return la, lc, ua, uc


def _fold(p, f, box, center):
    """Vectorised McCormick product of factor arrays p and f (ranges inside [0, 1])."""
    pla, plc, pua, puc, pl, ph = p
    fla, flc, fua, fuc, fl, fh = f
    # lower: a*F + b*P - a*b with (a, b) in {(pl, fl), (ph, fh)}; coefficients >= 0
    l1a = pl[:, None] * fla + fl[:, None] * pla
    l1c = pl * flc + fl * plc - pl * fl
    l2a = ph[:, None] * fla + fh[:, None] * pla
    l2c = ph * flc + fh * plc - ph * fh
    pick = (l1a @ center + l1c) >= (l2a @ center + l2c)
    la = np.where(pick[:, None], l1a, l2a)
    lc = np.where(pick, l1c, l2c)
    # upper: (a, b) in {(ph, fl), (pl, fh)}
    u1a = ph[:, None] * fua + fl[:, None] * pua
    u1c = ph * fuc + fl * puc - ph * fl
    u2a = pl[:, None] * fua + fh[:, None] * pua
    u2c = pl * fuc + fh * puc - pl * fh
    pick = (u1a @ center + u1c) <= (u2a @ center + u2c)
    ua = np.where(pick[:, None], u1a, u2a)
    uc = np.where(pick, u1c, u2c)
    scale = 1e-15 * (1.0 + np.abs(la) @ np.abs(box).max(axis=1))
    lc = lc - scale
    uc = uc + 1e-15 * (1.0 + np.abs(ua) @ np.abs(box).max(axis=1))
    lo = np.maximum(pl * fl, _min_over(la, lc, box))
    hi = np.minimum(ph * fh, _max_over(ua, uc, box))
    lo = np.maximum(lo * (1.0 - 1e-15), 0.0)
    hi = np.minimum(hi * (1.0 + 1e-15) + 1e-300, 1.0)
    return la, lc, ua, uc, lo, np.maximum(lo, hi)


def bound_row(spec: SystemSpec, partition: Partition, i: int, mode: str = "affine",
              u_box: np.ndarray | None = None, v_box: np.ndarray | None = None) -> RowBounds:
    """Bounds for source region i; v_box optionally restricts the state to a sub-box."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    n, m = spec.n, spec.m
    t, t_inv = partition.whitening.t_matrix, partition.whitening.t_inverse
    u_box = spec.control_box if u_box is None else np.asarray(u_box, dtype=float)
    if v_box is None:
        v_box = np.stack([partition.lo[i], partition.hi[i]], axis=1)
    box = np.vstack([np.asarray(v_box, dtype=float), u_box])
    center = box.mean(axis=1)
    outs = relax_graph(spec, t_inv, box)

    # y = T f, one pair of forms and an enclosing interval per dimension
    y_lo, y_hi, y_int = [], [], []
    for d in range(n):
        terms = [(float(t[d, k]), outs[k]) for k in range(n) if t[d, k] != 0.0]
        la, lc, ua, uc = _linear(terms, 0.0, n + m)
        rng = Interval(0.0, 0.0)
        for w, r in terms:
            rng = rng + r.rng.scale(w)
        rng = rng.intersect(Interval(float(_min_over(la, lc, box)), float(_max_over(ua, uc, box))))
        pad = 1e-13 * (1.0 + max(abs(rng.lo), abs(rng.hi)))
        y_lo.append((la, lc - pad))
        y_hi.append((ua, uc + pad))
        y_int.append((rng.lo - pad, rng.hi + pad))

    factors = []
    for d, e in enumerate(partition.edges):
        al, cl, au, cu, vmin, vmax = _core.relax_windows(y_int[d][0], y_int[d][1], e[:-1], e[1:])
        la, lc, ua, uc = _factor_forms(al, cl, au, cu, y_lo[d], y_hi[d])
        factors.append((la, lc, ua, uc, vmin, vmax))

    coords = partition.cell_coords
    rmax = np.ones(partition.K)
    for d in range(n):
        rmax *= factors[d][5][coords[:, d]]
    keep = rmax >= TAIL_CUTOFF
    dest = np.flatnonzero(keep)
    la_v, lc, ua_v, uc, lo, hi = _product(factors, coords[dest], box, center)
    lc = lc - ENTRY_PAD
    uc = uc + ENTRY_PAD
    lo = np.maximum(np.maximum(lo, _min_over(la_v, lc, box)), 0.0)
    hi = np.minimum(np.minimum(hi, _max_over(ua_v, uc, box)), 1.0)
    hi = np.maximum(hi, lo)

    # unsafe mass = 1 - P(grid box) + P(excluded cells), each a product of windows
    gfac = []
    for d, e in enumerate(partition.edges):
        al, cl, au, cu, vmin, vmax = _core.relax_windows(y_int[d][0], y_int[d][1], e[:1], e[-1:])
        gfac.append((*_factor_forms(al, cl, au, cu, y_lo[d], y_hi[d]), vmin, vmax))
    gla, glc, gua, guc, glo, ghi = _product(gfac, np.zeros((1, n), dtype=np.int64), box, center)
    u_lo_v, u_lo_c = -gua[0], 1.0 - float(guc[0]) - ENTRY_PAD
    u_hi_v, u_hi_c = -gla[0], 1.0 - float(glc[0]) + ENTRY_PAD
    r_lo, r_hi = 1.0 - float(ghi[0]), 1.0 - float(glo[0])
    if partition.obstacle_cells:
        xc = np.stack(np.unravel_index(np.asarray(partition.obstacle_cells), partition.grid_counts), axis=1)
        xla, xlc, xua, xuc, xlo, xhi = _product(factors, xc, box, center)
        u_lo_v, u_lo_c = u_lo_v + xla.sum(axis=0), u_lo_c + float(xlc.sum()) - ENTRY_PAD * len(xc)
        u_hi_v, u_hi_c = u_hi_v + xua.sum(axis=0), u_hi_c + float(xuc.sum()) + ENTRY_PAD * len(xc)
        r_lo, r_hi = r_lo + float(xlo.sum()), r_hi + float(xhi.sum())
    r_lo = max(r_lo * (1.0 - 1e-15) - 1e-15, float(_min_over(u_lo_v, u_lo_c, box)), 0.0)
    r_hi = min(r_hi * (1.0 + 1e-15) + 1e-15, float(_max_over(u_hi_v, u_hi_c, box)), 1.0)
    r_hi = max(r_lo, r_hi)

    if mode == "constant":
        la_v, ua_v = np.zeros_like(la_v), np.zeros_like(ua_v)
        lc, uc = lo.copy(), hi.copy()
        u_lo_v, u_hi_v = np.zeros_like(u_lo_v), np.zeros_like(u_hi_v)
        u_lo_c, u_hi_c = r_lo, r_hi

    def to_x(a_v):
        a = np.array(a_v, dtype=float, copy=True)
        a[..., :n] = a_v[..., :n] @ t
        return a

    return RowBounds(
        source=i, dest=dest, a_lo=to_x(la_v), c_lo=np.asarray(lc, dtype=float),
        a_hi=to_x(ua_v), c_hi=np.asarray(uc, dtype=float), a_lo_v=la_v, a_hi_v=ua_v,
        rng=np.stack([lo, hi], axis=1), trunc_dest=np.flatnonzero(~keep),
        trunc_ub=np.minimum(rmax[~keep] * (1.0 + 1e-12) + 1e-300, 1.0), box=box,
        u_lo_v=u_lo_v, u_lo_c=u_lo_c, u_hi_v=u_hi_v, u_hi_c=u_hi_c,
        u_lo_x=to_x(u_lo_v), u_hi_x=to_x(u_hi_v), u_rng=(r_lo, r_hi))


def _product(factors, cells, box, center):
    """McCormick-folded forms of the window products for the given grid cells."""
    acc = tuple(arr[cells[:, 0]] for arr in factors[0])
    for d in range(1, cells.shape[1]):
        acc = _fold(acc, tuple(arr[cells[:, d]] for arr in factors[d]), box, center)
    return acc


@dataclass(frozen=True, eq=False)
class BoundsMatrix:
    rows: tuple[RowBounds, ...]
    K: int
    n: int
    m: int
    mode: str

    def entry(self, i: int, j) -> AffineBound:
        """Affine bound for destination j of row i; j may be UNSAFE or "unsafe"."""
        return _entry_of(self.rows[i], j, self.n + self.m)

    def dense(self):
        """(K, K+1) arrays of lower and upper offsets and ranges; handy for tests."""
        out = np.zeros((self.K, self.K + 1, 2))
        for row in self.rows:
            out[row.source, row.trunc_dest, 1] = row.trunc_ub
            out[row.source, row.dest] = row.rng
            out[row.source, self.K] = unsafe_bound(row).range
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [f"x{k + 1}" for k in range(self.n)] + [f"u{k + 1}" for k in range(self.m)]
        w.writerow(["i", "j", *[f"A_lo_{s}" for s in names], *[f"A_hi_{s}" for s in names], "c_lo", "c_hi"])
        for row in self.rows:
            for p, j in enumerate(row.dest):
                w.writerow([row.source, int(j), *map(repr, row.a_lo[p].tolist()),
                            *map(repr, row.a_hi[p].tolist()), repr(float(row.c_lo[p])), repr(float(row.c_hi[p]))])
            u = unsafe_bound(row)
            w.writerow([row.source, "unsafe", *map(repr, u.lower.coeffs.tolist()),
                        *map(repr, u.upper.coeffs.tolist()), repr(u.lower.offset), repr(u.upper.offset)])
        return buf.getvalue()


def unsafe_bound(row: RowBounds) -> AffineBound:
    """Bound on the unsafe mass alone (truncated destinations excluded)."""
    trunc = float(row.trunc_ub.sum())
    lo = max(row.u_rng[0], 1.0 - float(row.rng[:, 1].sum()) - trunc, 0.0)
    hi = min(row.u_rng[1], 1.0 - float(row.rng[:, 0].sum()), 1.0)
    return AffineBound(AffineForm(row.u_lo_x, row.u_lo_c), AffineForm(row.u_hi_x, row.u_hi_c), (lo, max(lo, hi)))


def bound_transition(spec: SystemSpec, partition: Partition, i: int, j, mode: str = "affine") -> AffineBound:
    return _entry_of(bound_row(spec, partition, i, mode), j, spec.n + spec.m)


def _entry_of(row: RowBounds, j, dim: int) -> AffineBound:
    if j == "unsafe" or j == UNSAFE:
        return unsafe_bound(row)
    hit = np.searchsorted(row.dest, j)
    if hit < len(row.dest) and row.dest[hit] == j:
        return AffineBound(AffineForm(row.a_lo[hit], float(row.c_lo[hit])),
                           AffineForm(row.a_hi[hit], float(row.c_hi[hit])),
                           (float(row.rng[hit, 0]), float(row.rng[hit, 1])))
    ub = float(row.trunc_ub[np.searchsorted(row.trunc_dest, j)])
    return AffineBound(AffineForm(np.zeros(dim), 0.0), AffineForm(np.zeros(dim), ub), (0.0, ub))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("THREADS", "1")))
    except ValueError:
        return 1


def bound_all(spec: SystemSpec, partition: Partition, mode: str = "affine",
              workers: int | None = None, u_box: np.ndarray | None = None) -> BoundsMatrix:
    """Bounds for every source region; rows are independent and merged by index."""
    workers = workers or default_workers()
    job = lambda i: bound_row(spec, partition, i, mode, u_box)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = tuple(pool.map(job, range(partition.K)))
    else:
        rows = tuple(job(i) for i in range(partition.K))
    return BoundsMatrix(rows, partition.K, spec.n, spec.m, mode)
