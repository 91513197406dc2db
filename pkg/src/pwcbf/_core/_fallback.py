"""Pure-numpy implementations of the hot kernels.

Mirrors ``_speedups.pyx`` operation for operation so both backends agree to
the last few ulps. Selected automatically when the extension is missing.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

SQRT1_2 = math.sqrt(0.5)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
PDF_AT_ONE = INV_SQRT_2PI * math.exp(-0.5)  # g(t) = t*pdf(t) peaks at t=1

REL_ERR = 1e-13
ABS_ERR = 1e-15
STEP = 0.05  # sampling step (whitened units) for the hull relaxation
MIN_SAMPLES = 9
MAX_SAMPLES = 513


def phi_err(y, lo, hi):
    """Window probability P(lo <= y + w <= hi), w ~ N(0,1), and an error bound."""
    y = np.asarray(y, dtype=float)
    a = lo - y
    b = hi - y
    right = a >= 0.0
    left = b <= 0.0
    mid = ~(right | left)
    val = np.empty(np.broadcast(a, b).shape)
    big = np.empty_like(val)
    a, b = np.broadcast_arrays(a, b)
    ea = erfc(np.where(right, a, -a) * SQRT1_2)
    eb = erfc(np.where(left, -b, b) * SQRT1_2)
    val[right] = 0.5 * (ea[right] - eb[right])
    big[right] = 0.5 * ea[right]
    val[left] = 0.5 * (eb[left] - ea[left])
    big[left] = 0.5 * eb[left]
    val[mid] = 1.0 - 0.5 * (eb[mid] + ea[mid])
    big[mid] = 1.0
    np.clip(val, 0.0, 1.0, out=val)
    return val, ABS_ERR + REL_ERR * big


def phi(y, lo, hi):
    return phi_err(y, lo, hi)[0]


def dphi(y, lo, hi):
    t1 = np.asarray(y, dtype=float) - lo
    t2 = np.asarray(y, dtype=float) - hi
    p1 = INV_SQRT_2PI * np.exp(-0.5 * t1 * t1)
    p2 = INV_SQRT_2PI * np.exp(-0.5 * t2 * t2)
    return p1 - p2, ABS_ERR + REL_ERR * (p1 + p2)


def _g(t):
    t = np.asarray(t, dtype=float)
    tf = np.where(np.isinf(t), 0.0, t)  # g vanishes at both infinities
    return tf * INV_SQRT_2PI * np.exp(-0.5 * tf * tf)


def g_range(tl, tu):
    """Enclosure of g(t) = t*pdf(t) over [tl, tu]; g is odd with extrema at +-1."""
    gl, gu = _g(tl), _g(tu)
    lo = np.minimum(gl, gu)
    hi = np.maximum(gl, gu)
    lo = np.where((tl <= -1.0) & (tu >= -1.0), -PDF_AT_ONE, lo)
    hi = np.where((tl <= 1.0) & (tu >= 1.0), PDF_AT_ONE, hi)
    pad = 1e-15 + 1e-13 * np.maximum(np.abs(lo), np.abs(hi))
    return lo - pad, hi + pad


def ddphi_range(yl, yu, lo, hi):
    """Enclosure of phi''(y) = g(y - hi) - g(y - lo) over [yl, yu]."""
    l1, h1 = g_range(yl - lo, yu - lo)
    l2, h2 = g_range(yl - hi, yu - hi)
    return l2 - h1, h2 - l1


def _hull_line(ys, vs, mid_index, lower):
    """Facet of the lower (upper) convex hull of the samples spanning mid_index."""
    sgn = 1.0 if lower else -1.0
    hull = []
    for k in range(len(ys)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (ys[j] - ys[i]) * (sgn * vs[k] - sgn * vs[i]) - (sgn * vs[j] - sgn * vs[i]) * (ys[k] - ys[i])
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(k)
    i, j = hull[-2], hull[-1]
    for p in range(len(hull) - 1):
        if hull[p + 1] >= mid_index:
            i, j = hull[p], hull[p + 1]
            break
    slope = (vs[j] - vs[i]) / (ys[j] - ys[i])
    return slope, vs[i] - slope * ys[i]


def _relax_one(yl, yu, lo, hi):
    """Affine lower/upper bounds of phi over [yl, yu] plus its exact range.

    Returns (al, cl, au, cu, vmin, vmax): al*y + cl <= phi(y) <= au*y + cu.
    """
    if lo == -np.inf and hi == np.inf:
        return 0.0, 1.0, 0.0, 1.0, 1.0, 1.0
    (vl, vu), (el, eu) = phi_err(np.array([yl, yu]), lo, hi)
    mode = 0.5 * (lo + hi)
    vmin = min(vl - el, vu - eu)
    if yl <= mode <= yu:
        vm, em = phi_err(np.array([mode]), lo, hi)
        vmax = vm[0] + em[0]
    else:
        vmax = max(vl + el, vu + eu)
    vmin, vmax = max(vmin, 0.0), min(vmax, 1.0)
    width = yu - yl
    if width <= 1e-12 * (1.0 + abs(yl)):
        return 0.0, vmin, 0.0, vmax, vmin, vmax

    ym = 0.5 * (yl + yu)
    r = 0.5 * width
    dl, du = ddphi_range(yl, yu, lo, hi)
    if du <= 0.0 or dl >= 0.0:
        # certified curvature sign: chord on one side, midpoint tangent on the other
        chord_s = (vu - vl) / width
        chord_c = vl - chord_s * yl
        chord_pad = max(el, eu) + 1e-16 * (abs(chord_c) + abs(chord_s) * max(abs(yl), abs(yu)))
        (vm,), (em,) = phi_err(np.array([ym]), lo, hi)
        (sm,), (es,) = dphi(np.array([ym]), lo, hi)
        tan_c = vm - sm * ym
        tan_pad = em + es * r + 1e-16 * (abs(tan_c) + abs(sm) * max(abs(yl), abs(yu)))
        if du <= 0.0:
            al, cl = chord_s, chord_c - chord_pad
            au, cu = sm, tan_c + tan_pad
        else:
            al, cl = sm, tan_c - tan_pad
            au, cu = chord_s, chord_c + chord_pad
    else:
        count = int(min(MAX_SAMPLES, max(MIN_SAMPLES, math.ceil(width / STEP) + 1)))
        if count % 2 == 0:
            count += 1
        ys = np.linspace(yl, yu, count)
        ys[-1] = yu
        vs, es = phi_err(ys, lo, hi)
        h = ys[1:] - ys[:-1]
        kl, ku = ddphi_range(ys[:-1], ys[1:], lo, hi)
        kappa = np.maximum(np.abs(kl), np.abs(ku)) * (1.0 + 1e-12)
        curv = kappa * h * h / 8.0
        mid_index = count // 2
        al, cl = _hull_line(ys, vs, mid_index, lower=True)
        gap = vs - es - (al * ys + cl)
        shift = max(0.0, float(np.max(curv - np.minimum(gap[:-1], gap[1:]))))
        cl -= shift + 1e-16 * (abs(cl) + abs(al) * max(abs(yl), abs(yu)))
        au, cu = _hull_line(ys, vs, mid_index, lower=False)
        gap = (au * ys + cu) - (vs + es)
        shift = max(0.0, float(np.max(curv - np.minimum(gap[:-1], gap[1:]))))
        cu += shift + 1e-16 * (abs(cu) + abs(au) * max(abs(yl), abs(yu)))
    if al * ym + cl <= vmin:
        al, cl = 0.0, vmin
    if au * ym + cu >= vmax:
        au, cu = 0.0, vmax
    return al, cl, au, cu, vmin, vmax


def relax_windows(yl, yu, lo, hi):
    """Vectorised front end over 1-D arrays; returns six arrays."""
    yl, yu, lo, hi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (yl, yu, lo, hi)))
    out = np.empty((6, yl.size))
    for k, args in enumerate(zip(yl.ravel(), yu.ravel(), lo.ravel(), hi.ravel())):
        out[:, k] = _relax_one(*args)
    return tuple(out[r].reshape(yl.shape) for r in range(6))


def greedy_order(bbar):
    """Destination order for the greedy fill: descending value, lowest index first."""
    return np.argsort(-np.asarray(bbar, dtype=float), kind="stable")


def greedy_inner(bbar, lo, hi, tol=1e-9):
    """max bbar.T s.t. lo <= T <= hi, sum(T) = 1. Returns (value, T, split)."""
    bbar = np.asarray(bbar, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rem = 1.0 - lo.sum()
    if rem < -tol or rem > (hi - lo).sum() + tol:
        raise ValueError("bounds inconsistent")
    t = lo.copy()
    split = len(bbar)
    for pos, k in enumerate(greedy_order(bbar)):
        if rem <= 0.0:
            split = pos
            break
        add = min(hi[k] - lo[k], rem)
        t[k] += add
        rem -= add
    return float(bbar @ t), t, split


def greedy_values(bbar, lo, hi, tol=1e-9):
    """Greedy value for each row of (lo, hi); infeasible rows get 1 + sum(bbar)."""
    bbar = np.asarray(bbar, dtype=float)
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    order = greedy_order(bbar)
    cap = (hi - lo)[:, order]
    rem = 1.0 - lo.sum(axis=1)
    before = np.cumsum(cap, axis=1) - cap
    fill = np.clip(rem[:, None] - before, 0.0, None)
    fill = np.minimum(fill, cap)
    val = lo @ bbar + fill @ bbar[order]
    bad = (rem < -tol) | (rem > cap.sum(axis=1) + tol)
    val[bad] = 1.0 + bbar.sum()
    return val
