# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the window relaxation and the greedy inner solver.

Same algorithms and constants as ``_fallback``; erfc comes from scipy's
cython_special so both backends evaluate the identical special function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, ceil, fmax, fmin, sqrt
from scipy.special.cython_special cimport erfc

cnp.import_array()

cdef double SQRT1_2 = sqrt(0.5)
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double PDF_AT_ONE = 0.3989422804014327 * exp(-0.5)
cdef double REL_ERR = 1e-13
cdef double ABS_ERR = 1e-15
cdef double STEP = 0.05
cdef int MIN_SAMPLES = 9
cdef int MAX_SAMPLES = 513


cdef inline double _phi(double y, double lo, double hi, double* err) noexcept nogil:
    cdef double a = lo - y
    cdef double b = hi - y
    cdef double v, big, ea, eb
    if a >= 0.0:
        ea = erfc(a * SQRT1_2)
        eb = erfc(b * SQRT1_2)
        v = 0.5 * (ea - eb)
        big = 0.5 * ea
    elif b <= 0.0:
        ea = erfc(-a * SQRT1_2)
        eb = erfc(-b * SQRT1_2)
        v = 0.5 * (eb - ea)
        big = 0.5 * eb
    else:
        ea = erfc(-a * SQRT1_2)
        eb = erfc(b * SQRT1_2)
        v = 1.0 - 0.5 * (eb + ea)
        big = 1.0
    if v < 0.0:
        v = 0.0
    elif v > 1.0:
        v = 1.0
    err[0] = ABS_ERR + REL_ERR * big
    return v


cdef inline double _dphi(double y, double lo, double hi, double* err) noexcept nogil:
    cdef double t1 = y - lo
    cdef double t2 = y - hi
    cdef double p1 = INV_SQRT_2PI * exp(-0.5 * t1 * t1)
    cdef double p2 = INV_SQRT_2PI * exp(-0.5 * t2 * t2)
    err[0] = ABS_ERR + REL_ERR * (p1 + p2)
    return p1 - p2


cdef inline double _g(double t) noexcept nogil:
    if fabs(t) == INFINITY:
        return 0.0
    return t * INV_SQRT_2PI * exp(-0.5 * t * t)


cdef inline void _g_range(double tl, double tu, double* lo, double* hi) noexcept nogil:
    cdef double gl = _g(tl)
    cdef double gu = _g(tu)
    cdef double a = fmin(gl, gu)
    cdef double b = fmax(gl, gu)
    cdef double pad
    if tl <= -1.0 and tu >= -1.0:
        a = -PDF_AT_ONE
    if tl <= 1.0 and tu >= 1.0:
        b = PDF_AT_ONE
    pad = 1e-15 + 1e-13 * fmax(fabs(a), fabs(b))
    lo[0] = a - pad
    hi[0] = b + pad


cdef inline void _ddphi_range(double yl, double yu, double lo, double hi,
                              double* dl, double* du) noexcept nogil:
    cdef double l1, h1, l2, h2
    _g_range(yl - lo, yu - lo, &l1, &h1)
    _g_range(yl - hi, yu - hi, &l2, &h2)
    dl[0] = l2 - h1
    du[0] = h2 - l1


cdef void _hull_line(double* ys, double* vs, int count, int mid_index, double sgn,
                     int* hull, double* slope, double* offset) noexcept nogil:
    cdef int top = 0
    cdef int k, i, j, p
    cdef double cross
    for k in range(count):
        while top >= 2:
            i = hull[top - 2]
            j = hull[top - 1]
            cross = (ys[j] - ys[i]) * (sgn * vs[k] - sgn * vs[i]) - (sgn * vs[j] - sgn * vs[i]) * (ys[k] - ys[i])
            if cross <= 0.0:
                top -= 1
            else:
                break
        hull[top] = k
        top += 1
    i = hull[top - 2]
    j = hull[top - 1]
    for p in range(top - 1):
        if hull[p + 1] >= mid_index:
            i = hull[p]
            j = hull[p + 1]
            break
    slope[0] = (vs[j] - vs[i]) / (ys[j] - ys[i])
    offset[0] = vs[i] - slope[0] * ys[i]


cdef void _relax_one(double yl, double yu, double lo, double hi,
                     double* ys, double* vs, double* es, int* hull, double* out) noexcept nogil:
    cdef double el, eu, em, es_, vl, vu, vm, sm
    cdef double mode = 0.5 * (lo + hi)
    cdef double vmin, vmax, width, ym, r, dl, du
    cdef double al, cl, au, cu, chord_s, chord_c, chord_pad, tan_c, tan_pad
    cdef double h, kl, ku, kappa, curv, need, shift, gl, gr, ymax
    cdef int count, k
    if lo == -INFINITY and hi == INFINITY:
        out[0] = 0.0; out[1] = 1.0; out[2] = 0.0; out[3] = 1.0; out[4] = 1.0; out[5] = 1.0
        return
    vl = _phi(yl, lo, hi, &el)
    vu = _phi(yu, lo, hi, &eu)
    vmin = fmin(vl - el, vu - eu)
    if yl <= mode and mode <= yu:
        vm = _phi(mode, lo, hi, &em)
        vmax = vm + em
    else:
        vmax = fmax(vl + el, vu + eu)
    vmin = fmax(vmin, 0.0)
    vmax = fmin(vmax, 1.0)
    width = yu - yl
    if width <= 1e-12 * (1.0 + fabs(yl)):
        out[0] = 0.0; out[1] = vmin; out[2] = 0.0; out[3] = vmax; out[4] = vmin; out[5] = vmax
        return
    ym = 0.5 * (yl + yu)
    r = 0.5 * width
    ymax = fmax(fabs(yl), fabs(yu))
    _ddphi_range(yl, yu, lo, hi, &dl, &du)
    if du <= 0.0 or dl >= 0.0:
        chord_s = (vu - vl) / width
        chord_c = vl - chord_s * yl
        chord_pad = fmax(el, eu) + 1e-16 * (fabs(chord_c) + fabs(chord_s) * ymax)
        vm = _phi(ym, lo, hi, &em)
        sm = _dphi(ym, lo, hi, &es_)
        tan_c = vm - sm * ym
        tan_pad = em + es_ * r + 1e-16 * (fabs(tan_c) + fabs(sm) * ymax)
        if du <= 0.0:
            al = chord_s; cl = chord_c - chord_pad
            au = sm; cu = tan_c + tan_pad
        else:
            al = sm; cl = tan_c - tan_pad
            au = chord_s; cu = chord_c + chord_pad
    else:
        count = <int>fmin(MAX_SAMPLES, fmax(MIN_SAMPLES, ceil(width / STEP) + 1))
        if count % 2 == 0:
            count += 1
        # same node placement as numpy.linspace
        h = width / (count - 1)
        for k in range(count):
            ys[k] = yl + k * h
        ys[count - 1] = yu
        for k in range(count):
            vs[k] = _phi(ys[k], lo, hi, &es[k])
        _hull_line(ys, vs, count, count // 2, 1.0, hull, &al, &cl)
        _hull_line(ys, vs, count, count // 2, -1.0, hull, &au, &cu)
        shift = 0.0
        for k in range(count - 1):
            h = ys[k + 1] - ys[k]
            _ddphi_range(ys[k], ys[k + 1], lo, hi, &kl, &ku)
            kappa = fmax(fabs(kl), fabs(ku)) * (1.0 + 1e-12)
            curv = kappa * h * h / 8.0
            gl = vs[k] - es[k] - (al * ys[k] + cl)
            gr = vs[k + 1] - es[k + 1] - (al * ys[k + 1] + cl)
            need = curv - fmin(gl, gr)
            if need > shift:
                shift = need
        cl -= shift + 1e-16 * (fabs(cl) + fabs(al) * ymax)
        shift = 0.0
        for k in range(count - 1):
            h = ys[k + 1] - ys[k]
            _ddphi_range(ys[k], ys[k + 1], lo, hi, &kl, &ku)
            kappa = fmax(fabs(kl), fabs(ku)) * (1.0 + 1e-12)
            curv = kappa * h * h / 8.0
            gl = (au * ys[k] + cu) - (vs[k] + es[k])
            gr = (au * ys[k + 1] + cu) - (vs[k + 1] + es[k + 1])
            need = curv - fmin(gl, gr)
            if need > shift:
                shift = need
        cu += shift + 1e-16 * (fabs(cu) + fabs(au) * ymax)
    if al * ym + cl <= vmin:
        al = 0.0; cl = vmin
    if au * ym + cu >= vmax:
        au = 0.0; cu = vmax
    out[0] = al; out[1] = cl; out[2] = au; out[3] = cu; out[4] = vmin; out[5] = vmax


def relax_windows(yl, yu, lo, hi):
    """Affine envelopes (al, cl, au, cu, vmin, vmax) of the window probability."""
    yl_b, yu_b, lo_b, hi_b = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (yl, yu, lo, hi)))
    shape = yl_b.shape
    cdef double[::1] a = np.array(yl_b, dtype=np.float64, order="C").ravel()
    cdef double[::1] b = np.array(yu_b, dtype=np.float64, order="C").ravel()
    cdef double[::1] c = np.array(lo_b, dtype=np.float64, order="C").ravel()
    cdef double[::1] d = np.array(hi_b, dtype=np.float64, order="C").ravel()
    cdef Py_ssize_t total = a.shape[0]
    out_arr = np.empty((total, 6))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] ys = np.empty(MAX_SAMPLES + 1)
    cdef double[::1] vs = np.empty(MAX_SAMPLES + 1)
    cdef double[::1] es = np.empty(MAX_SAMPLES + 1)
    cdef int[::1] hull = np.empty(MAX_SAMPLES + 1, dtype=np.intc)
    cdef Py_ssize_t k
    with nogil:
        for k in range(total):
            _relax_one(a[k], b[k], c[k], d[k], &ys[0], &vs[0], &es[0], &hull[0], &out[k, 0])
    return tuple(out_arr[:, r].reshape(shape) for r in range(6))


def greedy_inner(bbar, lo, hi, double tol=1e-9):
    """max bbar.T s.t. lo <= T <= hi, sum(T) = 1. Returns (value, T, split)."""
    cdef double[::1] bb = np.ascontiguousarray(bbar, dtype=np.float64)
    cdef double[::1] l = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] h = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t n = bb.shape[0], pos, k
    cdef double rem = 1.0, cap = 0.0, add, value = 0.0
    for k in range(n):
        rem -= l[k]
        cap += h[k] - l[k]
    if rem < -tol or rem > cap + tol:
        raise ValueError("bounds inconsistent")
    t_arr = np.array(l, dtype=np.float64)
    cdef double[::1] t = t_arr
    cdef long[::1] order = np.argsort(-np.asarray(bb), kind="stable").astype(np.int_)
    cdef Py_ssize_t split = n
    for pos in range(n):
        if rem <= 0.0:
            split = pos
            break
        k = order[pos]
        add = fmin(h[k] - l[k], rem)
        t[k] += add
        rem -= add
    for k in range(n):
        value += bb[k] * t[k]
    return value, t_arr, int(split)


def greedy_values(bbar, lo, hi, double tol=1e-9):
    """Greedy value for each row of (lo, hi); infeasible rows get 1 + sum(bbar)."""
    cdef double[::1] bb = np.ascontiguousarray(bbar, dtype=np.float64)
    cdef double[:, ::1] L = np.ascontiguousarray(np.atleast_2d(lo), dtype=np.float64)
    cdef double[:, ::1] H = np.ascontiguousarray(np.atleast_2d(hi), dtype=np.float64)
    cdef long[::1] order = np.argsort(-np.asarray(bb), kind="stable").astype(np.int_)
    cdef Py_ssize_t rows = L.shape[0], n = L.shape[1], r, pos, k
    out_arr = np.empty(rows)
    cdef double[::1] out = out_arr
    cdef double rem, cap, add, val, worst = 1.0
    for k in range(n):
        worst += bb[k]
    with nogil:
        for r in range(rows):
            rem = 1.0
            cap = 0.0
            val = 0.0
            for k in range(n):
                rem -= L[r, k]
                cap += H[r, k] - L[r, k]
                val += bb[k] * L[r, k]
            if rem < -tol or rem > cap + tol:
                out[r] = worst
                continue
            for pos in range(n):
                if rem <= 0.0:
                    break
                k = order[pos]
                add = fmin(H[r, k] - L[r, k], rem)
                val += bb[k] * add
                rem -= add
            out[r] = val
    return out_arr
