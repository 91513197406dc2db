import itertools
import json
import math

import numpy as np
from scipy.integrate import quad

from pwcbf.controller import inner_block
from pwcbf.lp import EQ, LPModel, solve_lp
from pwcbf.relaxation import unsafe_bound
from pwcbf.system import benchmark_text, spec_from_dict


ACCEPTANCE_LINES: list[str] = []  # filled by test_acceptance, echoed by conftest


def make_doc(**changes):
    """Config dict of a small 1D system x+ = a x + c u; keyword args override fields."""
    doc = {
        "name": "tiny-1d",
        "dimensions": {"state": 1, "control": 1},
        "dynamics": ["0.9*x1 + 0.2*u1"],
        "noise": {"covariance": [[0.04]]},
        "domain": [[-1.0, 1.0]],
        "initial": [[-0.1, 0.1]],
        "obstacles": [],
        "control": [[-1.0, 1.0]],
        "horizon": 5,
    }
    doc.update(changes)
    return doc


def make_spec(**changes):
    return spec_from_dict(make_doc(**changes))


def benchmark_doc(name):
    return json.loads(benchmark_text(name))


def gauss_quad(mean, sd, lo, hi):
    """Adaptive quadrature of the N(mean, sd^2) density over [lo, hi]."""

    if hi <= lo:
        return 0.0
    dens = lambda t: math.exp(-0.5 * ((t - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))  # noqa: E731
    # split at the mean so the peak is never skipped
    pts = [p for p in (mean,) if lo < p < hi]
    edges = [lo, *pts, hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = quad(dens, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
    return total


def quad_transition(spec, partition, i, x, u):
    """Quadrature oracle for a diagonal covariance, working in original coordinates."""
    sig = np.asarray(spec.sigma)
    assert np.count_nonzero(sig - np.diag(np.diag(sig))) == 0, "oracle needs a diagonal covariance"
    box = partition.region_box_x(i)
    mean = spec.evaluate(np.asarray(x, float), np.asarray(u, float))
    p = 1.0
    for d in range(spec.n):
        p *= gauss_quad(mean[d], math.sqrt(sig[d, d]), box[d, 0], box[d, 1])
    return p



def sample_region(spec, partition, i, count, rng):
    """Uniform states of region i (whitened box mapped back) and uniform controls."""
    t = rng.random((count, spec.n))
    xs = partition.whitening.invert(partition.lo[i] + (partition.hi[i] - partition.lo[i]) * t)
    box = spec.control_box
    us = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((count, spec.m))
    return xs, us


def row_violation(row, probs, unsafe, xs, us):
    """Largest amount by which the exact kernel leaves a row's bounds (<= 0 means sound)."""

    z = np.hstack([xs, us])
    kept = probs[:, row.dest]
    lo = z @ row.a_lo.T + row.c_lo
    hi = z @ row.a_hi.T + row.c_hi
    worst = max((lo - kept).max(), (kept - hi).max(), (row.rng[:, 0] - kept).max(), (kept - row.rng[:, 1]).max())
    if len(row.trunc_dest):
        worst = max(worst, (probs[:, row.trunc_dest] - row.trunc_ub).max())
    ub = unsafe_bound(row)
    ul = z @ ub.lower.coeffs + ub.lower.offset
    uh = z @ ub.upper.coeffs + ub.upper.offset
    worst = max(worst, (ul - unsafe).max(), (unsafe - uh).max(), ub.range[0] - unsafe.min(), unsafe.max() - ub.range[1])
    return float(worst)


def box_simplex_value(bbar, lo, hi, backend="simplex"):
    """max bbar.T over {lo <= T <= hi, sum T = 1} as a plain LP."""

    model = LPModel()
    idx = np.array([model.add_var(f"T{k}", float(l), float(h), -float(b)) for k, (b, l, h) in
                    enumerate(zip(bbar, lo, hi))])
    model.add_row(idx, np.ones(len(idx)), EQ, 1.0)
    sol = solve_lp(model, backend)
    assert sol.ok, sol.message
    return -sol.objective, sol.x


def random_box_simplex(rng, size):
    """Random feasible box-simplex instance (bbar, lo, hi)."""
    bbar = rng.random(size)
    bbar[rng.random(size) < 0.2] = rng.choice(bbar)  # ties
    t = rng.dirichlet(np.ones(size))
    lo = t * rng.random(size)
    hi = np.minimum(t + rng.random(size) * 0.5, 1.0)
    return bbar, lo, hi


# -- brute-force minimax oracle for the zero-gap check ------------------------------------

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def fill_values(bbar, lo, hi):
    """Row-wise max bbar.T over {lo <= T <= hi, sum T = 1} by filling the best entries first."""
    order = np.argsort(-bbar, kind="stable")
    cap = (hi - lo)[:, order]
    room = 1.0 - lo.sum(axis=1)
    before = np.cumsum(cap, axis=1) - cap
    take = np.minimum(np.clip(room[:, None] - before, 0.0, None), cap)
    return lo @ bbar + take @ bbar[order]


def golden_max(fn, lo, hi, count, iters=70):
    """Vectorised golden-section maximisation of `count` concave functions on [lo, hi]."""
    a, b = np.full(count, lo), np.full(count, hi)
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        left = fc > fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        c_new, d_new = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        c, d = c_new, d_new
        fc, fd = fn(c), fn(d)
    return np.maximum(np.maximum(fc, fd), np.maximum(fn(np.full(count, lo)), fn(np.full(count, hi))))


class MinimaxOracle:
    """Primal minimax value of a 1-D state, 1-D control synthesis problem.

    For barrier values b the worst expected next value of region i is
    max over states (golden section, the value is concave in the state) of an
    exact fill over the kernel box, minimised over a regular control grid.
    The objective for b is then max_init b_i + N max_i max(0, V_i - b_i),
    minimised over b by nested golden-section search after a coarse scan.
    """

    def __init__(self, spec, partition, bounds, horizon, u_points=201):
        assert spec.n == 1 and spec.m == 1
        self.K, self.N = partition.K, float(horizon)
        self.init = partition.initial_regions
        grid = np.linspace(spec.control_box[0, 0], spec.control_box[0, 1], u_points)
        self.regions = []
        for row in bounds.rows:
            blocks = [inner_block(row, [u], 1) for u in grid]
            first = blocks[0]
            self.regions.append((first.dest, first.la[:, 0], np.array([b.lc for b in blocks]), first.ua[:, 0],
                                 np.array([b.uc for b in blocks]), first.rng, float(first.half[0])))

    def values(self, b):
        out = np.empty(self.K)
        for i, (dest, la, lc, ua, uc, rng, half) in enumerate(self.regions):
            bbar = np.append(np.asarray(b, dtype=float)[dest], 1.0)

            def at(d):
                lo = np.maximum(d[:, None] * la + lc, rng[:, 0])
                hi = np.minimum(d[:, None] * ua + uc, rng[:, 1])
                return fill_values(bbar, lo, np.maximum(hi, lo))

            out[i] = golden_max(at, -half, half, len(lc)).min()
        return out

    def objective(self, b):
        b = np.clip(np.asarray(b, dtype=float), 0.0, 1.0)
        v = self.values(b)
        return float(b[self.init].max() + self.N * max(0.0, float((v - b).max())))

    def minimize(self, coarse=21, tol=1e-10):
        """Nested golden-section search over b in [0, 1]^K after a coarse grid scan."""
        pts = np.linspace(0.0, 1.0, coarse)
        best = min(itertools.product(pts, repeat=self.K), key=self.objective)
        step = pts[1] - pts[0]
        box = [(max(0.0, v - step), min(1.0, v + step)) for v in best]

        def nested(prefix):
            k = len(prefix)
            if k == self.K:
                return self.objective(prefix), prefix
            lo, hi = box[k]
            a, c = lo, hi
            x1, x2 = c - GOLDEN * (c - a), a + GOLDEN * (c - a)
            f1, f2 = nested(prefix + [x1]), nested(prefix + [x2])
            while c - a > tol:
                if f1[0] <= f2[0]:
                    c, x2, f2 = x2, x1, f1
                    x1 = c - GOLDEN * (c - a)
                    f1 = nested(prefix + [x1])
                else:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + GOLDEN * (c - a)
                    f2 = nested(prefix + [x2])
            ends = [nested(prefix + [lo]), nested(prefix + [hi])]
            return min([f1, f2, *ends], key=lambda t: t[0])

        value, b = nested([])
        return min(value, self.objective(best)), np.array(b)

