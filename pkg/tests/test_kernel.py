import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad

from pwcbf.geometry import build_partition, whiten
from pwcbf.kernel import erf_window, kernel_matrix, kernel_row, transition_prob
from pwcbf.system import load_benchmark

from helpers import gauss_quad, make_spec, quad_transition

P68 = gauss_quad(0.0, 1.0, -1.0, 1.0)


def test_window_matches_quadrature():
    assert P68 == pytest.approx(0.6826895, abs=1e-7)
    assert erf_window(0.0, -1.0, 1.0) == pytest.approx(P68, abs=1e-14)


def test_zero_width_and_translation():
    assert erf_window(0.3, 0.7, 0.7) == 0.0
    assert erf_window(2.0, 1.0, 3.0) == pytest.approx(erf_window(0.0, -1.0, 1.0), abs=1e-15)


def test_inverted_window_rejected():
    with pytest.raises(ValueError):
        erf_window(0.0, 1.0, -1.0)


@given(st.floats(-8, 8), st.floats(-8, 8), st.floats(0, 6))
def test_window_against_quadrature(y, lo, width):
    assert erf_window(y, lo, lo + width) == pytest.approx(gauss_quad(y, 1.0, lo, lo + width), abs=1e-10)


def test_far_tail():
    assert erf_window(0.0, 40.0, 41.0) <= 1e-15
    assert erf_window(0.0, -1e3, 1e3) == 1.0


def test_1d_identity_unit_noise():
    spec = make_spec(dynamics=["x1 + 0*u1"], noise={"covariance": [[1.0]]}, domain=[[-1, 1]])
    w = whiten(spec.sigma)
    assert transition_prob(spec, w, [-1.0], [1.0], [0.0], [0.0]) == pytest.approx(P68, abs=1e-12)


def test_2d_product():
    spec = load_benchmark("linear-convex")
    w = whiten(spec.sigma)
    assert transition_prob(spec, w, [-1, -1], [1, 1], [0, 0], [0, 0]) == pytest.approx(P68 ** 2, abs=1e-12)
    assert P68 ** 2 == pytest.approx(0.4660649, abs=1e-7)


def test_single_region_complement(tiny_spec):
    p = build_partition(tiny_spec, (1,))
    row = kernel_row(tiny_spec, p, [0.05], [0.2])
    inside = transition_prob(tiny_spec, p.whitening, p.lo[0], p.hi[0], [0.05], [0.2])
    assert row.unsafe == pytest.approx(1.0 - inside, abs=1e-15)


@pytest.mark.parametrize("name, grid", [("linear-nonconvex", (10, 10)), ("temperature-3room", (4, 5, 5)),
                                        ("unicycle-4d", (8, 8, 4, 2))])
def test_row_sums_to_one(name, grid, rng):
    spec = load_benchmark(name)
    p = build_partition(spec, grid)
    lo, hi = spec.domain_box[:, 0], spec.domain_box[:, 1]
    xs = lo + (hi - lo) * rng.random((50, spec.n))
    us = spec.control_box[:, 0] + np.ptp(spec.control_box, axis=1) * rng.random((50, spec.m))
    probs, unsafe = kernel_matrix(spec, p, xs, us)
    np.testing.assert_allclose(probs.sum(axis=1) + unsafe, 1.0, atol=1e-12)
    assert np.all(probs >= 0) and np.all(unsafe >= 0)


def test_linear_row_against_quadrature():
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (10, 10))
    row = kernel_row(spec, p, [0.0, 0.0], [0.0, 0.0])
    oracle = [quad_transition(spec, p, i, [0.0, 0.0], [0.0, 0.0]) for i in range(p.K)]
    np.testing.assert_allclose(row.probs, oracle, atol=1e-6)


def test_correlated_noise_against_2d_quadrature():
    sigma = np.array([[0.04, 0.018], [0.018, 0.09]])
    spec = make_spec(dimensions={"state": 2, "control": 1}, dynamics=["0.8*x1 + 0.1*u1", "0.3*x1 + 0.7*x2"],
                     noise={"covariance": sigma.tolist()}, domain=[[-1, 1], [-1, 1]],
                     initial=[[-0.1, 0.1], [-0.1, 0.1]])
    w = whiten(spec.sigma)
    x, u = np.array([0.2, -0.1]), np.array([0.5])
    mean = spec.evaluate(x, u)
    inv = np.linalg.inv(sigma)
    norm = 1.0 / (2 * math.pi * math.sqrt(np.linalg.det(sigma)))

    def dens(v2, v1):  # density of the whitened next state v = T x+
        z = w.t_inverse @ np.array([v1, v2]) - mean
        return norm * math.exp(-0.5 * z @ inv @ z) * abs(np.linalg.det(w.t_inverse))

    lo, hi = w.apply(mean) - 0.8, w.apply(mean) + np.array([0.3, 1.1])
    oracle, _ = dblquad(dens, lo[0], hi[0], lo[1], hi[1], epsabs=1e-11, epsrel=1e-10)
    assert transition_prob(spec, w, lo, hi, x, u) == pytest.approx(oracle, abs=1e-8)
