import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pwcbf import _core
from pwcbf._core import _fallback
from pwcbf.controller import (Controller, InnerBlock, best_response, candidate_controls, controller_from_csv,
                              default_fallback, extract_control, fold_x, folded_value, greedy_inner, inner_block,
                              inner_value, region_value)
from pwcbf.geometry import UNSAFE, build_partition
from pwcbf.relaxation import bound_all, bound_row
from pwcbf.system import load_benchmark

from helpers import box_simplex_value, random_box_simplex


def test_greedy_puts_mass_on_best_entry():
    value, T, _ = greedy_inner([1.0, 0.0], [0.0, 0.0], [1.0, 1.0])
    assert value == 1.0 and np.array_equal(T, [1.0, 0.0])


def test_greedy_three_entries_by_vertex_enumeration():
    bbar, lo, hi = [0.9, 0.5, 0.1], [0.1] * 3, [0.6] * 3
    value, T, _ = greedy_inner(bbar, lo, hi)
    np.testing.assert_allclose(T, [0.6, 0.3, 0.1], atol=1e-15)
    assert value == pytest.approx(0.70, abs=1e-15)
    # independent check: the optimum sits at a vertex, where all but one entry is at a bound
    best = -np.inf
    for free in range(3):
        for pattern in np.ndindex(2, 2, 2):
            t = np.array([(lo[k], hi[k])[pattern[k]] for k in range(3)])
            t[free] = 1.0 - (t.sum() - t[free])
            if lo[free] - 1e-12 <= t[free] <= hi[free] + 1e-12:
                best = max(best, float(np.dot(bbar, t)))
    assert value == pytest.approx(best, abs=1e-15)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_greedy_constant_objective(c, seed):
    bbar, lo, hi = random_box_simplex(np.random.default_rng(seed), 6)
    value, T, _ = greedy_inner(np.full(6, c), lo, hi)
    assert value == pytest.approx(c, abs=1e-12)
    assert T.sum() == pytest.approx(1.0) and np.all(T >= lo - 1e-15) and np.all(T <= hi + 1e-15)


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_greedy_matches_simplex(seed, size):
    bbar, lo, hi = random_box_simplex(np.random.default_rng(seed), size)
    assert greedy_inner(bbar, lo, hi)[0] == pytest.approx(box_simplex_value(bbar, lo, hi)[0], abs=1e-9)


@given(st.integers(0, 10_000))
def test_compiled_greedy_matches_fallback(seed):
    bbar, lo, hi = random_box_simplex(np.random.default_rng(seed), 9)
    a, b = _core.greedy_inner(bbar, lo, hi), _fallback.greedy_inner(bbar, lo, hi)
    assert a[0] == pytest.approx(b[0], abs=1e-14)
    np.testing.assert_allclose(a[1], b[1], atol=1e-14)


def test_greedy_rejects_inconsistent_bounds():
    with pytest.raises(ValueError):
        greedy_inner([1.0, 0.5], [0.7, 0.7], [1.0, 1.0])


def test_folding_takes_the_worst_state():
    # lower form 0.5 + 0.1 x on x in [0, 1]: valid for every x only at x = 0
    block = InnerBlock(0, np.array([0]), la=np.array([[0.1], [0.0]]), lc=np.array([0.55, 0.0]),
                       ua=np.array([[0.1], [0.0]]), uc=np.array([0.65, 1.0]),
                       rng=np.array([[0.0, 1.0], [0.0, 1.0]]), half=np.array([0.5]))
    lo, hi = block.folded()
    assert lo[0] == pytest.approx(0.5) and hi[0] == pytest.approx(0.7)


def test_state_independent_bounds_fold_to_themselves():
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (3, 3))
    bm = bound_all(spec, p, "constant")
    folded = fold_x(bm, p)
    for row, frow in zip(bm.rows, folded.rows):
        np.testing.assert_allclose(frow.lo_c[:-1], row.c_lo)
        np.testing.assert_allclose(frow.hi_c[:-1], row.c_hi)


def line_block(seed):
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (6, 6))
    rng = np.random.default_rng(seed)
    i = int(rng.integers(p.K))
    u = spec.control_box[:, 0] + np.ptp(spec.control_box, axis=1) * rng.random(2)
    return inner_block(bound_row(spec, p, i), u, spec.n), rng.random(p.K)


@pytest.mark.parametrize("seed", range(4))
def test_inner_value_is_the_worst_state(seed):
    block, b = line_block(seed)
    # dense scan over the state box; for a fixed state the greedy fill is exact
    g = np.linspace(-1, 1, 81)
    scan = max(greedy_inner(block.bbar(b), *block.at(block.half * np.array([s, t])))[0] for s in g for t in g)
    exact = inner_value(block, b)
    assert exact >= scan - 1e-9
    assert exact <= scan + 1e-3
    assert exact <= folded_value(block, b) + 1e-12


def test_best_response_minimizes_region_value():
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (5, 5))
    row = bound_row(spec, p, 12)
    cands = candidate_controls(spec.control_box)
    options = [[inner_block(row, u, spec.n)] for u in cands]
    b = np.random.default_rng(0).random(p.K)
    idx, val = best_response(options, b)
    vals = [region_value(o, b) for o in options]
    assert val == pytest.approx(min(vals), abs=1e-9)
    assert idx == int(np.argmin(np.round(vals, 9)))


def test_concave_in_control_so_vertices_suffice():
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (5, 5))
    row = bound_row(spec, p, 7)
    b = np.random.default_rng(1).random(p.K)
    line = np.linspace(-3, 3, 2001)
    vals = np.array([inner_value(inner_block(row, [u, 0.5], spec.n), b) for u in line[::40]])
    # concavity: every sampled value lies above the chord between the ends
    chord = vals[0] + (vals[-1] - vals[0]) * (line[::40] - line[0]) / (line[-1] - line[0])
    assert np.all(vals >= chord - 1e-9)
    assert min(vals[0], vals[-1]) <= vals.min() + 1e-12


def test_extract_control_prefers_center_on_ties():
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (3, 3))
    folded = fold_x(bound_all(spec, p, "constant"), p)
    u, idx = extract_control(4, np.zeros(p.K), folded, spec.control_box)
    assert idx == 0 and np.array_equal(u, [0.0, 0.0])


def test_candidates_order():
    c = candidate_controls(np.array([[-1.0, 1.0], [0.0, 2.0]]), points=3)
    np.testing.assert_array_equal(c[:5], [[0, 1], [-1, 0], [-1, 2], [1, 0], [1, 2]])
    assert len(c) == 9 and len(np.unique(c, axis=0)) == 9


def test_lookup_and_fallback():
    spec = load_benchmark("linear-convex")
    p = build_partition(spec, (2, 2))
    ctrl = Controller(np.arange(8.0).reshape(4, 2), default_fallback(spec.control_box), p.grid_counts)
    assert np.array_equal(ctrl.lookup(p, [-0.5, 0.5]), ctrl.controls[p.locate([-0.5, 0.5])])
    assert np.array_equal(ctrl.lookup(p, [3.0, 0.0]), [0.0, 0.0])
    # the shared face x1 = 0 belongs to the lower-index region
    assert p.locate([0.0, -0.5]) == 0
    assert np.array_equal(ctrl.lookup(p, [0.0, -0.5]), ctrl.controls[0])
    assert p.locate([3.0, 0.0]) == UNSAFE


def test_fallback_is_zero_clipped():
    np.testing.assert_array_equal(default_fallback(np.array([[0.0, 0.5], [-1, 1]])), [0.0, 0.0])
    np.testing.assert_array_equal(default_fallback(np.array([[0.2, 0.5]])), [0.2])


def test_csv_round_trip():
    ctrl = Controller(np.array([[0.1, -3.0], [1 / 3, 2.5]]), np.array([0.0, 0.0]), (2, 1))
    back = controller_from_csv(ctrl.to_csv())
    assert back.grid_counts == (2, 1)
    np.testing.assert_array_equal(back.controls, ctrl.controls)
    assert back.to_csv() == ctrl.to_csv()
