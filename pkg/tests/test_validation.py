import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import binom

from helpers import make_spec
from pwcbf.controller import Controller
from pwcbf.geometry import PartitionError, build_partition
from pwcbf.synthesis import Barrier, synthesize
from pwcbf.validation import binomial_bound, check_certificate, region_samples, simulate


def cp_oracle(safe, trials, confidence=0.95):
    """Lower end of the exact binomial interval: P(X >= safe | p) = 1 - confidence."""
    if safe == 0:
        return 0.0
    return brentq(lambda p: binom.sf(safe - 1, trials, p) - (1.0 - confidence), 1e-15, 1.0 - 1e-15, xtol=1e-14)


def _center_controller(spec, part):
    u = spec.control_box.mean(axis=1)
    return Controller(np.tile(u, (part.K, 1)), u, tuple(part.grid_counts))


def test_clopper_pearson_all_safe():
    # closed form: p**500 = 0.05
    assert binomial_bound((500, 500)) == pytest.approx(0.05 ** (1 / 500), abs=1e-12)
    assert binomial_bound((500, 500)) == pytest.approx(0.9940, abs=5e-5)


def test_clopper_pearson_six_failures():
    # the exact one-sided bound for 494/500 is 0.97645 (not 0.9747)
    assert binomial_bound((494, 500)) == pytest.approx(cp_oracle(494, 500), abs=1e-10)
    assert binomial_bound((494, 500)) == pytest.approx(0.97645, abs=1e-5)


def test_clopper_pearson_all_unsafe():
    assert binomial_bound((0, 500)) == 0.0


@given(st.integers(1, 60), st.data())
def test_clopper_pearson_matches_oracle(trials, data):
    safe = data.draw(st.integers(0, trials))
    assert binomial_bound((safe, trials)) == pytest.approx(cp_oracle(safe, trials), abs=1e-9)
    assert binomial_bound((safe, trials)) <= safe / trials


def test_binomial_bound_rejects_empty():
    with pytest.raises(ValueError):
        binomial_bound((0, 0))


def test_simulate_is_deterministic():
    spec = make_spec()
    part = build_partition(spec, (4,))
    ctrl = _center_controller(spec, part)
    a = simulate(spec, part, ctrl, trials=50, steps=20, seed=7)
    b = simulate(spec, part, ctrl, trials=50, steps=20, seed=7)
    assert a.to_dict() == b.to_dict()
    c = simulate(spec, part, ctrl, trials=50, steps=20, seed=8)
    assert not np.array_equal(a.exit_times, c.exit_times) or a.violations == 0


def test_simulate_zero_steps_is_safe():
    spec = make_spec()
    part = build_partition(spec, (2,))
    rep = simulate(spec, part, _center_controller(spec, part), trials=5, steps=0)
    assert rep.empirical_safety == 1.0 and rep.violations == 0


def test_simulate_records_consistent_trajectories():
    spec = make_spec(noise={"covariance": [[0.25]]})
    part = build_partition(spec, (4,))
    rep, traj = simulate(spec, part, _center_controller(spec, part), trials=30, steps=10, seed=1, record=True)
    assert traj.states.shape == (30, 11, 1)
    for t, k in enumerate(rep.exit_times):
        if k >= 0:
            assert traj.regions[t, k] == -1
            assert np.all(traj.regions[t, :k] >= 0)
            assert np.all(np.isnan(traj.states[t, k + 1:]))
        else:
            assert np.all(traj.regions[t] >= 0)
    # with this much noise some runs leave the domain within 10 steps
    assert rep.violations > 0


def test_simulate_rejects_no_trials():
    spec = make_spec()
    part = build_partition(spec, (2,))
    with pytest.raises(ValueError):
        simulate(spec, part, _center_controller(spec, part), trials=0)


def test_region_samples_include_center_and_corners():
    spec = make_spec()
    part = build_partition(spec, (3,))
    pts = region_samples(part, 1, 16, seed=3)
    box = part.region_box_x(1)
    assert pts.shape == (16, 1)
    assert pts[0, 0] == pytest.approx(box[0].mean())
    assert {round(float(v), 12) for v in pts[1:3, 0]} == {round(float(box[0, 0]), 12), round(float(box[0, 1]), 12)}
    assert np.all((pts >= box[:, 0] - 1e-12) & (pts <= box[:, 1] + 1e-12))


def test_trivial_certificate_passes():
    spec = make_spec()
    part = build_partition(spec, (3,))
    bar = Barrier(np.ones(part.K), 1.0, 0.0, np.zeros(part.K), 5.0, 0.0)
    rep = check_certificate(spec, part, bar, _center_controller(spec, part))
    assert rep.passed
    assert rep.max_slack <= 1e-12


def test_corrupted_certificate_names_region():
    spec = make_spec()
    part = build_partition(spec, (3,))
    b = np.ones(part.K)
    b[2] = -0.1
    bar = Barrier(b, 1.0, 0.0, np.zeros(part.K), 5.0, 0.0)
    rep = check_certificate(spec, part, bar, _center_controller(spec, part))
    assert not rep.passed
    assert rep.failed_nonnegative == (2,)
    assert "regions 2" in rep.describe()


def test_barrier_above_eta_fails():
    spec = make_spec()
    part = build_partition(spec, (3,))
    bar = Barrier(np.ones(part.K), 0.5, 0.0, np.zeros(part.K), 5.0, 0.0)
    rep = check_certificate(spec, part, bar, _center_controller(spec, part))
    assert not rep.initial_ok and not rep.passed
    assert set(rep.failed_initial) == set(part.initial_regions.tolist())


def test_mismatched_partition_rejected():
    spec = make_spec()
    part = build_partition(spec, (3,))
    other = build_partition(spec, (4,))
    bar = Barrier(np.ones(part.K), 1.0, 0.0, np.zeros(part.K), 5.0, 0.0)
    with pytest.raises(PartitionError):
        check_certificate(spec, other, bar, _center_controller(spec, part))


def test_synthesized_certificate_checks_out():
    spec = make_spec(noise={"covariance": [[0.01]]})
    part = build_partition(spec, (6,))
    res = synthesize(spec, part)
    rep = check_certificate(spec, part, res.barrier, res.controller, samples_per_region=64)
    assert rep.passed, rep.describe()
    mc = simulate(spec, part, res.controller, trials=300, steps=int(spec.horizon), seed=0)
    assert binomial_bound(mc) >= res.barrier.p_safe - 0.02
    assert math.isfinite(rep.max_slack)
