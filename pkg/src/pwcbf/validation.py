"""Monte Carlo simulation of the closed loop and sampled re-checks of a certificate."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist
from scipy.stats import qmc

from .controller import Controller
from .geometry import UNSAFE, Partition, PartitionError
from .kernel import kernel_matrix
from .synthesis import Barrier
from .system import SystemSpec

SLACK_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class McReport:
    trials: int
    horizon: int
    violations: int
    empirical_safety: float
    seed: int
    exit_times: np.ndarray  # first step outside the safe set, -1 if none

    def to_dict(self) -> dict:
        return {"trials": self.trials, "horizon": self.horizon, "violations": self.violations,
                "empirical_safety": self.empirical_safety, "seed": self.seed,
                "exit_times": [int(t) for t in self.exit_times]}


@dataclass(frozen=True, eq=False)
class Trajectories:
    states: np.ndarray  # (trials, steps + 1, n), NaN after the first exit
    regions: np.ndarray  # (trials, steps + 1), UNSAFE = -1 outside

    def to_csv(self, exit_times: np.ndarray) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.states.shape[2]
        w.writerow(["trial", "step", *[f"x_{k + 1}" for k in range(n)], "region_index", "violated"])
        for t in range(self.states.shape[0]):
            last = self.states.shape[1] - 1 if exit_times[t] < 0 else int(exit_times[t])
            for k in range(last + 1):
                w.writerow([t, k, *[repr(float(v)) for v in self.states[t, k]], int(self.regions[t, k]),
                            int(k == exit_times[t])])
        return buf.getvalue()


def _streams(seed: int, trials: int, n: int, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory draws from independent counter-based streams: uniforms for x0 and normals."""
    u0 = np.empty((trials, n))
    z = np.empty((trials, steps, n))
    for t, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.Generator(np.random.Philox(child))
        u0[t] = rng.random(n)
        z[t] = rng.standard_normal((steps, n))
    return u0, z


def simulate(spec: SystemSpec, partition: Partition, controller: Controller, trials: int = 500,
             steps: int | None = None, seed: int = 0, record: bool = False):
    """Closed-loop runs from uniform initial states; returns a McReport (and Trajectories if record)."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if steps is None:
        steps = 50 if math.isinf(spec.horizon) else int(spec.horizon)
    n = spec.n
    u0, z = _streams(seed, trials, n, steps)
    lo, hi = spec.initial_box[:, 0], spec.initial_box[:, 1]
    x = lo + (hi - lo) * u0
    noise = z @ np.linalg.cholesky(spec.sigma).T
    exit_times = np.full(trials, -1, dtype=np.int64)
    states = np.full((trials, steps + 1, n), np.nan) if record else None
    regions = np.full((trials, steps + 1), UNSAFE, dtype=np.int64) if record else None
    alive = np.ones(trials, dtype=bool)
    idx = partition.locate_many(x)
    exit_times[idx == UNSAFE] = 0
    alive &= idx != UNSAFE
    if record:
        states[:, 0], regions[:, 0] = x, idx
    for k in range(steps):
        live = np.flatnonzero(alive)
        if not len(live):
            break
        xl = x[live]
        ul = controller.lookup_many(partition, xl)
        xn = spec.evaluate(xl, ul) + noise[live, k]
        x[live] = xn
        idx = partition.locate_many(xn)
        out = idx == UNSAFE
        exit_times[live[out]] = k + 1
        alive[live[out]] = False
        if record:
            states[live, k + 1], regions[live, k + 1] = xn, idx
    violations = int(np.count_nonzero(exit_times >= 0))
    report = McReport(trials, steps, violations, 1.0 - violations / trials, seed, exit_times)
    if record:
        return report, Trajectories(states, regions)
    return report


def binomial_bound(report, confidence: float = 0.95) -> float:
    """One-sided Clopper-Pearson lower bound on the safety probability.

    ``report`` is a McReport or a (safe, trials) pair.
    """
    if isinstance(report, McReport):
        safe, trials = report.trials - report.violations, report.trials
    else:
        safe, trials = report
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if safe <= 0:
        return 0.0
    return float(beta_dist.ppf(1.0 - confidence, safe, trials - safe + 1))


@dataclass(frozen=True, eq=False)
class CertReport:
    slack: np.ndarray  # worst sampled martingale slack per region
    nonnegative: bool  # b_i >= 0 everywhere
    initial_ok: bool  # b_i <= eta on initial regions
    failed_nonnegative: tuple[int, ...]
    failed_initial: tuple[int, ...]
    samples_per_region: int
    tolerance: float = SLACK_TOL

    @property
    def max_slack(self) -> float:
        return float(self.slack.max(initial=-np.inf))

    @property
    def worst_region(self) -> int:
        return int(np.argmax(self.slack))

    @property
    def passed(self) -> bool:
        return self.nonnegative and self.initial_ok and self.max_slack <= self.tolerance

    def describe(self) -> str:
        lines = [f"max slack {self.max_slack:.3e} at region {self.worst_region} "
                 f"({self.samples_per_region} samples/region)"]
        if self.failed_nonnegative:
            lines.append("negative barrier in regions " + ",".join(map(str, self.failed_nonnegative)))
        if self.failed_initial:
            lines.append("barrier above eta in initial regions " + ",".join(map(str, self.failed_initial)))
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def region_samples(partition: Partition, i: int, count: int, seed: int = 0) -> np.ndarray:
    """Center, corners, then scrambled Sobol points of region i, in original coordinates."""
    n = partition.n
    unit = [np.full(n, 0.5), *map(np.array, itertools.product((0.0, 1.0), repeat=n))]
    pts = np.array(unit[:max(count, 1)], dtype=float)
    extra = count - len(pts)
    if extra > 0:
        sob = qmc.Sobol(n, scramble=True, seed=np.random.default_rng([seed, i]))
        pts = np.vstack([pts, sob.random_base2(max(extra - 1, 0).bit_length())[:extra]])
    v = partition.lo[i] + (partition.hi[i] - partition.lo[i]) * pts
    return partition.whitening.invert(v)


def check_certificate(spec: SystemSpec, partition: Partition, barrier: Barrier, controller: Controller,
                      samples_per_region: int = 64, seed: int = 0) -> CertReport:
    """Exact-kernel check of the martingale condition at sampled states of every region."""
    K = partition.K
    if len(barrier.b) != K or controller.controls.shape[0] != K or len(barrier.beta_i) != K:
        raise PartitionError("partition mismatch: certificate and partition sizes differ")
    if controller.grid_counts and tuple(controller.grid_counts) != tuple(partition.grid_counts):
        raise PartitionError("partition mismatch: controller grid differs from the partition")
    b = np.asarray(barrier.b, dtype=float)
    neg = tuple(int(i) for i in np.flatnonzero(b < 0.0))
    above = tuple(int(i) for i in partition.initial_regions if b[i] > barrier.eta)
    slack = np.empty(K)
    for i in range(K):
        xs = region_samples(partition, i, samples_per_region, seed)
        us = np.tile(controller.controls[i], (len(xs), 1))
        probs, unsafe = kernel_matrix(spec, partition, xs, us)
        slack[i] = float(np.max(probs @ b + unsafe - b[i] - barrier.beta_i[i]))
    return CertReport(slack, not neg, not above, neg, above, samples_per_region)


__all__ = ["CertReport", "McReport", "Trajectories", "binomial_bound", "check_certificate", "region_samples",
           "simulate"]
