"""Dual linear program for piecewise-constant barrier synthesis.

For region i with control u_i, the worst-case expected next barrier value
max{bbar.T : (T, x) in P_i} is replaced by its LP dual, so the martingale
condition becomes linear in (b, lambda_i, t_i):

    H1^T lambda_i = bbar,   A_x^T lambda_i = nu_i,   h^T lambda_i + r.|nu_i| <= t_i <= b_i + beta_i,

where the state-box multipliers nu_i keep the entries tied to one common
state x in X_i. With the control fixed per region this is one exact LP. The assignment itself is searched over the candidate controls:
exhaustively for small models, otherwise by alternating LP solves with
per-region best-response reselection (each step cannot increase the
objective).
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import _core
from .controller import (Controller, InnerBlock, best_response, candidate_controls, default_fallback, folded_value,
                         inner_block, inner_solve, region_value)
from .geometry import Partition
from .lp import EQ, LE, LPModel, LPSolution, solve_lp
from .relaxation import BoundsMatrix, bound_all, bound_row, default_workers, unsafe_bound
from .system import SystemSpec

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
RANGE_TOL = 1e-15
CUT_TOL = 1e-8
DUAL_LIMIT = 4000
EXHAUSTIVE_LIMIT = 256


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Barrier:
    b: np.ndarray
    eta: float
    beta: float
    beta_i: np.ndarray
    horizon: float
    p_safe: float

    def to_csv(self) -> str:
        horizon = "infinite" if math.isinf(self.horizon) else str(int(self.horizon))
        lines = [f"# eta={self.eta!r} beta={self.beta!r} horizon={horizon} p_safe={self.p_safe!r}",
                 "region_index,b,beta_i"]
        lines += [f"{i},{float(v)!r},{float(w)!r}" for i, (v, w) in enumerate(zip(self.b, self.beta_i))]
        return "\n".join(lines) + "\n"


def barrier_from_csv(text: str) -> Barrier:
    meta: dict[str, str] = {}
    b, beta_i = [], []
    for line in text.splitlines():
        if line.startswith("#"):
            meta.update(part.partition("=")[::2] for part in line[1:].split())
        elif line.strip() and not line.startswith("region_index"):
            idx, v, w = line.split(",")
            if int(idx) != len(b):
                raise ValueError(f"barrier rows out of order at region {idx}")
            b.append(float(v))
            beta_i.append(float(w))
    try:
        horizon = math.inf if meta["horizon"] == "infinite" else float(meta["horizon"])
        return Barrier(np.array(b), float(meta["eta"]), float(meta["beta"]), np.array(beta_i), horizon,
                       float(meta["p_safe"]))
    except KeyError as exc:
        raise ValueError(f"barrier file lacks {exc.args[0]!r} in its header") from None


@dataclass(frozen=True, eq=False)
class DualBlock:
    H1: np.ndarray  # (2(K+2), K+1)
    H2: np.ndarray  # (2(K+2), n+m)
    h: np.ndarray  # (2(K+2),)


def safety_probability(eta: float, beta: float, horizon: float) -> float:
    if math.isinf(horizon):
        return max(0.0, 1.0 - eta)
    return max(0.0, 1.0 - (eta + horizon * beta))


def build_blocks(bounds: BoundsMatrix, partition: Partition) -> list[DualBlock]:
    """Dense per-region blocks over all K destinations plus the unsafe entry."""
    K, dim = bounds.K, bounds.n + bounds.m
    eye = np.eye(K + 1)
    ones = np.ones((1, K + 1))
    H1 = np.vstack([-eye, eye, -ones, ones])
    blocks = []
    for i in range(K):
        a_lo, a_hi = np.zeros((K + 1, dim)), np.zeros((K + 1, dim))
        c_lo, c_hi = np.zeros(K + 1), np.zeros(K + 1)
        for j in range(K + 1):
            e = bounds.entry(i, "unsafe" if j == K else j)
            a_lo[j], c_lo[j] = e.lower.coeffs, e.lower.offset
            a_hi[j], c_hi[j] = e.upper.coeffs, e.upper.offset
        H2 = np.vstack([a_lo, -a_hi, np.zeros((2, dim))])
        h = np.concatenate([-c_lo, c_hi, [-1.0, 1.0]])
        blocks.append(DualBlock(H1, H2, h))
    return blocks


def primal_counts(K: int, L: int) -> dict:
    """Variable and constraint counts of the undualised primal formulation, kept for reference."""
    return {"primal_variables": 3 * K * K + 8 * K + 2, "primal_constraints": 2 * K * K + 10 * K + L + 1}


def region_blocks(bounds: BoundsMatrix, controls: np.ndarray) -> list[list[InnerBlock]]:
    """One inner block per region with that region's control substituted."""
    return [[inner_block(row, u, bounds.n)] for row, u in zip(bounds.rows, np.asarray(controls, dtype=float))]


def assemble_lp(bounds: BoundsMatrix | None, partition: Partition, horizon: float, mode: str = "finite",
                controls: np.ndarray | None = None, control_box: np.ndarray | None = None,
                blocks: list[list[InnerBlock]] | None = None) -> LPModel:
    """Build the dual LP for a fixed control per region (default: each box center).

    Every inner block contributes multipliers for its lower and upper entry
    bounds, for range rows that are not implied by the affine bounds, for the
    sum-to-one rows and for the two faces of the state box. Stationarity in
    the shared state couples the entries exactly as in the primal set.
    """
    if mode not in ("finite", "infinite"):
        raise ValueError("mode must be 'finite' or 'infinite'")
    infinite = mode == "infinite" or math.isinf(horizon)
    K, n = partition.K, partition.n
    init = partition.initial_regions
    if len(init) == 0:
        raise SynthesisError("initial set not covered")
    if blocks is None:
        if controls is None:
            if control_box is None:
                raise ValueError("controls or control_box required")
            controls = np.tile(np.asarray(control_box, dtype=float).mean(axis=1), (K, 1))
        blocks = region_blocks(bounds, controls)

    model = LPModel()
    b = model.add_vars("b", K, 0.0, 1.0)
    eta = model.add_var("eta", 0.0, math.inf, 1.0)
    beta_ub = 0.0 if infinite else math.inf
    beta = model.add_var("beta", 0.0, beta_ub, 0.0 if infinite else float(horizon))
    beta_i = model.add_vars("beta_i", K, 0.0, beta_ub)
    t, lam = [], []
    for i, region in enumerate(blocks):
        for s, blk in enumerate(region):
            tag = f"[{i}]" if len(region) == 1 else f"[{i},{s}]"
            E = blk.size
            lo_f = blk.lc - np.abs(blk.la) @ blk.half
            hi_f = blk.uc + np.abs(blk.ua) @ blk.half
            need_lo = np.flatnonzero(blk.rng[:, 0] > lo_f + RANGE_TOL)
            need_hi = np.flatnonzero(blk.rng[:, 1] < hi_f - RANGE_TOL)
            lv = {
                "lo": model.add_vars(f"lambda_lo{tag}", E), "hi": model.add_vars(f"lambda_hi{tag}", E),
                "rlo": model.add_vars(f"rho_lo{tag}", len(need_lo)), "rhi": model.add_vars(f"rho_hi{tag}", len(need_hi)),
                "sum": model.add_vars(f"lambda_sum{tag}", 2),
                "nlo": model.add_vars(f"nu_lo{tag}", n), "nhi": model.add_vars(f"nu_hi{tag}", n),
                "need_lo": need_lo, "need_hi": need_hi,
            }
            lam.append((i, s, lv))
            t.append(model.add_var(f"t{tag}", 0.0, math.inf))

    for (i, s, lv), tk in zip(lam, t):
        blk = blocks[i][s]
        E = blk.size
        tag = f"[{i}]" if len(blocks[i]) == 1 else f"[{i},{s}]"
        rlo_at = dict(zip(lv["need_lo"].tolist(), lv["rlo"].tolist()))
        rhi_at = dict(zip(lv["need_hi"].tolist(), lv["rhi"].tolist()))
        l_minus, l_plus = lv["sum"]
        # stationarity in the kernel entries: the dual rows reproduce bbar = (b_dest, 1)
        for e in range(E):
            idx = [lv["lo"][e], lv["hi"][e], l_minus, l_plus]
            vals = [-1.0, 1.0, -1.0, 1.0]
            if e in rlo_at:
                idx.append(rlo_at[e])
                vals.append(-1.0)
            if e in rhi_at:
                idx.append(rhi_at[e])
                vals.append(1.0)
            if e < E - 1:
                model.add_row(idx + [b[blk.dest[e]]], vals + [-1.0], EQ, 0.0, f"stat{tag}[{e}]")
            else:
                model.add_row(idx, vals, EQ, 1.0, f"stat{tag}[u]")
        # stationarity in the shared state
        for k in range(n):
            idx = np.concatenate([lv["lo"], lv["hi"], [lv["nlo"][k], lv["nhi"][k]]])
            vals = np.concatenate([blk.la[:, k], -blk.ua[:, k], [-1.0, 1.0]])
            model.add_row(idx, vals, EQ, 0.0, f"state{tag}[{k}]")
        idx = np.concatenate([lv["lo"], lv["hi"], lv["rlo"], lv["rhi"], [l_minus, l_plus],
                              lv["nlo"], lv["nhi"], [tk]])
        vals = np.concatenate([-blk.lc, blk.uc, -blk.rng[lv["need_lo"], 0], blk.rng[lv["need_hi"], 1],
                               [-1.0, 1.0], blk.half, blk.half, [-1.0]])
        model.add_row(idx, vals, LE, 0.0, f"dual_obj{tag}")
        model.add_row([tk, b[i], beta_i[i]], [1.0, -1.0, -1.0], LE, 0.0, f"martingale{tag}")
    for i in range(K):
        model.add_row([beta_i[i], beta], [1.0, -1.0], LE, 0.0, f"beta_max[{i}]")
    for i in init:
        model.add_row([b[i], eta], [1.0, -1.0], LE, 0.0, f"init[{i}]")

    model.metadata = {
        "b": b, "eta": eta, "beta": beta, "beta_i": beta_i, "t": np.array(t), "lambda": lam,
        "K": K, "L": int(len(init)), "init": np.asarray(init), "horizon": horizon, "infinite": infinite,
        "controls": None if controls is None else np.asarray(controls, dtype=float),
        **primal_counts(K, len(init)),
    }
    return model


def _master(partition: Partition, horizon: float, infinite: bool) -> LPModel:
    """Barrier variables with the initial-set and beta rows; cuts are appended later."""
    K = partition.K
    init = partition.initial_regions
    if len(init) == 0:
        raise SynthesisError("initial set not covered")
    model = LPModel()
    b = model.add_vars("b", K, 0.0, 1.0)
    eta = model.add_var("eta", 0.0, math.inf, 1.0)
    beta_ub = 0.0 if infinite else math.inf
    beta = model.add_var("beta", 0.0, beta_ub, 0.0 if infinite else float(horizon))
    beta_i = model.add_vars("beta_i", K, 0.0, beta_ub)
    for i in range(K):
        model.add_row([beta_i[i], beta], [1.0, -1.0], LE, 0.0, f"beta_max[{i}]")
    for i in init:
        model.add_row([b[i], eta], [1.0, -1.0], LE, 0.0, f"init[{i}]")
    model.metadata = {"b": b, "eta": eta, "beta": beta, "beta_i": beta_i, "K": K, "L": int(len(init)),
                      "init": np.asarray(init), "horizon": horizon, "infinite": infinite, "cuts": 0,
                      **primal_counts(K, len(init))}
    return model


def _add_cut(model: LPModel, i: int, blk: InnerBlock, T: np.ndarray, tag: str) -> None:
    """sum_e T_e b_dest(e) + T_unsafe <= b_i + beta_i for one kernel vector of the set."""
    md = model.metadata
    coef = {}
    for e, j in enumerate(blk.dest.tolist()):
        if T[e] != 0.0:
            coef[md["b"][j]] = coef.get(md["b"][j], 0.0) + float(T[e])
    coef[md["b"][i]] = coef.get(md["b"][i], 0.0) - 1.0
    coef[md["beta_i"][i]] = -1.0
    idx = np.fromiter(coef.keys(), dtype=np.int64)
    model.add_row(idx, np.fromiter(coef.values(), dtype=float), LE, -float(T[-1]), tag)
    md["cuts"] += 1


def solve_cutting_plane(blocks: list[list[InnerBlock]], partition: Partition, horizon: float,
                        mode: str = "finite", backend: str = "highs", tol: float = CUT_TOL,
                        max_iter: int = 2000, pool: dict | None = None) -> tuple[LPModel, LPSolution]:
    """Solve the synthesis LP by row generation on the primal kernel sets.

    The martingale condition of a block is the family of linear rows
    ``bbar.T <= b_i + beta_i`` over all T in the block's kernel set. Only the
    rows that the exact inner problem reports as violated are added, so the
    optimum equals that of the dual LP while the model stays small. ``pool``
    maps (region, sub-box) to previously generated kernel vectors.
    """
    infinite = mode == "infinite" or math.isinf(horizon)
    model = _master(partition, horizon, infinite)
    md = model.metadata
    for (i, s), vecs in sorted((pool or {}).items()):
        for T in vecs:
            _add_cut(model, i, blocks[i][s], T, f"cut[{i},{s}]")
    sol = None
    for it in range(max_iter):
        sol = solve_lp(model, backend)
        if not sol.ok:
            break
        b = sol.x[md["b"]]
        rhs = b + sol.x[md["beta_i"]] + tol
        added = 0
        for i, region in enumerate(blocks):
            for s, blk in enumerate(region):
                if folded_value(blk, b) <= rhs[i]:
                    continue
                value, T = inner_solve(blk, b)
                # the cut itself must separate the current point, not just the reported value
                if min(value, float(blk.bbar(b) @ T)) > rhs[i]:
                    _add_cut(model, i, blk, T, f"cut[{i},{s}]")
                    if pool is not None:
                        pool.setdefault((i, s), []).append(T)
                    added += 1
        log.debug("cutting plane %d: objective %.9g, %d cuts added, %d rows", it, sol.objective, added,
                  model.num_constraints)
        if not added:
            break
    md["iterations"] = it + 1
    return model, sol


def build_barrier(solution: LPSolution, model: LPModel, horizon: float) -> Barrier:
    if not solution.ok:
        raise SynthesisError(f"LP not solved: {solution.status} {solution.message}")
    md = model.metadata
    x = solution.x
    b = x[md["b"]].copy()
    eta = float(x[md["eta"]])
    beta = float(x[md["beta"]])
    beta_i = x[md["beta_i"]].copy()
    if model.residuals(x) > FEAS_TOL:
        raise SynthesisError(f"solution violates constraints by {model.residuals(x):.3e}")
    if np.any(b < -FEAS_TOL) or np.any(b > 1 + FEAS_TOL) or np.any(beta_i < -FEAS_TOL) \
            or np.any(beta_i > beta + FEAS_TOL):
        raise SynthesisError("barrier invariants violated beyond solver tolerance")
    b = np.clip(b, 0.0, 1.0) + 0.0  # + 0.0 drops negative zeros
    beta_i = np.clip(beta_i, 0.0, None) + 0.0
    beta = max(beta, 0.0, float(beta_i.max(initial=0.0))) + 0.0
    # eta must dominate b on the initial regions exactly, not just within solver tolerance
    eta = max(eta, 0.0, float(b[md["init"]].max(initial=0.0))) + 0.0
    if md.get("infinite"):
        beta, beta_i = 0.0, np.zeros_like(beta_i)
    return Barrier(b, eta, beta, beta_i, horizon, safety_probability(eta, beta, horizon))


def certify(barrier: Barrier, blocks: list[list[InnerBlock]]) -> Barrier:
    """Re-check every region with the exact inner problem and absorb solver slack into beta_i.

    In infinite mode beta stays 0 and residual slack (solver tolerance) is left as is.
    """
    if math.isinf(barrier.horizon):
        return barrier
    worst = np.array([region_value(region, barrier.b) for region in blocks])
    beta_i = np.maximum(barrier.beta_i, worst - barrier.b)
    beta = max(barrier.beta, float(beta_i.max(initial=0.0)))
    return Barrier(barrier.b, barrier.eta, beta, beta_i, barrier.horizon,
                   safety_probability(barrier.eta, beta, barrier.horizon))


@dataclass(frozen=True)
class SynthesisOptions:
    """Knobs of the synthesis pipeline; a benchmark's ``synthesis`` object overrides the defaults.

    ``control_points`` adds a regular control grid to the center and corners,
    ``per_control`` bounds the kernel separately at every candidate control
    (tighter, one bound computation per candidate) and ``split`` bounds each
    region over split**n sub-boxes that share the region's barrier value.
    Destinations whose probability stays below ``lump_below`` are merged into
    the unsafe entry to keep the LP small. ``solver`` picks the dual LP or
    row generation (same optimum); "auto" uses the dual LP for small models.
    """

    bound_mode: str = "affine"
    control_points: int = 0
    per_control: bool = False
    split: int = 1
    lump_below: float = 1e-10
    solver: str = "auto"
    search: str = "auto"
    max_rounds: int = 20

    @classmethod
    def from_spec(cls, spec: SystemSpec, **overrides) -> "SynthesisOptions":
        known = {f.name for f in fields(cls)}
        cfg = {k: v for k, v in spec.synthesis.items() if k in known}
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        opts = cls(**cfg)
        if opts.bound_mode not in ("affine", "constant"):
            raise ValueError("bound_mode must be 'affine' or 'constant'")
        if opts.split < 1:
            raise ValueError("split must be at least 1")
        if opts.solver not in ("auto", "dual", "cuts"):
            raise ValueError("solver must be 'auto', 'dual' or 'cuts'")
        if opts.search not in ("auto", "exhaustive", "alternate"):
            raise ValueError("search must be 'auto', 'exhaustive' or 'alternate'")
        return opts


def _sub_boxes(partition: Partition, i: int, split: int) -> list[np.ndarray | None]:
    if split == 1:
        return [None]
    edges = [np.linspace(lo, hi, split + 1) for lo, hi in zip(partition.lo[i], partition.hi[i])]
    out = []
    for idx in itertools.product(range(split), repeat=partition.n):
        out.append(np.array([[e[k], e[k + 1]] for e, k in zip(edges, idx)]))
    return out


def control_bank(spec: SystemSpec, partition: Partition, cands: np.ndarray, opts: SynthesisOptions,
                 bounds: BoundsMatrix | None = None, workers: int | None = None) -> list[list[list[InnerBlock]]]:
    """bank[i][c] holds the sub-box blocks of region i under candidate control c."""
    n = spec.n

    def job(i):
        per_c = [[] for _ in cands]
        for vb in _sub_boxes(partition, i, opts.split):
            if opts.per_control:
                for c, u in enumerate(cands):
                    row = bound_row(spec, partition, i, opts.bound_mode, np.stack([u, u], axis=1), vb)
                    per_c[c].append(inner_block(row, u, n, opts.lump_below))
            else:
                if vb is None and bounds is not None:
                    row = bounds.rows[i]
                else:
                    row = bound_row(spec, partition, i, opts.bound_mode, None, vb)
                for c, u in enumerate(cands):
                    per_c[c].append(inner_block(row, u, n, opts.lump_below))
        return per_c

    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, range(partition.K)))
    return [job(i) for i in range(partition.K)]


def _state_samples(half: np.ndarray) -> np.ndarray:
    """Center and corners of a centered box."""
    corners = np.array(list(itertools.product(*[(-h, h) for h in half])))
    return np.vstack([np.zeros(len(half)), corners])


def _value_iteration(bank, horizon: float) -> np.ndarray:
    """Robust value iteration with the state restricted to box centers and corners.

    This is optimistic (the worst state may lie elsewhere), which is what a
    warm start needs: the folded relaxation is often too loose to separate
    the candidates at all.
    """
    K = len(bank)
    tables = []
    for options in bank:
        groups = {}
        for c, blocks in enumerate(options):
            for blk in blocks:
                g = groups.setdefault(blk.dest.tobytes(), (blk.dest, [], [], []))
                for d in _state_samples(blk.half):
                    lo, hi = blk.at(d)
                    g[1].append(c)
                    g[2].append(lo)
                    g[3].append(hi)
        tables.append([(dest, np.array(cs), np.array(los), np.array(his)) for dest, cs, los, his in groups.values()])
    steps = 200 if math.isinf(horizon) else int(min(max(horizon, 1), 200))
    v = np.zeros(K)
    choice = np.zeros(K, dtype=np.int64)
    for _ in range(steps):
        nv = np.empty(K)
        for i, groups in enumerate(tables):
            vals = np.full(len(bank[i]), -np.inf)
            for dest, cs, los, his in groups:
                np.maximum.at(vals, cs, _core.greedy_values(np.append(v[dest], 1.0), los, his))
            choice[i] = int(np.argmin(vals))
            nv[i] = min(1.0, float(vals[choice[i]]))
        done = np.max(np.abs(nv - v)) < 1e-12
        v = nv
        if done:
            break
    return choice


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    barrier: Barrier
    controller: Controller
    assignment: np.ndarray  # candidate index per region
    candidates: np.ndarray
    model: LPModel
    solution: LPSolution
    bounds: BoundsMatrix
    blocks: list  # certified inner blocks per region (under the assigned control)
    options: SynthesisOptions
    history: tuple[float, ...]
    timings: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.solution.objective

    def summary(self) -> dict:
        b = self.barrier
        return {
            "eta": b.eta, "beta": b.beta, "beta_i": [float(v) for v in b.beta_i],
            "objective": float(self.solution.objective), "status": self.solution.status,
            "p_safe": b.p_safe, "variables": self.model.num_vars, "constraints": self.model.num_constraints,
        }


def synthesize(spec: SystemSpec, partition: Partition, bounds: BoundsMatrix | None = None,
               horizon: float | None = None, mode: str | None = None, backend: str = "auto",
               options: SynthesisOptions | None = None, workers: int | None = None, **overrides) -> SynthesisResult:
    """Jointly pick barrier values and per-region controls from the candidate set.

    Small models enumerate every control assignment. Larger ones start from
    robust value iteration and alternate exact LP solves with per-region best
    responses; a best response never raises a region's worst-case value, so
    the previous barrier stays feasible and the objective cannot increase.
    """
    opts = options or SynthesisOptions.from_spec(spec, **overrides)
    horizon = spec.horizon if horizon is None else float(horizon)
    mode = mode or ("infinite" if math.isinf(horizon) else "finite")
    t0 = time.perf_counter()
    bounds = bounds or bound_all(spec, partition, opts.bound_mode, workers)
    cands = candidate_controls(spec.control_box, points=opts.control_points)
    if bounds.mode == "constant" and not opts.per_control:
        cands = cands[:1]
    bank = control_bank(spec, partition, cands, opts, bounds, workers)
    t_bounds = time.perf_counter() - t0
    log.debug("bounds for %d regions x %d controls in %.2fs", partition.K, len(cands), t_bounds)

    t1 = time.perf_counter()
    C, K = len(cands), partition.K
    search = opts.search
    if search == "auto":
        search = "exhaustive" if C ** K <= EXHAUSTIVE_LIMIT else "alternate"

    entries = sum(blk.size for options in bank for blk in options[0])
    solver = opts.solver
    if solver == "auto":
        solver = "dual" if entries <= DUAL_LIMIT else "cuts"
    store: dict = {}

    def solve(a):
        blocks = [bank[i][a[i]] for i in range(K)]
        if solver == "dual":
            model = assemble_lp(None, partition, horizon, mode, blocks=blocks)
            sol = solve_lp(model, backend)
        else:
            view = {(i, s): store.setdefault((i, int(a[i]), s), []) for i in range(K) for s in range(len(blocks[i]))}
            model, sol = solve_cutting_plane(blocks, partition, horizon, mode,
                                             "highs" if backend == "auto" else backend, pool=view)
        model.metadata["controls"] = cands[a]
        model.metadata["solver"] = solver
        return model, sol

    history, best = [], None
    if search == "exhaustive":
        for combo in itertools.product(range(C), repeat=K):
            a = np.array(combo, dtype=np.int64)
            model, sol = solve(a)
            history.append(sol.objective if sol.ok else math.nan)
            if sol.ok and (best is None or sol.objective < best[2].objective - 1e-12):
                best = (a, model, sol)
    else:
        a = _value_iteration(bank, horizon)
        log.debug("warm start after %.2fs", time.perf_counter() - t1)
        for _ in range(max(opts.max_rounds, 1)):
            model, sol = solve(a)
            if not sol.ok:
                break
            history.append(sol.objective)
            if best is not None and sol.objective >= best[2].objective - 1e-12:
                break
            best = (a, model, sol)
            x = sol.x
            b = np.clip(x[model.metadata["b"]], 0.0, 1.0)
            new = np.array([best_response(bank[i], b, int(a[i]))[0] for i in range(K)], dtype=np.int64)
            if np.array_equal(new, a):
                break
            a = new
    if best is None:
        raise SynthesisError("LP solver failed for every control assignment")
    a, model, sol = best
    chosen = [bank[i][a[i]] for i in range(K)]
    barrier = certify(build_barrier(sol, model, horizon), chosen)
    controller = Controller(cands[a].copy(), default_fallback(spec.control_box), partition.grid_counts)
    t_lp = time.perf_counter() - t1
    return SynthesisResult(barrier, controller, a, cands, model, sol, bounds, chosen,
                           opts, tuple(history), {"bound_seconds": t_bounds, "solve_seconds": t_lp})


def solution_json(result: SynthesisResult, include_timing: bool = False) -> str:
    doc = result.summary()
    if include_timing:
        doc["solve_seconds"] = result.timings.get("solve_seconds", 0.0)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


__all__ = ["Barrier", "barrier_from_csv", "DualBlock", "SynthesisError", "SynthesisResult", "assemble_lp", "build_barrier",
           "build_blocks", "control_bank", "primal_counts", "region_blocks", "safety_probability",
           "SynthesisOptions", "synthesize", "solution_json", "unsafe_bound"]
