"""System model: dynamics expression graphs and validated system specs.

Dynamics are written as expression strings over ``x1..xn`` (state) and
``u1..um`` (control), e.g. ``"1.05*x1 + 0.1*u1"``. The parser folds every
linear sub-expression into a single affine-combination node so that linear
dynamics stay exact under relaxation.
"""

from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .interval import Interval, icos, isin

CONST, XVAR, UVAR = "const", "x", "u"
ADD, SUB, MUL, AFFINE, SIN, COS = "add", "sub", "mul", "affine", "sin", "cos"
NODE_KINDS = (CONST, XVAR, UVAR, ADD, SUB, MUL, AFFINE, SIN, COS)
_ARITY = {CONST: 0, XVAR: 0, UVAR: 0, ADD: 2, SUB: 2, MUL: 2, SIN: 1, COS: 1}

INFINITE = math.inf
BENCHMARKS = ("linear-convex", "linear-nonconvex", "temperature-3room", "unicycle-4d")


class ConfigError(ValueError):
    """A configuration document failed validation.

    ``path`` names the offending field, e.g. ``noise.covariance``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass(frozen=True)
class Node:
    kind: str
    args: tuple[int, ...] = ()
    value: float = 0.0  # constant value, or the offset of an affine node
    index: int = 0  # variable index for x/u inputs
    weights: tuple[float, ...] = ()  # affine weights, aligned with args


@dataclass(frozen=True)
class ExprGraph:
    """DAG over a small set of continuous primitives; one output per state."""

    nodes: tuple[Node, ...]
    outputs: tuple[int, ...]
    n: int
    m: int

    def __post_init__(self):
        for k, node in enumerate(self.nodes):
            if node.kind not in NODE_KINDS:
                raise ValueError(f"node {k}: unknown kind {node.kind!r}")
            if node.kind == AFFINE:
                if len(node.weights) != len(node.args):
                    raise ValueError(f"node {k}: affine weights/args mismatch")
            elif len(node.args) != _ARITY[node.kind]:
                raise ValueError(f"node {k}: {node.kind} expects {_ARITY[node.kind]} args")
            if any(a < 0 or a >= k for a in node.args):
                raise ValueError(f"node {k}: arguments must precede the node (acyclic order)")
            if node.kind == XVAR and not 0 <= node.index < self.n:
                raise ValueError(f"node {k}: state index {node.index} out of range")
            if node.kind == UVAR and not 0 <= node.index < self.m:
                raise ValueError(f"node {k}: control index {node.index} out of range")
        if len(self.outputs) != self.n:
            raise ValueError(f"expected {self.n} outputs, got {len(self.outputs)}")
        reached = set(self.outputs)
        for k in range(len(self.nodes) - 1, -1, -1):
            if k in reached:
                reached.update(self.nodes[k].args)
        if len(reached) != len(self.nodes):
            raise ValueError("graph contains nodes unreachable from any output")

    # -- point evaluation -------------------------------------------------
    def evaluate(self, x, u) -> np.ndarray:
        """f(x, u); accepts single vectors or batches with matching leading shape."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1:] != (self.n,) or u.shape[-1:] != (self.m,):
            raise ValueError(
                f"dimension mismatch: expected x[..., {self.n}] and u[..., {self.m}], "
                f"got {x.shape} and {u.shape}")
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        vals: list = []
        for node in self.nodes:
            k = node.kind
            if k == CONST:
                v = node.value
            elif k == XVAR:
                v = x[..., node.index]
            elif k == UVAR:
                v = u[..., node.index]
            elif k == ADD:
                v = vals[node.args[0]] + vals[node.args[1]]
            elif k == SUB:
                v = vals[node.args[0]] - vals[node.args[1]]
            elif k == MUL:
                v = vals[node.args[0]] * vals[node.args[1]]
            elif k == AFFINE:
                v = node.value
                for w, a in zip(node.weights, node.args):
                    v = v + w * vals[a]
            elif k == SIN:
                v = np.sin(vals[node.args[0]])
            else:
                v = np.cos(vals[node.args[0]])
            vals.append(v)
        out = [np.broadcast_to(np.asarray(vals[o], dtype=float), batch) for o in self.outputs]
        return np.stack(out, axis=-1)

    # -- natural interval extension ----------------------------------------
    def interval_eval(self, x_box, u_box) -> list[Interval]:
        x_box = [Interval(float(lo), float(hi)) for lo, hi in x_box]
        u_box = [Interval(float(lo), float(hi)) for lo, hi in u_box]
        if len(x_box) != self.n or len(u_box) != self.m:
            raise ValueError("box dimension mismatch")
        vals: list[Interval] = []
        for node in self.nodes:
            k = node.kind
            if k == CONST:
                v = Interval.point(node.value)
            elif k == XVAR:
                v = x_box[node.index]
            elif k == UVAR:
                v = u_box[node.index]
            elif k == ADD:
                v = vals[node.args[0]] + vals[node.args[1]]
            elif k == SUB:
                v = vals[node.args[0]] - vals[node.args[1]]
            elif k == MUL:
                v = vals[node.args[0]] * vals[node.args[1]]
            elif k == AFFINE:
                v = Interval.point(node.value)
                for w, a in zip(node.weights, node.args):
                    v = v + vals[a].scale(w)
            elif k == SIN:
                v = isin(vals[node.args[0]])
            else:
                v = icos(vals[node.args[0]])
            vals.append(v)
        return [vals[o] for o in self.outputs]


# -- parsing ------------------------------------------------------------------

_VAR_RE = re.compile(r"^([xu])([1-9][0-9]*)$")


class _GraphBuilder:
    def __init__(self, n: int, m: int):
        self.n, self.m = n, m
        self.nodes: list[Node] = []
        self._ids: dict[Node, int] = {}

    def add(self, node: Node) -> int:
        if node not in self._ids:
            self._ids[node] = len(self.nodes)
            self.nodes.append(node)
        return self._ids[node]

    def materialize(self, lin) -> int:
        terms, const = lin
        terms = {k: w for k, w in terms.items() if w != 0.0}
        if not terms:
            return self.add(Node(CONST, value=float(const)))
        if len(terms) == 1 and const == 0.0:
            (k, w), = terms.items()
            if w == 1.0:
                return k
        args = tuple(sorted(terms))
        return self.add(Node(AFFINE, args=args, value=float(const),
                             weights=tuple(float(terms[a]) for a in args)))

    def visit(self, tree, path):
        """Return (terms, const): a linear combination over atom node ids."""
        if isinstance(tree, ast.Constant) and isinstance(tree.value, (int, float)) \
                and not isinstance(tree.value, bool):
            return {}, float(tree.value)
        if isinstance(tree, ast.Name):
            if tree.id == "pi":
                return {}, math.pi
            match = _VAR_RE.match(tree.id)
            if not match:
                raise ConfigError(path, f"unknown name {tree.id!r}")
            kind = XVAR if match.group(1) == "x" else UVAR
            idx = int(match.group(2)) - 1
            limit = self.n if kind == XVAR else self.m
            if idx >= limit:
                raise ConfigError(path, f"{tree.id} exceeds declared dimension {limit}")
            return {self.add(Node(kind, index=idx)): 1.0}, 0.0
        if isinstance(tree, ast.UnaryOp) and isinstance(tree.op, (ast.USub, ast.UAdd)):
            terms, c = self.visit(tree.operand, path)
            if isinstance(tree.op, ast.UAdd):
                return terms, c
            return {k: -w for k, w in terms.items()}, -c
        if isinstance(tree, ast.BinOp):
            lt, lc = self.visit(tree.left, path)
            if isinstance(tree.op, ast.Pow):
                return self._power((lt, lc), tree.right, path)
            rt, rc = self.visit(tree.right, path)
            if isinstance(tree.op, (ast.Add, ast.Sub)):
                sign = 1.0 if isinstance(tree.op, ast.Add) else -1.0
                terms = dict(lt)
                for k, w in rt.items():
                    terms[k] = terms.get(k, 0.0) + sign * w
                return terms, lc + sign * rc
            if isinstance(tree.op, ast.Mult):
                return self._multiply((lt, lc), (rt, rc))
            if isinstance(tree.op, ast.Div):
                if rt:
                    raise ConfigError(path, "division is only supported by constants")
                if rc == 0.0:
                    raise ConfigError(path, "division by zero")
                return {k: w / rc for k, w in lt.items()}, lc / rc
        if isinstance(tree, ast.Call) and isinstance(tree.func, ast.Name) \
                and tree.func.id in ("sin", "cos") and len(tree.args) == 1 and not tree.keywords:
            arg = self.visit(tree.args[0], path)
            if not arg[0]:
                fn = math.sin if tree.func.id == "sin" else math.cos
                return {}, fn(arg[1])
            kind = SIN if tree.func.id == "sin" else COS
            return {self.add(Node(kind, args=(self.materialize(arg),))): 1.0}, 0.0
        raise ConfigError(path, f"unsupported expression: {ast.dump(tree)[:60]}")

    def _multiply(self, left, right):
        (lt, lc), (rt, rc) = left, right
        if not lt:
            return {k: lc * w for k, w in rt.items()}, lc * rc
        if not rt:
            return {k: rc * w for k, w in lt.items()}, lc * rc
        a, b = self.materialize(left), self.materialize(right)
        return {self.add(Node(MUL, args=(min(a, b), max(a, b)))): 1.0}, 0.0

    def _power(self, base, exponent_tree, path):
        if not (isinstance(exponent_tree, ast.Constant) and isinstance(exponent_tree.value, int)
                and 0 <= exponent_tree.value <= 8):
            raise ConfigError(path, "only small non-negative integer powers are supported")
        result = ({}, 1.0)
        for _ in range(exponent_tree.value):
            result = self._multiply(result, base)
        return result


def parse_dynamics(exprs: Sequence[str], n: int, m: int) -> ExprGraph:
    if len(exprs) != n:
        raise ConfigError("dynamics", f"expected {n} expressions, got {len(exprs)}")
    builder = _GraphBuilder(n, m)
    roots = []
    for d, text in enumerate(exprs):
        path = f"dynamics[{d}]"
        if not isinstance(text, str):
            raise ConfigError(path, "expected an expression string")
        try:
            tree = ast.parse(text, mode="eval").body
        except SyntaxError as exc:
            raise ConfigError(path, f"syntax error: {exc.msg}") from None
        roots.append(builder.materialize(builder.visit(tree, path)))
    return _compact(builder.nodes, roots, n, m)


def _compact(nodes, roots, n, m) -> ExprGraph:
    keep = set(roots)
    for k in range(len(nodes) - 1, -1, -1):
        if k in keep:
            keep.update(nodes[k].args)
    remap = {old: new for new, old in enumerate(sorted(keep))}
    new_nodes = []
    for old in sorted(keep):
        node = nodes[old]
        new_nodes.append(Node(node.kind, tuple(remap[a] for a in node.args),
                              node.value, node.index, node.weights))
    return ExprGraph(tuple(new_nodes), tuple(remap[r] for r in roots), n, m)


# -- system spec ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SystemSpec:
    name: str
    n: int
    m: int
    f: ExprGraph
    sigma: np.ndarray
    control_box: np.ndarray  # (m, 2)
    domain_box: np.ndarray  # (n, 2)
    obstacles: tuple[np.ndarray, ...]
    initial_box: np.ndarray  # (n, 2)
    horizon: float  # integer steps, or INFINITE
    grids: tuple[tuple[int, ...], ...] = ()
    synthesis: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def infinite_horizon(self) -> bool:
        return math.isinf(self.horizon)

    def evaluate(self, x, u) -> np.ndarray:
        return self.f.evaluate(x, u)

    def in_safe_set(self, x) -> np.ndarray:
        """Membership in X_s = domain minus obstacles (boxes closed, obstacles open)."""
        x = np.asarray(x, dtype=float)
        dom = self.domain_box
        inside = np.all((x >= dom[:, 0]) & (x <= dom[:, 1]), axis=-1)
        for ob in self.obstacles:
            inside &= ~np.all((x > ob[:, 0]) & (x < ob[:, 1]), axis=-1)
        return inside


def _box(value, dim: int, path: str, allow_degenerate: bool = False) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a list of [lo, hi] pairs") from None
    if arr.shape != (dim, 2):
        raise ConfigError(path, f"expected {dim} [lo, hi] pairs, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "bounds must be finite")
    bad = arr[:, 0] > arr[:, 1] if allow_degenerate else arr[:, 0] >= arr[:, 1]
    if np.any(bad):
        raise ConfigError(path, "each pair needs lo < hi" if not allow_degenerate else "each pair needs lo <= hi")
    return arr


def spec_from_dict(doc: dict, name: str | None = None) -> SystemSpec:
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a JSON object")
    dims = doc.get("dimensions")
    if not isinstance(dims, dict):
        raise ConfigError("dimensions", "missing {state, control}")
    n, m = dims.get("state"), dims.get("control")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("dimensions.state", "must be a positive integer")
    if not isinstance(m, int) or m < 1:
        raise ConfigError("dimensions.control", "must be a positive integer")
    f = parse_dynamics(doc.get("dynamics") or [], n, m)

    noise = doc.get("noise")
    if not isinstance(noise, dict) or "covariance" not in noise:
        raise ConfigError("noise.covariance", "missing")
    try:
        sigma = np.asarray(noise["covariance"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("noise.covariance", "expected a numeric matrix") from None
    if sigma.shape != (n, n):
        raise ConfigError("noise.covariance", f"expected a {n}x{n} matrix")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise ConfigError("noise.covariance", "covariance must be symmetric")
    if np.linalg.eigvalsh(sigma).min() <= 0.0:
        raise ConfigError("noise.covariance", "covariance not positive-definite")

    domain = _box(doc.get("domain"), n, "domain")
    control = _box(doc.get("control"), m, "control", allow_degenerate=True)
    obstacles = tuple(_box(ob, n, f"obstacles[{k}]") for k, ob in enumerate(doc.get("obstacles") or []))
    initial = _box(doc.get("initial"), n, "initial", allow_degenerate=True)
    if np.any(initial[:, 0] < domain[:, 0]) or np.any(initial[:, 1] > domain[:, 1]):
        raise ConfigError("initial", "initial box outside safe set (not inside the domain)")
    for k, ob in enumerate(obstacles):
        overlap = np.minimum(initial[:, 1], ob[:, 1]) - np.maximum(initial[:, 0], ob[:, 0])
        if np.all(overlap > 0):
            raise ConfigError("initial", f"initial box outside safe set (overlaps obstacles[{k}])")

    horizon = doc.get("horizon", 50)
    if horizon == "infinite":
        horizon = INFINITE
    elif isinstance(horizon, int) and not isinstance(horizon, bool) and horizon >= 0:
        horizon = float(horizon)
    else:
        raise ConfigError("horizon", 'expected a non-negative integer or "infinite"')

    grids = []
    for k, g in enumerate(doc.get("grids") or []):
        if not (isinstance(g, list) and len(g) == n and all(isinstance(c, int) and c >= 1 for c in g)):
            raise ConfigError(f"grids[{k}]", f"expected {n} positive integers")
        grids.append(tuple(g))
    synthesis = doc.get("synthesis") or {}
    if not isinstance(synthesis, dict):
        raise ConfigError("synthesis", "expected an object")
    return SystemSpec(
        name=name or str(doc.get("name", "system")), n=n, m=m, f=f, sigma=sigma,
        control_box=control, domain_box=domain, obstacles=obstacles, initial_box=initial,
        horizon=horizon, grids=tuple(grids), synthesis=dict(synthesis),
        notes=str(doc.get("notes", "")))


def load_spec(text: str, name: str | None = None) -> SystemSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed document: {exc}") from None
    return spec_from_dict(doc, name)


def benchmark_text(name: str) -> str:
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    return resources.files("pwcbf.configs").joinpath(f"{name}.json").read_text(encoding="utf-8")


def load_benchmark(name: str) -> SystemSpec:
    return load_spec(benchmark_text(name), name=name)
