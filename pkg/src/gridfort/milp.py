"""Solver-agnostic MILP representation plus a built-in exact solver.

The built-in backend is a deterministic branch-and-bound over the model's
binary variables: a depth-first dive finds a first incumbent quickly, after
which the search switches to best-bound node selection, always branching on
the most fractional binary. Node relaxations are bounded-variable LPs solved
with HiGHS through scipy, which keeps the test suite hermetic (no third-party
MILP solver process needed). Intended for desk-scale models (up to a few
thousand variables); larger instances should route to the external adapter,
which exchanges MPS model files and a plain solution file with any solver
wrapped behind a subprocess command template.

Cuts are injected by adding constraints and re-solving; there is no callback
API, so the builtin and file-based external backends behave identically.
"""

from __future__ import annotations

import heapq
import math
import os
import re
import subprocess
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

__all__ = [
    "CONTINUOUS",
    "BINARY",
    "MilpModel",
    "Solution",
    "SolverOptions",
    "SolverError",
    "solve",
    "solve_lp_relaxation",
    "write_model",
    "parse_external_solution",
]

CONTINUOUS = "continuous"
BINARY = "binary"

LESS = "<="
GREATER = ">="
EQUAL = "="

ENV_SOLVER_CMD = "GRIDFORT_SOLVER_CMD"


class SolverError(RuntimeError):
    """Configuration or runtime failure of a solver backend."""


@dataclass(frozen=True)
class SolverOptions:
    time_limit: float | None = None
    rel_gap: float = 1e-4
    feas_tol: float = 1e-6
    int_tol: float = 1e-6
    backend: str = "builtin"  # or "external"
    external_command: str | None = None
    node_limit: int | None = None

    def __post_init__(self) -> None:
        if self.rel_gap < 0 or self.feas_tol <= 0 or self.int_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Solution:
    status: str  # optimal | infeasible | unbounded | feasible_limit | error
    values: np.ndarray | None = None
    objective: float | None = None
    bound: float | None = None
    nodes: int = 0
    solve_time: float = 0.0
    message: str = ""

    @property
    def gap(self) -> float:
        if self.objective is None or self.bound is None:
            return math.inf
        return abs(self.objective - self.bound) / max(1.0, abs(self.objective))


@dataclass
class _Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str


class MilpModel:
    """Sparse minimization MILP with continuous and binary variables."""

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.kinds: list[str] = []
        self.constraints: list[_Constraint] = []
        self.objective: dict[int, float] = {}
        self._index: dict[str, int] = {}

    # -- construction -------------------------------------------------------

    def add_variable(self, name: str, lb: float = 0.0, ub: float = math.inf,
                     kind: str = CONTINUOUS) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable name {name!r}")
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            if math.isinf(ub):
                ub = 1.0
            if not (0.0 <= lb <= ub <= 1.0):
                raise ValueError(f"binary variable {name!r} bounds must lie within [0, 1]")
        if lb > ub:
            raise ValueError(f"variable {name!r} has empty bound interval")
        ix = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.kinds.append(kind)
        self._index[name] = ix
        return ix

    def fix_variable(self, ix: int, value: float) -> None:
        self.lb[ix] = value
        self.ub[ix] = value

    def add_constraint(self, coeffs, sense: str, rhs: float, name: str = "") -> int:
        if sense not in (LESS, GREATER, EQUAL):
            raise ValueError(f"unknown constraint sense {sense!r}")
        if not math.isfinite(rhs):
            raise ValueError(f"constraint {name!r} has non-finite rhs")
        cleaned: dict[int, float] = {}
        items = coeffs.items() if hasattr(coeffs, "items") else coeffs
        for ix, c in items:
            if not 0 <= ix < len(self.var_names):
                raise ValueError(f"constraint {name!r} references unknown variable {ix}")
            if c != 0.0:
                cleaned[ix] = cleaned.get(ix, 0.0) + c
        cid = len(self.constraints)
        self.constraints.append(
            _Constraint(cleaned, sense, float(rhs), name or f"c{cid}")
        )
        return cid

    def set_objective(self, coeffs) -> None:
        items = coeffs.items() if hasattr(coeffs, "items") else coeffs
        self.objective = {ix: float(c) for ix, c in items if c != 0.0}
        for ix in self.objective:
            if not 0 <= ix < len(self.var_names):
                raise ValueError(f"objective references unknown variable {ix}")

    # -- queries -------------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.var_names)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def var_index(self, name: str) -> int:
        return self._index[name]

    def binaries(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == BINARY]

    def value(self, solution: Solution, name: str) -> float:
        if solution.values is None:
            raise ValueError("solution carries no variable values")
        return float(solution.values[self._index[name]])

    def objective_value(self, values: np.ndarray) -> float:
        return float(sum(c * values[ix] for ix, c in self.objective.items()))

    def constraint_violations(self, values: np.ndarray, tol: float = 1e-6):
        """All (constraint name, violation) pairs exceeding ``tol``."""
        out = []
        for con in self.constraints:
            lhs = sum(c * values[ix] for ix, c in con.coeffs.items())
            if con.sense == LESS:
                v = lhs - con.rhs
            elif con.sense == GREATER:
                v = con.rhs - lhs
            else:
                v = abs(lhs - con.rhs)
            if v > tol:
                out.append((con.name, v))
        for ix in range(self.num_variables):
            if values[ix] < self.lb[ix] - tol or values[ix] > self.ub[ix] + tol:
                out.append((f"bound:{self.var_names[ix]}", 0.0))
        return out


# ---------------------------------------------------------------------------
# builtin branch and bound
# ---------------------------------------------------------------------------

_LINPROG_OPTS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


class _CompiledLp:
    """Constraint matrices built once per solve; nodes only change bounds.

    Variables fixed by the model's own bounds (lb == ub) are substituted into
    the right-hand sides at compile time, so node LPs only carry the free
    columns; rows left with no free support are checked once and dropped.
    """

    FEAS_EPS = 1e-9

    def __init__(self, model: MilpModel) -> None:
        n = model.num_variables
        self.n = n
        self.lb = np.array(model.lb, dtype=float)
        self.ub = np.array(model.ub, dtype=float)
        self.always_infeasible = False

        fixed_mask = self.lb == self.ub
        self.free = np.where(~fixed_mask)[0]
        self.fixed = np.where(fixed_mask)[0]
        self.x_fixed = self.lb[self.fixed]
        pos = {int(ix): j for j, ix in enumerate(self.free)}

        c_full = np.zeros(n)
        for ix, coef in model.objective.items():
            c_full[ix] = coef
        self.obj_offset = float(c_full[self.fixed] @ self.x_fixed)
        self.c = c_full[self.free]

        rows_ub, cols_ub, data_ub, b_ub = [], [], [], []
        rows_eq, cols_eq, data_eq, b_eq = [], [], [], []
        for con in model.constraints:
            entries = []
            shift = 0.0
            for ix, coef in con.coeffs.items():
                j = pos.get(ix)
                if j is None:
                    shift += coef * self.lb[ix]
                else:
                    entries.append((j, coef))
            if con.sense == EQUAL:
                rhs = con.rhs - shift
                if not entries:
                    if abs(rhs) > self.FEAS_EPS:
                        self.always_infeasible = True
                    continue
                r = len(b_eq)
                for j, coef in entries:
                    rows_eq.append(r)
                    cols_eq.append(j)
                    data_eq.append(coef)
                b_eq.append(rhs)
            else:
                sign = 1.0 if con.sense == LESS else -1.0
                rhs = sign * (con.rhs - shift)
                if not entries:
                    if rhs < -self.FEAS_EPS:
                        self.always_infeasible = True
                    continue
                r = len(b_ub)
                for j, coef in entries:
                    rows_ub.append(r)
                    cols_ub.append(j)
                    data_ub.append(sign * coef)
                b_ub.append(rhs)

        m = len(self.free)
        self.A_ub = (
            sp.csr_matrix((data_ub, (rows_ub, cols_ub)), shape=(len(b_ub), m))
            if b_ub
            else None
        )
        self.b_ub = np.array(b_ub) if b_ub else None
        self.A_eq = (
            sp.csr_matrix((data_eq, (rows_eq, cols_eq)), shape=(len(b_eq), m))
            if b_eq
            else None
        )
        self.b_eq = np.array(b_eq) if b_eq else None

    def solve_lp(self, lb: np.ndarray, ub: np.ndarray):
        """Returns (status, x, objective); bounds given over all variables."""
        if self.always_infeasible:
            return "infeasible", None, None
        if len(self.free) == 0:
            return "optimal", self.lb.copy(), self.obj_offset
        res = linprog(
            self.c,
            A_ub=self.A_ub,
            b_ub=self.b_ub,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            bounds=np.column_stack([lb[self.free], ub[self.free]]),
            method="highs",
            options=_LINPROG_OPTS,
        )
        if res.status == 0:
            x = self.lb.copy()
            x[self.free] = res.x
            return "optimal", x, float(res.fun) + self.obj_offset
        if res.status == 2:
            return "infeasible", None, None
        if res.status == 3:
            return "unbounded", None, None
        return "error", None, None


class _Node:
    __slots__ = ("parent", "var", "val", "depth", "bound", "x", "closed")

    def __init__(self, parent, var, val):
        self.parent = parent
        self.var = var
        self.val = val
        self.depth = 0 if parent is None else parent.depth + 1
        self.bound = -math.inf
        self.x = None
        self.closed = False

    def bounds(self, root_lb: np.ndarray, root_ub: np.ndarray):
        lb, ub = root_lb.copy(), root_ub.copy()
        node, seen = self, set()
        while node is not None and node.var is not None:
            if node.var not in seen:  # deepest fix wins
                seen.add(node.var)
                lb[node.var] = ub[node.var] = node.val
            node = node.parent
        return lb, ub


def _fractionality(x: np.ndarray, ix: int) -> float:
    return min(x[ix] - math.floor(x[ix]), math.ceil(x[ix]) - x[ix])


def _most_fractional(x: np.ndarray, binaries, lb, ub, int_tol: float,
                     priority=()):
    """Index of the free binary farthest from integrality, or None.

    Fractional binaries carrying objective weight are branched before the
    rest: they are the only ones that move the relaxation bound, so deciding
    them first keeps the search tree close to an enumeration of decision
    vectors with cheap feasibility subtrees underneath.
    """
    best_ix, best_frac = None, int_tol
    prio_ix, prio_frac = None, int_tol
    for ix in binaries:
        if lb[ix] == ub[ix]:
            continue
        f = _fractionality(x, ix)
        if f > best_frac:
            best_ix, best_frac = ix, f
        if ix in priority and f > prio_frac:
            prio_ix, prio_frac = ix, f
    return prio_ix if prio_ix is not None else best_ix


def solve(model: MilpModel, options: SolverOptions | None = None, *,
          cutoff: float | None = None) -> Solution:
    """Minimize the model. ``cutoff`` prunes all solutions with objective
    >= cutoff (used when chaining heuristic rounds with a known incumbent)."""
    options = options or SolverOptions()
    if options.backend == "external":
        return _solve_external(model, options)
    if options.backend != "builtin":
        raise SolverError(f"unknown solver backend {options.backend!r}")
    return _branch_and_bound(model, options, cutoff)


def solve_lp_relaxation(model: MilpModel, options: SolverOptions | None = None) -> Solution:
    """Relax binaries to [0, 1]; the optimum is a valid MILP lower bound."""
    t0 = time.monotonic()
    lp = _CompiledLp(model)
    status, x, obj = lp.solve_lp(lp.lb, lp.ub)
    dt = time.monotonic() - t0
    if status == "optimal":
        return Solution("optimal", x, obj, obj, nodes=1, solve_time=dt)
    return Solution(status, solve_time=dt)


def _branch_and_bound(model: MilpModel, options: SolverOptions,
                      cutoff: float | None) -> Solution:
    """Best-first search with a depth-first dive to the first incumbent.

    Nodes carry their parent's LP value as an optimistic bound until popped;
    the LP is solved lazily on pop, so pruned siblings never cost a solve.
    Branching picks the most fractional binary; the dive explores the
    rounding-direction child first.
    """
    t0 = time.monotonic()
    lp = _CompiledLp(model)
    binaries = model.binaries()
    int_tol = options.int_tol
    priority = frozenset(
        ix for ix in binaries if model.objective.get(ix, 0.0) != 0.0
    )

    def elapsed() -> float:
        return time.monotonic() - t0

    root = _Node(None, None, 0.0)
    status, x, obj = lp.solve_lp(lp.lb, lp.ub)
    nodes_evaluated = 1
    if status != "optimal":
        return Solution(status, solve_time=elapsed(), nodes=1)
    root.bound, root.x = obj, x
    if not binaries:
        return Solution("optimal", x, obj, obj, nodes=1, solve_time=elapsed())

    incumbent_x: np.ndarray | None = None
    incumbent_obj = math.inf if cutoff is None else cutoff
    have_incumbent = False

    heap: list[tuple[float, int, _Node]] = []
    stack: list[_Node] = []
    seq = 0

    def hit_limit() -> bool:
        if options.time_limit is not None and elapsed() > options.time_limit:
            return True
        return options.node_limit is not None and nodes_evaluated >= options.node_limit

    def accept(x_int: np.ndarray, obj_int: float) -> None:
        nonlocal incumbent_x, incumbent_obj, have_incumbent
        if obj_int < incumbent_obj - 1e-12:
            incumbent_x, incumbent_obj, have_incumbent = x_int.copy(), obj_int, True

    def polish(lb, ub, x_node):
        """Fix binaries at their rounded values and re-solve the LP so the
        continuous part is exactly consistent with the integral assignment."""
        plb, pub = lb.copy(), ub.copy()
        for ix in binaries:
            plb[ix] = pub[ix] = round(x_node[ix])
        st, px, pobj = lp.solve_lp(plb, pub)
        if st != "optimal":
            return None, None
        for ix in binaries:
            px[ix] = round(px[ix])
        return px, pobj

    def try_completion(node: _Node, node_lb, node_ub) -> bool:
        """With every objective-bearing binary integral, the subtree objective
        is already decided; try rounding the rest in one shot (gates-open ceil
        first, then nearest). Success at the node's own bound solves the
        subtree exactly."""
        nonlocal nodes_evaluated
        for rounding in (
            lambda v: 1.0 if v > int_tol else 0.0,
            lambda v: float(round(v)),
        ):
            plb, pub = node_lb.copy(), node_ub.copy()
            changed = False
            for ix in binaries:
                if plb[ix] != pub[ix]:
                    val = rounding(node.x[ix])
                    plb[ix] = pub[ix] = val
                    changed = True
            st, px, pobj = lp.solve_lp(plb, pub)
            nodes_evaluated += 1
            if st == "optimal":
                for ix in binaries:
                    px[ix] = round(px[ix])
                accept(px, pobj)
                return pobj <= node.bound + 1e-9
            if not changed:
                break
        return False

    def branch(node: _Node, node_lb, node_ub) -> None:
        nonlocal seq
        branch_ix = _most_fractional(node.x, binaries, node_lb, node_ub, int_tol,
                                     priority)
        if branch_ix is None:
            px, pobj = polish(node_lb, node_ub, node.x)
            if px is not None:
                accept(px, pobj)
                return
            # rounding at tolerance was infeasible: branch on the least
            # integral free binary so both children fix it sharply
            free = [ix for ix in binaries if node_lb[ix] != node_ub[ix]]
            if not free:
                return  # fully fixed yet infeasible when re-solved: dead node
            branch_ix = max(free, key=lambda ix: (_fractionality(node.x, ix), -ix))
        elif priority and branch_ix not in priority:
            if try_completion(node, node_lb, node_ub):
                return
        prefer_one = node.x[branch_ix] >= 0.5
        for val in ((0.0, 1.0) if prefer_one else (1.0, 0.0)):
            child = _Node(node, branch_ix, val)
            child.bound = node.bound  # parent relaxation: valid optimistic bound
            seq += 1
            heapq.heappush(heap, (child.bound, seq, child))
            # preferred (rounding-direction) child pushed last: top of the dive
            stack.append(child)

    def best_open_bound() -> float:
        while heap and heap[0][2].closed:
            heapq.heappop(heap)
        return heap[0][0] if heap else math.inf

    def gap_tol() -> float:
        return max(options.rel_gap * max(1.0, abs(incumbent_obj)), 1e-9)

    def finish(status: str) -> Solution:
        bound = min(best_open_bound(), incumbent_obj)
        if have_incumbent:
            return Solution(status, incumbent_x, incumbent_obj, bound,
                            nodes=nodes_evaluated, solve_time=elapsed())
        return Solution(status, None, None,
                        bound if math.isfinite(bound) else None,
                        nodes=nodes_evaluated, solve_time=elapsed())

    branch(root, lp.lb, lp.ub)
    while True:
        if hit_limit():
            return finish("feasible_limit")
        if have_incumbent and incumbent_obj - best_open_bound() <= gap_tol():
            return finish("optimal")
        # node selection: dive (LIFO) until an incumbent exists, then best bound
        nxt = None
        if not have_incumbent:
            while stack:
                cand = stack.pop()
                if not cand.closed:
                    nxt = cand
                    break
        if nxt is None:
            while heap:
                _, _, cand = heapq.heappop(heap)
                if not cand.closed:
                    nxt = cand
                    break
        if nxt is None:
            if have_incumbent:
                return finish("optimal")
            return Solution("infeasible", nodes=nodes_evaluated, solve_time=elapsed())
        nxt.closed = True
        if nxt.bound >= incumbent_obj - 1e-9:
            continue
        node_lb, node_ub = nxt.bounds(lp.lb, lp.ub)
        st, cx, cobj = lp.solve_lp(node_lb, node_ub)
        nodes_evaluated += 1
        if st != "optimal" or cobj >= incumbent_obj - 1e-9:
            continue
        nxt.bound, nxt.x = cobj, cx
        branch(nxt, node_lb, node_ub)


# ---------------------------------------------------------------------------
# MPS exchange + external adapter
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"\s+")


def _mps_name(name: str) -> str:
    clean = _NAME_RE.sub("_", name.strip())
    if len(clean) > 255:
        clean = clean[:243] + f"~{abs(hash(name)) % 10**11}"
    return clean


def write_model(model: MilpModel, name: str | None = None) -> str:
    """Serialize to MPS text (free layout, fixed section structure).

    Zero coefficients are omitted; a variable that appears nowhere gets a
    single zero objective entry so its column is still declared.
    """
    rows: list[str] = []
    var_names = [_mps_name(v) for v in model.var_names]
    if len(set(var_names)) != len(var_names):
        for i, v in enumerate(var_names):
            var_names[i] = f"{v}.{i}"
    con_names = []
    seen = set()
    for i, con in enumerate(model.constraints):
        cn = _mps_name(con.name)
        if cn in seen:
            cn = f"{cn}.{i}"
        seen.add(cn)
        con_names.append(cn)

    rows.append(f"NAME          {_mps_name(name or model.name)}")
    rows.append("ROWS")
    rows.append(" N  OBJ")
    sense_tag = {LESS: "L", GREATER: "G", EQUAL: "E"}
    for con, cn in zip(model.constraints, con_names):
        rows.append(f" {sense_tag[con.sense]}  {cn}")

    by_var: dict[int, list[tuple[str, float]]] = {i: [] for i in range(model.num_variables)}
    for ix, c in model.objective.items():
        if c != 0.0:
            by_var[ix].append(("OBJ", c))
    for con, cn in zip(model.constraints, con_names):
        for ix, c in con.coeffs.items():
            if c != 0.0:
                by_var[ix].append((cn, c))

    rows.append("COLUMNS")
    in_int = False
    marker = 0
    for ix in range(model.num_variables):
        entries = by_var[ix] or [("OBJ", 0.0)]
        want_int = model.kinds[ix] == BINARY
        if want_int != in_int:
            tag = "'INTORG'" if want_int else "'INTEND'"
            rows.append(f"    M{marker}  'MARKER'  {tag}")
            marker += 1
            in_int = want_int
        for rn, c in entries:
            rows.append(f"    {var_names[ix]}  {rn}  {c!r}")
    if in_int:
        rows.append(f"    M{marker}  'MARKER'  'INTEND'")

    rows.append("RHS")
    for con, cn in zip(model.constraints, con_names):
        if con.rhs != 0.0:
            rows.append(f"    RHS  {cn}  {con.rhs!r}")

    rows.append("BOUNDS")
    for ix in range(model.num_variables):
        vn = var_names[ix]
        lo, hi = model.lb[ix], model.ub[ix]
        if model.kinds[ix] == BINARY:
            if lo == hi:
                rows.append(f" FX BND  {vn}  {lo!r}")
            else:
                if lo != 0.0:
                    rows.append(f" LO BND  {vn}  {lo!r}")
                rows.append(f" UP BND  {vn}  {hi!r}")
        else:
            if lo == hi:
                rows.append(f" FX BND  {vn}  {lo!r}")
                continue
            if math.isinf(lo) and math.isinf(hi):
                rows.append(f" FR BND  {vn}")
                continue
            if math.isinf(lo):
                rows.append(f" MI BND  {vn}")
            elif lo != 0.0:
                rows.append(f" LO BND  {vn}  {lo!r}")
            if not math.isinf(hi):
                rows.append(f" UP BND  {vn}  {hi!r}")
    rows.append("ENDATA")
    return "\n".join(rows) + "\n"


_OBJ_LINE_RE = re.compile(r"objective value\s*=?\s*(-?[\d.eE+-]+)", re.IGNORECASE)


def parse_external_solution(text: str, model: MilpModel,
                            options: SolverOptions | None = None) -> Solution:
    """Parse the adapter solution format.

    Accepted format: '#'-prefixed comment lines, one of which must state
    ``Objective value = <float>``; every other nonempty line is
    ``<variable name> <value>``. Variables absent from the file default to 0.
    Binary values must be integral within the integrality tolerance and are
    rounded.
    """
    options = options or SolverOptions()
    objective: float | None = None
    values = np.zeros(model.num_variables)
    mps_to_ix = {_mps_name(v): i for i, v in enumerate(model.var_names)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _OBJ_LINE_RE.search(line)
            if m:
                objective = float(m.group(1))
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SolverError(f"solution line {lineno}: expected 'name value', got {line!r}")
        name, raw = parts
        ix = mps_to_ix.get(name)
        if ix is None:
            raise SolverError(f"solution names unknown variable {name!r}")
        try:
            v = float(raw)
        except ValueError:
            raise SolverError(f"solution line {lineno}: bad value {raw!r}") from None
        if model.kinds[ix] == BINARY:
            r = round(v)
            if abs(v - r) > options.int_tol:
                raise SolverError(
                    f"binary variable {name!r} value {v} violates integrality tolerance"
                )
            v = float(r)
        values[ix] = v
    if objective is None:
        raise SolverError("solution file is missing the objective value")
    return Solution("optimal", values, objective, objective)


def _solve_external(model: MilpModel, options: SolverOptions) -> Solution:
    template = options.external_command or os.environ.get(ENV_SOLVER_CMD)
    if not template:
        raise SolverError(
            "external backend selected but no solver command configured "
            f"(set SolverOptions.external_command or ${ENV_SOLVER_CMD})"
        )
    t0 = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="gridfort-milp-") as tmp:
        model_path = Path(tmp) / "model.mps"
        sol_path = Path(tmp) / "model.sol"
        model_path.write_text(write_model(model))
        cmd = template.format(model=model_path, solution=sol_path)
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
        if proc.returncode != 0:
            raise SolverError(
                f"external solver failed (exit {proc.returncode}): {proc.stderr.strip()[:500]}"
            )
        if not sol_path.exists():
            raise SolverError("external solver produced no solution file")
        sol = parse_external_solution(sol_path.read_text(), model, options)
    return replace(sol, solve_time=time.monotonic() - t0)
