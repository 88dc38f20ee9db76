import itertools
import math
import random
import sys
from pathlib import Path

import pytest

from gridfort.milp import (
    BINARY,
    EQUAL,
    GREATER,
    LESS,
    MilpModel,
    SolverError,
    SolverOptions,
    parse_external_solution,
    solve,
    solve_lp_relaxation,
    write_model,
)

from mps_reader import read_mps

EXACT = SolverOptions(rel_gap=1e-9)


def single_var_model():
    m = MilpModel("one")
    x = m.add_variable("x", 0.0, math.inf)
    m.add_constraint({x: 1.0}, GREATER, 3.0, "floor")
    m.set_objective({x: 1.0})
    return m


def binary_pair_model():
    m = MilpModel("pair")
    x = m.add_variable("x", kind=BINARY)
    y = m.add_variable("y", kind=BINARY)
    m.add_constraint({x: 1.0, y: 1.0}, GREATER, 1.5, "cover")
    m.set_objective({x: 1.0, y: 1.0})
    return m


class TestSolve:
    def test_single_lower_bound(self):
        sol = solve(single_var_model(), EXACT)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(3.0)
        assert sol.values[0] == pytest.approx(3.0)

    def test_binary_cover_needs_both(self):
        sol = solve(binary_pair_model(), EXACT)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0)

    def test_contradictory_bounds_infeasible(self):
        m = MilpModel()
        x = m.add_variable("x", kind=BINARY)
        m.add_constraint({x: 1.0}, GREATER, 0.5)
        m.add_constraint({x: 1.0}, LESS, 0.4)
        m.set_objective({x: 1.0})
        assert solve(m, EXACT).status == "infeasible"

    def test_no_binaries_is_plain_lp(self):
        m = MilpModel()
        x = m.add_variable("x", 0.0, 10.0)
        y = m.add_variable("y", 0.0, 10.0)
        m.add_constraint({x: 1.0, y: 2.0}, GREATER, 4.0)
        m.set_objective({x: 3.0, y: 1.0})
        sol = solve(m, EXACT)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0)

    def test_time_limit_reports_feasible_limit(self):
        m = MilpModel()
        n = 14
        for i in range(n):
            m.add_variable(f"b{i}", kind=BINARY)
        for i in range(0, n - 1):
            m.add_constraint({i: 1.0, i + 1: 1.0}, GREATER, 0.5, f"pair{i}")
        m.set_objective({i: 1.0 + 0.01 * i for i in range(n)})
        sol = solve(m, SolverOptions(time_limit=0.0))
        assert sol.status == "feasible_limit"
        assert sol.bound is not None

    def test_optimal_solution_satisfies_all_constraints(self):
        rng = random.Random(11)
        for _ in range(5):
            m = _random_model(rng, n_bin=6, n_cont=3, n_rows=6)
            sol = solve(m, EXACT)
            if sol.status != "optimal":
                continue
            assert m.constraint_violations(sol.values, tol=1e-6) == []
            for ix in m.binaries():
                assert sol.values[ix] in (0.0, 1.0)

    def test_cutoff_prunes_equal_or_worse(self):
        m = binary_pair_model()
        assert solve(m, EXACT, cutoff=2.0).status == "infeasible"
        sol = solve(m, EXACT, cutoff=2.5)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0)


class TestLpRelaxation:
    def test_binary_pair_relaxes_to_fraction(self):
        sol = solve_lp_relaxation(binary_pair_model())
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.5)

    def test_empty_model(self):
        m = MilpModel()
        m.add_variable("x", 0.0, 1.0)
        m.set_objective({})
        sol = solve_lp_relaxation(m)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(0.0)

    def test_infeasible_lp(self):
        m = MilpModel()
        x = m.add_variable("x", 0.0, 1.0)
        m.add_constraint({x: 1.0}, GREATER, 2.0)
        m.set_objective({x: 1.0})
        assert solve_lp_relaxation(m).status == "infeasible"

    def test_unbounded_reported_distinctly(self):
        m = MilpModel()
        x = m.add_variable("x", -math.inf, math.inf)
        m.set_objective({x: 1.0})
        assert solve_lp_relaxation(m).status == "unbounded"


def _random_model(rng: random.Random, n_bin: int, n_cont: int, n_rows: int) -> MilpModel:
    m = MilpModel(f"rand{rng.random():.4f}")
    for i in range(n_bin):
        m.add_variable(f"b{i}", kind=BINARY)
    for i in range(n_cont):
        m.add_variable(f"x{i}", 0.0, rng.choice([5.0, 10.0]))
    n = n_bin + n_cont
    for r in range(n_rows):
        coeffs = {
            ix: rng.randint(-4, 4)
            for ix in rng.sample(range(n), k=rng.randint(1, min(4, n)))
        }
        coeffs = {ix: c for ix, c in coeffs.items() if c}
        if not coeffs:
            continue
        sense = rng.choice([LESS, GREATER])
        m.add_constraint(coeffs, sense, rng.randint(-3, 6), f"r{r}")
    m.set_objective({ix: rng.randint(-5, 5) for ix in range(n)})
    return m


def _enumerate_optimum(m: MilpModel):
    """All binary assignments with an LP over the continuous remainder."""
    binaries = m.binaries()
    best = math.inf
    feasible = False
    saved = (list(m.lb), list(m.ub))
    try:
        for assignment in itertools.product((0.0, 1.0), repeat=len(binaries)):
            for ix, val in zip(binaries, assignment):
                m.lb[ix] = m.ub[ix] = val
            sol = solve_lp_relaxation(m)
            if sol.status == "optimal":
                feasible = True
                best = min(best, sol.objective)
    finally:
        m.lb, m.ub = list(saved[0]), list(saved[1])
    return best if feasible else None


class TestEnumerationEquivalence:
    def test_builtin_matches_exhaustive_enumeration(self):
        rng = random.Random(20240202)
        checked = 0
        for trial in range(40):
            m = _random_model(rng, n_bin=rng.randint(2, 8),
                              n_cont=rng.randint(0, 3), n_rows=rng.randint(2, 7))
            expected = _enumerate_optimum(m)
            sol = solve(m, EXACT)
            if expected is None:
                assert sol.status == "infeasible", f"trial {trial}"
            else:
                assert sol.status == "optimal", f"trial {trial}"
                assert sol.objective == pytest.approx(expected, abs=1e-7), f"trial {trial}"
                checked += 1
        assert checked >= 12

    def test_twelve_binary_bound_case(self):
        # one instance at the full size the enumeration contract covers
        rng = random.Random(5150)
        m = _random_model(rng, n_bin=12, n_cont=2, n_rows=8)
        expected = _enumerate_optimum(m)
        sol = solve(m, EXACT)
        if expected is None:
            assert sol.status == "infeasible"
        else:
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(expected, abs=1e-7)

    def test_lp_bound_never_exceeds_milp(self):
        rng = random.Random(7)
        for _ in range(15):
            m = _random_model(rng, n_bin=rng.randint(1, 6),
                              n_cont=rng.randint(0, 3), n_rows=rng.randint(2, 6))
            lp = solve_lp_relaxation(m)
            milp = solve(m, EXACT)
            if lp.status == "optimal" and milp.status == "optimal":
                assert lp.objective <= milp.objective + 1e-7


class TestMpsWriter:
    def test_single_variable_column(self):
        m = MilpModel("tiny")
        x = m.add_variable("x", 0.0, 4.0)
        m.set_objective({x: 2.0})
        text = write_model(m)
        columns = [
            l for l in text.splitlines()
            if l.startswith("    x ") or l.startswith("    x\t")
        ]
        assert len(columns) == 1
        assert "OBJ" in columns[0]

    def test_zero_coefficients_omitted(self):
        m = MilpModel()
        x = m.add_variable("x", 0.0, 1.0)
        y = m.add_variable("y", 0.0, 1.0)
        m.add_constraint({x: 0.0, y: 1.0}, LESS, 1.0, "row")
        m.set_objective({x: 1.0, y: 0.0})
        text = write_model(m)
        x_lines = [l for l in text.splitlines() if l.strip().startswith("x ")]
        assert len(x_lines) == 1  # objective entry only; no row entry
        y_lines = [l for l in text.splitlines() if l.strip().startswith("y ")]
        assert all("OBJ" not in l for l in y_lines)

    def test_reader_round_trip(self):
        m = binary_pair_model()
        back, _ = read_mps(write_model(m))
        assert back.num_variables == 2
        assert back.kinds == [BINARY, BINARY]
        sol = solve(back, EXACT)
        assert sol.objective == pytest.approx(2.0)

    def test_sense_sections(self):
        m = MilpModel()
        x = m.add_variable("x", 0.0, 5.0)
        m.add_constraint({x: 1.0}, LESS, 4.0, "le")
        m.add_constraint({x: 1.0}, GREATER, 1.0, "ge")
        m.add_constraint({x: 1.0}, EQUAL, 2.0, "eq")
        m.set_objective({x: 1.0})
        text = write_model(m)
        assert " L  le" in text
        assert " G  ge" in text
        assert " E  eq" in text


class TestExternalAdapter:
    def test_parse_two_values(self):
        m = MilpModel()
        m.add_variable("x", 0.0, 5.0)
        m.add_variable("y", 0.0, 5.0)
        m.set_objective({0: 1.0, 1: 1.0})
        sol = parse_external_solution(
            "# Objective value = 3.5\nx 1.5\ny 2.0\n", m)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(3.5)
        assert sol.values[0] == pytest.approx(1.5)
        assert sol.values[1] == pytest.approx(2.0)

    def test_unknown_variable_named_in_error(self):
        m = MilpModel()
        m.add_variable("x", 0.0, 5.0)
        m.set_objective({0: 1.0})
        with pytest.raises(SolverError, match="ghost"):
            parse_external_solution("# Objective value = 0\nghost 1\n", m)

    def test_near_integral_binary_rounds(self):
        m = MilpModel()
        m.add_variable("b", kind=BINARY)
        m.set_objective({0: 1.0})
        sol = parse_external_solution("# Objective value = 1\nb 0.9999997\n", m)
        assert sol.values[0] == 1.0

    def test_integrality_violation_rejected(self):
        m = MilpModel()
        m.add_variable("b", kind=BINARY)
        m.set_objective({0: 1.0})
        with pytest.raises(SolverError, match="integrality"):
            parse_external_solution("# Objective value = 1\nb 0.4\n", m)

    def test_missing_objective_rejected(self):
        m = MilpModel()
        m.add_variable("x", 0.0, 1.0)
        m.set_objective({0: 1.0})
        with pytest.raises(SolverError, match="objective"):
            parse_external_solution("x 1.0\n", m)

    def test_round_trip_through_fake_external_solver(self):
        fake = Path(__file__).parent / "fake_solver.py"
        options = SolverOptions(
            backend="external",
            external_command=f"{sys.executable} {fake} {{model}} {{solution}}",
        )
        sol = solve(binary_pair_model(), options)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0)

    def test_unconfigured_external_backend_errors(self, monkeypatch):
        monkeypatch.delenv("GRIDFORT_SOLVER_CMD", raising=False)
        with pytest.raises(SolverError, match="external"):
            solve(binary_pair_model(), SolverOptions(backend="external"))

    def test_external_agrees_with_builtin_on_fixture_model(self):
        from gridfort import DamageScenario, DesignParams, build_master, load_network_file

        net = load_network_file(Path(__file__).parent / "fixtures" / "case5.json")
        scens = [DamageScenario(0, frozenset()),
                 DamageScenario(1, frozenset({"L1"}))]
        master = build_master(net, scens,
                              DesignParams(critical_fraction=0.98, total_fraction=0.0))
        builtin = solve(master.model, EXACT)
        fake = Path(__file__).parent / "fake_solver.py"
        external = solve(master.model, SolverOptions(
            backend="external",
            external_command=f"{sys.executable} {fake} {{model}} {{solution}}",
        ))
        assert builtin.status == external.status == "optimal"
        assert external.objective == pytest.approx(builtin.objective, rel=1e-4)


class TestModelValidation:
    def test_unknown_variable_in_constraint(self):
        m = MilpModel()
        m.add_variable("x")
        with pytest.raises(ValueError, match="unknown variable"):
            m.add_constraint({5: 1.0}, LESS, 1.0)

    def test_binary_bounds_within_unit_interval(self):
        m = MilpModel()
        with pytest.raises(ValueError):
            m.add_variable("b", 0.0, 2.0, BINARY)

    def test_nonfinite_rhs_rejected(self):
        m = MilpModel()
        m.add_variable("x")
        with pytest.raises(ValueError, match="rhs"):
            m.add_constraint({0: 1.0}, LESS, math.inf)

    def test_duplicate_names_rejected(self):
        m = MilpModel()
        m.add_variable("x")
        with pytest.raises(ValueError, match="duplicate"):
            m.add_variable("x")
