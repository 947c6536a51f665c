"""
Exact certificate checking, verdicts, termination bounds and the
case-study acceptance runs
"""

from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from app.config import settings
from app.core.certificate import Certificate, CertificateKind, RatePlan, VerdictStatus
from app.core.conic import AffineMatrix, AffineScalar, ConicProblem, SolveStatus, VariableKind
from app.core.graph import StateVec, TraceStatus
from app.core.milm import MILM
from app.core.rational import qeye, qmatrix, qvector, qzeros
from app.errors import AssemblyError, ModelError
from app.models.model_file import ModelFile
from app.services import casestudies
from app.services.certify import (
    check_certificate,
    conclude_specification,
    conclude_unreachability,
    cycle_bound,
    ftt_bound,
    solve_problem,
    unsafe_sets,
)
from app.services.invariants import propagate_invariants
from app.services.lp_solver import LinearProgram, solve_linear_program, solve_lp
from app.services.model_io import model_from_file
from app.services.relaxation import assemble_milm_linear, assemble_milm_overflow, assemble_milm_quadratic
from app.services.sdp_solver import ray_certifies_infeasibility, solve_sdp
from app.services.search import SearchSchedule, assemble, recursive_search, verify_model
from app.services.simulator import UncertaintyPolicy, sample_initial_states, simulate, simulate_many
from app.services.sos import assemble_graph_sos

COUNTDOWN = {
    "name": "countdown",
    "variables": ["x"],
    "nodes": ["entry", "loop", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "loop"},
        {"from": "loop", "to": "loop", "update": {"x": "x - 1"}, "passport": {"linear": ["x >= 0"]}},
        {"from": "loop", "to": "exit", "passport": {"linear": ["x + 1 <= 0"]}},
    ],
    "init": {"linear": ["x >= 1", "x <= 5"]},
    "unsafe": {"loop": [{"linear": ["x <= 0"]}]},
}

HALVING = {
    "name": "halving",
    "variables": ["x"],
    "nodes": ["entry", "loop", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "loop"},
        {"from": "loop", "to": "loop", "update": {"x": "x/2"}},
    ],
    "init": {"linear": ["x - 1 == 0"]},
    "unsafe": {"loop": [{"linear": ["x >= 2"]}]},
}


def build(doc):
    return model_from_file(ModelFile.model_validate(doc))


class TestLinearProgram:
    def test_exact_optimum(self):
        lp = LinearProgram(c=qvector([1, 1]), A_eq=qzeros((0, 2)), b_eq=qzeros(0), A_ge=qeye(2), b_ge=qvector([1, 2]))
        result = solve_linear_program(lp)
        assert result.feasible
        assert result.objective == 3
        assert isinstance(result.objective, Fraction)

    def test_infeasible(self):
        lp = LinearProgram(
            c=qvector([1]), A_eq=qzeros((0, 1)), b_eq=qzeros(0),
            A_ge=qmatrix([[1], [-1]]), b_ge=qvector([1, 0]),
        )
        assert solve_linear_program(lp).status == SolveStatus.INFEASIBLE


class TestExplicitCertificate:
    def test_turn_rate_certificate_is_valid(self):
        model, cert = casestudies.program3(), casestudies.program3_certificate()
        report = check_certificate(model, cert)
        assert report.valid, report.violated
        verdict = conclude_unreachability(cert, model, "L6", validated=True)
        assert verdict.status == VerdictStatus.CERTIFIED

    def test_shifted_certificate_is_rejected(self):
        model, cert = casestudies.program3(), casestudies.program3_certificate()
        shifted = {}
        for node, terms in cert.functions.items():
            terms = dict(terms)
            terms[(2,)] = terms.get((2,), Fraction(0)) + 10
            terms[(0,)] = terms.get((0,), Fraction(0)) + 10
            shifted[node] = terms
        report = check_certificate(model, replace(cert, functions=shifted))
        assert not report.valid
        assert report.violations

    def test_unvalidated_certificate_gives_no_verdict(self):
        model, cert = casestudies.program3(), casestudies.program3_certificate()
        broken = replace(cert, functions={node: {(0,): Fraction(1)} for node in cert.functions})
        assert not conclude_unreachability(broken, model, "L6").certified


class TestCycleBound:
    def test_unit_rate(self):
        assert cycle_bound(1, Fraction(1, 1000), 1) == 1000

    def test_limit_towards_unit_rate(self):
        near = cycle_bound(Fraction(99999, 100000), Fraction(1, 1000), 1)
        assert float(near) == pytest.approx(1000, rel=1e-2)

    def test_expanding_rate_without_offset(self):
        assert float(cycle_bound(2, 0, 8, eta=1)) == pytest.approx(3)

    def test_no_bound_without_progress(self):
        assert cycle_bound(Fraction(1, 2), 0, 1) is None
        assert cycle_bound(2, 0, 8) is None


class TestEuclid:
    def test_explicit_suite_bounds_termination(self):
        report = casestudies.run_euclid(100, search=False)
        assert report.certified, [v.trace for v in report.verdicts]
        ftt = report.verdicts[-1]
        assert ftt.property == "FTT"
        assert ftt.T_u == 10099
        assert ftt.T_u <= 2 * 100**2


class TestVerdicts:
    def test_witness_refutes_unreachability(self):
        outcome = verify_model(build(COUNTDOWN), "sos")
        assert not outcome.certified
        verdict = outcome.verdicts[0]
        assert verdict.witness is not None
        assert verdict.witness.states[-1].node == "loop"
        assert verdict.witness.states[-1].x[0] <= 0

    def test_specification_witness(self):
        model = build(COUNTDOWN).replace(unsafe={})
        verdict = conclude_specification(model, "assert-in", "loop", "x >= 0")
        assert verdict.status == VerdictStatus.NOT_CERTIFIED
        assert verdict.witness is not None

    def test_specification_sets(self):
        model = build(COUNTDOWN)
        (below,) = unsafe_sets(model, "assert-in", "x >= 0")
        assert below.contains([Fraction(-1)]) and not below.contains([Fraction(1)])
        (zero,) = unsafe_sets(model, "div-by-zero", "x - 1")
        assert zero.contains([Fraction(1)]) and not zero.contains([Fraction(2)])
        assert len(unsafe_sets(model, "out-of-bounds", "x", limit=3)) == 2
        with pytest.raises(ModelError):
            unsafe_sets(model, "assert-in", "x == 0")

    def test_halving_stays_below_two(self):
        plan = RatePlan.uniform(Fraction(1, 2), 0)
        outcome = verify_model(build(HALVING), "sos", plans=[plan])
        assert outcome.certified, [v.trace for v in outcome.verdicts]
        assert outcome.verdicts[0].property == "unreachability"
        assert check_certificate(build(HALVING), outcome.certificate).valid

    @pytest.mark.parametrize("method", ["joint", "simplified"])
    def test_unit_rate_halving_is_infeasible(self, method):
        # x = 0 is fixed by x/2, and the strict LMI needs a decrease there
        result = solve_problem(assemble(build(HALVING), RatePlan.uniform(1, 0), method))
        assert result.status == SolveStatus.INFEASIBLE, result.message

    def test_unit_rate_halving_is_not_certified(self):
        outcome = verify_model(build(HALVING), "joint", plans=[RatePlan.uniform(1, 0)])
        assert not outcome.certified
        assert outcome.verdicts[0].property == "certificate"


@pytest.mark.slow
class TestAcceptance:
    def test_euclid_search_finds_lower_bounds(self):
        report = casestudies.run_euclid(100)
        assert report.certified
        assert any("round" in row for row in report.rows)

    @pytest.mark.parametrize(
        "method, B, expected",
        [("joint", 0, 884.95), ("per-coordinate", 0, 373.12), ("per-coordinate", 20, 609.83)],
    )
    def test_filter_overflow_level(self, method, B, expected):
        report = casestudies.run_filter(B, method)
        assert report.certified
        assert report.rows[0]["M"] == pytest.approx(expected, rel=0.02)

    def test_filter_double_precision(self):
        report = casestudies.run_filter(0, "joint", "f64")
        assert report.certified
        assert report.rows[0]["M"] == pytest.approx(884.96, rel=0.02)

    def test_euclid_milghm(self):
        report = casestudies.run_euclid_milghm(100)
        assert report.certified
        row = report.rows[0]
        assert 5.93 * 0.9 <= row["gamma/M"] <= 6.06 * 1.1
        assert row["T_u"] is not None

    def test_example2_terminates(self):
        report = casestudies.run_example2(100)
        assert report.certified
        assert any(v.property == "FTT" and v.T_u is not None for v in report.verdicts)

    def test_program3_explicit_certificate_row(self):
        report = casestudies.run_program3()
        assert report.rows[0] == {"certificate": "explicit", "valid": True}
        assert report.verdicts[0].certified

    def test_euclid_runs_are_repeatable(self):
        first = casestudies.run_euclid(100, search=False)
        second = casestudies.run_euclid(100, search=False)
        assert first.rows == second.rows


def test_sparse_block_text_reloads():
    problem = assemble(build(HALVING), RatePlan.uniform(1, 0), "sos")
    text = problem.to_sparse_block()
    again = ConicProblem.from_sparse_block(text)
    assert again.n_scalars == problem.n_scalars
    assert len(again.lmis) == len(problem.lmis)
    assert again.to_sparse_block() == text


TERMINATING = dict(COUNTDOWN, name="countdown-exit", unsafe={}, invariants={"loop": {"linear": ["x + 1 >= 0", "5 - x >= 0"]}})

BRANCHES = {
    "name": "branches",
    "variables": ["x", "y"],
    "nodes": ["entry", "left", "right", "join", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "left", "passport": {"linear": ["x >= 0"]}},
        {"from": "entry", "to": "right", "passport": {"linear": ["-x - 1 >= 0"]}},
        {"from": "left", "to": "join", "update": {"y": "0"}},
        {"from": "right", "to": "join", "update": {"x": "0"}},
        {"from": "join", "to": "exit"},
    ],
    "init": {"linear": ["x + 5 >= 0", "5 - x >= 0", "y + 5 >= 0", "5 - y >= 0"]},
}

CLIMB = {
    "name": "climb",
    "variables": ["x", "y"],
    "nodes": ["entry", "loop", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "loop"},
        {"from": "loop", "to": "loop", "update": {"x": "x + y", "y": "y + 1"}, "passport": {"linear": ["99 - x >= 0"]}},
        {"from": "loop", "to": "exit", "passport": {"linear": ["x - 100 >= 0"]}},
    ],
    "init": {"linear": ["x - 1 >= 0", "y >= 0"]},
}


def tiny_milm() -> MILM:
    # x₊ = x/2 from x = 1/2
    return MILM(qmatrix([[Fraction(1, 2), 0]]), None, n=1, X0=[[Fraction(1, 2)]])


def scalar_problem(name: str, count: int):
    problem = ConicProblem(name)
    return problem, [problem.add_variable(f"y{i}", VariableKind.SCALAR) for i in range(count)]


def holds_along(cert: Certificate, trace, edges=None) -> bool:
    """σ_j(x₊) ≤ θσ_i(x) − μ on every step of a simulated trace"""
    for before, after, key in zip(trace.states, trace.states[1:], trace.edges):
        if edges is not None and key not in edges:
            continue
        theta, mu = cert.rates.rate(key)
        if cert.evaluate(after.node, after.x) > theta * cert.evaluate(before.node, before.x) - mu:
            return False
    return True


class TestConicSolvers:
    def test_sdp_optimum_on_the_boundary(self):
        problem, (x,) = scalar_problem("shifted", 1)
        corner = x.scalar().times_matrix(qmatrix([[1, 0], [0, 0]]))
        problem.add_psd("S", corner + AffineMatrix.constant(qmatrix([[-1, 0], [0, 1]])))
        problem.minimize(x.scalar())
        result = solve_sdp(problem)
        assert result.status == SolveStatus.FEASIBLE, result.message
        assert result.y[0] == pytest.approx(1, abs=1e-5)
        assert result.margin >= -settings.tol_psd

    def test_sdp_infeasibility_comes_with_a_ray(self):
        # det [[x, 1], [1, -x]] = -x² - 1 < 0 for every x
        problem, (x,) = scalar_problem("indefinite", 1)
        S = x.scalar().times_matrix(qmatrix([[1, 0], [0, -1]])) + AffineMatrix.constant(qmatrix([[0, 1], [1, 0]]))
        problem.add_psd("S", S)
        result = solve_sdp(problem)
        assert result.status == SolveStatus.INFEASIBLE
        assert result.dual_ray is not None
        assert ray_certifies_infeasibility(problem, result.dual_ray)
        flipped = replace(result.dual_ray, blocks=[-Z for Z in result.dual_ray.blocks])
        assert not ray_certifies_infeasibility(problem, flipped)

    @pytest.mark.parametrize("exact", [True, False])
    def test_lp_infeasibility_comes_with_a_ray(self, exact):
        problem, (x,) = scalar_problem("contradiction", 1)
        problem.add_inequality("x>=1", x.scalar() - 1)
        problem.add_inequality("x<=0", -x.scalar())
        result = solve_lp(problem, exact=exact)
        assert result.status == SolveStatus.INFEASIBLE
        ray = result.dual_ray
        assert ray is not None
        assert len(ray.rows) == 2 + 2 * problem.n_scalars
        assert ray_certifies_infeasibility(problem, ray)
        assert not ray_certifies_infeasibility(problem, replace(ray, rows=np.zeros(len(ray.rows))))

    def test_ray_of_a_milm_farkas_program(self):
        problem = assemble_milm_linear(tiny_milm(), 1, 1, mode="lp")
        result = solve_problem(problem)
        assert result.status == SolveStatus.INFEASIBLE
        assert ray_certifies_infeasibility(problem, result.dual_ray)

    def test_halving_under_a_contraction(self):
        problem = assemble(build(HALVING), RatePlan.uniform(Fraction(1, 2), 0), "joint")
        result = solve_sdp(problem)
        assert result.status == SolveStatus.FEASIBLE, result.message
        assert result.margin >= -settings.tol_psd
        assert result.primal_residual <= 1e-6


def random_lp(rng, n: int, m: int, infeasible: bool = False) -> LinearProgram:
    """A bounded LP around an integer point y0, or one cut off by x₀ ≥ 6"""
    A = rng.integers(-3, 4, size=(m, n))
    y0 = rng.integers(-2, 3, size=n)
    b = A @ y0 - rng.integers(0, 3, size=m)
    a_eq = rng.integers(-2, 3, size=n)
    rows = A.tolist() + np.eye(n, dtype=int).tolist() + (-np.eye(n, dtype=int)).tolist()
    rhs = b.tolist() + [-5] * (2 * n)
    if infeasible:
        rows.append([1] + [0] * (n - 1))
        rhs.append(6)
    return LinearProgram(
        c=qvector(rng.integers(-3, 4, size=n).tolist()),
        A_eq=qmatrix([a_eq.tolist()]),
        b_eq=qvector([int(a_eq @ y0)]),
        A_ge=qmatrix(rows),
        b_ge=qvector(rhs),
    )


@pytest.mark.parametrize("seed", range(25))
class TestRandomLinearPrograms:
    def test_exact_and_float_simplex_agree(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(8):
            lp = random_lp(rng, int(rng.integers(2, 5)), int(rng.integers(2, 7)))
            exact = solve_linear_program(lp)
            approx = solve_linear_program(lp, exact=False)
            assert exact.status == approx.status == SolveStatus.FEASIBLE
            assert float(approx.objective) == pytest.approx(float(exact.objective), abs=1e-7)
            assert all(v >= 0 for v in lp.A_ge.dot(exact.y) - lp.b_ge)
            assert all(v == 0 for v in lp.A_eq.dot(exact.y) - lp.b_eq)

    def test_infeasible_reports_carry_exact_rays(self, seed):
        rng = np.random.default_rng(1000 + seed)
        for _ in range(8):
            lp = random_lp(rng, int(rng.integers(2, 5)), int(rng.integers(2, 7)), infeasible=True)
            result = solve_linear_program(lp)
            assert result.status == SolveStatus.INFEASIBLE
            pi_ge, pi_eq = result.dual_ray.rows, result.dual_ray.equalities
            assert all(p >= 0 for p in pi_ge)
            assert all(v == 0 for v in lp.A_ge.T.dot(pi_ge) + lp.A_eq.T.dot(pi_eq))
            assert lp.b_ge.dot(pi_ge) + lp.b_eq.dot(pi_eq) > 0
            assert solve_linear_program(lp, exact=False).status == SolveStatus.INFEASIBLE


def symmetric(rng, size: int) -> np.ndarray:
    M = rng.integers(-2, 3, size=(size, size))
    return M + M.T


@pytest.mark.parametrize("seed", range(10))
class TestRandomSemidefinitePrograms:
    size, n = 3, 3

    def test_feasible_optimum_respects_weak_duality(self, seed):
        # S(y0) = 2I and Z0 ≻ 0 is dual feasible, so −⟨G0, Z0⟩ ≤ cᵀy* ≤ cᵀy0
        rng = np.random.default_rng(seed)
        G = [symmetric(rng, self.size) for _ in range(self.n)]
        y0 = rng.integers(-1, 2, size=self.n)
        G0 = 2 * np.eye(self.size, dtype=int) - sum(int(a) * g for a, g in zip(y0, G))
        L = rng.integers(-1, 2, size=(self.size, self.size))
        Z0 = L @ L.T + np.eye(self.size, dtype=int)
        c = [int(np.sum(g * Z0)) for g in G]
        problem, ys = scalar_problem(f"random-{seed}", self.n)
        S = AffineMatrix.constant(qmatrix(G0.tolist()))
        for y, g in zip(ys, G):
            S = S + y.scalar().times_matrix(qmatrix(g.tolist()))
        problem.add_psd("S", S)
        problem.minimize(AffineScalar(0, dict(enumerate(c))))
        result = solve_sdp(problem)
        assert result.status == SolveStatus.FEASIBLE, result.message
        assert result.margin >= -settings.tol_psd
        assert result.primal_residual <= 1e-6
        lower, upper = -float(np.sum(G0 * Z0)), float(np.dot(c, y0))
        slack = 1e-5 * (1 + abs(lower) + abs(upper))
        assert lower - slack <= result.objective <= upper + slack

    def test_infeasible_report_is_self_certifying(self, seed):
        # traceless Gᵢ and G0 = −I keep tr S(y) = −3
        rng = np.random.default_rng(100 + seed)
        problem, ys = scalar_problem(f"traceless-{seed}", self.n)
        S = AffineMatrix.constant(-qeye(self.size))
        for y in ys:
            g = symmetric(rng, self.size)
            g[-1, -1] -= np.trace(g)
            S = S + y.scalar().times_matrix(qmatrix(g.tolist()))
        problem.add_psd("S", S)
        result = solve_sdp(problem)
        assert result.status == SolveStatus.INFEASIBLE
        assert result.dual_ray is not None
        assert ray_certifies_infeasibility(problem, result.dual_ray)


class TestMilmAssembly:
    def test_quadratic_lmi_shape(self):
        m = casestudies.example2_milm(100)
        problem = assemble_milm_quadratic(m, 1, Fraction(1, 200), strict=True)
        assert problem.variable("P").rows == m.n + 1
        assert [b.name for b in problem.lmis] == ["invariance"]
        assert problem.block_sizes() == [m.n_e]
        assert problem.notes["kind"] == "milm-quadratic"
        assert problem.notes["rates"] == RatePlan.uniform(1, Fraction(1, 200))

    def test_contraction_satisfies_the_invariance_lmi(self):
        problem = assemble_milm_quadratic(tiny_milm(), Fraction(1, 2), 0)
        y = problem.pack({"P": qmatrix([[1, 0], [0, -1]])})
        assert problem.margins(y)["invariance"] == pytest.approx(0.25)
        slow = assemble_milm_quadratic(tiny_milm(), Fraction(1, 10), 0)
        assert slow.margins(slow.pack({"P": qmatrix([[1, 0], [0, -1]])}))["invariance"] == pytest.approx(-0.15)

    def test_overflow_adds_initial_and_bound_conditions(self):
        problem = assemble_milm_overflow(tiny_milm(), Fraction(1, 2), 0, alpha=1)
        y = problem.pack({"P": qmatrix([[1, 0], [0, -1]])})
        assert min(problem.margins(y).values()) >= -1e-12
        assert problem.residuals(y) == (0.0, 0.0)
        assert "init[0]" in [c.name for c in problem.inequalities]
        names = {b.name for b in assemble_milm_overflow(casestudies.example2_milm(100), 1, 0).lmis}
        assert names == {"invariance", "init", "overflow"}
        with pytest.raises(ModelError):
            assemble_milm_overflow(tiny_milm(), 1, 0, alpha=2)

    def test_linear_farkas_form(self):
        problem = assemble_milm_linear(tiny_milm(), Fraction(1, 2), 1, mode="lp")
        assert problem.is_linear
        result = solve_problem(problem)
        assert result.feasible
        K = problem.unpack(result.y)["K"]
        assert K[1][0] <= -2

    def test_linear_modes_are_checked(self):
        assert not assemble_milm_linear(tiny_milm(), 1, 0, mode="sdp").is_linear
        with pytest.raises(AssemblyError):
            assemble_milm_linear(tiny_milm(), 1, 0, mode="newton")


class TestGraphSos:
    def test_free_functions_at_every_node(self):
        g = build(HALVING)
        problem = assemble_graph_sos(g, RatePlan.uniform(Fraction(1, 2), 0), degrees=2)
        assert problem.notes["kind"] == "graph-sos"
        assert set(problem.notes["nodes"]) == set(g.nodes)
        assert problem.lmis
        assert solve_problem(problem).feasible

    def test_fixed_function_is_respected(self):
        g = build(HALVING)
        plan = RatePlan.uniform(Fraction(1, 2), 0)
        good = assemble_graph_sos(g, plan, degrees=2, fixed={"loop": {(2,): 1, (0,): -3}})
        assert "loop" not in good.notes["nodes"]
        assert solve_problem(good).feasible
        # σ_loop ≡ 1 would need σ_entry ≥ 2 on the initial set
        bad = assemble_graph_sos(g, plan, degrees=2, fixed={"loop": {(0,): 1}})
        assert solve_problem(bad).status == SolveStatus.INFEASIBLE


class TestInvariantPropagation:
    def test_countdown_loop_gains_its_range(self):
        inv = propagate_invariants(build(COUNTDOWN)).invariant("loop")
        assert inv.contains([Fraction(-1)]) and inv.contains([Fraction(5)])
        assert not inv.contains([Fraction(-2)])
        assert not inv.contains([Fraction(6)])

    def test_branch_assignments_give_a_product_equality(self):
        model = propagate_invariants(build(BRANCHES))
        inv = model.invariant("join")
        assert inv.quad_eq
        assert inv.contains([Fraction(0), Fraction(3)])
        assert inv.contains([Fraction(2), Fraction(0)])
        assert not inv.contains([Fraction(2), Fraction(3)])

    def test_propagated_sets_hold_on_simulated_runs(self):
        model = build(BRANCHES)
        strengthened = propagate_invariants(model)
        inits = sample_initial_states(model, 6, seed=4)
        for trace in simulate_many(model, inits, runs=12, max_steps=10):
            for state in trace.states:
                assert strengthened.invariant(state.node).contains(list(state.x))


class TestTermination:
    @staticmethod
    def certificate(loop_mu) -> Certificate:
        sigma = {(1,): Fraction(1), (0,): Fraction(-6)}
        rates = RatePlan((1, loop_mu), {("entry", "loop", 1): (1, 0), ("loop", "exit", 1): (0, 0)})
        return Certificate(CertificateKind.LINEAR, ("x",), {"entry": sigma, "loop": sigma}, rates, provenance={"kind": "functions"})

    def test_countdown_bound(self):
        model = build(TERMINATING)
        verdict = ftt_bound(self.certificate(1), model)
        assert verdict.status == VerdictStatus.CERTIFIED, verdict.trace
        assert verdict.T_u == 7
        for x in range(1, 6):
            trace = simulate(model, StateVec("entry", (x,)))
            assert trace.status == TraceStatus.REACHED_TERMINAL
            assert trace.edges.count(("loop", "loop", 1)) <= verdict.T_u

    def test_no_progress_gives_no_bound(self):
        verdict = ftt_bound(self.certificate(0), build(TERMINATING))
        assert verdict.status == VerdictStatus.NOT_CERTIFIED
        assert verdict.T_u is None


class TestRecursiveSearch:
    def test_second_round_uses_the_first(self):
        result = recursive_search(build(CLIMB), SearchSchedule(nodes=["loop"]))
        found = {(f.node, f.variable, f.bound, f.round) for f in result.findings}
        assert found == {("loop", "y", 0, 0), ("loop", "x", 1, 1)}
        assert result.rounds == 3
        inv = result.model.invariant("loop")
        assert inv.contains([Fraction(1), Fraction(0)])
        assert not inv.contains([Fraction(0), Fraction(0)])
        assert not inv.contains([Fraction(1), Fraction(-1)])

    def test_search_rejects_the_start_node(self):
        with pytest.raises(ModelError):
            recursive_search(build(CLIMB), SearchSchedule(nodes=["entry"]))


class TestSoundnessAgainstSimulation:
    def test_turn_rate_certificate_along_runs(self):
        model, cert = casestudies.program3(), casestudies.program3_certificate()
        inits = sample_initial_states(model, 5, seed=2)
        traces = simulate_many(model, inits, runs=10, policy=UncertaintyPolicy(seed=2), max_steps=200)
        for trace in traces:
            assert trace.status != TraceStatus.UNSAFE_HIT
            assert holds_along(cert, trace)
            assert all(cert.evaluate(s.node, s.x) <= 0 for s in trace.states[1:])

    def test_euclid_runs_stay_within_the_certified_bounds(self):
        M, T_u = 100, 10099
        model = casestudies.euclid_reduced(M)
        cert = casestudies.euclid_certificate(M, casestudies.EUCLID_FTT, (1, 1), (1, 1))
        loops = {("F2", "F2", 1), ("F2", "F2", 2)}
        rng = np.random.default_rng(5)
        for X, Y in rng.integers(1, M + 1, size=(40, 2)).tolist():
            trace = simulate(model, StateVec("L0", (X, Y, 0, 0, 0, 0, 0)), max_steps=5000)
            assert trace.status == TraceStatus.REACHED_TERMINAL
            assert sum(key in loops for key in trace.edges) <= T_u
            assert holds_along(cert, trace, loops)
            for state in trace.states:
                if state.node == "F2":
                    assert all(abs(v) <= M for v in state.x)
