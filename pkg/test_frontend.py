"""
Parser, graph compiler and reference interpreter of the mini-language
"""

from fractions import Fraction
from math import gcd

import pytest

from app.core.graph import StateVec, TraceStatus
from app.errors import ModelError, ParseError, UnsupportedConstruct
from app.services.abstraction import taylor_error
from app.services.casestudies import (
    CASESTUDY_DIR,
    program1,
    program1_signed,
    program1_signed_source,
    program1_source,
    program3_compiled,
    program4_source,
    run_casestudy,
)
from app.services.frontend import CompileOptions, compile_source, execute, parse_program
from app.services.simulator import is_transition, simulate


def final_state(source: str, inputs):
    ast = parse_program(source)
    return execute(ast, inputs)[-1]


class TestParser:
    def test_error_carries_position(self):
        with pytest.raises(ParseError) as e:
            parse_program("int x;\nx = 1 @ 2;\n")
        assert e.value.line == 2
        assert e.value.column == 7

    def test_for_loops_are_rejected(self):
        with pytest.raises(UnsupportedConstruct):
            parse_program("int x;\nfor (x = 0; x < 3; x = x + 1) { skip; }\n")

    def test_recursion_is_rejected(self):
        source = "int f(int x) {\n  f(x);\n  return x;\n}\n"
        with pytest.raises((UnsupportedConstruct, ParseError)):
            compile_source(source)


class TestCompiler:
    def test_integer_division_layout(self):
        g = program1(100)
        assert list(g.variables) == ["dd", "dr", "q", "r"]
        assert g.start in g.nodes and g.terminal in g.nodes
        assert g.init.contains([Fraction(1), Fraction(100), 0, 0])
        assert not g.init.contains([Fraction(0), Fraction(5), 0, 0])

    def test_euclid_inlines_the_callee(self):
        g = compile_source(program4_source(100), CompileOptions(name="euclid"))
        assert list(g.variables) == ["X", "Y", "rem", "dd", "dr", "q", "r"]
        assert g.start == "L0"
        assert g.terminal == "Lend"

    def test_euclid_locations_follow_the_labels(self):
        g = compile_source(program4_source(100))
        expected = {"L0", "L1", "L2", "L3", "L4", "L5", "Lend", "F0", "F1", "F2", "F3", "F4", "Fend"}
        assert set(g.nodes) == expected
        loops = {(e.source, e.target) for e in g.edges if not e.passport.is_universal}
        assert loops == {("L2", "L3"), ("L2", "Lend"), ("F2", "F3"), ("F2", "Fend")}

    def test_turn_rate_program(self):
        g = program3_compiled()
        assert list(g.variables) == ["x", "y"]
        assert set(g.nodes) - {g.terminal} == {"L0", "L1", "L2", "L3", "L4", "L5", "L6", "L8"}
        guarded = sorted((e.source, e.target) for e in g.edges if not e.passport.is_universal)
        assert guarded == [("L4", "L5"), ("L4", "L8")]
        (to_then,) = [e for e in g.edges if e.target == "L5"]
        assert to_then.passport.contains([Fraction(-1), 0])
        assert not to_then.passport.contains([Fraction(-11, 10), 0])
        (to_else,) = [e for e in g.edges if e.target == "L8"]
        assert to_else.passport.contains([Fraction(-2), 0])
        assert not to_else.passport.contains([Fraction(0), 0])
        assert [s.contains([0, 3]) for s in g.unsafe["L6"]] == [True]

    def test_sin_enters_as_its_range(self):
        g = program3_compiled()
        (assign,) = [e for e in g.edges if e.source == "L3"]
        assert assign.label.n_w == 1
        assert assign.label.apply([0, 0], [1])[0] == 2
        assert assign.label.apply([0, 0], [-1])[0] == Fraction(-4, 3)

    def test_scaling_divides_by_the_declared_bound(self):
        g = compile_source(program1_source(100), CompileOptions(scale=True))
        assert g.scale == 100
        assert g.init.contains([Fraction(1, 100), Fraction(1), 0, 0])

    def test_scaling_by_an_explicit_factor(self):
        g = compile_source(program1_source(100), CompileOptions(scale=50))
        assert g.scale == 50
        assert g.init.contains([Fraction(1, 50), Fraction(2), 0, 0])

    def test_scaling_needs_some_declared_range(self):
        with pytest.raises(ModelError):
            compile_source("int x = 0;\nwhile (x < 3) { x = x + 1; }\n", CompileOptions(scale=True))

    def test_signed_variant_matches_its_checked_in_file(self):
        source = (CASESTUDY_DIR / "program1_signed.lc").read_text()
        assert compile_source(source) == program1_signed(100)
        assert program1_signed(100).init.contains([Fraction(5), Fraction(-1), 0, 0])


class TestInterpreter:
    @pytest.mark.parametrize("dd, dr", [(7, 2), (9, 3), (1, 5)])
    def test_integer_division(self, dd, dr):
        last = final_state(program1_source(10), {"dd": dd, "dr": dr})
        q, r = last.x[2], last.x[3]
        assert (q, r) == (dd // dr, dd % dr)

    @pytest.mark.parametrize("X, Y", [(12, 18), (35, 14), (17, 5)])
    def test_euclid_computes_gcd(self, X, Y):
        last = final_state(program4_source(100), {"X": X, "Y": Y})
        assert last.x[0] == gcd(X, Y)

    def test_traces_replay_through_the_graph(self):
        source = program1_source(10)
        g = compile_source(source)
        states = execute(parse_program(source), {"dd": 7, "dr": 2})
        assert states[0].node == g.start
        assert states[-1].node == g.terminal
        for a, b in zip(states, states[1:]):
            if a.node == b.node and a.x == b.x:
                continue
            assert is_transition(g, StateVec(a.node, a.x), StateVec(b.node, b.x)), (a, b)


class TestNegativeDivisor:
    def test_simulation_runs_out_of_budget(self):
        g = program1_signed(100)
        trace = simulate(g, StateVec(g.start, (5, -1, 0, 0)), max_steps=300)
        assert trace.status == TraceStatus.BUDGET_EXHAUSTED
        assert trace.states[-1].node != g.terminal
        qs = [s.x[2] for s in trace.states]
        assert all(a <= b for a, b in zip(qs, qs[1:]))
        increments = sorted(set(qs))
        assert len(increments) > 20
        assert increments == list(range(len(increments)))

    def test_interpreter_never_reaches_the_exit(self):
        source = program1_signed_source(100)
        states = execute(parse_program(source), {"dd": 5, "dr": -1}, max_steps=500)
        assert len(states) > 500
        assert states[-1].node != compile_source(source).terminal
        assert states[-1].x[2] > 50

    def test_casestudy_reports_no_termination(self):
        report = run_casestudy("program1-signed", M=100)
        assert not report.certified
        assert report.rows[0]["status"] == TraceStatus.BUDGET_EXHAUSTED.value
        assert report.rows[0]["q"] > 0


class TestIntrinsics:
    def test_interpreter_evaluates_them(self):
        source = "real y = 0, x = 0, a = 0, s = 0;\ny = 1/2;\nx = sin(y);\na = abs(y - 1);\ns = sgn(-y);\n"
        last = final_state(source, {})
        assert abs(float(last.x[1]) - 0.479425538604203) < 1e-12
        assert last.x[2] == Fraction(1, 2)
        assert last.x[3] == -1

    def test_abs_uses_the_declared_range(self):
        g = compile_source("int y in [-3, 3];\nint a = 0;\na = abs(y);\n")
        (edge,) = [e for e in g.edges if e.label.n_w]
        assert edge.label.B[1, 0] == Fraction(3, 2)
        assert edge.label.E[1] == Fraction(3, 2)

    def test_abs_without_a_range_is_rejected(self):
        with pytest.raises(ModelError):
            compile_source("int y = 0, a = 0;\na = abs(y);\n")

    def test_taylor_order_on_a_declared_range(self):
        source = "real y in [-1, 1];\nreal x = 0;\nx = cos(y);\n"
        g = compile_source(source, CompileOptions(intrinsic_order="linear"))
        (edge,) = [e for e in g.edges if e.label.n_w]
        assert edge.label.E[1] == 1
        assert edge.label.B[1, 0] == taylor_error("cos", "linear", (-1, 1))
        coarse = compile_source(source)
        (edge,) = [e for e in coarse.edges if e.label.n_w]
        assert edge.label.E[1] == 0 and edge.label.B[1, 0] == 1

    def test_other_intrinsics_still_need_rewriting(self):
        with pytest.raises(UnsupportedConstruct):
            parse_program("real y = 0, x = 0;\nx = sqrt(y);\n")

    def test_not_allowed_in_conditions(self):
        with pytest.raises(UnsupportedConstruct):
            parse_program("real y = 0;\nwhile (sin(y) > 0) { y = y + 1; }\n")

    def test_turn_rate_runs_never_divide_by_zero(self):
        report = run_casestudy("program3-source", runs=5)
        assert report.certified
        assert report.rows[0]["runs"] == 5
