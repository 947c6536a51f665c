"""
Model types, the model-file format and the bundled case-study files
"""

from fractions import Fraction

import pytest
from pydantic import ValidationError

from app.core.graph import Edge, GraphModel, TransitionLabel
from app.core.milm import MILM
from app.core.rational import qeye, qmatrix
from app.core.semialgebraic import SemialgebraicSet
from app.errors import ModelError
from app.models.model_file import ModelFile
from app.services import casestudies
from app.services.model_io import (
    dumps_certificate,
    dumps_model,
    import_invariant,
    load_certificate,
    load_model,
    loads_certificate,
    loads_model,
    model_from_file,
    save_model,
    sublevel_spec,
)


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
}


def halving() -> GraphModel:
    return model_from_file(ModelFile.model_validate(HALVING))


class TestSemialgebraicSet:
    def test_box_membership_is_exact(self):
        box = SemialgebraicSet.box([0, None], [1, 2])
        assert box.contains([Fraction(1), Fraction(-5)])
        assert not box.contains([Fraction(1, 1) + Fraction(1, 10**9), Fraction(0)])
        assert not box.contains([Fraction(0), Fraction(3)])

    def test_quadratic_constraints_from_terms(self):
        disk = SemialgebraicSet.from_terms(2, ineq=[{(0, 0): 1, (2, 0): -1, (0, 2): -1}])
        assert not disk.is_linear
        assert disk.contains([Fraction(3, 5), Fraction(4, 5)])
        assert not disk.contains([Fraction(1), Fraction(1, 10)])

    def test_intersection_dimension_mismatch(self):
        with pytest.raises(ModelError):
            SemialgebraicSet.universal(1).intersect(SemialgebraicSet.universal(2))


class TestMILM:
    def test_shapes_are_checked(self):
        with pytest.raises(ModelError):
            MILM(qmatrix([[1, 0, 0]]), None, n=1, X0=[[0]])

    def test_initial_set_is_required(self):
        with pytest.raises(ModelError):
            MILM(qmatrix([[Fraction(1, 2), 0]]), None, n=1)

    def test_initial_states_inside_unit_box(self):
        with pytest.raises(ModelError):
            MILM(qmatrix([[Fraction(1, 2), 0]]), None, n=1, X0=[[2]])

    def test_example2_dimensions(self):
        m = casestudies.example2_milm(100)
        assert (m.n, m.n_w, m.n_v, m.n_e) == (4, 3, 0, 8)
        assert m.scale == 100
        L1, L2, L3, L4, L5 = m.selectors()
        assert L1.shape == (5, 8) and L2.shape == (5, 8) and L3.shape == (7, 8) and L4.shape == (0, 8)


class TestGraphModel:
    def test_start_and_terminal_must_exist(self):
        with pytest.raises(ModelError):
            GraphModel(("x",), ("a", "b"), (), start="a", terminal="exit")

    def test_terminal_only_has_identity_loop(self):
        half = TransitionLabel(qmatrix([[Fraction(1, 2)]]))
        with pytest.raises(ModelError):
            GraphModel(("x",), ("entry", "exit"), (Edge("exit", "exit", 1, half),))

    def test_parallel_edges_are_numbered(self):
        ident = TransitionLabel(qeye(1))
        with pytest.raises(ModelError):
            GraphModel(("x",), ("entry", "exit"), (Edge("entry", "exit", 2, ident),))

    def test_with_invariant_intersects(self):
        g = halving()
        g = g.with_invariant("loop", SemialgebraicSet.box([0], [None]))
        g = g.with_invariant("loop", SemialgebraicSet.box([None], [1]))
        assert g.invariant("loop").num_constraints() == 2
        assert g.invariant("entry").contains([Fraction(1)])


class TestModelFile:
    def test_round_trip_keeps_the_model(self):
        g = halving()
        assert loads_model(dumps_model(g)) == g

    def test_validation_names_the_field(self):
        bad = dict(HALVING, version=7)
        with pytest.raises(ValidationError) as e:
            ModelFile.model_validate(bad)
        assert "version" in str(e.value)

    def test_unknown_variable_in_update(self):
        bad = dict(HALVING, edges=[{"from": "entry", "to": "loop", "update": {"y": "1"}}])
        with pytest.raises(ModelError):
            model_from_file(ModelFile.model_validate(bad))

    @pytest.mark.parametrize("make", [casestudies.program3, casestudies.euclid_reduced])
    def test_graph_file_round_trip(self, tmp_path, make):
        model = make()
        path = tmp_path / "model.json"
        save_model(model, path)
        assert load_model(path) == model

    def test_milm_file_round_trip(self, tmp_path):
        m = casestudies.example2_milm(100)
        path = tmp_path / "milm.json"
        save_model(m, path)
        again = load_model(path)
        assert isinstance(again, MILM)
        assert (again.n, again.n_w, again.n_v, again.scale) == (m.n, m.n_w, m.n_v, m.scale)
        assert (again.F == m.F).all() and (again.H == m.H).all() and (again.H0 == m.H0).all()
        assert again.variables == m.variables

    def test_certificate_round_trip(self):
        cert = casestudies.program3_certificate()
        again = loads_certificate(dumps_certificate(cert))
        assert again.functions == cert.functions
        assert again.rates == cert.rates

    def test_sublevel_set_imported_as_invariant(self):
        cert = casestudies.euclid_certificate(100, "Y - M", (1, 1), (1, 0))
        spec = sublevel_spec(cert, "F2")
        assert spec.linear
        model = import_invariant(casestudies.euclid_reduced(100), "F2", spec)
        inv = model.invariant("F2")
        assert not inv.contains([Fraction(1), Fraction(101), 0, 1, 101, 0, 0])
        assert inv.contains([Fraction(1), Fraction(100), 0, 1, 100, 0, 0])


@pytest.mark.parametrize("name", sorted(casestudies.CASESTUDIES))
def test_checked_in_casestudy_matches_builder(name):
    study = casestudies.get_casestudy(name)
    assert casestudies.casestudy_path(name).exists()
    assert casestudies.load_casestudy(name) == study.build()


def test_checked_in_certificate_matches_builder():
    path = casestudies.CASESTUDY_DIR / "program3_certificate.json"
    assert load_certificate(path).functions == casestudies.program3_certificate().functions


def test_unknown_casestudy():
    with pytest.raises(ModelError):
        casestudies.get_casestudy("nope")
