"""
Node elimination and simple-cycle enumeration
"""

from fractions import Fraction

import numpy as np
import pytest

from app.core.graph import StateVec
from app.errors import ReductionError
from app.models.model_file import ModelFile
from app.services.casestudies import euclid_full, euclid_reduced
from app.services.model_io import model_from_file
from app.services.reduction import cycle_nodes, enumerate_simple_cycles, reduce_graph
from app.services.simulator import is_transition

CHAIN = {
    "name": "chain",
    "variables": ["x"],
    "nodes": ["entry", "a", "b", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "a", "update": {"x": "x + 1"}},
        {"from": "a", "to": "b", "update": {"x": "2*x"}},
        {"from": "b", "to": "exit", "passport": {"linear": ["x >= 0"]}},
    ],
}

BRANCHES = {
    "name": "branches",
    "variables": ["x"],
    "nodes": ["entry", "head", "left", "right", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "head"},
        {"from": "head", "to": "left", "passport": {"linear": ["x >= 1"]}},
        {"from": "head", "to": "right", "passport": {"linear": ["x <= 1"]}},
        {"from": "left", "to": "head", "update": {"x": "x - 1"}},
        {"from": "right", "to": "head", "update": {"x": "x/2"}},
        {"from": "head", "to": "exit", "passport": {"linear": ["x <= 0"]}},
    ],
}


def build(doc) -> object:
    return model_from_file(ModelFile.model_validate(doc))


def test_chain_has_no_cycles():
    assert enumerate_simple_cycles(build(CHAIN)) == []


def test_elimination_composes_updates_and_passports():
    reduced = reduce_graph(build(CHAIN), ["a", "b"])
    assert reduced.nodes == ("entry", "exit")
    assert len(reduced.edges) == 1
    assert is_transition(reduced, StateVec("entry", (Fraction(1),)), StateVec("exit", (Fraction(4),)))
    assert not is_transition(reduced, StateVec("entry", (Fraction(1),)), StateVec("exit", (Fraction(2),)))
    # x + 1 >= 0 after the pullback
    assert not is_transition(reduced, StateVec("entry", (Fraction(-3),)), StateVec("exit", (Fraction(-4),)))


def test_elimination_rejects_duplicates_and_endpoints():
    with pytest.raises(ReductionError):
        reduce_graph(build(CHAIN), ["a", "a"])
    with pytest.raises(ReductionError):
        reduce_graph(build(CHAIN), ["entry"])
    with pytest.raises(ReductionError):
        reduce_graph(build(CHAIN), ["missing"])


def test_euclid_cycles_are_the_two_self_loops():
    cycles = enumerate_simple_cycles(euclid_reduced())
    assert cycles == [(("F2", "F2", 1),), (("F2", "F2", 2),)]


# callee exit and statement nodes first, then the outer loop head
EUCLID_ELIMINATION = ["Fend", "L4", "L5", "L3", "F0", "F1", "F3", "F4", "L1", "L2"]


def successors(model, node, x):
    return {
        (e.target, tuple(e.label.apply(x)))
        for e in model.edges_from(node)
        if e.passport.contains(x)
    }


def test_compiled_euclid_reduces_to_the_three_node_model():
    reduced = reduce_graph(euclid_full(20), EUCLID_ELIMINATION)
    assert set(reduced.nodes) == {"L0", "F2", "Lend"}
    assert enumerate_simple_cycles(reduced) == [(("F2", "F2", 1),), (("F2", "F2", 2),)]
    hand = euclid_reduced(20, equalities=False)
    rng = np.random.default_rng(7)
    for _ in range(300):
        x = [Fraction(int(a)) for a in rng.integers(-2, 8, size=7)]
        assert successors(reduced, "F2", x) == successors(hand, "F2", x), x
        if x[1] >= 1:
            assert successors(reduced, "L0", x) == successors(hand, "L0", x), x


def test_cycles_through_a_shared_head():
    model = build(BRANCHES)
    cycles = enumerate_simple_cycles(model)
    assert len(cycles) == 2
    assert sorted(cycle_nodes(c)[0] for c in cycles) == ["head", "head"]

    reduced = reduce_graph(model, ["left", "right"])
    loops = enumerate_simple_cycles(reduced)
    assert sorted(k for (_, _, k) in (c[0] for c in loops)) == [1, 2]
    assert all(len(c) == 1 for c in loops)


def count_cycles_by_search(n, arcs):
    """Each cycle counted once, rooted at its smallest node"""
    count = 0

    def extend(root, node, seen):
        nonlocal count
        for a, b in arcs:
            if a != node:
                continue
            if b == root:
                count += 1
            elif b > root and b not in seen:
                extend(root, b, seen | {b})

    for root in range(n):
        extend(root, root, {root})
    return count


@pytest.mark.parametrize("seed", range(8))
def test_cycle_count_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    arcs = [(a, b) for a in range(n) for b in range(n) if rng.random() < 0.35]
    doc = {
        "name": f"random{seed}",
        "variables": ["x"],
        "nodes": [f"n{i}" for i in range(n)] + ["exit"],
        "start": "n0",
        "terminal": "exit",
        "edges": [{"from": f"n{a}", "to": f"n{b}"} for a, b in arcs],
    }
    assert len(enumerate_simple_cycles(build(doc))) == count_cycles_by_search(n, arcs)
