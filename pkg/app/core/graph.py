"""
Graph models of programs

Nodes are code locations; an edge (i, j, k) fires when its passport Π holds
at the current state and moves the continuous state through its transition
label. The start node carries the initial set, the terminal node only an
identity self-loop.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy

from app.core.milm import MILM
from app.core.polynomials import Exponent, affine_images, evaluate_terms, make_symbols, poly_terms, total_degree
from app.core.rational import exact_equal, qeye, qvector, qzeros, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import ModelError, ReductionError

ENTRY = "entry"
EXIT = "exit"

EdgeKey = Tuple[str, str, int]


@dataclass(frozen=True, eq=False)
class TransitionLabel:
    """
    x₊ = A x + B w + C v + E (+ optional higher-degree terms)

    ``constraints`` lives over ξ = [x; w; v]. An edge may instead carry a whole
    MILM block (mixed-integer graph models); then A..E are unused.
    """

    A: np.ndarray
    B: np.ndarray = None
    C: np.ndarray = None
    E: np.ndarray = None
    constraints: SemialgebraicSet = None
    nonlinear: Optional[Tuple[Dict[Exponent, Fraction], ...]] = None
    milm: Optional[MILM] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=object)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got {A.shape}", field="A")
        n = A.shape[0]
        B = qzeros((n, 0)) if self.B is None else np.asarray(self.B, dtype=object).reshape(n, -1)
        C = qzeros((n, 0)) if self.C is None else np.asarray(self.C, dtype=object).reshape(n, -1)
        E = qzeros(n) if self.E is None else np.asarray(self.E, dtype=object).reshape(n)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "E", E)
        xi = n + B.shape[1] + C.shape[1]
        cons = SemialgebraicSet.universal(xi) if self.constraints is None else self.constraints
        if cons.dim != xi:
            raise ModelError(f"constraint set has dimension {cons.dim}, expected {xi}", field="constraints")
        object.__setattr__(self, "constraints", cons)
        if self.nonlinear is not None:
            if len(self.nonlinear) != n:
                raise ModelError("one higher-order term map per coordinate is required", field="nonlinear")
            cleaned = tuple({tuple(e): to_fraction(c) for e, c in t.items() if to_fraction(c) != 0} for t in self.nonlinear)
            for t in cleaned:
                for e in t:
                    if len(e) != xi or total_degree(e) < 2:
                        raise ModelError("higher-order terms must be monomials of degree ≥ 2 over [x; w; v]", field="nonlinear")
            object.__setattr__(self, "nonlinear", cleaned if any(cleaned) else None)
        if self.milm is not None and self.milm.n != n:
            raise ModelError(f"MILM block has n = {self.milm.n}, model has {n}", field="milm")

    # construction

    @classmethod
    def identity(cls, n: int) -> "TransitionLabel":
        return cls(qeye(n))

    @classmethod
    def affine(cls, A, E=None, B=None, C=None, constraints=None) -> "TransitionLabel":
        return cls(np.asarray(A, dtype=object), B, C, None if E is None else qvector(E), constraints)

    # shape

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_w(self) -> int:
        return self.B.shape[1]

    @property
    def n_v(self) -> int:
        return self.C.shape[1]

    @property
    def xi_dim(self) -> int:
        return self.n + self.n_w + self.n_v

    @property
    def is_affine(self) -> bool:
        return self.nonlinear is None and self.milm is None

    @property
    def deterministic(self) -> bool:
        return self.n_w == 0 and self.n_v == 0 and self.constraints.is_universal and self.milm is None

    @property
    def is_identity(self) -> bool:
        return self.deterministic and self.is_affine and exact_equal(self.A, qeye(self.n)) and all(e == 0 for e in self.E)

    def stacked(self) -> np.ndarray:
        """[A B C] as one n × (n + n_w + n_v) block"""
        return np.hstack([self.A, self.B, self.C])

    def apply(self, x: Sequence, w: Sequence = (), v: Sequence = ()):
        xi = list(x) + list(w) + list(v)
        exact = all(isinstance(a, (int, Fraction)) for a in xi)
        if exact:
            vec = np.array([to_fraction(a) for a in xi], dtype=object)
            out = self.stacked().dot(vec) + self.E if xi else self.E.copy()
        else:
            vec = np.array([float(a) for a in xi])
            out = self.stacked().astype(float).dot(vec) + self.E.astype(float)
        if self.nonlinear is not None:
            out = np.array([o + evaluate_terms(t, vec.tolist()) for o, t in zip(out, self.nonlinear)], dtype=out.dtype)
        return out

    def images(self, gens: Sequence[sympy.Symbol]) -> List[sympy.Expr]:
        """Coordinates of x₊ as sympy expressions in the ξ generators"""
        return affine_images(self.stacked(), self.E, gens, self.nonlinear)

    # composition

    def then(
        self, second: "TransitionLabel", between: Optional[SemialgebraicSet] = None, max_degree: int = 2
    ) -> "TransitionLabel":
        """
        The label of "self, then second"

        Uncertainty vectors are concatenated as [w₁; w₂] and [v₁; v₂]. The
        second label's constraints, and the optional set ``between`` over the
        intermediate state, are pulled back through the first map; that needs
        the first map to be affine.
        """
        if self.milm is not None or second.milm is not None:
            raise ReductionError("edges carrying MILM blocks cannot be composed")
        n = self.n
        w1, w2, v1, v2 = self.n_w, second.n_w, self.n_v, second.n_v
        xi = n + w1 + w2 + v1 + v2
        # selector from the composed ξ = [x; w1; w2; v1; v2] to the first label's ξ
        first_sel = qzeros((n + w1 + v1, xi))
        first_sel[:n, :n] = qeye(n)
        first_sel[n:n + w1, n:n + w1] = qeye(w1)
        first_sel[n + w1:, n + w1 + w2:n + w1 + w2 + v1] = qeye(v1)
        # intermediate state and second-label uncertainties as an affine map of ξ
        mid_to_second = qzeros((second.xi_dim, xi))
        mid_to_second[n:n + w2, n + w1:n + w1 + w2] = qeye(w2)
        mid_to_second[n + w2:, n + w1 + w2 + v1:] = qeye(v2)
        shift = np.concatenate([self.E, qzeros(w2 + v2)])
        constraints = self.constraints.pullback(first_sel)

        needs_pullback = not second.constraints.is_universal or (between is not None and not between.is_universal)
        if self.nonlinear is None:
            M1 = self.stacked().dot(first_sel)
            mid_to_second[:n, :] = M1
            constraints = constraints.intersect(second.constraints.pullback(mid_to_second, shift))
            if between is not None:
                constraints = constraints.intersect(between.pullback(M1, self.E))
        elif needs_pullback:
            raise ReductionError("pulling a constraint back through a nonlinear transition is not supported")

        if self.is_affine and second.is_affine:
            M = second.stacked().dot(mid_to_second)
            E = second.stacked().dot(shift) + second.E
            return TransitionLabel(M[:, :n], M[:, n:n + w1 + w2], M[:, n + w1 + w2:], E, constraints)

        # polynomial composition, at most max_degree
        gens = make_symbols([f"_xi{i}" for i in range(xi)])
        inner = make_symbols([f"_in{i}" for i in range(second.xi_dim)])
        first_images = self.images(_select(gens, first_sel))
        second_inputs = list(first_images) + [gens[i] for i in range(n + w1, n + w1 + w2)] + [gens[i] for i in range(n + w1 + w2 + v1, xi)]
        composed = [sympy.expand(e.xreplace(dict(zip(inner, second_inputs)))) for e in second.images(inner)]
        A = qzeros((n, xi))
        E = qzeros(n)
        extra = []
        for r, expr in enumerate(composed):
            higher = {}
            for e, c in poly_terms(sympy.Poly(expr, *gens, domain="QQ")).items():
                d = total_degree(e)
                if d > max_degree:
                    raise ReductionError(
                        f"composition produces a degree-{d} term in coordinate {r}; only degree ≤ {max_degree} is kept"
                    )
                if d == 0:
                    E[r] = c
                elif d == 1:
                    A[r, e.index(1)] = c
                else:
                    higher[e] = c
            extra.append(higher)
        return TransitionLabel(A[:, :n], A[:, n:n + w1 + w2], A[:, n + w1 + w2:], E, constraints, tuple(extra))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransitionLabel):
            return False
        same = all(exact_equal(getattr(self, f), getattr(other, f)) for f in ("A", "B", "C", "E"))
        return same and self.constraints == other.constraints and self.nonlinear == other.nonlinear and self.milm == other.milm

    __hash__ = None  # type: ignore[assignment]


def _select(gens, selector: np.ndarray):
    return [gens[int(np.nonzero(selector[r] != 0)[0][0])] for r in range(selector.shape[0])]


@dataclass(frozen=True, eq=False)
class Edge:
    source: str
    target: str
    k: int
    label: TransitionLabel
    passport: SemialgebraicSet = None

    def __post_init__(self):
        if self.passport is None:
            object.__setattr__(self, "passport", SemialgebraicSet.universal(self.label.n))
        if self.passport.dim != self.label.n:
            raise ModelError(f"passport of {self.key} has dimension {self.passport.dim}", field="passport")
        if self.k < 1:
            raise ModelError(f"edge index k must be ≥ 1, got {self.k}", field="k")

    @property
    def key(self) -> EdgeKey:
        return (self.source, self.target, self.k)

    def guard(self) -> SemialgebraicSet:
        """Passport lifted to ξ = [x; w; v] together with the label constraints"""
        return self.passport.embed(self.label.xi_dim).intersect(self.label.constraints)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Edge)
            and self.key == other.key
            and self.label == other.label
            and self.passport == other.passport
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class GraphModel:
    variables: Tuple[str, ...]
    nodes: Tuple[str, ...]
    edges: Tuple[Edge, ...]
    init: SemialgebraicSet = None
    invariants: Mapping[str, SemialgebraicSet] = field(default_factory=dict)
    unsafe: Mapping[str, Tuple[SemialgebraicSet, ...]] = field(default_factory=dict)
    overflow: Optional[Tuple[Fraction, ...]] = None
    scale: Fraction = Fraction(1)
    start: str = ENTRY
    terminal: str = EXIT
    name: str = "model"

    def __post_init__(self):
        n = len(self.variables)
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        if len(set(self.nodes)) != len(self.nodes):
            raise ModelError("duplicate node names", field="nodes")
        for special in (self.start, self.terminal):
            if special not in self.nodes:
                raise ModelError(f"node {special!r} is not declared", field="nodes")
        init = SemialgebraicSet.universal(n) if self.init is None else self.init
        if init.dim != n:
            raise ModelError(f"initial set has dimension {init.dim}, model has {n}", field="init")
        object.__setattr__(self, "init", init)
        per_pair: Dict[Tuple[str, str], List[int]] = {}
        for e in self.edges:
            if e.source not in self.nodes or e.target not in self.nodes:
                raise ModelError(f"edge {e.key} references an unknown node", field="edges")
            if e.label.n != n:
                raise ModelError(f"edge {e.key} acts on {e.label.n} variables, model has {n}", field="edges")
            if e.source == self.terminal and not (e.target == self.terminal and e.label.is_identity):
                raise ModelError("the terminal node only admits an identity self-loop", field="edges")
            per_pair.setdefault((e.source, e.target), []).append(e.k)
        for pair, ks in per_pair.items():
            if sorted(ks) != list(range(1, len(ks) + 1)):
                raise ModelError(f"parallel edges {pair} must be numbered 1..{len(ks)}, got {sorted(ks)}", field="edges")
        invariants = dict(self.invariants)
        for node, s in invariants.items():
            if node not in self.nodes:
                raise ModelError(f"invariant for unknown node {node!r}", field="invariants")
            if s.dim != n:
                raise ModelError(f"invariant of {node} has dimension {s.dim}", field="invariants")
        object.__setattr__(self, "invariants", invariants)
        unsafe = {node: tuple(sets) for node, sets in dict(self.unsafe).items()}
        for node, sets in unsafe.items():
            if node not in self.nodes:
                raise ModelError(f"unsafe set for unknown node {node!r}", field="unsafe")
            if any(s.dim != n for s in sets):
                raise ModelError(f"unsafe set of {node} has wrong dimension", field="unsafe")
        object.__setattr__(self, "unsafe", unsafe)
        if self.overflow is not None:
            alpha = tuple(to_fraction(a) for a in self.overflow)
            if len(alpha) != n:
                raise ModelError(f"{len(alpha)} overflow limits for {n} variables", field="overflow")
            if any(a <= 0 for a in alpha):
                raise ModelError("overflow limits must be positive", field="overflow")
            object.__setattr__(self, "overflow", alpha)
        object.__setattr__(self, "scale", to_fraction(self.scale))

    @property
    def n(self) -> int:
        return len(self.variables)

    def edges_from(self, node: str) -> List[Edge]:
        return [e for e in self.edges if e.source == node]

    def edges_to(self, node: str) -> List[Edge]:
        return [e for e in self.edges if e.target == node]

    def edge(self, key: EdgeKey) -> Edge:
        for e in self.edges:
            if e.key == tuple(key):
                return e
        raise ModelError(f"no edge {key}", field="edges")

    def invariant(self, node: str) -> SemialgebraicSet:
        if node == self.start:
            base = self.init
            extra = self.invariants.get(node)
            return base if extra is None else base.intersect(extra)
        return self.invariants.get(node, SemialgebraicSet.universal(self.n))

    def with_invariant(self, node: str, extra: SemialgebraicSet) -> "GraphModel":
        invariants = dict(self.invariants)
        current = invariants.get(node)
        invariants[node] = extra if current is None else current.intersect(extra)
        return replace(self, invariants=invariants)

    def replace(self, **changes) -> "GraphModel":
        return replace(self, **changes)

    @property
    def milm_edges(self) -> List[Edge]:
        return [e for e in self.edges if e.label.milm is not None]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphModel):
            return False
        simple = ("variables", "nodes", "overflow", "scale", "start", "terminal")
        if any(getattr(self, f) != getattr(other, f) for f in simple):
            return False
        if len(self.edges) != len(other.edges) or any(a != b for a, b in zip(self.edges, other.edges)):
            return False
        if self.init != other.init:
            return False
        if set(self.invariants) != set(other.invariants) or any(self.invariants[k] != other.invariants[k] for k in self.invariants):
            return False
        if set(self.unsafe) != set(other.unsafe):
            return False
        return all(
            len(self.unsafe[k]) == len(other.unsafe[k]) and all(a == b for a, b in zip(self.unsafe[k], other.unsafe[k]))
            for k in self.unsafe
        )

    __hash__ = None  # type: ignore[assignment]


class MILGHM(GraphModel):
    """Graph model whose designated edges carry MILM blocks"""

    def __post_init__(self):
        super().__post_init__()
        if not self.milm_edges:
            raise ModelError("a mixed-integer graph model needs at least one MILM-labeled edge", field="edges")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


class TraceStatus(str, Enum):
    REACHED_TERMINAL = "reached-terminal"
    BUDGET_EXHAUSTED = "step-budget-exhausted"
    UNSAFE_HIT = "unsafe-set-hit"
    STUCK = "stuck"


@dataclass(frozen=True)
class StateVec:
    node: str
    x: Tuple[object, ...]


@dataclass
class Trace:
    states: List[StateVec]
    status: TraceStatus
    edges: List[Optional[EdgeKey]] = field(default_factory=list)
    note: str = ""

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    def visited(self, node: str) -> List[StateVec]:
        return [s for s in self.states if s.node == node]
