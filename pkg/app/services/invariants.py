"""
Invariant-set strengthening for graph models

Candidates for a node's invariant come from its incoming edges:

    * assignment equalities x_l − f(y) = 0 when the update sets x_l from
      coordinates it leaves untouched
    * preimages (X_i ∩ Π) ∘ T⁻¹ for deterministic invertible affine updates
    * linear constraints of X_i ∩ Π over coordinates the update keeps

A candidate survives when every incoming edge implies it, assuming the
surviving candidates at the edge's source. Dropping failures until nothing
changes gives the largest inductive subset, so all kept constraints hold on
every reachable state. Implication is decided exactly: equalities by a
row-space test, inequalities by the exact simplex over the linear part of the
source set (uncertainties boxed, binaries relaxed to [-1, 1]).
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.config import settings
from app.core.conic import SolveStatus
from app.core.graph import Edge, GraphModel
from app.core.rational import qeye, qzeros
from app.core.semialgebraic import SemialgebraicSet
from app.services.lp_solver import LinearProgram, solve_linear_program

logger = logging.getLogger(__name__)

Row = Tuple[Fraction, ...]


@dataclass(frozen=True)
class _Candidate:
    row: Row  # over [x; 1]
    equality: bool


def _normalize(row, equality: bool) -> Optional[Row]:
    """Scale so the first nonzero coefficient is ±1 (+1 for equalities); None for constant rows"""
    row = [Fraction(a) for a in row]
    lead = next((a for a in row[:-1] if a != 0), None)
    if lead is None:
        return None
    s = abs(lead) if not equality else lead
    return tuple(a / s for a in row)


def _affine_parts(edge: Edge) -> Optional[Tuple[np.ndarray, np.ndarray, SemialgebraicSet, int, int]]:
    """
    (M, E, constraints, n_w, n_v) with x₊ = M ξ + E over ξ = [x; w; v]

    MILM blocks are read as x₊ = F x_e subject to H x_e = 0. Labels with
    higher-order terms return None.
    """
    label = edge.label
    n = label.n
    if label.milm is not None:
        m = label.milm
        xi = m.n + m.n_w + m.n_v
        return m.F[:, :xi], m.F[:, xi], SemialgebraicSet(xi, lin_eq=m.H), m.n_w, m.n_v
    if label.nonlinear is not None:
        return None
    return label.stacked(), label.E, label.constraints, label.n_w, label.n_v


def _kept_coordinates(M: np.ndarray, E: np.ndarray, n: int) -> List[int]:
    """Coordinates with x₊_m = x_m"""
    eye = qeye(M.shape[1])
    return [m for m in range(n) if all(M[m, c] == eye[m, c] for c in range(M.shape[1])) and E[m] == 0]


def _candidates_from_edge(edge: Edge, source_set: SemialgebraicSet, n: int) -> List[_Candidate]:
    parts = _affine_parts(edge)
    if parts is None:
        return []
    M, E, _, n_w, n_v = parts
    kept = set(_kept_coordinates(M, E, n))
    out: List[_Candidate] = []

    # x_l − f(y) = 0 for updates reading only kept coordinates
    for l in range(n):
        if l in kept or any(M[l, c] != 0 for c in range(n, M.shape[1])):
            continue
        support = [c for c in range(n) if M[l, c] != 0]
        if all(c in kept for c in support):
            row = [-M[l, c] for c in range(n)] + [-E[l]]
            row[l] += 1
            out.append(_Candidate(tuple(row), True))

    pre = source_set.intersect(edge.passport)
    for rows, equality in ((pre.lin_eq, True), (pre.lin_ineq, False)):
        for row in rows:
            if all(row[c] == 0 or c in kept for c in range(n)):
                out.append(_Candidate(tuple(row), equality))

    # preimage through a deterministic invertible update
    if n_w == 0 and n_v == 0 and edge.label.milm is None and edge.label.constraints.is_universal:
        A = M[:, :n]
        inverse = _inverse(A)
        if inverse is not None:
            shift = -inverse.dot(E)
            image = pre.pullback(inverse, shift)
            out += [_Candidate(tuple(r), True) for r in image.lin_eq]
            out += [_Candidate(tuple(r), False) for r in image.lin_ineq]
    return out


def _inverse(A: np.ndarray) -> Optional[np.ndarray]:
    """Exact inverse by Gauss-Jordan elimination, None when singular"""
    n = A.shape[0]
    aug = np.hstack([np.array(A, dtype=object), qeye(n)])
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r, col] != 0), None)
        if pivot is None:
            return None
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] = aug[col] / aug[col, col]
        for r in range(n):
            if r != col and aug[r, col] != 0:
                aug[r] = aug[r] - aug[r, col] * aug[col]
    return aug[:, n:]


def _in_row_space(row: np.ndarray, basis: np.ndarray) -> bool:
    """Exact test of row ∈ span(basis rows)"""
    if not any(a != 0 for a in row):
        return True
    if basis.shape[0] == 0:
        return False
    m = np.vstack([basis, row.reshape(1, -1)]).astype(object)
    rank_before = _rank(m[:-1])
    return _rank(m) == rank_before


def _rank(m: np.ndarray) -> int:
    m = np.array(m, dtype=object)
    rows, cols = m.shape
    rank = 0
    for col in range(cols):
        pivot = next((r for r in range(rank, rows) if m[r, col] != 0), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(rank + 1, rows):
            if m[r, col] != 0:
                m[r] = m[r] - m[r, col] / m[rank, col] * m[rank]
        rank += 1
        if rank == rows:
            break
    return rank


class _EdgeCheck:
    """Implication tests for one edge given a source set"""

    def __init__(self, edge: Edge, source_set: SemialgebraicSet, n: int):
        self.n = n
        parts = _affine_parts(edge)
        self.supported = parts is not None
        if not self.supported:
            self.kept = set()
            return
        M, E, constraints, n_w, n_v = parts
        self.M, self.E = M, E
        self.kept = set(_kept_coordinates(M, E, n))
        xi = M.shape[1]
        self.xi = xi
        region = source_set.intersect(edge.passport).embed(xi).intersect(constraints)
        box = []
        for c in range(n, xi):
            for sign in (1, -1):
                row = [Fraction(0)] * (xi + 1)
                row[c], row[xi] = Fraction(-sign), Fraction(1)
                box.append(row)
        self.G = np.vstack([region.lin_ineq] + ([np.array(box, dtype=object)] if box else []))
        self.H = region.lin_eq
        self._empty: Optional[bool] = None

    def pulled(self, row: Row) -> np.ndarray:
        """c·[x₊; 1] as a row over [ξ; 1]"""
        c = np.array(row[:-1], dtype=object)
        out = np.concatenate([c.dot(self.M), [c.dot(self.E) + row[-1]]])
        return out

    def _lp(self, cost: np.ndarray):
        lp = LinearProgram(
            c=cost[:-1],
            A_eq=self.H[:, :-1] if self.H.shape[0] else qzeros((0, self.xi)),
            b_eq=-self.H[:, -1] if self.H.shape[0] else qzeros(0),
            A_ge=self.G[:, :-1] if self.G.shape[0] else qzeros((0, self.xi)),
            b_ge=-self.G[:, -1] if self.G.shape[0] else qzeros(0),
        )
        return solve_linear_program(lp, exact=True)

    def empty(self) -> bool:
        if self._empty is None:
            self._empty = self._lp(qzeros(self.xi + 1)).status == SolveStatus.INFEASIBLE
        return self._empty

    def implies(self, cand: _Candidate) -> bool:
        if not self.supported:
            return False
        p = self.pulled(cand.row)
        if cand.equality and _in_row_space(p, self.H):
            return True
        if not cand.equality and any(_same_direction(p, g) for g in self.G):
            return True
        if self.empty():
            return True
        low = self._lp(p)
        if not low.feasible or low.objective + p[-1] < 0:
            return False
        if not cand.equality:
            return True
        high = self._lp(-p)
        return high.feasible and -high.objective + p[-1] <= 0


def _same_direction(a: np.ndarray, b: np.ndarray) -> bool:
    """a = s·b for some s > 0"""
    ratio = None
    for x, y in zip(a, b):
        if (x == 0) != (y == 0):
            return False
        if x == 0:
            continue
        r = x / y
        if r <= 0 or (ratio is not None and r != ratio):
            return False
        ratio = r
    return ratio is not None


def _as_set(n: int, cands: List[_Candidate]) -> SemialgebraicSet:
    return SemialgebraicSet.from_rows(
        n,
        ineq=[c.row for c in cands if not c.equality],
        eq=[c.row for c in cands if c.equality],
    )


def _round(model: GraphModel) -> GraphModel:
    n = model.n
    pool: Dict[str, List[_Candidate]] = {node: [] for node in model.nodes}
    per_edge: Dict[Tuple[str, str, int], List[_Candidate]] = {}
    for edge in model.edges:
        if edge.target == model.start or edge.target == edge.source:
            continue
        found = []
        for cand in _candidates_from_edge(edge, model.invariant(edge.source), n):
            row = _normalize(cand.row, cand.equality)
            if row is not None:
                found.append(_Candidate(row, cand.equality))
        per_edge[edge.key] = found
        for cand in found:
            if cand not in pool[edge.target]:
                pool[edge.target].append(cand)

    # drop candidates some incoming edge fails to imply, until stable
    alive = {node: list(c) for node, c in pool.items()}
    changed = True
    passes = 0
    while changed:
        changed = False
        passes += 1
        for node in model.nodes:
            if node == model.start or not alive[node]:
                continue
            checks = [_EdgeCheck(e, _source_set(model, e.source, alive), n) for e in model.edges_to(node)]
            keep = [c for c in alive[node] if all(chk.implies(c) for chk in checks)]
            if len(keep) != len(alive[node]):
                alive[node] = keep
                changed = True
    logger.debug("candidate pruning settled after %d passes", passes)

    for node in model.nodes:
        if node == model.start:
            continue
        existing = model.invariant(node)
        fresh = [c for c in alive[node] if not _already(existing, c)]
        products = _branch_products(model, node, per_edge, alive)
        if not fresh and not products:
            continue
        extra = _as_set(n, fresh)
        if products:
            extra = extra.intersect(SemialgebraicSet.from_rows(n, quad_eq=products))
        logger.info("node %s gains %d linear and %d quadratic invariant constraints", node, len(fresh), len(products))
        model = model.with_invariant(node, extra)
    return model


def _source_set(model: GraphModel, node: str, alive: Dict[str, List[_Candidate]]) -> SemialgebraicSet:
    base = model.invariant(node)
    if node == model.start or not alive.get(node):
        return base
    return base.intersect(_as_set(model.n, alive[node]))


def _already(existing: SemialgebraicSet, cand: _Candidate) -> bool:
    rows = existing.lin_eq if cand.equality else existing.lin_ineq
    return any(_normalize(r, cand.equality) == cand.row for r in rows)


def _branch_products(model: GraphModel, node: str, per_edge, alive) -> List[np.ndarray]:
    """
    a(x)·b(x) = 0 when the two incoming edges each establish one equality
    the other does not
    """
    incoming = [e for e in model.edges_to(node) if e.source != node]
    if len(incoming) != 2 or any(e.source == e.target for e in model.edges_to(node)):
        return []
    n = model.n
    local = []
    for edge in incoming:
        check = _EdgeCheck(edge, _source_set(model, edge.source, alive), n)
        eqs = [c for c in per_edge.get(edge.key, []) if c.equality and c not in alive[node] and check.implies(c)]
        local.append(eqs)
    a, b = local
    if len(a) != 1 or len(b) != 1 or a[0] == b[0]:
        return []
    ra, rb = np.array(a[0].row, dtype=object), np.array(b[0].row, dtype=object)
    Q = (np.outer(ra, rb) + np.outer(rb, ra)) * Fraction(1, 2)
    return [Q]


def propagate_invariants(model: GraphModel, rounds: Optional[int] = None) -> GraphModel:
    """
    Strengthen node invariants for a bounded number of rounds

    Each round regenerates candidates from the sets established so far, so a
    second round can use preimages of constraints found in the first.
    """
    rounds = settings.propagation_rounds if rounds is None else rounds
    for r in range(rounds):
        before = {node: model.invariant(node).num_constraints() for node in model.nodes}
        model = _round(model)
        after = {node: model.invariant(node).num_constraints() for node in model.nodes}
        logger.info("invariant propagation round %d on %s: %d constraints added", r + 1, model.name, sum(after.values()) - sum(before.values()))
        if after == before:
            break
    return model
