"""
Convex programs whose feasible points are Lyapunov invariants

MILMs get S-procedure LMIs over x_e = [x; w; v; 1] (quadratic and linear
invariants, with optional initial-set and overflow blocks). Quasi-linear
graph models get one LMI per edge and per property over ξ̄ = [x; w; v; 1],
with the node invariant, passport and label constraints entering through
multipliers. Every assembled problem keeps what it needs to turn a solution
back into a certificate in ``problem.notes``.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.core.certificate import RatePlan
from app.core.conic import AffineMatrix, AffineScalar, ConicProblem, Variable, VariableKind
from app.core.graph import Edge, GraphModel
from app.core.milm import MILM
from app.core.rational import qeye, qvector, qzeros, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import AssemblyError, ModelError

logger = logging.getLogger(__name__)

METHODS = ("joint", "simplified", "per-coordinate")
LINEAR_MODES = ("sdp", "lp", "simple")


def _unit_row(size: int, index: int) -> np.ndarray:
    row = qzeros((1, size))
    row[0, index] = Fraction(1)
    return row


def _selector(size: int, coords: Sequence[int]) -> np.ndarray:
    out = qzeros((len(coords), size))
    for r, c in enumerate(coords):
        out[r, c] = Fraction(1)
    return out


def _gap() -> Fraction:
    return to_fraction(settings.strict_gap)


# ---------------------------------------------------------------------------
# S-procedure multipliers
# ---------------------------------------------------------------------------


@dataclass
class Region:
    """
    A set over ξ = [x; w; v] as seen by one LMI: the semialgebraic part plus
    the coordinates known to lie in [-1, 1] (boxed) or in {-1, 1} (binary)
    """

    set: SemialgebraicSet
    boxed: Tuple[int, ...] = ()
    binary: Tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.set.dim

    def signature(self) -> Tuple[int, ...]:
        s = self.set
        return (s.dim, s.lin_ineq.shape[0], s.lin_eq.shape[0], len(s.quad_ineq), len(s.quad_eq), len(self.boxed), len(self.binary))


@dataclass
class Multipliers:
    """
    Creates S-procedure multipliers, either fresh per LMI or shared between
    LMIs of the same shape
    """

    problem: ConicProblem
    shared: bool = False
    _cache: Dict[Tuple, Dict[str, Variable]] = field(default_factory=dict)

    def _variables(self, prefix: str, region: Region, tag: str) -> Dict[str, Variable]:
        key = (tag,) + region.signature()
        if self.shared and key in self._cache:
            return self._cache[key]
        if self.shared:
            prefix = f"shared{len(self._cache)}"
        s = region.set
        d = s.dim + 1
        p = self.problem
        out: Dict[str, Variable] = {}
        if region.boxed:
            out["D"] = p.add_variable(f"{prefix}.D", VariableKind.NONNEG_DIAG, len(region.boxed))
        if region.binary:
            out["Dv"] = p.add_variable(f"{prefix}.Dv", VariableKind.FREE_DIAG, len(region.binary))
        if s.lin_eq.shape[0]:
            out["Y"] = p.add_variable(f"{prefix}.Y", VariableKind.FREE, d, s.lin_eq.shape[0])
        if s.lin_ineq.shape[0]:
            z = p.add_variable(f"{prefix}.Z", VariableKind.FREE, 1, s.lin_ineq.shape[0])
            for k, idx in enumerate(z.indices()):
                p.add_inequality(f"{prefix}.Z[{k}]<=0", AffineScalar.variable(idx, -1))
            out["Z"] = z
        for k in range(len(s.quad_ineq)):
            out[f"eta{k}"] = p.add_variable(f"{prefix}.eta{k}", VariableKind.NONPOS_SCALAR)
        for k in range(len(s.quad_eq)):
            out[f"rho{k}"] = p.add_variable(f"{prefix}.rho{k}", VariableKind.SCALAR)
        if self.shared:
            self._cache[key] = out
        return out

    def term(self, prefix: str, region: Region, tag: str = "") -> AffineMatrix:
        """
        M(y) with ξ̄ᵀ M ξ̄ ≤ 0 for every ξ in the region

            M = Σ d_k(e_k e_kᵀ − KᵀK) + He(Y H) + He(Kᵀ Z G) + Σ η_s Q_s + Σ ρ_m R_m

        with D ⪰ 0 on boxed coordinates, a free diagonal on binary ones and
        Z, η ≤ 0.
        """
        s = region.set
        d = s.dim + 1
        K = _unit_row(d, d - 1)
        KK = K.T.dot(K)
        mats = self._variables(prefix, region, tag)
        total = AffineMatrix.zeros(d)
        for name, coords in (("D", region.boxed), ("Dv", region.binary)):
            if name in mats:
                var = mats[name]
                total = total + var.matrix().congruence(_selector(d, coords)) - var.trace().times_matrix(KK)
        if "Y" in mats:
            total = total + (mats["Y"].matrix() @ s.lin_eq).he()
        if "Z" in mats:
            total = total + (K.T @ (mats["Z"].matrix() @ s.lin_ineq)).he()
        for k, Q in enumerate(s.quad_ineq):
            total = total + mats[f"eta{k}"].scalar().times_matrix(Q)
        for k, R in enumerate(s.quad_eq):
            total = total + mats[f"rho{k}"].scalar().times_matrix(R)
        return total


def _strict(expr: AffineMatrix, strict: bool) -> AffineMatrix:
    """expr ⪯ 0, tightened to expr ⪯ −gap·I"""
    if not strict:
        return expr
    return expr + qeye(expr.shape[0]) * _gap()


# ---------------------------------------------------------------------------
# MILMs
# ---------------------------------------------------------------------------


def _milm_region(m: MILM, H: np.ndarray) -> Region:
    xi = m.n + m.n_w + m.n_v
    return Region(
        SemialgebraicSet(xi, lin_eq=H),
        boxed=tuple(range(m.n + m.n_w)),
        binary=tuple(range(m.n + m.n_w, xi)),
    )


def _check_rates(theta, mu) -> Tuple[Fraction, Fraction]:
    theta, mu = to_fraction(theta), to_fraction(mu)
    if theta < 0:
        raise AssemblyError(f"θ must be nonnegative, got {theta}")
    return theta, mu


def assemble_milm_quadratic(m: MILM, theta, mu, name: Optional[str] = None, strict: bool = False) -> ConicProblem:
    """
    V(x) = [x; 1]ᵀ P [x; 1] with V(x₊) − θ V(x) ≤ −μ on every MILM transition:

        L₁ᵀPL₁ − θL₂ᵀPL₂ ⪯ He(YH) + L₃ᵀD_{xw}L₃ + L₄ᵀD_vL₄ − (λ + μ)L₅ᵀL₅
    """
    theta, mu = _check_rates(theta, mu)
    problem = ConicProblem(name or "milm-quadratic")
    L1, L2, L3, L4, L5 = m.selectors()
    P = problem.add_variable("P", VariableKind.SYMMETRIC, m.n + 1)
    mult = Multipliers(problem)
    lhs = P.matrix().congruence(L1) - P.matrix().congruence(L2) * theta
    rhs = mult.term("inv", _milm_region(m, m.H))
    problem.add_nsd("invariance", _strict(lhs - rhs + L5.T.dot(L5) * mu, strict))
    problem.notes.update(
        kind="milm-quadratic",
        nodes={"milm": "P"},
        rates=RatePlan.uniform(theta, mu),
        variables=m.variables,
        strict=strict,
    )
    logger.debug("assembled %s: %d scalars, LMI %dx%d", problem.name, problem.n_scalars, m.n_e, m.n_e)
    return problem


def _alpha(alpha, n: int) -> Tuple[Fraction, ...]:
    if alpha is None:
        return tuple(Fraction(1) for _ in range(n))
    if np.isscalar(alpha):
        alpha = [alpha] * n
    out = tuple(to_fraction(a) for a in alpha)
    if len(out) != n:
        raise ModelError(f"{len(out)} overflow limits for {n} variables", field="alpha")
    return out


def overflow_matrix(alpha: Sequence[Fraction], rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """Λ = diag(α⁻², −1), restricted to the listed coordinates when given"""
    n = len(alpha)
    Lam = qzeros((n + 1, n + 1))
    for k in range(n) if rows is None else rows:
        Lam[k, k] = 1 / (alpha[k] * alpha[k])
    Lam[n, n] = Fraction(-1)
    return Lam


def assemble_milm_overflow(
    m: MILM, theta, mu, alpha=None, name: Optional[str] = None, strict: bool = False
) -> ConicProblem:
    """
    Invariance plus V ≤ 0 on the initial set and V(x) ≥ ‖α⁻¹x₊‖² − 1 on every
    transition; feasibility rules out overflow of ‖α⁻¹x‖∞ > 1
    """
    alpha = _alpha(alpha, m.n)
    if any(a <= 0 or a > 1 for a in alpha):
        raise ModelError("overflow limits must satisfy 0 < α ≤ 1 on a normalized MILM", field="alpha")
    problem = assemble_milm_quadratic(m, theta, mu, name or "milm-overflow", strict)
    P = problem.variable("P")
    L1, L2, _, _, L5 = m.selectors()
    mult = Multipliers(problem)

    if m.X0 is not None:
        for k, x0 in enumerate(m.X0):
            col = np.array([[v] for v in x0] + [[Fraction(1)]], dtype=object)
            problem.add_inequality(f"init[{k}]", -P.matrix().congruence(col).entry(0, 0))
    else:
        init = P.matrix().congruence(L2) - mult.term("init", _milm_region(m, m.H0))
        problem.add_nsd("init", init)

    Lam = overflow_matrix(alpha)
    bound = AffineMatrix.constant(L1.T.dot(Lam).dot(L1)) - P.matrix().congruence(L2) - mult.term("ovf", _milm_region(m, m.H))
    problem.add_nsd("overflow", _strict(bound, strict))
    problem.notes.update(kind="milm-overflow", alpha=alpha)
    return problem


def _linear_lmi(L1, L2, L5, K: AffineMatrix, theta) -> AffineMatrix:
    """½ He((L₁ − θL₂)ᵀ K L₅), the quadratic form of V(x₊) − θV(x)"""
    return ((L1.T @ K @ L5) - (L2.T @ K @ L5) * theta).he() * Fraction(1, 2)


def assemble_milm_linear(
    m: MILM,
    theta,
    mu,
    mode: str = "sdp",
    fixed_K: Optional[Sequence] = None,
    binaries: str = "relax",
    name: Optional[str] = None,
) -> ConicProblem:
    """
    Linear invariants V(x) = Kᵀ[x; 1]

    ``sdp`` uses the S-procedure LMI with a strict gap, ``lp`` the Farkas
    form over the box (binaries relaxed to [-1, 1] or enumerated vertex by
    vertex with per-vertex multipliers and a shared K), ``simple`` requires
    V(x₊) − θV(x) + μ to vanish on {H x_e = 0}. With ``fixed_K`` the function
    is given and θ ≥ 0 becomes the decision.
    """
    if mode not in LINEAR_MODES:
        raise AssemblyError(f"unknown linear-invariant mode {mode!r}; expected one of {LINEAR_MODES}")
    if binaries not in ("relax", "enumerate"):
        raise AssemblyError(f"unknown binary policy {binaries!r}")
    mu = to_fraction(mu)
    problem = ConicProblem(name or f"milm-linear-{mode}")
    L1, L2, L3, L4, L5 = m.selectors()
    n, ne = m.n, m.n_e

    if fixed_K is None:
        theta, _ = _check_rates(theta, mu)
        Kvar = problem.add_variable("K", VariableKind.FREE, n + 1, 1)
        K = Kvar.matrix()
        theta_expr = None
    else:
        Kc = qvector(fixed_K)
        if len(Kc) != n + 1:
            raise ModelError(f"K needs {n + 1} entries, got {len(Kc)}", field="K")
        K = AffineMatrix.constant(Kc.reshape(n + 1, 1))
        theta_expr = problem.add_variable("theta", VariableKind.NONNEG_SCALAR).scalar()

    # coefficient row a(y) of V(x₊) − θV(x) + μ over x_e
    def coefficients() -> List[AffineScalar]:
        row1 = L1.T @ K  # n_e × 1
        row2 = L2.T @ K
        out = []
        for c in range(ne):
            a = row1.entry(c, 0)
            b = row2.entry(c, 0)
            if theta_expr is None:
                a = a - b * theta
            else:
                a = a - theta_expr * b.const
            out.append(a)
        out[ne - 1] = out[ne - 1] + mu
        return out

    if mode == "sdp":
        if theta_expr is None:
            lhs = _linear_lmi(L1, L2, L5, K, theta)
        else:
            fixed = ((L1.T @ K @ L5)).he() * Fraction(1, 2)
            moving = ((L2.T @ K @ L5)).he() * Fraction(1, 2)
            lhs = fixed - theta_expr.times_matrix(moving.const)
        rhs = Multipliers(problem).term("inv", _milm_region(m, m.H))
        problem.add_nsd("invariance", _strict(lhs - rhs + L5.T.dot(L5) * mu, True))
    else:
        a = coefficients()
        if mode == "simple":
            Y = problem.add_variable("Y", VariableKind.FREE, m.n_H, 1) if m.n_H else None
            for c in range(ne):
                rhs = AffineScalar(0)
                if Y is not None:
                    for r in range(m.n_H):
                        rhs = rhs + Y.entry(r, 0) * m.H[r, c]
                problem.add_equality(f"match[{c}]", a[c] - rhs)
        else:
            vertices: List[Optional[Tuple[int, ...]]] = [None]
            if binaries == "enumerate" and m.n_v:
                if m.n_v > settings.vertex_enumeration_cap:
                    raise AssemblyError(
                        f"vertex enumeration over {m.n_v} binaries exceeds the cap of {settings.vertex_enumeration_cap}"
                    )
                vertices = list(product((-1, 1), repeat=m.n_v))
            for vi, vertex in enumerate(vertices):
                _farkas_block(problem, m, a, vertex, f"v{vi}")
    problem.notes.update(
        kind="milm-linear",
        mode=mode,
        binaries=binaries,
        nodes={"milm": "K"} if fixed_K is None else {},
        fixed_K=None if fixed_K is None else tuple(qvector(fixed_K)),
        rates=RatePlan.uniform(theta if fixed_K is None else 1, mu),
        variables=m.variables,
    )
    return problem


def _farkas_block(problem: ConicProblem, m: MILM, a: List[AffineScalar], vertex, tag: str) -> None:
    """
    a(y)ᵀ x_e ≤ 0 on {H x_e = 0, box} through LP duality:

        a = Hᵀ Y + Σ_k (D̄_k − D̲_k) e_k + (s − Σ_k (D̄_k + D̲_k)) e_last,  D̄, D̲ ≥ 0, s ≤ 0

    A binary vertex folds the v columns into the constant.
    """
    n_box = m.n + m.n_w + (m.n_v if vertex is None else 0)
    ne = m.n_e
    one = ne - 1
    H = m.H
    a = list(a)
    if vertex is not None:
        H = H.copy()
        base = m.n + m.n_w
        for k, v in enumerate(vertex):
            a[one] = a[one] + a[base + k] * v
            a[base + k] = AffineScalar(0)
            H[:, one] = H[:, one] + H[:, base + k] * v
            H[:, base + k] = Fraction(0)
    Y = problem.add_variable(f"{tag}.Y", VariableKind.FREE, m.n_H, 1) if m.n_H else None
    hi = problem.add_variable(f"{tag}.Dhi", VariableKind.NONNEG_DIAG, n_box)
    lo = problem.add_variable(f"{tag}.Dlo", VariableKind.NONNEG_DIAG, n_box)
    s = problem.add_variable(f"{tag}.s", VariableKind.NONPOS_SCALAR)
    for c in range(ne):
        rhs = AffineScalar(0)
        if Y is not None:
            for r in range(m.n_H):
                rhs = rhs + Y.entry(r, 0) * H[r, c]
        if c < n_box:
            rhs = rhs + hi.entry(c, c) - lo.entry(c, c)
        elif c == one:
            rhs = rhs + s.scalar() - hi.trace() - lo.trace()
        problem.add_equality(f"{tag}.match[{c}]", a[c] - rhs)


# ---------------------------------------------------------------------------
# graph models
# ---------------------------------------------------------------------------


@dataclass
class LiftedEdge:
    """An edge seen over ξ̄ = [x; w; v; 1]: x̄₊ = F ξ̄, x̄ = L ξ̄ on the region"""

    edge: Edge
    F: np.ndarray
    L: np.ndarray
    region: Region


def lift_edge(model: GraphModel, edge: Edge, products: bool = False, source_set: Optional[SemialgebraicSet] = None) -> LiftedEdge:
    label = edge.label
    n = model.n
    src = model.invariant(edge.source) if source_set is None else source_set
    if label.milm is not None:
        m = label.milm
        d = m.n + m.n_w + m.n_v
        F = np.vstack([m.F, _unit_row(d + 1, d)])
        region_set = src.intersect(edge.passport).embed(d).intersect(SemialgebraicSet(d, lin_eq=m.H))
        boxed = tuple(range(m.n + m.n_w))
        binary = tuple(range(m.n + m.n_w, d))
    else:
        if label.nonlinear is not None:
            raise AssemblyError(f"edge {edge.key} has a nonlinear transition label; use the SOS assembler")
        d = label.xi_dim
        F = qzeros((n + 1, d + 1))
        F[:n, :d] = label.stacked()
        F[:n, d] = label.E
        F[n, d] = Fraction(1)
        region_set = src.embed(d).intersect(edge.guard())
        boxed = tuple(range(n, n + label.n_w))
        binary = tuple(range(n + label.n_w, d))
    L = qzeros((n + 1, d + 1))
    L[:n, :n] = qeye(n)
    L[n, d] = Fraction(1)
    if products:
        region_set = region_set.with_products()
    return LiftedEdge(edge, F, L, Region(region_set, boxed, binary))


def node_region(model: GraphModel, node: str, products: bool = False, extra: Optional[SemialgebraicSet] = None) -> Region:
    s = model.invariant(node)
    if extra is not None:
        s = s.intersect(extra)
    return Region(s.with_products() if products else s)


def assembled_edges(model: GraphModel) -> List[Edge]:
    """Edges carrying Lyapunov conditions: everything except the terminal self-loop"""
    return [e for e in model.edges if e.source != model.terminal]


def assemble_graph_quadratic(
    g: GraphModel,
    rates: RatePlan,
    method: str = "joint",
    scale_z: bool = False,
    shared: Optional[bool] = None,
    products: Optional[bool] = None,
    alpha=None,
    name: Optional[str] = None,
    strict: bool = False,
) -> ConicProblem:
    """
    One quadratic σᵢ(x) = x̄ᵀPᵢx̄ per node with

        σⱼ(x₊) − θσᵢ(x) ≤ −μ                     on every edge
        ‖α⁻¹x₊‖² − 1 ≤ σᵢ(x)                     on every edge     (joint)
        α_k⁻² x₊_k² − 1 ≤ σᵢ(x) for each k       on every edge     (per-coordinate)
        x̄ᵀΛx̄ ≤ σᵢ(x)                             at every node     (simplified)
        σᵢ(x) ≥ gap                               on each unsafe set

    Edges out of the start node use θ = 0 and σ_start ≡ 0, so the first
    condition also places the images of the initial set in {σⱼ ≤ 0}.
    """
    if method not in METHODS:
        raise AssemblyError(f"unknown method {method!r}; expected one of {METHODS}")
    shared = settings.shared_multipliers if shared is None else shared
    products = settings.constraint_products if products is None else products
    if g.edges_to(g.start):
        raise AssemblyError(f"the start node {g.start!r} has incoming edges")
    alpha = g.overflow if alpha is None else _alpha(alpha, g.n)
    n = g.n
    problem = ConicProblem(name or f"{g.name}-quadratic-{method}")
    mult = Multipliers(problem, shared)
    K = _unit_row(n + 1, n)

    nodes = [v for v in g.nodes if v != g.start]
    P: Dict[str, Variable] = {v: problem.add_variable(f"P[{v}]", VariableKind.SYMMETRIC, n + 1) for v in nodes}
    z = None
    if scale_z:
        z = problem.add_variable("z", VariableKind.NONNEG_SCALAR)
        problem.add_inequality("z>0", z.scalar() - _gap())

    def sigma(node: str, M: np.ndarray) -> AffineMatrix:
        if node == g.start:
            return AffineMatrix.zeros(M.shape[1])
        return P[node].matrix().congruence(M)

    def scaled(Lam: np.ndarray) -> AffineMatrix:
        return AffineMatrix.constant(Lam) if z is None else z.scalar().times_matrix(Lam)

    lifted = [lift_edge(g, e, products) for e in assembled_edges(g)]
    for le in lifted:
        e = le.edge
        theta, mu = rates.rate(e.key)
        if e.source == g.start:
            theta = Fraction(0)
        d = le.F.shape[1]
        KK = _unit_row(d, d - 1).T.dot(_unit_row(d, d - 1))
        tag = f"{e.source}->{e.target}#{e.k}"
        lhs = sigma(e.target, le.F) - sigma(e.source, le.L) * theta + KK * mu
        problem.add_nsd(f"decrease {tag}", _strict(lhs - mult.term(f"m[{tag}]", le.region, "decrease"), strict))

        if alpha is None or method == "simplified" or e.target == g.start:
            continue
        rows = [None] if method == "joint" else [[k] for k in range(n)]
        for r in rows:
            Lam = overflow_matrix(alpha, r)
            suffix = "" if r is None else f"[{r[0]}]"
            expr = scaled(le.F.T.dot(Lam).dot(le.F)) - sigma(e.source, le.L)
            problem.add_nsd(
                f"overflow {tag}{suffix}",
                _strict(expr - mult.term(f"o[{tag}]{suffix}", le.region, f"overflow{suffix}"), strict),
            )

    if alpha is not None and method == "simplified":
        Lam = overflow_matrix(alpha)
        for v in nodes:
            problem.add_nsd(f"overflow {v}", _strict(scaled(Lam) - P[v].matrix(), strict))

    for v, sets in g.unsafe.items():
        if v == g.start:
            continue
        for k, bad in enumerate(sets):
            region = node_region(g, v, products, bad)
            expr = K.T.dot(K) * _gap() - P[v].matrix() - mult.term(f"u[{v}][{k}]", region, "unsafe")
            problem.add_nsd(f"unsafe {v}[{k}]", expr)

    problem.notes.update(
        kind="graph-quadratic",
        method=method,
        nodes={v: P[v].name for v in nodes},
        rates=rates,
        alpha=alpha,
        scale_z=scale_z,
        variables=g.variables,
        products=products,
        shared=shared,
        strict=strict,
    )
    logger.info(
        "assembled %s: %d scalars, %d LMI blocks (max %d), %d linear rows",
        problem.name, problem.n_scalars, len(problem.lmis), max(problem.block_sizes(), default=0), len(problem.linear),
    )
    return problem
