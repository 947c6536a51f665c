"""
Sum-of-squares programs for polynomial graph models

Every node gets a polynomial σᵢ of bounded degree. Each condition "p ≥ 0 on
a semialgebraic set" becomes

    p − Σ τ_p f_p − Σ τ_pq f_p f_q − Σ ρ_l h_l = z(ξ)ᵀ Q z(ξ),   Q ⪰ 0, τ SOS

with exact monomial matching. Residuals of degree one drop to Gram blocks of
size one, which keeps linear-invariant searches inside the exact LP solver.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import sympy

from app.config import settings
from app.core.certificate import RatePlan
from app.core.conic import AffineScalar, ConicProblem
from app.core.graph import Edge, GraphModel
from app.core.polynomials import (
    AffinePoly,
    Exponent,
    candidate_poly,
    gram_poly,
    make_symbols,
    match_coefficients,
    monomial_images,
    quadratic_form_terms,
    total_degree,
)
from app.core.rational import to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import AssemblyError

logger = logging.getLogger(__name__)

Terms = Dict[Exponent, Fraction]


def set_polynomials(s: SemialgebraicSet) -> Tuple[List[Terms], List[Terms]]:
    """(inequalities f ≥ 0, equalities h = 0) of a set as coefficient dictionaries"""
    d = s.dim

    def row_terms(row) -> Terms:
        out: Terms = {}
        for c in range(d):
            if row[c] != 0:
                e = [0] * d
                e[c] = 1
                out[tuple(e)] = to_fraction(row[c])
        if row[d] != 0:
            out[(0,) * d] = to_fraction(row[d])
        return out

    ineq = [row_terms(r) for r in s.lin_ineq] + [quadratic_form_terms(Q) for Q in s.quad_ineq]
    eq = [row_terms(r) for r in s.lin_eq] + [quadratic_form_terms(R) for R in s.quad_eq]
    return [t for t in ineq if t], [t for t in eq if t]


def _degree(terms: Terms) -> int:
    return max((total_degree(e) for e in terms), default=0)


def _times(a: Terms, b: Terms) -> Terms:
    out: Terms = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, Fraction(0)) + ca * cb
    return {e: c for e, c in out.items() if c != 0}


def _unit(d: int, k: int, power: int = 1) -> Exponent:
    e = [0] * d
    e[k] = power
    return tuple(e)


@dataclass
class SosRegion:
    """Constraint polynomials over ξ, plus the box and binary coordinates"""

    dim: int
    ineq: List[Terms]
    eq: List[Terms]

    @classmethod
    def build(cls, s: SemialgebraicSet, boxed: Sequence[int] = (), binary: Sequence[int] = ()) -> "SosRegion":
        ineq, eq = set_polynomials(s)
        zero = (0,) * s.dim
        for k in tuple(boxed) + tuple(binary):
            ineq.append({zero: Fraction(1), _unit(s.dim, k): Fraction(-1)})
            ineq.append({zero: Fraction(1), _unit(s.dim, k): Fraction(1)})
        for k in binary:
            eq.append({zero: Fraction(-1), _unit(s.dim, k, 2): Fraction(1)})
        return cls(s.dim, ineq, eq)


class SosBuilder:
    """Adds "target ≥ 0 on region" constraints to a problem"""

    def __init__(self, problem: ConicProblem, products: bool, multiplier_degree: int):
        self.problem = problem
        self.products = products
        self.multiplier_degree = multiplier_degree
        self.count = 0

    def nonnegative(self, name: str, target: AffinePoly, region: SosRegion) -> None:
        deg = target.degree()
        half = 0 if deg <= 1 else (deg + 1) // 2
        top = max(1, 2 * half)
        self.count += 1
        rest = target
        ineq = list(region.ineq)
        if self.products:
            base = [f for f in region.ineq if _degree(f) == 1]
            ineq += [_times(base[a], base[b]) for a in range(len(base)) for b in range(a + 1, len(base))]
        for k, f in enumerate(ineq):
            room = min(self.multiplier_degree, top - _degree(f))
            if room < 0:
                continue
            tau, _, _ = gram_poly(self.problem, f"{name}.tau{k}", region.dim, room // 2)
            rest = rest - tau.times_terms(f)
        for k, h in enumerate(region.eq):
            room = min(self.multiplier_degree, top - _degree(h))
            if room < 0:
                continue
            rho, _, _ = candidate_poly(self.problem, f"{name}.rho{k}", region.dim, room)
            rest = rest - rho.times_terms(h)
        gram, var, _ = gram_poly(self.problem, f"{name}.Q", region.dim, half)
        match_coefficients(self.problem, name, rest, gram, var.name)


def _embed(poly: AffinePoly, total: int) -> AffinePoly:
    pad = (0,) * (total - poly.nvars)
    return AffinePoly(total, {e + pad: c for e, c in poly.coeffs.items()})


def _compose(poly: AffinePoly, basis: List[Exponent], images: List[Terms], total: int) -> AffinePoly:
    """σ(T(ξ)) for σ = Σ_k c_k z_k(x) with z_k(T(ξ)) given by ``images``"""
    out: Dict[Exponent, AffineScalar] = {}
    for e, img in zip(basis, images):
        c = poly.coeffs.get(e)
        if c is None:
            continue
        for ex, a in img.items():
            term = c * a
            out[ex] = out[ex] + term if ex in out else term
    return AffinePoly(total, out)


def edge_images(edge: Edge) -> Tuple[int, List[sympy.Expr], Tuple[sympy.Symbol, ...], SemialgebraicSet, Tuple[int, ...], Tuple[int, ...]]:
    """(dim ξ, images of x₊, generators, label constraints, boxed, binary) of an edge"""
    label = edge.label
    if label.milm is not None:
        m = label.milm
        d = m.n + m.n_w + m.n_v
        gens = make_symbols([f"xi{i}" for i in range(d)])
        images = [
            sum((sympy.Rational(to_fraction(m.F[r, c]).numerator, to_fraction(m.F[r, c]).denominator) * gens[c] for c in range(d)), sympy.Integer(0))
            + sympy.Rational(to_fraction(m.F[r, d]).numerator, to_fraction(m.F[r, d]).denominator)
            for r in range(m.n)
        ]
        return d, images, gens, SemialgebraicSet(d, lin_eq=m.H), tuple(range(m.n + m.n_w)), tuple(range(m.n + m.n_w, d))
    d = label.xi_dim
    gens = make_symbols([f"xi{i}" for i in range(d)])
    n = label.n
    return d, label.images(gens), gens, label.constraints, tuple(range(n, n + label.n_w)), tuple(range(n + label.n_w, d))


def _degrees(g: GraphModel, degrees: Union[int, Mapping[str, int], None]) -> Dict[str, int]:
    if degrees is None:
        degrees = 2
    if isinstance(degrees, int):
        out = {v: degrees for v in g.nodes}
    else:
        out = {v: int(degrees.get(v, max(degrees.values(), default=2))) for v in g.nodes}
    cap = settings.sos_degree_cap
    for v, d in out.items():
        if d < 0 or d > cap:
            raise AssemblyError(f"degree {d} for node {v} is outside [0, {cap}]")
    return out


@dataclass
class Condition:
    """One "target ≥ 0 on region" requirement of a graph certificate"""

    name: str
    target: AffinePoly
    region: SosRegion


def graph_conditions(g: GraphModel, rates: RatePlan, sigma: Mapping[str, AffinePoly], bases: Mapping[str, List[Exponent]]) -> Iterator[Condition]:
    """
    With σᵢ given (possibly decision-dependent), on every edge i → j

        −σⱼ(T(x, w)) + θσᵢ(x) − μ ≥ 0       on Xᵢ ∩ Π ∩ label constraints
        −σ_start ≥ 0                          on the initial set
        σᵢ − gap ≥ 0                          on Xᵢ ∩ each unsafe set of i
        σᵢ − (x_k²/α_k² − 1) ≥ 0              on Xᵢ, per coordinate, when α is set
    """
    n = g.n
    gap = to_fraction(settings.strict_gap)
    for e in g.edges:
        if e.source == g.terminal:
            continue
        theta, mu = rates.rate(e.key)
        d, images, gens, constraints, boxed, binary = edge_images(e)
        region_set = g.invariant(e.source).intersect(e.passport).embed(d).intersect(constraints)
        target_basis = bases[e.target]
        images_j = monomial_images(target_basis, images, gens)
        target = _compose(sigma[e.target], target_basis, images_j, d).scale(-1)
        target = target + _embed(sigma[e.source], d).scale(theta)
        yield Condition(f"edge[{e.source}->{e.target}#{e.k}]", target.add_constant(-mu), SosRegion.build(region_set, boxed, binary))

    yield Condition("init", sigma[g.start].scale(-1), SosRegion.build(g.invariant(g.start)))

    for v, sets in g.unsafe.items():
        for k, bad in enumerate(sets):
            yield Condition(f"unsafe[{v}][{k}]", sigma[v].add_constant(-gap), SosRegion.build(g.invariant(v).intersect(bad)))

    if g.overflow is not None:
        zero = (0,) * n
        for v in g.nodes:
            if v == g.start:
                continue
            region = SosRegion.build(g.invariant(v))
            for k, a in enumerate(g.overflow):
                bound = AffinePoly.constant(n, {_unit(n, k, 2): 1 / (a * a), zero: Fraction(-1)})
                yield Condition(f"overflow[{v}][{k}]", sigma[v] - bound, region)


def fixed_sigma(n: int, terms: Mapping[Exponent, object]) -> Tuple[AffinePoly, List[Exponent]]:
    terms = {tuple(e): to_fraction(c) for e, c in terms.items()}
    return AffinePoly.constant(n, terms), sorted(terms, key=lambda e: (total_degree(e), e))


def assemble_graph_sos(
    g: GraphModel,
    rates: RatePlan,
    degrees: Union[int, Mapping[str, int], None] = None,
    multiplier_degree: Optional[int] = None,
    products: Optional[bool] = None,
    fixed: Optional[Mapping[str, Terms]] = None,
    min_degree: int = 0,
    name: Optional[str] = None,
) -> ConicProblem:
    """
    σᵢ of total degree ≤ d(i) satisfying every condition of
    ``graph_conditions`` as an SOS program; ``fixed`` pins some σᵢ to given
    polynomials.
    """
    products = settings.constraint_products if products is None else products
    multiplier_degree = settings.sos_multiplier_degree_cap if multiplier_degree is None else multiplier_degree
    degs = _degrees(g, degrees)
    fixed = dict(fixed or {})
    n = g.n
    problem = ConicProblem(name or f"{g.name}-sos")
    builder = SosBuilder(problem, products, multiplier_degree)

    sigma: Dict[str, AffinePoly] = {}
    bases: Dict[str, List[Exponent]] = {}
    names: Dict[str, str] = {}
    for v in g.nodes:
        if v in fixed:
            sigma[v], bases[v] = fixed_sigma(n, fixed[v])
            continue
        poly, var, basis = candidate_poly(problem, f"sigma[{v}]", n, degs[v], min_degree)
        sigma[v], bases[v], names[v] = poly, basis, var.name

    for cond in graph_conditions(g, rates, sigma, bases):
        builder.nonnegative(cond.name, cond.target, cond.region)

    problem.notes.update(
        kind="graph-sos",
        nodes=names,
        bases={v: bases[v] for v in names},
        fixed={v: dict(fixed[v]) for v in fixed},
        rates=rates,
        variables=g.variables,
        degrees=degs,
        multiplier_degree=multiplier_degree,
        min_degree=min_degree,
        products=products,
    )
    logger.info(
        "assembled %s: %d scalars, %d SOS constraints, %d Gram blocks (max %d), linear=%s",
        problem.name, problem.n_scalars, builder.count, len(problem.lmis), max(problem.block_sizes(), default=0), problem.is_linear,
    )
    return problem


def sigma_terms(problem: ConicProblem, y) -> Dict[str, Terms]:
    """Per-node σᵢ coefficient dictionaries at a solution y"""
    out: Dict[str, Terms] = {}
    for v, terms in problem.notes.get("fixed", {}).items():
        out[v] = {tuple(e): to_fraction(c) for e, c in terms.items()}
    for v, var_name in problem.notes["nodes"].items():
        var = problem.variable(var_name)
        values = var.unpack(y)[:, 0]
        out[v] = {e: to_fraction(c) for e, c in zip(problem.notes["bases"][v], values) if c != 0}
    return out
