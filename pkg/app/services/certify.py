"""
From solver output to verdicts

Floating-point solutions are rounded to rationals and re-checked exactly
against a freshly assembled problem; the checker never calls a solver.
Unreachability, overflow and termination verdicts are then derived from
validated certificates using conservative sup / inf bounds.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import scipy.linalg
import sympy
from sympy.calculus.util import minimum

from app.config import settings
from app.core.certificate import MILM_EDGE, MILM_NODE, Certificate, CertificateKind, RatePlan, Verdict, VerdictStatus
from app.core.conic import ConicProblem, SolveResult, SolveStatus
from app.core.graph import GraphModel, StateVec, TraceStatus
from app.core.milm import MILM
from app.core.polynomials import Exponent, format_terms, parse_polynomial, total_degree
from app.core.rational import format_fraction, is_psd_exact, qzeros, rationalize, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import AssemblyError, CertificateError, ModelError
from app.services.lp_solver import minimize_over_polytope, solve_lp
from app.services.reduction import cycle_nodes, enumerate_simple_cycles
from app.services.relaxation import (
    assemble_graph_quadratic,
    assemble_milm_linear,
    assemble_milm_overflow,
    assemble_milm_quadratic,
    assembled_edges,
)
from app.services.sdp_solver import solve_sdp
from app.services.simulator import sample_initial_states, simulate_many
from app.services.sos import SosRegion, assemble_graph_sos, fixed_sigma, graph_conditions, set_polynomials, sigma_terms

logger = logging.getLogger(__name__)

Model = Union[GraphModel, MILM]
Terms = Dict[Exponent, Fraction]

SPECIFICATIONS = ("assert-in", "assert-not-in", "div-by-zero", "sqrt", "log", "dead-code", "out-of-bounds")

_OPTIONS = {
    "milm-quadratic": ("strict",),
    "milm-overflow": ("alpha", "strict"),
    "milm-linear": ("mode", "fixed_K", "binaries"),
    "graph-quadratic": ("method", "scale_z", "shared", "products", "alpha", "strict"),
    "graph-sos": ("degrees", "multiplier_degree", "products", "fixed", "min_degree"),
}


# ---------------------------------------------------------------------------
# rational intervals and conservative extrema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    """Closed rational interval; None marks an infinite end"""

    lo: Optional[Fraction]
    hi: Optional[Fraction]

    @property
    def bounded(self) -> bool:
        return self.lo is not None and self.hi is not None

    @property
    def is_zero(self) -> bool:
        return self.lo == 0 and self.hi == 0

    def __add__(self, other: "Interval") -> "Interval":
        lo = None if self.lo is None or other.lo is None else self.lo + other.lo
        hi = None if self.hi is None or other.hi is None else self.hi + other.hi
        return Interval(lo, hi)

    def scale(self, c: Fraction) -> "Interval":
        if c == 0:
            return Interval(Fraction(0), Fraction(0))
        lo = None if self.lo is None else self.lo * c
        hi = None if self.hi is None else self.hi * c
        return Interval(lo, hi) if c > 0 else Interval(hi, lo)

    def __mul__(self, other: "Interval") -> "Interval":
        if self.is_zero or other.is_zero:
            return Interval(Fraction(0), Fraction(0))
        if not (self.bounded and other.bounded):
            return Interval(None, None)
        products = [a * b for a in (self.lo, self.hi) for b in (other.lo, other.hi)]
        return Interval(min(products), max(products))

    def power(self, e: int) -> "Interval":
        if e == 0:
            return Interval(Fraction(1), Fraction(1))
        if not self.bounded:
            return Interval(None, None)
        a, b = self.lo ** e, self.hi ** e
        if e % 2 or self.lo >= 0:
            return Interval(a, b)
        if self.hi <= 0:
            return Interval(b, a)
        return Interval(Fraction(0), max(a, b))


def interval_bounds(terms: Mapping[Exponent, Fraction], box: Sequence[Interval]) -> Interval:
    total = Interval(Fraction(0), Fraction(0))
    for e, c in terms.items():
        mono = Interval(Fraction(1), Fraction(1))
        for k, p in enumerate(e):
            if p:
                mono = mono * box[k].power(p)
        total = total + mono.scale(c)
    return total


@dataclass
class PolyRegion:
    """Constraints f ≥ 0 and h = 0 as coefficient dictionaries, or a finite point list"""

    dim: int
    ineq: List[Terms] = field(default_factory=list)
    eq: List[Terms] = field(default_factory=list)
    points: Optional[List[Tuple[Fraction, ...]]] = None

    @classmethod
    def of(cls, s: SemialgebraicSet) -> "PolyRegion":
        ineq, eq = set_polynomials(s)
        return cls(s.dim, ineq, eq)

    @classmethod
    def from_sos(cls, region: SosRegion) -> "PolyRegion":
        return cls(region.dim, list(region.ineq), list(region.eq))

    def polytope(self) -> Tuple[np.ndarray, List[Fraction]]:
        """The degree-one constraints as S x ≤ s (a superset of the region)"""
        rows, rhs = [], []

        def add(terms: Terms, sign: int):
            row = qzeros(self.dim)
            const = Fraction(0)
            for e, c in terms.items():
                if total_degree(e) == 0:
                    const += c
                else:
                    row[e.index(1)] = c
            rows.append(row * (-sign))
            rhs.append(const * sign)

        for f in self.ineq:
            if _degree(f) <= 1:
                add(f, 1)
        for h in self.eq:
            if _degree(h) <= 1:
                add(h, 1)
                add(h, -1)
        S = np.vstack(rows) if rows else qzeros((0, self.dim))
        return S, rhs


@dataclass
class Extremum:
    value: Optional[Fraction]  # None: unbounded in the requested direction
    empty: bool = False
    method: str = ""


def _degree(terms: Mapping[Exponent, Fraction]) -> int:
    return max((total_degree(e) for e, c in terms.items() if c != 0), default=0)


def _lp_min(cost: Sequence[Fraction], offset: Fraction, S: np.ndarray, s: Sequence[Fraction]) -> Extremum:
    if S.shape[0] == 0:
        if any(c != 0 for c in cost):
            return Extremum(None, method="lp")
        return Extremum(offset, method="lp")
    result = minimize_over_polytope(cost, offset, S, s, exact=True)
    if result.status == SolveStatus.INFEASIBLE:
        return Extremum(None, empty=True, method="lp")
    if not result.feasible:
        return Extremum(None, method="lp")
    return Extremum(to_fraction(result.objective), method="lp")


def _coordinate_range(S: np.ndarray, s: Sequence[Fraction], k: int, dim: int) -> Interval:
    unit = [Fraction(int(i == k)) for i in range(dim)]
    lo = _lp_min(unit, Fraction(0), S, s)
    hi = _lp_min([-u for u in unit], Fraction(0), S, s)
    return Interval(lo.value, None if hi.value is None else -hi.value)


def _conservative(value: sympy.Expr) -> Optional[Fraction]:
    """A rational lower bound of a real sympy number"""
    if value.is_finite is False or value.has(sympy.oo, -sympy.oo, sympy.zoo):
        return None
    if value.is_Rational:
        return Fraction(int(value.p), int(value.q))
    return Fraction(str(sympy.N(value, 40))) - Fraction(1, 10**30)


def _univariate_min(terms: Terms, k: int, span: Interval) -> Optional[Fraction]:
    t = sympy.Symbol("t", real=True)
    expr = sum((sympy.Rational(c.numerator, c.denominator) * t ** e[k] for e, c in terms.items()), sympy.Integer(0))
    if span.lo is not None and span.lo == span.hi:
        return _conservative(expr.subs(t, sympy.Rational(span.lo.numerator, span.lo.denominator)))
    lo = -sympy.oo if span.lo is None else sympy.Rational(span.lo.numerator, span.lo.denominator)
    hi = sympy.oo if span.hi is None else sympy.Rational(span.hi.numerator, span.hi.denominator)
    return _conservative(minimum(expr, t, sympy.Interval(lo, hi)))


def extremum(terms: Mapping[Exponent, Fraction], region: PolyRegion, sense: str = "inf") -> Extremum:
    """
    A conservative bound on inf / sup of a polynomial over a region

    inf gives a lower bound, sup an upper bound. Degree-one objectives use
    an exact LP over the linear constraints; univariate ones are minimized
    exactly by sympy over the coordinate's range; anything else falls back
    to rational interval arithmetic over the bounding box. Constraints the
    method cannot use are dropped, which only enlarges the region.
    """
    if sense not in ("inf", "sup"):
        raise ValueError(f"sense must be 'inf' or 'sup', got {sense!r}")
    sign = 1 if sense == "inf" else -1
    f = {tuple(e): to_fraction(c) * sign for e, c in terms.items() if c != 0}

    def result(value: Optional[Fraction], method: str) -> Extremum:
        return Extremum(None if value is None else value * sign, method=method)

    if region.points is not None:
        if not region.points:
            return Extremum(None, empty=True, method="points")
        values = [sum((c * math.prod(x ** p for x, p in zip(pt, e)) for e, c in f.items()), Fraction(0)) for pt in region.points]
        return result(min(values), "points")

    d = region.dim
    S, s = region.polytope()
    feasible = _lp_min([Fraction(0)] * d, Fraction(0), S, s)
    if feasible.empty:
        return Extremum(None, empty=True, method="lp")
    if not f:
        return result(Fraction(0), "constant")
    if _degree(f) <= 1:
        zero = (0,) * d
        cost = [Fraction(0)] * d
        for e, c in f.items():
            if e != zero:
                cost[e.index(1)] = c
        return result(_lp_min(cost, f.get(zero, Fraction(0)), S, s).value, "lp")
    used = sorted({k for e in f for k, p in enumerate(e) if p})
    box = [Interval(None, None)] * d
    for k in used:
        box[k] = _coordinate_range(S, s, k, d)
    if len(used) == 1:
        return result(_univariate_min(f, used[0], box[used[0]]), "univariate")
    return result(interval_bounds(f, box).lo, "interval")


# ---------------------------------------------------------------------------
# exact re-checking
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    constraint: str
    kind: str  # lmi | equality | inequality | condition | functions
    margin: float
    direction: Optional[List[float]] = None  # eigenvector of the most negative eigenvalue


@dataclass
class CheckReport:
    valid: bool
    exact: bool
    checked: int = 0
    violations: List[Violation] = field(default_factory=list)
    denominator: Optional[int] = None
    notes: List[str] = field(default_factory=list)

    @property
    def violated(self) -> List[str]:
        return [v.constraint for v in self.violations]


def check_problem(problem: ConicProblem, y, exact: bool = True) -> CheckReport:
    """Every constraint of ``problem`` at y, in rational or float arithmetic"""
    y = np.asarray(y, dtype=object if exact else float)
    violations: List[Violation] = []
    eq_tol = max(1e-6, 100 * settings.tol)
    for c in problem.linear:
        value = c.expr.evaluate(y)
        if c.sense == "==":
            bad = value != 0 if exact else abs(float(value)) > eq_tol
            kind = "equality"
        else:
            bad = value < 0 if exact else float(value) < -settings.tol_psd
            kind = "inequality"
        if bad:
            violations.append(Violation(c.name, kind, float(value)))
    for block in problem.lmis:
        M = block.expr.evaluate(y)
        ok = is_psd_exact(M) if exact else True
        w, V = np.linalg.eigh(np.asarray(M, dtype=object).astype(float))
        if not exact:
            ok = w[0] >= -settings.tol_psd
        if not ok:
            violations.append(Violation(block.name, "lmi", float(w[0]), [float(a) for a in V[:, 0]]))
    report = CheckReport(not violations, exact, len(problem.linear) + len(problem.lmis), violations)
    if violations:
        logger.debug("%s: %d violated constraints, first %s", problem.name, len(violations), violations[0].constraint)
    return report


def _project_free(problem: ConicProblem, y: np.ndarray) -> np.ndarray:
    """Basic exact correction of the equalities no Gram entry can absorb"""
    free = [c for c in problem.equalities if c.project_onto is None]
    residual = [c.expr.evaluate(y) for c in free]
    if not free or all(r == 0 for r in residual):
        return y
    cols = sorted({i for c in free for i in c.expr.terms})
    A = sympy.Matrix([[sympy.Rational(c.expr.terms.get(i, Fraction(0)).numerator, c.expr.terms.get(i, Fraction(0)).denominator) for i in cols] for c in free])
    b = sympy.Matrix([-sympy.Rational(r.numerator, r.denominator) for r in residual])
    try:
        sol, params = A.gauss_jordan_solve(b)
    except ValueError:
        logger.debug("%s: rounded equalities are inconsistent, leaving them", problem.name)
        return y
    sol = sol.subs({p: 0 for p in params})
    y = y.copy()
    for i, delta in zip(cols, sol):
        y[i] = y[i] + Fraction(int(delta.p), int(delta.q))
    return y


def round_solution(problem: ConicProblem, y, max_denominator: Optional[int] = None) -> np.ndarray:
    """
    Rational rounding that keeps the coefficient-matching equalities exact

    Entries are rounded to denominators ≤ max_denominator. Equalities
    without a Gram variable are corrected by an exact basic solution, then
    each matching equality pushes its residue into one entry of its Gram
    matrix (every Gram entry occurs in exactly one such equality).
    """
    max_denominator = max_denominator or settings.max_denominator
    yq = rationalize(np.asarray(y, dtype=float), max_denominator)
    yq = _project_free(problem, yq)
    for c in problem.equalities:
        if c.project_onto is None:
            continue
        r = c.expr.evaluate(yq)
        if r == 0:
            continue
        var = problem.variable(c.project_onto)
        owned = [i for i in c.expr.terms if var.offset <= i < var.offset + var.size]
        diagonal = [i for i in owned if var.is_diagonal_storage(i - var.offset)]
        idx = (diagonal or owned)[0]
        yq[idx] = yq[idx] - r / c.expr.terms[idx]
    return yq


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


def _provenance(problem: ConicProblem, result: Optional[SolveResult] = None) -> Dict[str, object]:
    notes = problem.notes
    kind = notes["kind"]
    out: Dict[str, object] = {
        "kind": kind,
        "problem": problem.name,
        "options": {k: notes.get(k) for k in _OPTIONS[kind]},
    }
    if result is not None:
        out["solver"] = {
            "status": result.status.value,
            "iterations": result.iterations,
            "primal_residual": result.primal_residual,
            "margin": result.margin,
        }
    return out


def _linear_terms(K: Sequence[Fraction], n: int) -> Terms:
    out: Terms = {}
    for k in range(n):
        if K[k] != 0:
            e = [0] * n
            e[k] = 1
            out[tuple(e)] = to_fraction(K[k])
    if K[n] != 0:
        out[(0,) * n] = to_fraction(K[n])
    return out


def certificate_from_solution(problem: ConicProblem, y, result: Optional[SolveResult] = None) -> Certificate:
    """Read σᵢ, rates and every decision value out of an assembled problem at y"""
    notes = problem.notes
    kind = notes["kind"]
    values = problem.unpack(y)
    variables = tuple(notes["variables"])
    rates: RatePlan = notes["rates"]
    prov = _provenance(problem, result)
    if kind in ("milm-quadratic", "milm-overflow", "graph-quadratic"):
        P = {node: values[name] for node, name in notes["nodes"].items()}
        cert = Certificate.from_quadratic(variables, P, rates, values=values, provenance=prov)
        if "z" in values:
            cert.z = to_fraction(values["z"][0, 0])
        return cert
    if kind == "milm-linear":
        n = len(variables)
        K = list(values["K"][:, 0]) if "K" in values else list(notes["fixed_K"])
        if "theta" in values:
            rates = RatePlan.uniform(values["theta"][0, 0], rates.default[1])
        return Certificate(CertificateKind.LINEAR, variables, {MILM_NODE: _linear_terms(K, n)}, rates, values=values, provenance=prov)
    if kind == "graph-sos":
        functions = sigma_terms(problem, y)
        linear = all(_degree(f) <= 1 for f in functions.values())
        kind_ = CertificateKind.LINEAR if linear else CertificateKind.POLYNOMIAL
        return Certificate(kind_, variables, functions, rates, values=values, provenance=prov)
    raise AssemblyError(f"problem {problem.name} of kind {kind!r} does not yield certificates")


def certify_solution(problem: ConicProblem, result: SolveResult, exact: bool = True) -> Tuple[Optional[Certificate], CheckReport]:
    """
    Round a solver point and check it against the same problem

    Exact LP solutions are checked as they are. Float points are rounded
    with growing denominators until the exact check passes; when it never
    does (or ``exact`` is off) the float check decides and the report says
    so.
    """
    if not result.feasible or result.y is None:
        report = CheckReport(False, exact, notes=[f"solver status {result.status.value}: {result.message}"])
        return None, report
    y = result.y
    if isinstance(y, np.ndarray) and y.dtype == object:
        report = check_problem(problem, y, exact=True)
        cert = certificate_from_solution(problem, y, result)
        cert.provenance["exact"] = report.valid
        return cert, report

    report: Optional[CheckReport] = None
    yq = None
    if exact:
        den = settings.max_denominator
        for _ in range(3):
            yq = round_solution(problem, y, den)
            report = check_problem(problem, yq, exact=True)
            report.denominator = den
            if report.valid:
                break
            den *= 100
    if report is None or not report.valid:
        first = report.violations[0].constraint if report is not None and report.violations else None
        report = check_problem(problem, y, exact=False)
        if first is not None:
            report.notes.append(f"exact re-check failed after rounding at {first}; float check used")
        yq = rationalize(np.asarray(y, dtype=float), settings.max_denominator * 10**4)
    cert = certificate_from_solution(problem, yq, result)
    cert.provenance["exact"] = report.exact and report.valid
    return cert, report


def _variables_of(model: Model) -> Tuple[str, ...]:
    return tuple(model.variables)


def reassemble(model: Model, cert: Certificate) -> ConicProblem:
    """The problem the certificate claims to solve, rebuilt from the model"""
    prov = cert.provenance
    kind = prov.get("kind")
    opts = dict(prov.get("options") or {})
    if kind not in _OPTIONS:
        raise CertificateError(f"unknown certificate provenance {kind!r}")
    if kind.startswith("milm-"):
        if not isinstance(model, MILM):
            raise CertificateError(f"a {kind} certificate needs a MILM, got a graph model")
        theta, mu = cert.rates.default
        if kind == "milm-quadratic":
            return assemble_milm_quadratic(model, theta, mu, strict=bool(opts.get("strict")))
        if kind == "milm-overflow":
            return assemble_milm_overflow(model, theta, mu, alpha=opts.get("alpha"), strict=bool(opts.get("strict")))
        return assemble_milm_linear(model, theta, mu, mode=opts["mode"], fixed_K=opts.get("fixed_K"), binaries=opts["binaries"])
    if not isinstance(model, GraphModel):
        raise CertificateError(f"a {kind} certificate needs a graph model")
    if kind == "graph-quadratic":
        return assemble_graph_quadratic(model, cert.rates, **opts)
    return assemble_graph_sos(model, cert.rates, **opts)


def _check_dimensions(model: Model, cert: Certificate) -> None:
    if tuple(cert.variables) != _variables_of(model):
        raise CertificateError(f"certificate is over {list(cert.variables)}, model over {list(_variables_of(model))}")
    n = len(cert.variables)
    for node, P in cert.P.items():
        if np.shape(P) != (n + 1, n + 1):
            raise CertificateError(f"P[{node}] has shape {np.shape(P)}, expected {(n + 1, n + 1)}")
    nodes = (MILM_NODE,) if isinstance(model, MILM) else model.nodes
    for node, terms in cert.functions.items():
        if node not in nodes:
            raise CertificateError(f"certificate names unknown node {node!r}")
        if any(len(e) != n for e in terms):
            raise CertificateError(f"σ[{node}] has exponents of the wrong length")


def _check_functions(model: Model, cert: Certificate) -> CheckReport:
    """Certificates without multipliers: each condition is decided directly"""
    if not isinstance(model, GraphModel):
        raise CertificateError("a MILM certificate must carry its multipliers")
    sigma, bases = {}, {}
    for v in model.nodes:
        sigma[v], bases[v] = fixed_sigma(model.n, cert.function(v))
    violations: List[Violation] = []
    notes: List[str] = []
    checked = 0
    for cond in graph_conditions(model, cert.rates, sigma, bases):
        checked += 1
        terms = {e: c.const for e, c in cond.target.coeffs.items() if c.const != 0}
        ext = extremum(terms, PolyRegion.from_sos(cond.region), "inf")
        if ext.empty:
            notes.append(f"{cond.name}: region is empty")
            continue
        if ext.value is None or ext.value < 0:
            margin = float("-inf") if ext.value is None else float(ext.value)
            violations.append(Violation(cond.name, "condition", margin))
            notes.append(f"{cond.name}: lower bound {margin} by {ext.method}")
    return CheckReport(not violations, True, checked, violations, notes=notes)


def check_certificate(model: Model, cert: Certificate, exact: bool = True) -> CheckReport:
    """
    Re-validate every Lyapunov condition of ``cert`` on ``model``

    Certificates carrying decision values are checked against a freshly
    assembled problem: equalities and inequalities exactly, LMI blocks by
    exact symmetric elimination. Certificates that only give the σᵢ are
    decided condition by condition with exact LP, exact univariate analysis
    or rational interval bounds. Nothing here calls a solver.
    """
    _check_dimensions(model, cert)
    kind = cert.provenance.get("kind", "functions")
    if kind == "functions" or not cert.values:
        report = _check_functions(model, cert)
    else:
        problem = reassemble(model, cert)
        missing = [v.name for v in problem.variables if v.name not in cert.values]
        if missing:
            raise CertificateError(f"certificate has no values for {missing[:3]}")
        y = problem.pack(cert.values, exact=exact)
        report = check_problem(problem, y, exact)
        if exact:
            rebuilt = certificate_from_solution(problem, y)
            for node, terms in rebuilt.functions.items():
                if {e: c for e, c in terms.items() if c != 0} != {e: to_fraction(c) for e, c in cert.function(node).items() if c != 0}:
                    report.violations.append(Violation(f"functions[{node}]", "functions", 0.0))
            report.valid = not report.violations
    level = logging.INFO if report.valid else logging.WARNING
    logger.log(level, "certificate check (%s, exact=%s): %s", kind, exact, "valid" if report.valid else f"violated {report.violated[:3]}")
    return report


# ---------------------------------------------------------------------------
# regions seen by the verdicts
# ---------------------------------------------------------------------------


def _sigma(cert: Certificate, node: str) -> Terms:
    return {tuple(e): to_fraction(c) for e, c in cert.function(node).items() if c != 0}


def _milm_box(m: MILM) -> SemialgebraicSet:
    return SemialgebraicSet.box([-1] * m.n, [1] * m.n)


def _initial_region(model: Model) -> Tuple[PolyRegion, int]:
    """Region of the initial states, and how many leading coordinates are x"""
    if isinstance(model, MILM):
        if model.X0 is not None:
            return PolyRegion(model.n, points=list(model.X0)), model.n
        d = model.n + model.n_w + model.n_v
        box = SemialgebraicSet.box([-1] * d, [1] * d)
        H0 = model.H0 if model.H0 is not None else qzeros((0, d + 1))
        return PolyRegion.of(box.intersect(SemialgebraicSet(d, lin_eq=H0))), model.n
    return PolyRegion.of(model.invariant(model.start)), model.n


def _pad(terms: Terms, n: int, d: int) -> Terms:
    return {e + (0,) * (d - n): c for e, c in terms.items()}


def _node_region(model: Model, node: str, extra: Optional[SemialgebraicSet] = None) -> PolyRegion:
    s = _milm_box(model) if isinstance(model, MILM) else model.invariant(node)
    if extra is not None:
        s = s.intersect(extra)
    return PolyRegion.of(s)


def _rates(model: Model, cert: Certificate) -> List[Tuple[Tuple[str, str, int], Fraction, Fraction]]:
    """(edge, θ, μ) of every edge carrying a decrease condition"""
    if isinstance(model, MILM):
        theta, mu = cert.rates.default
        return [(MILM_EDGE, theta, mu)]
    zero_start = cert.provenance.get("kind") == "graph-quadratic"
    out = []
    for e in assembled_edges(model):
        theta, mu = cert.rates.rate(e.key)
        if zero_start and e.source == model.start:
            theta = Fraction(0)
        out.append((e.key, theta, mu))
    return out


def _start_node(model: Model) -> str:
    return MILM_NODE if isinstance(model, MILM) else model.start


def _initial_sup(model: Model, cert: Certificate) -> Extremum:
    region, n = _initial_region(model)
    return extremum(_pad(_sigma(cert, _start_node(model)), n, region.dim), region, "sup")


def _validated(model: Model, cert: Certificate, verdict: Verdict, validated: bool) -> bool:
    if validated:
        return True
    report = check_certificate(model, cert)
    if not report.valid:
        verdict.note(f"certificate fails re-validation at {', '.join(report.violated[:3])}")
        return False
    verdict.note("certificate re-validated exactly")
    return True


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


def conclude_unreachability(
    cert: Certificate,
    model: Model,
    location: Optional[str] = None,
    unsafe: Optional[Sequence[SemialgebraicSet]] = None,
    through: str = "identity",
    validated: bool = False,
) -> Verdict:
    """
    Separate the reachable states from X₋ by a level set of the certificate

    Every edge keeps {σ ≤ c} invariant when c(θ − 1) ≤ μ, so a level c with

        sup σ_start over X₀ ≤ c,   c ≥ −μ/(1 − θ) for θ < 1,   c ≤ μ/(θ − 1) for θ > 1

    exists, and inf σ over X₋ > c, the unsafe states are unreachable. With a
    single rate this is the θ = 1 condition, case I (θ < 1, inf > 0 once
    μ ≥ 0) or case II (θ > 1, sup ≤ 0). ``through="transition"`` bounds σ
    over the states of a MILM whose successor can enter X₋.
    """
    if isinstance(model, MILM):
        location = MILM_NODE
    verdict = Verdict("unreachability", VerdictStatus.NOT_CERTIFIED, location, certificate=cert)
    if through not in ("identity", "transition"):
        raise ModelError(f"through must be 'identity' or 'transition', got {through!r}", field="through")
    try:
        if not _validated(model, cert, verdict, validated):
            return verdict
    except CertificateError as e:
        verdict.note(f"certificate does not fit the model: {e}")
        return verdict

    targets: List[Tuple[str, SemialgebraicSet]] = []
    if unsafe is not None:
        if location is None:
            raise ModelError("an explicit unsafe set needs a location", field="location")
        targets = [(location, s) for s in unsafe]
    elif isinstance(model, GraphModel):
        nodes = [location] if location is not None else list(model.unsafe)
        targets = [(v, s) for v in nodes for s in model.unsafe.get(v, ())]
    if not targets:
        verdict.note("no unsafe set to separate")
        return verdict

    sup0 = _initial_sup(model, cert)
    if sup0.empty:
        verdict.status = VerdictStatus.CERTIFIED
        verdict.note("initial set is empty")
        return verdict
    if sup0.value is None:
        verdict.note("σ is unbounded above on the initial set")
        return verdict
    lower, upper = sup0.value, None
    thetas = []
    for key, theta, mu in _rates(model, cert):
        thetas.append(theta)
        if theta < 1:
            lower = max(lower, -mu / (1 - theta))
        elif theta > 1:
            cap = mu / (theta - 1)
            upper = cap if upper is None else min(upper, cap)
        elif mu < 0:
            verdict.note(f"edge {key} has θ = 1 and μ < 0")
            return verdict
    if upper is not None and lower > upper:
        verdict.note(f"no invariant level: need {format_fraction(lower)} ≤ c ≤ {format_fraction(upper)}")
        return verdict
    if all(t == 1 for t in thetas):
        case = "θ = 1"
    elif all(t < 1 for t in thetas):
        case = "case I (θ < 1)"
    elif all(t > 1 for t in thetas):
        case = "case II (θ > 1)"
    else:
        case = "mixed rates"
    verdict.note(f"sup σ over the initial set ≤ {format_fraction(sup0.value)} ({sup0.method}); invariant level c = {format_fraction(lower)} [{case}]")

    strict_gap = Fraction(0) if cert.provenance.get("exact", True) else to_fraction(settings.separation_gap)
    worst: Optional[Fraction] = None
    for node, bad in targets:
        if through == "transition" and isinstance(model, MILM):
            m = model
            d = m.n + m.n_w + m.n_v
            pre = bad.pullback(m.F[:, :d], m.F[:, d]).intersect(SemialgebraicSet(d, lin_eq=m.H))
            pre = pre.intersect(SemialgebraicSet.box([-1] * d, [1] * d))
            region = PolyRegion.of(pre)
            ext = extremum(_pad(_sigma(cert, node), m.n, d), region, "inf")
        else:
            ext = extremum(_sigma(cert, node), _node_region(model, node, bad), "inf")
        if ext.empty:
            verdict.note(f"X₋ at {node} does not meet the node invariant")
            continue
        if ext.value is None:
            verdict.note(f"σ at {node} is unbounded below on X₋")
            verdict.binding.append(node)
            return verdict
        verdict.note(f"inf σ over X₋ at {node} ≥ {format_fraction(ext.value)} ({ext.method})")
        if ext.value - lower <= strict_gap:
            verdict.binding.append(node)
        worst = ext.value if worst is None else min(worst, ext.value)
    if verdict.binding:
        verdict.note(f"separation fails at {', '.join(verdict.binding)}")
        return verdict
    verdict.status = VerdictStatus.CERTIFIED
    verdict.level = lower
    logger.info("unreachability certified at %s: level %s < %s", location or "all nodes", lower, worst)
    return verdict


def conclude_overflow(cert: Certificate, model: Model, validated: bool = False) -> Verdict:
    """Certificates whose assembly carried overflow blocks rule out overflow once validated"""
    verdict = Verdict("overflow", VerdictStatus.NOT_CERTIFIED, certificate=cert, level=cert.level)
    kind = cert.provenance.get("kind")
    opts = cert.provenance.get("options") or {}
    carries = kind == "milm-overflow" or (kind == "graph-quadratic" and opts.get("alpha") is not None)
    carries = carries or (kind in ("graph-sos", "functions") and isinstance(model, GraphModel) and model.overflow is not None)
    if not carries:
        verdict.note("certificate carries no overflow conditions")
        return verdict
    if not _validated(model, cert, verdict, validated):
        return verdict
    verdict.status = VerdictStatus.CERTIFIED
    alpha = opts.get("alpha") if kind != "graph-sos" else getattr(model, "overflow", None)
    if alpha is not None:
        verdict.note("|x_k| ≤ " + ", ".join(format_fraction(a) for a in alpha))
    return verdict


def cycle_bound(theta, mu, norm, eta=None) -> Optional[Fraction]:
    """
    Iterations a cycle with rates (θ, μ) can run while |σ| ≤ norm

        θ = 1:          norm / μ
        θ ≠ 1, μ > 0:   [log((θ − 1)·norm + μ) − log μ] / log θ
        θ > 1, μ = 0:   [log norm − log η] / log θ

    None when the hypotheses fail.
    """
    theta, mu, norm = to_fraction(theta), to_fraction(mu), to_fraction(norm)
    if mu > 0:
        if theta == 1:
            return norm / mu
        a = (theta - 1) * norm + mu
        if a <= 0:
            return None
        if theta == 0:
            return Fraction(1)
        t = (math.log(a) - math.log(mu)) / math.log(theta)
        return Fraction(repr(max(t, 0.0)))
    eta = None if eta is None else to_fraction(eta)
    if mu == 0 and theta > 1 and eta is not None and eta > 0:
        if norm <= eta:
            return Fraction(0)
        t = (math.log(norm) - math.log(eta)) / math.log(theta)
        return Fraction(repr(t))
    return None


def _norm_bound(cert: Certificate, model: Model, node: str, box: Optional[SemialgebraicSet]) -> Optional[Fraction]:
    """sup |σ| over the reachable states of a node, using σ ≤ 0 there"""
    kind = cert.provenance.get("kind")
    opts = cert.provenance.get("options") or {}
    candidates = []
    if kind == "milm-overflow" or (kind == "graph-quadratic" and opts.get("alpha") is not None):
        candidates.append(cert.z)
    if kind in ("graph-sos", "functions") and isinstance(model, GraphModel) and model.overflow is not None:
        candidates.append(Fraction(1))
    ext = extremum(_sigma(cert, node), _node_region(model, node, box), "inf")
    if ext.empty:
        return Fraction(0)
    if ext.value is not None:
        candidates.append(max(Fraction(0), -ext.value))
    return min(candidates) if candidates else None


def ftt_bound(cert: Certificate, model: Model, bounds: Optional[SemialgebraicSet] = None, validated: bool = False) -> Verdict:
    """
    Termination within T_u steps, summing per-cycle bounds

    A simple cycle has θ(C) = Πθ, μ(C) = max μ and |σ| ≤ max over its nodes.
    A strongly connected part whose edges all have θ = 1 and μ > 0 is also
    bounded as a whole by max|σ| / min μ; the smaller total is reported.
    ``bounds`` adds constraints known to hold on reachable states (e.g. the
    box a boundedness certificate proved).
    """
    verdict = Verdict("FTT", VerdictStatus.NOT_CERTIFIED, certificate=cert)
    if not _validated(model, cert, verdict, validated):
        return verdict
    sup0 = _initial_sup(model, cert)
    if sup0.value is None and not sup0.empty:
        verdict.note("σ is unbounded above on the initial set")
        return verdict
    eta = Fraction(0) if sup0.empty else -sup0.value
    if eta < 0:
        verdict.note(f"σ reaches {format_fraction(sup0.value)} > 0 on the initial set")
        return verdict
    if eta == 0:
        verdict.note("η = 0: the μ = 0 branch is unavailable")

    rates = {key: (theta, mu) for key, theta, mu in _rates(model, cert)}
    if isinstance(model, MILM):
        cycles = [(MILM_EDGE,)]
        nodes_of = lambda c: [MILM_NODE]  # noqa: E731
    else:
        cycles = enumerate_simple_cycles(model)
        nodes_of = cycle_nodes
    norms: Dict[str, Optional[Fraction]] = {}

    def norm(node: str) -> Optional[Fraction]:
        if node not in norms:
            norms[node] = _norm_bound(cert, model, node, bounds)
        return norms[node]

    per_cycle: List[Fraction] = []
    for cycle in cycles:
        theta = math.prod((rates[k][0] for k in cycle), start=Fraction(1))
        mu = max(rates[k][1] for k in cycle)
        values = [norm(v) for v in nodes_of(cycle)]
        if any(v is None for v in values):
            verdict.note(f"no bound on |σ| along {_fmt_cycle(cycle)}")
            return verdict
        t = cycle_bound(theta, mu, max(values), eta if isinstance(model, MILM) else None)
        if t is None:
            verdict.note(f"cycle {_fmt_cycle(cycle)} with θ = {format_fraction(theta)}, μ = {format_fraction(mu)} gives no bound")
            verdict.binding.append(_fmt_cycle(cycle))
            return verdict
        per_cycle.append(t)
        verdict.note(f"cycle {_fmt_cycle(cycle)}: θ = {format_fraction(theta)}, μ = {format_fraction(mu)}, |σ| ≤ {format_fraction(max(values))} → {float(t):.6g}")
    total = sum(per_cycle, Fraction(0))

    if isinstance(model, GraphModel):
        component_total = Fraction(0)
        graph = nx.DiGraph()
        graph.add_edges_from((a, b) for (a, b, _) in rates)
        for comp in nx.strongly_connected_components(graph):
            inside = [(k, r) for k, r in rates.items() if k[0] in comp and k[1] in comp]
            if not inside:
                continue
            cyc = [t for c, t in zip(cycles, per_cycle) if c[0][0] in comp]
            sub = sum(cyc, Fraction(0))
            if all(r[0] == 1 and r[1] > 0 for _, r in inside):
                whole = max(norm(v) for v in comp) / min(r[1] for _, r in inside)
                sub = min(sub, whole)
            component_total += sub
        if component_total < total:
            verdict.note(f"component bound {float(component_total):.6g} improves the cycle sum {float(total):.6g}")
            total = component_total

    verdict.status = VerdictStatus.CERTIFIED
    verdict.T_u = total
    cert.T_u = total
    logger.info("FTT certified with T_u = %s", float(total))
    return verdict


def _fmt_cycle(cycle) -> str:
    return " → ".join([a for a, _, _ in cycle] + [cycle[0][0]])


def sublevel_bounds(cert: Certificate, model: Model) -> Dict[str, List[Tuple[float, float]]]:
    """
    Per-variable bounds implied by σᵢ ≤ 0 for quadratic certificates

    When the x-block of Pᵢ is positive definite the sublevel set is an
    ellipsoid with centre −A⁻¹b and radius² bᵀA⁻¹b − c; otherwise the
    certified overflow limits are reported, or no bound.
    """
    opts = cert.provenance.get("options") or {}
    alpha = opts.get("alpha")
    n = len(cert.variables)
    out: Dict[str, List[Tuple[float, float]]] = {}
    for node, P in cert.P.items():
        M = np.asarray(P, dtype=object).astype(float)
        A, b, c = M[:n, :n], M[:n, n], M[n, n]
        bounds: List[Tuple[float, float]]
        try:
            factor = scipy.linalg.cho_factor(A)
            A_inv = scipy.linalg.cho_solve(factor, np.eye(n))
            centre = -A_inv.dot(b)
            r2 = float(b.dot(A_inv).dot(b) - c)
            if r2 < 0:
                out[node] = []
                continue
            half = np.sqrt(r2 * np.diag(A_inv))
            bounds = [(float(lo), float(hi)) for lo, hi in zip(centre - half, centre + half)]
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            if alpha is not None:
                bounds = [(-float(a), float(a)) for a in alpha]
            else:
                bounds = [(-math.inf, math.inf)] * n
        if alpha is not None:
            bounds = [(max(lo, -float(a)), min(hi, float(a))) for (lo, hi), a in zip(bounds, alpha)]
        out[node] = bounds
    return out


# ---------------------------------------------------------------------------
# the end-to-end pipeline for safety specifications
# ---------------------------------------------------------------------------


def solve_problem(problem: ConicProblem) -> SolveResult:
    """Exact simplex for problems without matrix blocks, interior point otherwise"""
    if problem.is_linear:
        return solve_lp(problem, exact=True)
    return solve_sdp(problem)


def _relation(text: str, names: Sequence[str]) -> Tuple[Terms, str]:
    for op in (">=", "<=", "==", ">", "<"):
        if op in text:
            lhs, rhs = text.split(op, 1)
            p = parse_polynomial(f"({lhs}) - ({rhs})", names)
            return p, op
    raise ModelError(f"expected a comparison in {text!r}", field="expr")


def _neg(terms: Terms) -> Terms:
    return {e: -c for e, c in terms.items()}


def unsafe_sets(model: GraphModel, kind: str, expr: Optional[str] = None, limit=None) -> List[SemialgebraicSet]:
    """
    X₋ for one safety specification at a location

    assert-in / assert-not-in take a comparison, div-by-zero / sqrt / log an
    operand, out-of-bounds an index with ``limit`` L (|index| ≥ L is unsafe).
    Strict complements are closed, which only enlarges X₋.
    """
    if kind not in SPECIFICATIONS:
        raise ModelError(f"unknown specification {kind!r}; expected one of {SPECIFICATIONS}", field="kind")
    n = model.n
    if kind == "dead-code":
        return [SemialgebraicSet.universal(n)]
    if not expr:
        raise ModelError(f"{kind} needs an expression", field="expr")
    try:
        if kind in ("assert-in", "assert-not-in"):
            p, op = _relation(expr, model.variables)
        else:
            p, op = parse_polynomial(expr, model.variables), None
    except (sympy.SympifyError, SyntaxError, TypeError, ValueError) as e:
        raise ModelError(f"cannot parse {expr!r}: {e}", field="expr") from e
    if _degree(p) > 2:
        raise ModelError("specification expressions must have degree ≤ 2", field="expr")
    build = lambda ineq=(), eq=(): SemialgebraicSet.from_terms(n, ineq=ineq, eq=eq)  # noqa: E731
    if kind == "assert-in":
        if op == "==":
            raise ModelError("an equality assertion has no closed complement; assert two inequalities", field="expr")
        return [build(ineq=[_neg(p)])] if op in (">=", ">") else [build(ineq=[p])]
    if kind == "assert-not-in":
        if op == "==":
            return [build(eq=[p])]
        return [build(ineq=[p])] if op in (">=", ">") else [build(ineq=[_neg(p)])]
    if kind == "div-by-zero":
        return [build(eq=[p])]
    if kind in ("sqrt", "log"):
        return [build(ineq=[_neg(p)])]
    if limit is None:
        raise ModelError("out-of-bounds needs a limit", field="limit")
    L = to_fraction(limit)
    zero = (0,) * n
    shifted = dict(p)
    shifted[zero] = shifted.get(zero, Fraction(0)) - L
    flipped = _neg(p)
    flipped[zero] = flipped.get(zero, Fraction(0)) - L
    return [build(ineq=[shifted]), build(ineq=[flipped])]


def candidate_plans(model: GraphModel, thetas: Optional[Iterable] = None, mus: Optional[Iterable] = None) -> List[RatePlan]:
    """Uniform (θ, μ) plans from the grids, then plans with θ = 1 on one cycle edge and 0 elsewhere"""
    thetas = list(settings.theta_grid if thetas is None else thetas)
    mus = list(settings.mu_grid if mus is None else mus)
    plans = [RatePlan.uniform(t, m) for t in thetas for m in mus]
    on_cycle = sorted({k for c in enumerate_simple_cycles(model) for k in c})
    for key in on_cycle:
        for m in mus:
            if to_fraction(m) > 0:
                plans.append(RatePlan((0, m), {key: (1, m)}))
    return plans


def find_witness(model: Model, location: str, inits: Optional[Sequence[StateVec]] = None, runs: Optional[int] = None):
    """A simulated trace entering an unsafe set at ``location``, or None"""
    runs = settings.witness_runs if runs is None else runs
    inits = list(inits) if inits is not None else sample_initial_states(model, 16)
    if not inits:
        return None
    for trace in simulate_many(model, inits, runs=runs, max_steps=settings.witness_steps):
        if trace.status == TraceStatus.UNSAFE_HIT and trace.states[-1].node == location and trace.note.startswith("unsafe"):
            return trace
    return None


def _assemble(model: GraphModel, method: str, plan: RatePlan, degree: int) -> ConicProblem:
    if method == "sos":
        return assemble_graph_sos(model, plan, degrees=degree)
    return assemble_graph_quadratic(model, plan, method=method, strict=True)


def conclude_specification(
    model: GraphModel,
    kind: str,
    location: str,
    expr: Optional[str] = None,
    limit=None,
    plans: Optional[Sequence[RatePlan]] = None,
    methods: Sequence[str] = ("sos",),
    degree: int = 2,
    inits: Optional[Sequence[StateVec]] = None,
    runs: Optional[int] = None,
) -> Verdict:
    """
    Build X₋ for the specification, look for a simulation witness, then
    search rate plans and methods for a certificate separating X₋
    """
    if location not in model.nodes:
        raise ModelError(f"unknown location {location!r}", field="location")
    sets = unsafe_sets(model, kind, expr, limit)
    target = model.replace(unsafe={location: tuple(sets)}, overflow=None)
    verdict = Verdict(kind, VerdictStatus.NOT_CERTIFIED, location)

    witness = find_witness(target, location, inits, runs)
    if witness is not None:
        verdict.witness = witness
        verdict.note(f"simulation reaches X₋ at {location} after {witness.steps} steps")
        logger.info("%s at %s refuted by simulation", kind, location)
        return verdict

    for plan in plans if plans is not None else candidate_plans(target):
        for method in methods:
            try:
                problem = _assemble(target, method, plan, degree)
            except AssemblyError as e:
                verdict.note(f"{method}: {e}")
                continue
            result = solve_problem(problem)
            if not result.feasible:
                logger.debug("%s with %s: %s", method, plan.describe(), result.status.value)
                continue
            cert, report = certify_solution(problem, result)
            if cert is None or not report.valid:
                continue
            found = conclude_unreachability(cert, target, location)
            if found.certified:
                found.property = kind
                found.trace = [f"{method} certificate with rates {plan.describe()}"] + found.trace
                return found
    verdict.note("no certificate found over the rate plans tried")
    return verdict


def describe_certificate(cert: Certificate) -> Dict[str, str]:
    """σᵢ as readable polynomials"""
    return {node: format_terms(terms, cert.variables) for node, terms in cert.functions.items()}
