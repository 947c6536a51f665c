"""
Search drivers: rate-plan sweeps, the round-based invariant search and the
overflow-level bisection
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple, Union

from app.config import settings
from app.core.certificate import Certificate, RatePlan, Verdict, VerdictStatus
from app.core.conic import ConicProblem, SolveStatus
from app.core.graph import GraphModel
from app.core.milm import MILM
from app.core.rational import format_fraction, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import AssemblyError, ModelError, SolverError
from app.services.certify import (
    CheckReport,
    candidate_plans,
    certify_solution,
    conclude_overflow,
    conclude_unreachability,
    find_witness,
    ftt_bound,
    solve_problem,
    sublevel_bounds,
)
from app.services.reduction import enumerate_simple_cycles
from app.services.relaxation import (
    METHODS,
    assemble_graph_quadratic,
    assemble_milm_linear,
    assemble_milm_overflow,
    assemble_milm_quadratic,
    assembled_edges,
)
from app.services.sos import assemble_graph_sos

logger = logging.getLogger(__name__)

Model = Union[GraphModel, MILM]

GRAPH_METHODS = METHODS + ("sos",)
MILM_METHODS = ("quadratic", "linear")


# ---------------------------------------------------------------------------
# one plan: assemble → solve → re-check
# ---------------------------------------------------------------------------


@dataclass
class Attempt:
    plan: RatePlan
    certificate: Optional[Certificate] = None
    report: Optional[CheckReport] = None
    message: str = ""
    status: Optional[SolveStatus] = None

    @property
    def valid(self) -> bool:
        return self.certificate is not None and self.report is not None and self.report.valid


def assemble(model: Model, plan: RatePlan, method: str, degree: int = 2, alpha=None, **options) -> ConicProblem:
    """The conic problem of one method and rate plan"""
    if isinstance(model, MILM):
        theta, mu = plan.default
        if method == "linear":
            return assemble_milm_linear(model, theta, mu, **options)
        if method != "quadratic":
            raise ModelError(f"unknown MILM method {method!r}; expected one of {MILM_METHODS}", field="method")
        if alpha is not None:
            return assemble_milm_overflow(model, theta, mu, alpha=alpha, strict=True)
        return assemble_milm_quadratic(model, theta, mu, strict=True)
    if method == "sos":
        return assemble_graph_sos(model, plan, degrees=degree, **options)
    if method not in METHODS:
        raise ModelError(f"unknown method {method!r}; expected one of {GRAPH_METHODS}", field="method")
    return assemble_graph_quadratic(model, plan, method=method, alpha=alpha, strict=True, **options)


def attempt(model: Model, plan: RatePlan, method: str, degree: int = 2, alpha=None, **options) -> Attempt:
    try:
        problem = assemble(model, plan, method, degree, alpha, **options)
    except AssemblyError as e:
        return Attempt(plan, message=str(e))
    result = solve_problem(problem)
    if not result.feasible:
        return Attempt(plan, message=f"{result.status.value}: {result.message}", status=result.status)
    cert, report = certify_solution(problem, result)
    return Attempt(plan, cert, report, "; ".join(report.notes), result.status)


def sweep(model: Model, plans: Sequence[RatePlan], method: str, stop_first: bool = True, **kwargs) -> List[Attempt]:
    """
    Try rate plans in order, in a thread pool when ``settings.workers`` > 0

    With ``stop_first`` the sweep ends at the first plan whose certificate
    re-checks; attempts are returned in plan order either way.
    """
    if settings.workers > 0 and not stop_first:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(lambda p: attempt(model, p, method, **kwargs), plans))
    out: List[Attempt] = []
    for plan in plans:
        a = attempt(model, plan, method, **kwargs)
        out.append(a)
        logger.debug("plan %s with %s: %s", plan.describe(), method, "valid" if a.valid else a.message or "rejected")
        if a.valid and stop_first:
            break
    return out


# ---------------------------------------------------------------------------
# end-to-end verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyOutcome:
    verdicts: List[Verdict]
    certificate: Optional[Certificate] = None
    plan: Optional[RatePlan] = None
    bounds: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    attempts: int = 0

    @property
    def certified(self) -> bool:
        return bool(self.verdicts) and all(v.certified for v in self.verdicts)


def default_plans(model: Model) -> List[RatePlan]:
    if isinstance(model, MILM):
        return [RatePlan.uniform(t, m) for t in settings.theta_grid for m in settings.mu_grid]
    return candidate_plans(model)


def _conclude(model: Model, cert: Certificate, ftt: bool) -> List[Verdict]:
    verdicts = []
    has_overflow = isinstance(model, MILM) or model.overflow is not None
    if has_overflow and (cert.provenance["kind"] in ("milm-overflow", "graph-sos") or (cert.provenance["options"] or {}).get("alpha") is not None):
        verdicts.append(conclude_overflow(cert, model, validated=True))
    if isinstance(model, GraphModel):
        for location in model.unsafe:
            verdicts.append(conclude_unreachability(cert, model, location, validated=True))
    if ftt:
        verdicts.append(ftt_bound(cert, model, validated=True))
    return verdicts


def verify_model(
    model: Model,
    method: str = "joint",
    plans: Optional[Sequence[RatePlan]] = None,
    degree: int = 2,
    ftt: bool = False,
    alpha=None,
    **options,
) -> VerifyOutcome:
    """
    Overflow, unsafe-set and (optionally) termination verdicts for a model

    Unsafe locations are first attacked by simulation; a witness ends the
    run with a not-certified verdict. Otherwise rate plans are swept until a
    re-checked certificate supports every requested verdict.
    """
    if isinstance(model, GraphModel):
        for location in model.unsafe:
            witness = find_witness(model, location)
            if witness is not None:
                verdict = Verdict("unreachability", VerdictStatus.NOT_CERTIFIED, location, witness=witness)
                verdict.note(f"simulation reaches X₋ at {location} after {witness.steps} steps")
                return VerifyOutcome([verdict])
    if isinstance(model, MILM) and alpha is None and method == "quadratic":
        alpha = 1
    plans = list(plans) if plans is not None else default_plans(model)
    best: Optional[VerifyOutcome] = None
    tried = 0
    failures: List[Attempt] = []
    for plan in plans:
        tried += 1
        a = attempt(model, plan, method, degree, alpha, **options)
        if not a.valid:
            if a.status == SolveStatus.NUMERIC_FAILURE:
                failures.append(a)
            continue
        verdicts = _conclude(model, a.certificate, ftt)
        bounds = sublevel_bounds(a.certificate, model) if a.certificate.P else {}
        outcome = VerifyOutcome(verdicts, a.certificate, plan, bounds, tried)
        if outcome.certified:
            logger.info("%s verified with %s under %s", getattr(model, "name", "milm"), method, plan.describe())
            return outcome
        best = best or outcome
    if best is not None:
        best.attempts = tried
        return best
    if tried and len(failures) == tried:
        raise SolverError(f"every rate plan ended in a numeric failure; last: {failures[-1].message}")
    verdict = Verdict("certificate", VerdictStatus.NOT_CERTIFIED)
    verdict.note(f"no certificate over {tried} rate plans with method {method}")
    return VerifyOutcome([verdict], attempts=tried)


# ---------------------------------------------------------------------------
# round-based search for linear lower bounds
# ---------------------------------------------------------------------------


@dataclass
class SearchSchedule:
    """
    What each round tries

    ``degrees[r]`` is the degree of the free σ's in round r (the last entry
    repeats); ``bounds`` are candidate lower bounds, strongest first.
    """

    rounds: int = settings.search_rounds
    nodes: Optional[Sequence[str]] = None  # default: nodes on a simple cycle
    variables: Optional[Sequence[str]] = None
    bounds: Sequence = (1, 0)
    thetas: Sequence = (1, 0)
    mu: object = 0
    degrees: Sequence[int] = (1,)

    def degree(self, r: int) -> int:
        return self.degrees[min(r, len(self.degrees) - 1)]


@dataclass
class Finding:
    node: str
    variable: str
    bound: Fraction
    round: int
    certificate: Certificate
    plan: RatePlan

    def describe(self) -> str:
        return f"{self.variable} ≥ {format_fraction(self.bound)} at {self.node} (round {self.round + 1})"


@dataclass
class SearchResult:
    model: GraphModel
    findings: List[Finding] = field(default_factory=list)
    rounds: int = 0

    def by_round(self) -> List[List[Finding]]:
        out: List[List[Finding]] = [[] for _ in range(self.rounds)]
        for f in self.findings:
            out[f.round].append(f)
        return out


def lower_bound_set(n: int, k: int, bound) -> SemialgebraicSet:
    unit = tuple(int(i == k) for i in range(n))
    return SemialgebraicSet.from_terms(n, ineq=[{unit: Fraction(1), (0,) * n: -to_fraction(bound)}])


def search_plans(model: GraphModel, thetas: Sequence, mu) -> List[RatePlan]:
    """θ per cycle edge from ``thetas``, a shared default θ on the other edges"""
    cycle_edges = sorted({k for c in enumerate_simple_cycles(model) for k in c})
    thetas = [to_fraction(t) for t in thetas]
    mu = to_fraction(mu)
    if len(cycle_edges) > settings.search_edge_cap:
        logger.warning("%d cycle edges exceed the enumeration cap; using uniform rates", len(cycle_edges))
        return [RatePlan.uniform(t, mu) for t in thetas]
    plans, seen = [], set()
    for default in thetas:
        for combo in product(thetas, repeat=len(cycle_edges)):
            per_edge = {k: (t, mu) for k, t in zip(cycle_edges, combo) if t != default}
            key = (default, tuple(sorted(per_edge.items())))
            if key not in seen:
                seen.add(key)
                plans.append(RatePlan((default, mu), per_edge))
    return plans


def prove_bound(model: GraphModel, node: str, k: int, bound, plans: Sequence[RatePlan], degree: int = 1) -> Optional[Attempt]:
    """A re-checked certificate with σ_node = bound − x_k fixed, or None"""
    n = model.n
    unit = tuple(int(i == k) for i in range(n))
    sigma = {unit: Fraction(-1), (0,) * n: to_fraction(bound)}
    for plan in plans:
        a = attempt(model, plan, "sos", degree, fixed={node: sigma}, name=f"{model.name}-bound-{node}-{k}")
        if a.valid:
            return a
    return None


def recursive_search(model: GraphModel, schedule: Optional[SearchSchedule] = None) -> SearchResult:
    """
    Rounds of lower-bound proofs, each proven bound appended to its node
    invariant before the next round

    A bound x_k ≥ t at node v is proven by a certificate whose σ_v is t − x_k;
    since {σ ≤ 0} is invariant, x_k ≥ t holds on every reachable state at v.
    The loop ends when a round proves nothing new.
    """
    schedule = schedule or SearchSchedule()
    base = model.replace(unsafe={}, overflow=None)
    nodes = list(schedule.nodes) if schedule.nodes is not None else sorted(
        {a for c in enumerate_simple_cycles(base) for a, _, _ in c}, key=list(base.nodes).index
    )
    names = list(schedule.variables) if schedule.variables is not None else list(base.variables)
    for v in nodes:
        if v not in base.nodes or v == base.start:
            raise ModelError(f"cannot search at node {v!r}", field="nodes")
    plans = search_plans(base, schedule.thetas, schedule.mu)
    result = SearchResult(model)
    proven = set()
    current = base
    for r in range(schedule.rounds):
        found: List[Finding] = []
        for v in nodes:
            for name in names:
                if (v, name) in proven:
                    continue
                k = base.variables.index(name)
                for bound in schedule.bounds:
                    a = prove_bound(current, v, k, bound, plans, schedule.degree(r))
                    if a is not None:
                        found.append(Finding(v, name, to_fraction(bound), r, a.certificate, a.plan))
                        break
        result.rounds = r + 1
        if not found:
            break
        for f in found:
            proven.add((f.node, f.variable))
            current = current.with_invariant(f.node, lower_bound_set(base.n, base.variables.index(f.variable), f.bound))
            logger.info("round %d: %s", r + 1, f.describe())
        result.findings.extend(found)
    result.model = model
    for f in result.findings:
        result.model = result.model.with_invariant(f.node, lower_bound_set(base.n, base.variables.index(f.variable), f.bound))
    return result


# ---------------------------------------------------------------------------
# smallest certified overflow level
# ---------------------------------------------------------------------------


def _level_attempt(model: Model, level: Fraction, plan: RatePlan, method: str, **options) -> Attempt:
    scaled = level / model.scale
    if isinstance(model, MILM):
        if scaled > 1:
            scaled = Fraction(1)
        return attempt(model, plan, "quadratic", alpha=scaled)
    return attempt(model, plan, method, alpha=tuple(scaled for _ in range(model.n)), **options)


def minimize_overflow_level(
    model: Model,
    plan: RatePlan,
    method: str = "joint",
    lower=None,
    upper=None,
    rel_tol: float = 1e-4,
    attempts: Optional[int] = None,
    **options,
) -> Verdict:
    """
    Bisection for the smallest M with |x_k| ≤ M (joint: ‖x‖₂ ≤ M) certified

    M is in the model's original units. Without ``upper`` the level is
    doubled from ``lower`` (or 1) until a certificate is found. Every tried level
    is written to the verdict trace.
    """
    attempts = settings.bisection_attempts if attempts is None else attempts
    verdict = Verdict("overflow", VerdictStatus.NOT_CERTIFIED)
    lo = to_fraction(lower) if lower is not None else Fraction(0)
    used = 0

    def try_level(level: Fraction) -> Attempt:
        nonlocal used
        used += 1
        a = _level_attempt(model, level, plan, method, **options)
        verdict.note(f"M = {float(level):.6g}: {'certified' if a.valid else 'not certified'}")
        return a

    best: Optional[Attempt] = None
    if upper is not None:
        hi = to_fraction(upper)
        best = try_level(hi)
    else:
        hi = max(lo, Fraction(1))
        while used < attempts:
            best = try_level(hi)
            if best.valid:
                break
            lo, hi = hi, hi * 2
    if best is None or not best.valid:
        verdict.note("no certified level found")
        return verdict
    best_level = hi
    while used < attempts and (hi - lo) > Fraction(rel_tol) * hi:
        mid = (lo + hi) / 2
        a = try_level(mid)
        if a.valid:
            hi, best, best_level = mid, a, mid
        else:
            lo = mid
    cert = best.certificate
    cert.level = best_level
    verdict.certificate = cert
    verdict.level = best_level
    verdict.status = VerdictStatus.CERTIFIED
    verdict.note(f"certified M = {float(best_level):.6g} after {used} levels")
    logger.info("overflow level %.6g certified (%s, %s)", float(best_level), method, plan.describe())
    return verdict


def plans_for_edges(model: GraphModel, rates: Dict[Tuple[str, str, int], Tuple[object, object]], default=(1, 0)) -> RatePlan:
    """A plan from explicit per-edge rates, checking every key names an edge"""
    known = {e.key for e in assembled_edges(model)}
    for key in rates:
        if tuple(key) not in known:
            raise ModelError(f"no edge {tuple(key)} carries a decrease condition", field="rates")
    return RatePlan(default, rates)



def run_verification(
    model: Model,
    method: str = "joint",
    thetas: Optional[Sequence] = None,
    mus: Optional[Sequence] = None,
    degree: int = 2,
    ftt: bool = False,
    bisect: bool = False,
) -> VerifyOutcome:
    """
    Entry point shared by the CLI and the HTTP API

    Models with neither overflow limits nor unsafe sets, or an explicit
    ``bisect``, get the smallest certified overflow level under the first
    (θ, μ) pair. Everything else goes through ``verify_model`` with the
    cartesian product of the given grids.
    """
    thetas = list(thetas) if thetas else None
    mus = list(mus) if mus else None
    nothing_else = isinstance(model, GraphModel) and model.overflow is None and not model.unsafe and not ftt
    if bisect or nothing_else:
        plan = RatePlan.uniform((thetas or settings.theta_grid)[0], (mus or settings.mu_grid)[0])
        verdict = minimize_overflow_level(model, plan, method)
        verdicts = [verdict]
        if verdict.certificate is not None and ftt:
            verdicts.append(ftt_bound(verdict.certificate, model, validated=True))
        return VerifyOutcome(verdicts, verdict.certificate, plan)
    plans = None
    if thetas or mus:
        plans = [RatePlan.uniform(t, m) for t in (thetas or settings.theta_grid) for m in (mus or settings.mu_grid)]
    return verify_model(model, method, plans, degree, ftt)
