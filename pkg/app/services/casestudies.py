"""
Bundled case studies

Every entry has a checked-in file under ``casestudies/`` (the default
parameters) and a builder for other parameter values. Graph models are
built as model-file documents so the builders and the checked-in files go
through the same loader.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.core.certificate import Certificate, CertificateKind, RatePlan, Verdict, VerdictStatus
from app.core.graph import GraphModel, StateVec, TraceStatus
from app.core.milm import MILM
from app.core.polynomials import parse_polynomial
from app.core.rational import format_fraction, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import ModelError
from app.models.model_file import EdgeSpec, MilmSpec, ModelFile, SetSpec
from app.services.abstraction import abstract_float_op
from app.services.certify import check_certificate, conclude_unreachability, ftt_bound
from app.services.frontend import CompileOptions, compile_source
from app.services.invariants import propagate_invariants
from app.services.model_io import load_model, loads_certificate, model_from_file
from app.services.search import SearchSchedule, lower_bound_set, minimize_overflow_level, recursive_search, verify_model
from app.services.simulator import simulate_many

logger = logging.getLogger(__name__)

Model = Union[GraphModel, MILM]

CASESTUDY_DIR = Path(__file__).resolve().parents[2] / "casestudies"

EUCLID_VARIABLES = ["X", "Y", "rem", "dd", "dr", "q", "r"]
FILTER_VARIABLES = ["Z", "Y", "E0", "E1", "S0", "S1", "v"]
PRECISIONS = ("exact", "f64", "f32")
# a-priori range of every filter variable under float rounding
FILTER_FLOAT_RANGE = 8192


def _q(value) -> str:
    return format_fraction(to_fraction(value))


def _edge(source: str, target: str, k: int = 1, update=None, passport=None, uncertain=(), milm=None) -> EdgeSpec:
    return EdgeSpec(
        source=source,
        target=target,
        k=k,
        uncertain=list(uncertain),
        update=dict(update or {}),
        passport=None if passport is None else SetSpec(linear=list(passport)),
        milm=milm,
    )


# ---------------------------------------------------------------------------
# program sources
# ---------------------------------------------------------------------------

PROGRAM1 = """\
// integer division by repeated subtraction
int IntegerDivision(int dd in [1, {M}], int dr in [1, {M}]) {{
  int q = 0;
  int r = dd;
  while (r >= dr) {{
    q = q + 1;
    r = r - dr;
  }}
  return r;
}}
"""

# same loop with a divisor of either sign; dr < 0 never leaves the loop
PROGRAM1_SIGNED = """\
// integer division by repeated subtraction, signed divisor
int IntegerDivision(int dd in [1, {M}], int dr in [-{M}, {M}]) {{
  int q = 0;
  int r = dd;
  while (r >= dr) {{
    q = q + 1;
    r = r - dr;
  }}
  return r;
}}
"""

PROGRAM3 = """\
// turn-rate computation: TurnRate = y / x at L6 needs x != 0
L0: real x = 0, y = 0;
L1: while (true) {
  L2: y = nondet(-4, 4);
  L3: x = (5 * sin(y) + 1) / 3;
  L4: if (x > -1) {
    L5: x = x + 1309/1250;
    L6: assert(x != 0);
  } else {
    L8: skip;
  }
}
"""

PROGRAM4 = """\
// Euclidean division: greatest common divisor by repeated integer division
F0: int IntegerDivision(int dd, int dr) {{
  F1: int q = 0, r = dd;
  F2: while (r >= dr) {{
    F3: q = q + 1;
    F4: r = r - dr;
  }}
  Fend: return r;
}}

L0: int main(int X in [1, {M}], int Y in [1, {M}]) {{
  L1: int rem = 0;
  L2: while (Y > 0) {{
    L3: rem = IntegerDivision(X, Y);
    L4: X = Y;
    L5: Y = rem;
  }}
  Lend: return X;
}}
"""


def program1_source(M: int = 100) -> str:
    return PROGRAM1.format(M=M)


def program1_signed_source(M: int = 100) -> str:
    return PROGRAM1_SIGNED.format(M=M)


def program4_source(M: int = 100) -> str:
    return PROGRAM4.format(M=M)


def program1(M: int = 100) -> GraphModel:
    return compile_source(program1_source(M), CompileOptions(name="integer-division"))


def program1_signed(M: int = 100) -> GraphModel:
    return compile_source(program1_signed_source(M), CompileOptions(name="integer-division-signed"))


def program3_compiled() -> GraphModel:
    """Program 3 from source; sin(y) enters as its range [-1, 1]"""
    return compile_source(PROGRAM3, CompileOptions(name="turn-rate"))


def euclid_full(M: int = 100) -> GraphModel:
    return compile_source(program4_source(M), CompileOptions(name="euclid"))


# ---------------------------------------------------------------------------
# model documents
# ---------------------------------------------------------------------------


def example2_document(M: int = 100) -> ModelFile:
    """Integer division as one MILM over [dd, dr, q, r] / M"""
    step = f"1/{M}"
    milm = MilmSpec(
        n=4,
        n_w=3,
        F=[
            ["1", "0", "0", "0", "0", "0", "0", "0"],
            ["0", "1", "0", "0", "0", "0", "0", "0"],
            ["0", "0", "1", "0", "0", "0", "0", step],
            ["0", "-1", "0", "1", "0", "0", "0", "0"],
        ],
        H=[
            ["0", "2", "0", "-2", "1", "0", "0", "1"],
            ["0", "-2", "0", "0", "0", "1", "0", "1"],
            ["-2", "0", "0", "0", "0", "0", "1", "1"],
        ],
        H0=[
            ["1", "0", "0", "-1", "0", "0", "0", "0"],
            ["0", "0", "1", "0", "0", "0", "0", "0"],
            ["0", "-2", "0", "0", "0", "1", "0", "1"],
            ["-2", "0", "0", "0", "0", "0", "1", "1"],
        ],
        scale=str(M),
        variables=["dd", "dr", "q", "r"],
    )
    return ModelFile(format="milm", name="integer-division-milm", variables=milm.variables, milm=milm)


def program3_document() -> ModelFile:
    """Turn-rate computation whose division by x must never see x = 0"""
    return ModelFile(
        name="turn-rate",
        variables=["x"],
        nodes=["L0", "L1", "L4", "L5", "L6", "L8", "exit"],
        start="L0",
        terminal="exit",
        edges=[
            _edge("L0", "L1"),
            _edge("L1", "L4", update={"x": "1/3 + 5/3*w"}, uncertain=["w"]),
            _edge("L4", "L5", passport=["x + 1 >= 0"]),
            _edge("L4", "L8", passport=["-x - 1 >= 0"]),
            _edge("L5", "L6", update={"x": "x + 1309/1250"}),
            _edge("L6", "L1"),
            _edge("L8", "L1"),
        ],
        unsafe={"L6": [SetSpec(linear=["x == 0"])]},
    )


PROGRAM3_CERTIFICATE = """\
{
  "version": 1,
  "kind": "polynomial",
  "variables": ["x"],
  "functions": {
    "L0": "-x^2 + 2*x - 3",
    "L1": "-x^2 + 2*x - 3",
    "L4": "-x^2 + 2*x - 3",
    "L8": "-x^2 + 2*x - 3",
    "L5": "-(x + 1309/1250)^2 - 100*x - 2543/25",
    "L6": "-x^2 - 100*x + 1"
  },
  "rates": {"default": ["0", "1"], "edges": [{"from": "L5", "to": "L6", "k": 1, "theta": "1", "mu": "1"}]},
  "provenance": {"kind": "functions", "exact": true}
}
"""


def program3_certificate() -> Certificate:
    return loads_certificate(PROGRAM3_CERTIFICATE)


def euclid_document(M: int = 100, equalities: bool = True) -> ModelFile:
    """
    Euclidean division with the callee's loop head F2 as the only loop node

    ``equalities`` adds dd = X, dr = Y at F2 (the call site passes X, Y).
    """
    invariants = {"Lend": SetSpec(linear=["-Y >= 0"])}
    if equalities:
        invariants["F2"] = SetSpec(linear=["dd - X == 0", "dr - Y == 0"])
    return ModelFile(
        name="euclid-reduced",
        variables=EUCLID_VARIABLES,
        nodes=["L0", "F2", "Lend"],
        start="L0",
        terminal="Lend",
        edges=[
            _edge("L0", "F2", update={"rem": "0", "dd": "X", "dr": "Y", "q": "0", "r": "X"}),
            _edge("F2", "F2", 1, update={"q": "q + 1", "r": "r - dr"}, passport=["r - dr >= 0"]),
            _edge(
                "F2", "F2", 2,
                update={"X": "Y", "Y": "r", "rem": "r", "dd": "Y", "dr": "r", "q": "0", "r": "Y"},
                passport=["r - 1 >= 0", "dr - r - 1 >= 0"],
            ),
            _edge("F2", "Lend", update={"X": "Y", "Y": "r", "rem": "r"}, passport=["dr - r - 1 >= 0", "-r >= 0"]),
            _edge("Lend", "Lend"),
        ],
        init=SetSpec(linear=["X - 1 >= 0", f"{M} - X >= 0", "Y - 1 >= 0", f"{M} - Y >= 0"]),
        invariants=invariants,
    )


def _milm_rows(rows: Sequence[Dict[int, str]], width: int) -> List[List[str]]:
    return [[row.get(c, "0") for c in range(width)] for row in rows]


def euclid_milghm_document(M: int = 100) -> ModelFile:
    """
    The reduced Euclidean division over x / M with both F2 self-loops as
    MILM blocks; the guards become H rows with slacks w ∈ [-1, 1]
    """
    X, Y, rem, dd, dr, q, r = range(7)
    step = f"1/{M}"
    identity = {k: {k: "1"} for k in range(7)}
    divide = MilmSpec(
        n=7,
        n_w=1,
        F=_milm_rows([identity[X], identity[Y], identity[rem], identity[dd], identity[dr], {q: "1", 8: step}, {r: "1", dr: "-1"}], 9),
        H=_milm_rows([{r: "1", dr: "-1", 7: "-1", 8: "-1"}], 9),
        X0=[],
        variables=EUCLID_VARIABLES,
    )
    swap = MilmSpec(
        n=7,
        n_w=2,
        F=_milm_rows([{Y: "1"}, {r: "1"}, {r: "1"}, {Y: "1"}, {r: "1"}, {}, {Y: "1"}], 10),
        H=_milm_rows(
            [
                {r: "1", 7: "-1/2", 9: _q(-Fraction(1, M) - Fraction(1, 2))},
                {dr: "1", r: "-1", 8: "-1", 9: _q(-Fraction(1, M) - 1)},
            ],
            10,
        ),
        X0=[],
        variables=EUCLID_VARIABLES,
    )
    return ModelFile(
        name="euclid-milghm",
        variables=EUCLID_VARIABLES,
        nodes=["L0", "F2", "Lend"],
        start="L0",
        terminal="Lend",
        edges=[
            _edge("L0", "F2", update={"rem": "0", "dd": "X", "dr": "Y", "q": "0", "r": "X"}),
            _edge("F2", "F2", 1, passport=["r - dr >= 0"], milm=divide),
            _edge("F2", "F2", 2, passport=[f"r - {step} >= 0", f"dr - r - {step} >= 0"], milm=swap),
            _edge("F2", "Lend", update={"X": "Y", "Y": "r", "rem": "r"}, passport=[f"dr - r - {step} >= 0", "-r >= 0"]),
            _edge("Lend", "Lend"),
        ],
        init=SetSpec(linear=[f"{M}*X - 1 >= 0", "1 - X >= 0", f"{M}*Y - 1 >= 0", "1 - Y >= 0"]),
        invariants={"F2": SetSpec(linear=["dd - X == 0", "dr - Y == 0"]), "Lend": SetSpec(linear=["-Y >= 0"])},
        scale=str(M),
    )


def _rounding(ops: int, delta: Fraction, name: str) -> str:
    return f" + {_q(ops * delta)}*{name}"


def filter_document(B=0, precision: str = "exact", alpha=FILTER_FLOAT_RANGE) -> ModelFile:
    """
    Second-order filter fed by a saturated input w ∈ [-1, 1] scaled by B

    With a float ``precision`` every assignment carries the accumulated
    rounding error of its k operations, k·δ·e with e ∈ [-1, 1], valid while
    every intermediate stays within ±alpha.
    """
    if precision not in PRECISIONS:
        raise ModelError(f"unknown precision {precision!r}; expected one of {PRECISIONS}", field="precision")
    B = to_fraction(B)
    delta = None if precision == "exact" else abstract_float_op("+", precision, alpha).error

    def assign(expr: str, ops: int, uncertain: List[str]) -> str:
        if delta is None or ops == 0:
            return expr
        uncertain.append("e")
        return expr + _rounding(ops, delta, "e")

    init_u: List[str] = []
    init_z = assign("1/5*Z + 5", 2, init_u)
    input_u: List[str] = ["w"] if B else []
    input_z = assign("9/10*Z + 35" + (f" + {_q(B)}*w" if B else ""), 4 if B else 2, input_u)
    mix_u: List[str] = []
    mix_y = assign("1/2*Z - 7/10*E0 + 2/5*E1 + 3/2*S0 - 7/10*S1", 9, mix_u)
    return ModelFile(
        name=f"filter-B{_q(B)}-{precision}",
        variables=FILTER_VARIABLES,
        nodes=["L0", "L1", "L3", "L4", "L5", "L6", "Lend", "F0", "F2", "F3", "F6", "F7", "F9", "F13"],
        start="L0",
        terminal="Lend",
        edges=[
            _edge("L0", "L1"),
            _edge("L1", "L3", update={"Z": init_z, "v": "1"}, uncertain=init_u),
            _edge("L3", "L4"),
            _edge("L4", "L5", update={"Z": input_z}, uncertain=input_u),
            _edge("L5", "F0"),
            _edge("F0", "F2"),
            _edge("F2", "F3", passport=["v - 1 == 0"]),
            _edge("F2", "F6", passport=["v + 1 == 0"]),
            _edge("F3", "F9", update={"Y": "Z", "E0": "Z", "S0": "Z"}),
            _edge("F6", "F7"),
            _edge("F7", "F9", update={"Y": mix_y}, uncertain=mix_u),
            _edge("F9", "F13", update={"E0": "Z", "E1": "E0", "S0": "Y", "S1": "S0"}),
            _edge("F13", "L6"),
            _edge("L6", "L3", update={"v": "-1"}),
        ],
        init=SetSpec(linear=[f"{name} == 0" for name in FILTER_VARIABLES[:-1]] + ["v - 1 == 0"]),
    )


def program3() -> GraphModel:
    return model_from_file(program3_document())


def example2_milm(M: int = 100) -> MILM:
    return model_from_file(example2_document(M))


def euclid_reduced(M: int = 100, equalities: bool = True) -> GraphModel:
    return model_from_file(euclid_document(M, equalities))


def euclid_milghm(M: int = 100) -> GraphModel:
    return model_from_file(euclid_milghm_document(M))


def filter_model(B=0, precision: str = "exact", alpha=FILTER_FLOAT_RANGE) -> GraphModel:
    return model_from_file(filter_document(B, precision, alpha))


# ---------------------------------------------------------------------------
# explicit certificates for the Euclidean division
# ---------------------------------------------------------------------------

# lower bounds at F2 and the round in which they become provable without the
# call-site equalities
EUCLID_LOWER_BOUNDS: Tuple[Tuple[str, int, int], ...] = (
    ("q", 0, 0), ("Y", 1, 0), ("dr", 1, 0), ("rem", 0, 0), ("r", 0, 1), ("dd", 1, 1), ("X", 1, 1),
)

# σ_F2 whose sublevel set bounds each variable by M, with the rates of the
# two self-loops; applied in order, each proof may use the earlier ones
EUCLID_UPPER_SUITE: Tuple[Tuple[str, str, Tuple[int, int]], ...] = (
    ("Y", "Y - M", (1, 1)),
    ("dr", "dr - M", (1, 1)),
    ("X", "X - M", (1, 0)),
    ("dd", "dd - M", (1, 0)),
    ("r", "r - M", (1, 0)),
    ("rem", "rem - M", (1, 0)),
    ("q", "q + r - M", (1, 0)),
)

EUCLID_FTT = "Y + r - 2*M + Y*M - M^2"

_DIVIDE = ("F2", "F2", 1)
_SWAP = ("F2", "F2", 2)


def euclid_certificate(M: int, sigma: str, divide: Tuple[object, object], swap: Tuple[object, object]) -> Certificate:
    """σ at F2 with the given self-loop rates; σ ≡ 0 at L0 and Lend with (θ, μ) = (0, 0)"""
    text = sigma.replace("^", "**").replace("M", f"({M})")
    terms = parse_polynomial(text, EUCLID_VARIABLES)
    plan = RatePlan((0, 0), {_DIVIDE: divide, _SWAP: swap})
    kind = CertificateKind.LINEAR if all(sum(e) <= 1 for e in terms) else CertificateKind.POLYNOMIAL
    return Certificate(kind, tuple(EUCLID_VARIABLES), {"F2": terms}, plan, provenance={"kind": "functions", "exact": True})


def euclid_lower_invariants(model: GraphModel) -> GraphModel:
    for name, bound, _ in EUCLID_LOWER_BOUNDS:
        model = model.with_invariant("F2", lower_bound_set(model.n, EUCLID_VARIABLES.index(name), bound))
    return model


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class CaseReport:
    name: str
    parameters: Dict[str, object]
    verdicts: List[Verdict] = field(default_factory=list)
    rows: List[Dict[str, object]] = field(default_factory=list)
    certificate: Optional[Certificate] = None
    notes: List[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return bool(self.verdicts) and all(v.certified for v in self.verdicts)


def run_program1(M: int = 100) -> CaseReport:
    model = propagate_invariants(program1(M))
    outcome = verify_model(model, "sos", degree=2, ftt=True)
    report = CaseReport("program1", {"M": M}, outcome.verdicts, certificate=outcome.certificate)
    for v in outcome.verdicts:
        report.rows.append({"property": v.property, "status": v.status.value, "T_u": None if v.T_u is None else float(v.T_u)})
    return report


def run_program1_signed(M: int = 100, dd: int = 5, dr: int = -1, steps: Optional[int] = None) -> CaseReport:
    """Simulate one input; a negative divisor keeps the loop running until the budget is spent"""
    model = program1_signed(M)
    trace = simulate_many(model, [StateVec(model.start, (dd, dr, 0, 0))], runs=1, max_steps=steps)[0]
    q = [s.x[2] for s in trace.states]
    verdict = Verdict("termination", VerdictStatus.CERTIFIED)
    if trace.status != TraceStatus.REACHED_TERMINAL:
        verdict.status = VerdictStatus.NOT_CERTIFIED
        verdict.note(f"dd = {dd}, dr = {dr}: {trace.status.value} after {trace.steps} steps, q = {q[-1]}")
    report = CaseReport("program1-signed", {"M": M, "dd": dd, "dr": dr}, [verdict])
    report.rows.append({"status": trace.status.value, "steps": trace.steps, "q": q[-1]})
    return report


def run_example2(M: int = 100) -> CaseReport:
    milm = example2_milm(M)
    theta, mu = Fraction(1), Fraction(1, 2 * M)
    outcome = verify_model(milm, "quadratic", plans=[RatePlan.uniform(theta, mu)], ftt=True)
    report = CaseReport("example2", {"M": M}, outcome.verdicts, certificate=outcome.certificate)
    report.rows.append({"theta": float(theta), "mu": float(mu), "certified": outcome.certified})
    return report


def run_program3() -> CaseReport:
    model = program3()
    report = CaseReport("program3", {})
    cert = program3_certificate()
    check = check_certificate(model, cert)
    report.notes.append(f"explicit certificate: {'valid' if check.valid else 'violated ' + ', '.join(check.violated[:3])}")
    report.verdicts.append(conclude_unreachability(cert, model, "L6", validated=check.valid))
    report.certificate = cert
    searched = verify_model(model, "sos", degree=2)
    report.verdicts.extend(searched.verdicts)
    report.rows.append({"certificate": "explicit", "valid": check.valid})
    report.rows.append({"certificate": "searched", "valid": searched.certified})
    return report


def run_program3_source(runs: int = 20, steps: int = 400) -> CaseReport:
    """Simulate the compiled program; no run may reach L6 with x = 0"""
    model = program3_compiled()
    traces = simulate_many(model, [StateVec(model.start, (0, 0))], runs=runs, max_steps=steps)
    verdict = Verdict("division-by-zero", VerdictStatus.CERTIFIED, "L6")
    for r, trace in enumerate(traces):
        if trace.status == TraceStatus.UNSAFE_HIT:
            verdict.status = VerdictStatus.NOT_CERTIFIED
            verdict.note(f"run {r}: {trace.note}")
    report = CaseReport("program3-source", {"runs": runs}, [verdict])
    report.rows.append({"nodes": len(model.nodes), "edges": len(model.edges), "runs": len(traces)})
    report.notes.append("simulation check only; verification runs on the hand-built abstraction")
    return report


def run_euclid(M: int = 100, search: bool = True) -> CaseReport:
    """
    Lower bounds by rounds, upper bounds by the explicit suite, then
    termination from the F2 certificate with T_u ≤ 2M²
    """
    report = CaseReport("euclid", {"M": M})
    if search:
        found = recursive_search(euclid_reduced(M, equalities=False), SearchSchedule(nodes=["F2"]))
        for r, round_ in enumerate(found.by_round()):
            report.rows += [{"round": r + 1, "proves": f.describe()} for f in round_]
        model = found.model.with_invariant("F2", euclid_reduced(M).invariant("F2"))
    else:
        model = euclid_lower_invariants(euclid_reduced(M))

    upper = Verdict("boundedness", VerdictStatus.CERTIFIED, "F2")
    for name, sigma, (divide, swap) in EUCLID_UPPER_SUITE:
        cert = euclid_certificate(M, sigma, (divide, 0), (swap, 0))
        check = check_certificate(model, cert)
        upper.note(f"{sigma} ≤ 0: {'valid' if check.valid else 'violated ' + ', '.join(check.violated[:3])}")
        if not check.valid:
            upper.status = VerdictStatus.NOT_CERTIFIED
            upper.binding.append(name)
            continue
        model = model.with_invariant("F2", _sublevel_set(model.n, cert))
        report.rows.append({"bound": f"{name} ≤ {M}", "sigma": sigma})
    report.verdicts.append(upper)

    cert = euclid_certificate(M, EUCLID_FTT, (1, 1), (1, 1))
    verdict = ftt_bound(cert, model)
    report.verdicts.append(verdict)
    report.certificate = cert
    if verdict.T_u is not None:
        report.rows.append({"T_u": float(verdict.T_u), "2M^2": 2 * M * M})
    return report


def _sublevel_set(n: int, cert: Certificate, node: str = "F2") -> SemialgebraicSet:
    return SemialgebraicSet.from_terms(n, ineq=[{e: -c for e, c in cert.function(node).items()}])


def run_euclid_milghm(M: int = 100) -> CaseReport:
    """Smallest γ with ‖x‖₂ ≤ γ, then termination under (θ, μ) = (1, 10⁻³)"""
    model = euclid_milghm(M)
    plan = RatePlan.uniform(1, Fraction(1, 1000))
    verdict = minimize_overflow_level(model, plan, "joint", lower=M, upper=8 * M)
    report = CaseReport("euclid-milghm", {"M": M}, [verdict], certificate=verdict.certificate)
    if verdict.certified:
        ftt = ftt_bound(verdict.certificate, model, validated=True)
        report.verdicts.append(ftt)
        report.rows.append({
            "gamma": float(verdict.level),
            "gamma/M": float(verdict.level / M),
            "T_u": None if ftt.T_u is None else float(ftt.T_u),
        })
    return report


def run_filter(B=0, method: str = "joint", precision: str = "exact") -> CaseReport:
    """Smallest certified M under (θ, μ) = (0.98, 0); joint bounds ‖x‖₂, per-coordinate ‖x‖∞"""
    model = filter_model(B, precision)
    plan = RatePlan.uniform(Fraction(49, 50), 0)
    verdict = minimize_overflow_level(model, plan, method, lower=0, upper=4096)
    report = CaseReport("filter", {"B": B, "method": method, "precision": precision}, [verdict], certificate=verdict.certificate)
    if verdict.certified and precision != "exact" and 4 * verdict.level > FILTER_FLOAT_RANGE:
        # |Y| ≤ 3.8·M bounds the intermediates of the mixing update
        verdict.status = VerdictStatus.NOT_CERTIFIED
        verdict.note(f"M = {float(verdict.level):.6g} leaves the rounding range ±{FILTER_FLOAT_RANGE}")
    report.rows.append({"B": B, "method": method, "precision": precision, "M": None if verdict.level is None else float(verdict.level)})
    return report


def run_euclid_full(M: int = 100, runs: int = 20) -> CaseReport:
    """Simulate the compiled program and compare its result with gcd(X, Y)"""
    model = euclid_full(M)
    rng = np.random.default_rng(settings.seed)
    pairs = [tuple(int(a) for a in rng.integers(1, M + 1, size=2)) for _ in range(runs)]
    ix, iy = model.variables.index("X"), model.variables.index("Y")
    inits = []
    for a, b in pairs:
        x = [0] * model.n
        x[ix], x[iy] = a, b
        inits.append(StateVec(model.start, tuple(x)))
    traces = simulate_many(model, inits, runs=len(inits))
    verdict = Verdict("gcd", VerdictStatus.CERTIFIED)
    for (a, b), trace in zip(pairs, traces):
        done = trace.status == TraceStatus.REACHED_TERMINAL
        result = trace.states[-1].x[ix] if done else None
        if result != math.gcd(a, b):
            verdict.status = VerdictStatus.NOT_CERTIFIED
            verdict.note(f"gcd({a}, {b}): {trace.status.value}, X = {result}")
    report = CaseReport("euclid-full", {"M": M}, [verdict])
    report.rows.append({"nodes": len(model.nodes), "edges": len(model.edges), "runs": len(traces)})
    report.notes.append("simulation check only; verification runs on the reduced model")
    return report


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CaseStudy:
    name: str
    title: str
    filename: str
    build: Callable[..., Model]
    run: Callable[..., CaseReport]
    parameters: Tuple[str, ...] = ()


CASESTUDIES: Dict[str, CaseStudy] = {
    c.name: c
    for c in (
        CaseStudy("program1", "Integer division by repeated subtraction", "program1.lc", program1, run_program1, ("M",)),
        CaseStudy("program1-signed", "Integer division with a divisor of either sign", "program1_signed.lc", program1_signed, run_program1_signed, ("M",)),
        CaseStudy("example2", "Integer division as a mixed-integer linear model", "example2_milm.json", example2_milm, run_example2, ("M",)),
        CaseStudy("program3", "Division by zero in a turn-rate computation", "program3.json", program3, run_program3),
        CaseStudy("program3-source", "Turn-rate computation, compiled from source", "program3.lc", program3_compiled, run_program3_source, ("runs",)),
        CaseStudy("euclid", "Euclidean division, reduced graph model", "euclid_reduced.json", euclid_reduced, run_euclid, ("M", "search")),
        CaseStudy("euclid-full", "Euclidean division, compiled from source", "program4_euclid.lc", euclid_full, run_euclid_full, ("M", "runs")),
        CaseStudy("euclid-milghm", "Euclidean division with MILM-labeled loops", "euclid_milghm.json", euclid_milghm, run_euclid_milghm, ("M",)),
        CaseStudy("filter", "Second-order filter in safety-critical code", "filter.json", filter_model, run_filter, ("B", "method", "precision")),
    )
}


def get_casestudy(name: str) -> CaseStudy:
    if name not in CASESTUDIES:
        raise ModelError(f"unknown case study {name!r}; expected one of {sorted(CASESTUDIES)}", field="name")
    return CASESTUDIES[name]


def casestudy_path(name: str) -> Path:
    return CASESTUDY_DIR / get_casestudy(name).filename


def load_casestudy(name: str) -> Model:
    """The checked-in model of a case study"""
    path = casestudy_path(name)
    if path.suffix == ".lc":
        return compile_source(path.read_text(encoding="utf-8"), CompileOptions(name=_program_name(name)))
    return load_model(path)


def _program_name(name: str) -> str:
    return {"program1": "integer-division", "program1-signed": "integer-division-signed", "program3-source": "turn-rate", "euclid-full": "euclid"}.get(name, name)


def extra_models() -> Dict[str, Path]:
    """Model files found in the configured case-study directory"""
    if not settings.casestudy_dir:
        return {}
    root = Path(settings.casestudy_dir)
    return {p.stem: p for p in sorted(root.glob("*.json"))} if root.is_dir() else {}


def run_casestudy(name: str, **parameters) -> CaseReport:
    c = get_casestudy(name)
    unknown = set(parameters) - set(c.parameters)
    if unknown:
        raise ModelError(f"{name} takes {list(c.parameters) or 'no parameters'}, got {sorted(unknown)}", field="parameters")
    logger.info("running case study %s with %s", name, parameters or "defaults")
    report = c.run(**{k: v for k, v in parameters.items() if v is not None})
    logger.info("case study %s: %s", name, "certified" if report.certified else "not certified")
    return report
