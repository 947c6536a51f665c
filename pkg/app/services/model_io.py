"""
Loading and saving models in the native text format

Files are JSON documents validated by ``app.models.model_file``; numbers are
exact rationals written as "p/q" and constraints are polynomial expressions
over the named variables.
"""

import logging
import re
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from pydantic import ValidationError

from app.core.certificate import Certificate, CertificateKind, RatePlan
from app.core.graph import Edge, GraphModel, MILGHM, TransitionLabel
from app.core.milm import MILM
from app.core.polynomials import format_terms, make_symbols, parse_polynomial, poly_terms, total_degree
from app.core.rational import format_fraction, qeye, qmatrix, qzeros, to_fraction
from app.core.semialgebraic import SemialgebraicSet, terms_matrix, terms_row
from app.errors import ModelError
from app.models.certificate import CertificateFile, EdgeRate, RateSpec
from app.models.model_file import EdgeSpec, MilmSpec, ModelFile, SetSpec

logger = logging.getLogger(__name__)

Model = Union[GraphModel, MILM]

_RELATION = re.compile(r"(>=|<=|==)")


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------


def _parse_expr(text: str, names: Sequence[str], where: str) -> Dict[Tuple[int, ...], Fraction]:
    gens = make_symbols(names)
    local = dict(zip(names, gens))
    try:
        expr = sympy.sympify(text.replace("^", "**"), locals=local, rational=True)
        unknown = expr.free_symbols - set(gens)
        if unknown:
            raise ModelError(f"unknown name {sorted(map(str, unknown))[0]!r} in {text!r}", field=where)
        return poly_terms(sympy.Poly(sympy.expand(expr), *gens, domain="QQ"))
    except ModelError:
        raise
    except (sympy.SympifyError, sympy.PolynomialError, SyntaxError, TypeError) as e:
        raise ModelError(f"cannot parse {text!r}: {e}", field=where)


def _parse_constraint(text: str, names: Sequence[str], where: str):
    parts = _RELATION.split(text)
    if len(parts) != 3:
        raise ModelError(f"expected exactly one of >=, <=, == in {text!r}", field=where)
    lhs, op, rhs = parts
    left = _parse_expr(lhs, names, where)
    right = _parse_expr(rhs, names, where)
    terms = dict(left)
    for e, c in right.items():
        terms[e] = terms.get(e, Fraction(0)) - c
    if op == "<=":
        terms = {e: -c for e, c in terms.items()}
    return {e: c for e, c in terms.items() if c != 0}, op == "=="


def set_from_spec(spec: Optional[SetSpec], names: Sequence[str], where: str) -> SemialgebraicSet:
    n = len(names)
    if spec is None:
        return SemialgebraicSet.universal(n)
    ineq, eq, qineq, qeq = [], [], [], []
    for text in spec.linear:
        terms, is_eq = _parse_constraint(text, names, where)
        if any(total_degree(e) > 1 for e in terms):
            raise ModelError(f"{text!r} is listed as linear but has degree > 1", field=where)
        (eq if is_eq else ineq).append(terms_row(terms, n))
    for text in spec.quadratic:
        terms, is_eq = _parse_constraint(text, names, where)
        if any(total_degree(e) > 2 for e in terms):
            raise ModelError(f"{text!r} has degree > 2", field=where)
        (qeq if is_eq else qineq).append(terms_matrix(terms, n))
    return SemialgebraicSet(n, qmatrix(ineq, n + 1), qmatrix(eq, n + 1), tuple(qineq), tuple(qeq))


def _row_terms(row, n: int):
    terms = {}
    for i in range(n + 1):
        c = to_fraction(row[i])
        if c != 0:
            e = [0] * n
            if i < n:
                e[i] = 1
            terms[tuple(e)] = c
    return terms


def _matrix_terms(Q, n: int):
    terms: Dict[Tuple[int, ...], Fraction] = {}
    for i in range(n + 1):
        for j in range(n + 1):
            c = to_fraction(Q[i, j])
            if c == 0:
                continue
            e = [0] * n
            for k in (i, j):
                if k < n:
                    e[k] += 1
            terms[tuple(e)] = terms.get(tuple(e), Fraction(0)) + c
    return {e: c for e, c in terms.items() if c != 0}


def set_to_spec(s: SemialgebraicSet, names: Sequence[str]) -> SetSpec:
    n = len(names)
    linear = [f"{format_terms(_row_terms(r, n), names)} >= 0" for r in s.lin_ineq]
    linear += [f"{format_terms(_row_terms(r, n), names)} == 0" for r in s.lin_eq]
    quadratic = [f"{format_terms(_matrix_terms(q, n), names)} >= 0" for q in s.quad_ineq]
    quadratic += [f"{format_terms(_matrix_terms(r, n), names)} == 0" for r in s.quad_eq]
    return SetSpec(linear=linear, quadratic=quadratic)


# ---------------------------------------------------------------------------
# MILM blocks
# ---------------------------------------------------------------------------


def _matrix_from(rows, field: str, cols: int) -> np.ndarray:
    try:
        return qmatrix([[to_fraction(v) for v in r] for r in rows], cols)
    except (ValueError, ZeroDivisionError) as e:
        raise ModelError(f"bad number: {e}", field=field)


def milm_from_spec(spec: MilmSpec, where: str = "milm") -> MILM:
    n_e = spec.n + spec.n_w + spec.n_v + 1
    for name, rows in (("F", spec.F), ("H", spec.H), ("H0", spec.H0 or [])):
        for r, row in enumerate(rows):
            if len(row) != n_e:
                raise ModelError(f"row {r} has {len(row)} columns, expected n_e = {n_e}", field=f"{where}.{name}")
    return MILM(
        _matrix_from(spec.F, f"{where}.F", n_e),
        _matrix_from(spec.H, f"{where}.H", n_e),
        spec.n,
        spec.n_w,
        spec.n_v,
        None if spec.H0 is None else _matrix_from(spec.H0, f"{where}.H0", n_e),
        None if spec.X0 is None else tuple(tuple(to_fraction(v) for v in s) for s in spec.X0),
        to_fraction(spec.scale),
        tuple(spec.variables),
    )


def _fmt_rows(m: np.ndarray) -> List[List[str]]:
    return [[format_fraction(to_fraction(v)) for v in row] for row in m]


def milm_to_spec(m: MILM) -> MilmSpec:
    return MilmSpec(
        n=m.n,
        n_w=m.n_w,
        n_v=m.n_v,
        F=_fmt_rows(m.F),
        H=_fmt_rows(m.H),
        H0=None if m.H0 is None else _fmt_rows(m.H0),
        X0=None if m.X0 is None else [[format_fraction(v) for v in s] for s in m.X0],
        scale=format_fraction(m.scale),
        variables=list(m.variables),
    )


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------


def _label_from_spec(spec: EdgeSpec, variables: Sequence[str], where: str) -> TransitionLabel:
    n = len(variables)
    if spec.milm is not None:
        if spec.update or spec.uncertain or spec.binary:
            raise ModelError("an edge carries either a MILM block or an update", field=where)
        return TransitionLabel(qeye(n), milm=milm_from_spec(spec.milm, f"{where}.milm"))
    names = list(variables) + list(spec.uncertain) + list(spec.binary)
    if len(set(names)) != len(names):
        raise ModelError("uncertainty names clash with variable names", field=where)
    unknown = set(spec.update) - set(variables)
    if unknown:
        raise ModelError(f"update of unknown variable {sorted(unknown)[0]!r}", field=f"{where}.update")
    nw, nv = len(spec.uncertain), len(spec.binary)
    A, B, C, E = qzeros((n, n)), qzeros((n, nw)), qzeros((n, nv)), qzeros(n)
    higher = []
    for r, var in enumerate(variables):
        terms = _parse_expr(spec.update.get(var, var), names, f"{where}.update.{var}")
        extra = {}
        for e, c in terms.items():
            d = total_degree(e)
            if d == 0:
                E[r] = c
            elif d == 1:
                col = e.index(1)
                if col < n:
                    A[r, col] = c
                elif col < n + nw:
                    B[r, col - n] = c
                else:
                    C[r, col - n - nw] = c
            else:
                extra[e] = c
        higher.append(extra)
    constraints = set_from_spec(spec.constraints, names, f"{where}.constraints")
    return TransitionLabel(A, B, C, E, constraints, tuple(higher) if any(higher) else None)


def _fresh(prefix: str, count: int, taken: Sequence[str]) -> List[str]:
    while any(f"{prefix}{i + 1}" in taken for i in range(count)):
        prefix = "_" + prefix
    return [f"{prefix}{i + 1}" for i in range(count)]


def edge_to_spec(edge: Edge, variables: Sequence[str]) -> EdgeSpec:
    label = edge.label
    n = len(variables)
    passport = None if edge.passport.is_universal else set_to_spec(edge.passport, variables)
    if label.milm is not None:
        return EdgeSpec(source=edge.source, target=edge.target, k=edge.k, milm=milm_to_spec(label.milm), passport=passport)
    ws = _fresh("w", label.n_w, variables)
    vs = _fresh("v", label.n_v, list(variables) + ws)
    names = list(variables) + ws + vs
    M = label.stacked()
    update = {}
    for r, var in enumerate(variables):
        terms = {}
        for c in range(len(names)):
            a = to_fraction(M[r, c])
            if a != 0:
                e = [0] * len(names)
                e[c] = 1
                terms[tuple(e)] = a
        if to_fraction(label.E[r]) != 0:
            terms[tuple([0] * len(names))] = to_fraction(label.E[r])
        if label.nonlinear is not None:
            terms.update(label.nonlinear[r])
        unit = tuple(1 if c == r else 0 for c in range(len(names)))
        if terms != {unit: Fraction(1)}:
            update[var] = format_terms(terms, names)
    constraints = None if label.constraints.is_universal else set_to_spec(label.constraints, names)
    return EdgeSpec(
        source=edge.source, target=edge.target, k=edge.k, uncertain=ws, binary=vs,
        update=update, constraints=constraints, passport=passport,
    )


# ---------------------------------------------------------------------------
# whole models
# ---------------------------------------------------------------------------


def model_from_file(doc: ModelFile) -> Model:
    if doc.format == "milm":
        if doc.milm is None:
            raise ModelError("a MILM file needs a 'milm' section", field="milm")
        return milm_from_spec(doc.milm)
    names = list(doc.variables)
    if len(set(names)) != len(names):
        raise ModelError("duplicate variable names", field="variables")
    edges = []
    for i, spec in enumerate(doc.edges):
        where = f"edges[{i}]"
        label = _label_from_spec(spec, names, where)
        passport = set_from_spec(spec.passport, names, f"{where}.passport")
        edges.append(Edge(spec.source, spec.target, spec.k, label, passport))
    kwargs = dict(
        variables=tuple(names),
        nodes=tuple(doc.nodes),
        edges=tuple(edges),
        init=set_from_spec(doc.init, names, "init"),
        invariants={k: set_from_spec(v, names, f"invariants.{k}") for k, v in doc.invariants.items()},
        unsafe={k: tuple(set_from_spec(s, names, f"unsafe.{k}") for s in v) for k, v in doc.unsafe.items()},
        overflow=None if doc.overflow_limits is None else tuple(to_fraction(a) for a in doc.overflow_limits),
        scale=to_fraction(doc.scale),
        name=doc.name,
    )
    if doc.start is not None:
        kwargs["start"] = doc.start
    if doc.terminal is not None:
        kwargs["terminal"] = doc.terminal
    cls = MILGHM if any(e.label.milm is not None for e in edges) else GraphModel
    return cls(**kwargs)


def model_to_file(model: Model) -> ModelFile:
    if isinstance(model, MILM):
        return ModelFile(format="milm", name="milm", variables=list(model.variables), milm=milm_to_spec(model))
    names = list(model.variables)
    return ModelFile(
        format="graph",
        name=model.name,
        variables=names,
        nodes=list(model.nodes),
        start=model.start,
        terminal=model.terminal,
        edges=[edge_to_spec(e, names) for e in model.edges],
        init=set_to_spec(model.init, names),
        invariants={k: set_to_spec(v, names) for k, v in model.invariants.items()},
        unsafe={k: [set_to_spec(s, names) for s in v] for k, v in model.unsafe.items()},
        overflow_limits=None if model.overflow is None else [format_fraction(a) for a in model.overflow],
        scale=format_fraction(model.scale),
    )


def _validation_error(e: ValidationError) -> ModelError:
    first = e.errors()[0]
    field = ".".join(str(p) for p in first["loc"]) or None
    return ModelError(first["msg"], field=field)


def loads_model(text: str) -> Model:
    try:
        doc = ModelFile.model_validate_json(text)
    except ValidationError as e:
        raise _validation_error(e)
    return model_from_file(doc)


def dumps_model(model: Model) -> str:
    return model_to_file(model).model_dump_json(indent=2, by_alias=True, exclude_none=True)


def load_model(path: Union[str, Path]) -> Model:
    """Read a model file; schema problems raise ModelError naming the field"""
    text = Path(path).read_text(encoding="utf-8")
    model = loads_model(text)
    logger.info("loaded %s from %s", type(model).__name__, path)
    return model


def save_model(model: Model, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_model(model) + "\n", encoding="utf-8")
    logger.info("saved %s to %s", type(model).__name__, path)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

# provenance options stored as rational tuples / polynomial texts
_TUPLE_OPTIONS = ("alpha", "fixed_K")


def _rates_to_spec(rates: RatePlan) -> RateSpec:
    edges = [
        EdgeRate(source=i, target=j, k=k, theta=format_fraction(t), mu=format_fraction(m))
        for (i, j, k), (t, m) in sorted(rates.per_edge.items())
    ]
    return RateSpec(default=[format_fraction(a) for a in rates.default], edges=edges)


def _rates_from_spec(spec: RateSpec) -> RatePlan:
    try:
        per_edge = {(e.source, e.target, e.k): (to_fraction(e.theta), to_fraction(e.mu)) for e in spec.edges}
        return RatePlan(tuple(to_fraction(a) for a in spec.default), per_edge)
    except (ValueError, ZeroDivisionError) as e:
        raise ModelError(f"bad rate: {e}", field="rates")


def _options_to_json(options: Dict[str, object], names: Sequence[str]) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for key, value in options.items():
        if key in _TUPLE_OPTIONS and value is not None:
            value = [format_fraction(a) for a in value]
        elif key == "fixed" and value:
            value = {node: format_terms(terms, names) for node, terms in value.items()}
        out[key] = value
    return out


def _options_from_json(options: Dict[str, object], names: Sequence[str]) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for key, value in options.items():
        if key in _TUPLE_OPTIONS and value is not None:
            value = tuple(to_fraction(a) for a in value)
        elif key == "fixed" and value:
            value = {node: parse_polynomial(text, names) for node, text in value.items()}
        out[key] = value
    return out


def certificate_to_file(cert: Certificate) -> CertificateFile:
    names = list(cert.variables)
    provenance = dict(cert.provenance)
    if "options" in provenance:
        provenance["options"] = _options_to_json(provenance["options"] or {}, names)
    return CertificateFile(
        kind=cert.kind.value,
        variables=names,
        functions={node: format_terms(terms, names) for node, terms in cert.functions.items()},
        rates=_rates_to_spec(cert.rates),
        P={node: _fmt_rows(m) for node, m in cert.P.items()},
        values={name: _fmt_rows(m) for name, m in cert.values.items()},
        level=None if cert.level is None else format_fraction(cert.level),
        z=format_fraction(cert.z),
        T_u=None if cert.T_u is None else format_fraction(cert.T_u),
        provenance=provenance,
    )


def certificate_from_file(doc: CertificateFile) -> Certificate:
    names = list(doc.variables)
    functions = {}
    for node, text in doc.functions.items():
        try:
            functions[node] = parse_polynomial(text.replace("^", "**"), names)
        except (sympy.SympifyError, sympy.PolynomialError, SyntaxError, TypeError) as e:
            raise ModelError(f"cannot parse {text!r}: {e}", field=f"functions.{node}")
    provenance = dict(doc.provenance)
    if "options" in provenance:
        provenance["options"] = _options_from_json(provenance["options"] or {}, names)
    return Certificate(
        kind=CertificateKind(doc.kind),
        variables=tuple(names),
        functions=functions,
        rates=_rates_from_spec(doc.rates),
        P={node: _matrix_from(rows, f"P.{node}", len(names) + 1) for node, rows in doc.P.items()},
        values={name: qmatrix([[to_fraction(v) for v in r] for r in rows]) for name, rows in doc.values.items()},
        level=None if doc.level is None else to_fraction(doc.level),
        z=to_fraction(doc.z),
        T_u=None if doc.T_u is None else to_fraction(doc.T_u),
        provenance=provenance,
    )


def loads_certificate(text: str) -> Certificate:
    try:
        doc = CertificateFile.model_validate_json(text)
    except ValidationError as e:
        raise _validation_error(e)
    return certificate_from_file(doc)


def dumps_certificate(cert: Certificate) -> str:
    return certificate_to_file(cert).model_dump_json(indent=2, by_alias=True, exclude_none=True)


def load_certificate(path: Union[str, Path]) -> Certificate:
    cert = loads_certificate(Path(path).read_text(encoding="utf-8"))
    logger.info("loaded %s certificate from %s", cert.kind.value, path)
    return cert


def save_certificate(cert: Certificate, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_certificate(cert) + "\n", encoding="utf-8")
    logger.info("saved certificate to %s", path)


# ---------------------------------------------------------------------------
# invariants carried from one model to another
# ---------------------------------------------------------------------------


def sublevel_spec(cert: Certificate, node: str, level=0) -> SetSpec:
    """{σ_node ≤ level} as a set annotation for another model file"""
    terms = {tuple(e): to_fraction(c) for e, c in cert.function(node).items() if to_fraction(c) != 0}
    if any(total_degree(e) > 2 for e in terms):
        raise ModelError(f"σ[{node}] has degree > 2 and cannot be written as a set annotation", field="node")
    zero = (0,) * len(cert.variables)
    terms[zero] = terms.get(zero, Fraction(0)) - to_fraction(level)
    text = f"{format_terms({e: -c for e, c in terms.items() if c != 0}, cert.variables)} >= 0"
    linear = all(total_degree(e) <= 1 for e in terms)
    return SetSpec(linear=[text] if linear else [], quadratic=[] if linear else [text])


def import_invariant(model: GraphModel, node: str, spec: SetSpec, variables: Optional[Sequence[str]] = None) -> GraphModel:
    """Conjoin an exported set with a node invariant; ``variables`` renames the exporter's state"""
    if node not in model.nodes:
        raise ModelError(f"unknown node {node!r}", field="node")
    names = list(model.variables)
    if variables is not None:
        mapping = dict(zip(variables, names)) if len(variables) == len(names) else None
        if mapping is None:
            raise ModelError(f"{len(variables)} exported variables for {len(names)} model variables", field="variables")
        spec = SetSpec(
            linear=[_rename(t, mapping) for t in spec.linear],
            quadratic=[_rename(t, mapping) for t in spec.quadratic],
        )
    return model.with_invariant(node, set_from_spec(spec, names, f"invariants.{node}"))


def _rename(text: str, mapping: Dict[str, str]) -> str:
    return re.sub(r"[A-Za-z_][A-Za-z_0-9]*", lambda m: mapping.get(m.group(0), m.group(0)), text)
