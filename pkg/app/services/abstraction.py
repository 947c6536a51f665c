"""
Sound set-valued abstractions of nonlinear operations

Every abstraction is a ``Relation``: the result y of an operation on inputs u
satisfies

    y ∈ { g(u, w, v) | c(u, w, v) },   w ∈ [-1,1]^{n_w},  v ∈ {-1,1}^{n_v}

with g and the constraints c polynomial of degree ≤ 2. A relation is spliced
into a graph model as a transition label, or emitted as a model-file edge so
that hand-written models can reuse it.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
import sympy

from app.core.graph import Edge, TransitionLabel
from app.core.polynomials import make_symbols, poly_terms, total_degree
from app.core.rational import format_fraction, qzeros, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import AbstractionError, ModelError
from app.models.model_file import EdgeSpec
from app.services.lp_solver import LinearProgram, solve_linear_program
from app.services.model_io import edge_to_spec

logger = logging.getLogger(__name__)

# Taylor error bounds are rounded up to this many decimals
ERROR_DIGITS = 3
# working precision for the error bounds
MP_DIGITS = 50
ERROR_GRID = 1025

Interval = Tuple[Fraction, Fraction]


@dataclass(frozen=True, eq=False)
class Relation:
    name: str
    inputs: Tuple[sympy.Symbol, ...]
    output: sympy.Expr
    ws: Tuple[sympy.Symbol, ...] = ()
    vs: Tuple[sympy.Symbol, ...] = ()
    equalities: Tuple[sympy.Expr, ...] = ()  # c(u, w, v) = 0
    inequalities: Tuple[sympy.Expr, ...] = ()  # c(u, w, v) ≥ 0
    error: Optional[Fraction] = None
    domain: Optional[Interval] = None
    notes: Dict[str, object] = field(default_factory=dict)

    @property
    def n_w(self) -> int:
        return len(self.ws)

    @property
    def n_v(self) -> int:
        return len(self.vs)

    def describe(self) -> str:
        parts = [f"{self.name}: y = {self.output}"]
        parts += [f"{c} = 0" for c in self.equalities]
        parts += [f"{c} >= 0" for c in self.inequalities]
        if self.ws:
            parts.append(f"{', '.join(map(str, self.ws))} in [-1, 1]")
        if self.vs:
            parts.append(f"{', '.join(map(str, self.vs))} in {{-1, 1}}")
        return "; ".join(parts)

    # membership

    @cached_property
    def _pieces(self) -> List[Tuple[Callable, List[Callable], List[Callable]]]:
        """Per binary vector: output and constraints as affine functions of w"""
        pieces = []
        for combo in itertools.product((-1, 1), repeat=self.n_v):
            fixed = dict(zip(self.vs, combo))

            def affine(expr):
                e = sympy.expand(sympy.sympify(expr).xreplace(fixed))
                if self.ws:
                    poly = sympy.Poly(e, *self.ws)
                    if poly.total_degree() > 1:
                        raise AbstractionError(f"{self.name}: {e} is not affine in the uncertainty once v is fixed")
                    coeffs = [poly.coeff_monomial(w) for w in self.ws] + [poly.coeff_monomial(1)]
                else:
                    coeffs = [e]
                return sympy.lambdify(self.inputs, coeffs, "math")

            pieces.append((affine(self.output), [affine(c) for c in self.equalities], [affine(c) for c in self.inequalities]))
        return pieces

    def contains(self, values: Sequence, y, tol: float = 1e-9) -> bool:
        """Whether y is an admissible result for the inputs ``values``"""
        if len(values) != len(self.inputs):
            raise ModelError(f"{self.name} takes {len(self.inputs)} inputs, got {len(values)}")
        point = [float(a) for a in values]
        y = float(y)
        slack = tol * max(1.0, abs(y))
        nw = self.n_w
        for out, eqs, ineqs in self._pieces:
            rows: List[List[float]] = []
            rhs: List[float] = []

            def ge(coeffs, shift):
                # coeffs·w + const + shift ≥ 0
                coeffs = [float(c) for c in coeffs]
                rows.append(coeffs[:nw])
                rhs.append(-(coeffs[nw] + shift))

            o = out(*point)
            ge(o[:nw] + [o[nw] - y], slack)
            ge([-c for c in o[:nw]] + [y - o[nw]], slack)
            for fn in eqs:
                c = fn(*point)
                ge(c, slack)
                ge([-a for a in c], slack)
            for fn in ineqs:
                ge(fn(*point), slack)
            if nw == 0:
                if all(b <= 0 for b in rhs):
                    return True
                continue
            A = np.array(rows + [list(r) for r in np.eye(nw)] + [list(-r) for r in np.eye(nw)])
            b = np.array(rhs + [-1.0] * (2 * nw))
            lp = LinearProgram(c=np.zeros(nw), A_eq=np.zeros((0, nw)), b_eq=np.zeros(0), A_ge=A, b_ge=b)
            if solve_linear_program(lp, exact=False).feasible:
                return True
        return False

    # splicing into models

    def label(self, variables: Sequence[str], target: str, inputs: Sequence[str]) -> TransitionLabel:
        """
        Transition label assigning the result to ``target``

        ``inputs`` are expressions over the model variables, one per relation
        input; every other variable keeps its value.
        """
        names = list(variables)
        if target not in names:
            raise ModelError(f"unknown target variable {target!r}", field="target")
        if len(inputs) != len(self.inputs):
            raise ModelError(f"{self.name} takes {len(self.inputs)} inputs, got {len(inputs)}", field="inputs")
        xs = make_symbols(names)
        local = dict(zip(names, xs))
        sub = {}
        for sym, text in zip(self.inputs, inputs):
            try:
                sub[sym] = sympy.sympify(str(text).replace("^", "**"), locals=local, rational=True)
            except (sympy.SympifyError, SyntaxError, TypeError) as e:
                raise ModelError(f"cannot parse input {text!r}: {e}", field="inputs")
            unknown = sub[sym].free_symbols - set(xs)
            if unknown:
                raise ModelError(f"input {text!r} uses unknown name {sorted(map(str, unknown))[0]!r}", field="inputs")
        ws = make_symbols([f"_rw{i}" for i in range(self.n_w)])
        vs = make_symbols([f"_rv{i}" for i in range(self.n_v)])
        sub.update(zip(self.ws, ws))
        sub.update(zip(self.vs, vs))
        gens = list(xs) + list(ws) + list(vs)
        n, nw, nv = len(xs), len(ws), len(vs)

        def terms(expr) -> Dict[Tuple[int, ...], Fraction]:
            return poly_terms(sympy.Poly(sympy.expand(sympy.sympify(expr).xreplace(sub)), *gens, domain="QQ"))

        A, B, C, E = qzeros((n, n)), qzeros((n, nw)), qzeros((n, nv)), qzeros(n)
        higher: List[Dict] = [{} for _ in range(n)]
        r = names.index(target)
        for i in range(n):
            if i != r:
                A[i, i] = Fraction(1)
        for e, c in terms(self.output).items():
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
            elif d == 2:
                higher[r][e] = c
            else:
                raise AbstractionError(f"{self.name}: result has a degree-{d} term after substitution")
        eq = [terms(c) for c in self.equalities]
        ineq = [terms(c) for c in self.inequalities]
        worst = max((total_degree(e) for t in eq + ineq for e in t), default=0)
        if worst > 2:
            raise AbstractionError(f"{self.name}: constraint of degree {worst} after substitution")
        constraints = SemialgebraicSet.from_terms(n + nw + nv, ineq=ineq, eq=eq)
        return TransitionLabel(A, B, C, E, constraints, tuple(higher) if any(higher) else None)

    def edge(
        self, variables: Sequence[str], source: str, target_node: str, assign: str, inputs: Sequence[str], k: int = 1,
        passport: Optional[SemialgebraicSet] = None,
    ) -> Edge:
        return Edge(source, target_node, k, self.label(variables, assign, inputs), passport)

    def fragment(
        self, variables: Sequence[str], source: str, target_node: str, assign: str, inputs: Sequence[str], k: int = 1
    ) -> EdgeSpec:
        """The relation as a model-file edge ``source → target_node`` updating ``assign``"""
        return edge_to_spec(self.edge(variables, source, target_node, assign, inputs, k), variables)


def _interval(domain) -> Interval:
    lo, hi = (to_fraction(d) for d in domain)
    if lo > hi:
        raise AbstractionError(f"empty domain [{lo}, {hi}]")
    return lo, hi


def _mpf(q: Fraction):
    return mpmath.mpf(q.numerator) / q.denominator


def round_up(value, digits: int) -> Fraction:
    """Smallest multiple of 10^-digits not below ``value`` (an mpmath number)"""
    scale = 10**digits
    return Fraction(int(mpmath.ceil(value * scale)), scale)


# ---------------------------------------------------------------------------
# trigonometric, sign and absolute value
# ---------------------------------------------------------------------------

_u = sympy.Symbol("x", real=True)
_w1, _w2 = make_symbols(["w1", "w2"])
_v1 = sympy.Symbol("v1", real=True)

TAYLOR = {
    ("sin", "linear"): _u,
    ("sin", "cubic"): _u - _u**3 / 6,
    ("cos", "linear"): sympy.Integer(1),
    ("cos", "cubic"): 1 - _u**2 / 2,
}


def taylor_error(kind: str, order: str, domain) -> Fraction:
    """
    sup |f(x) − p(x)| over the domain, rounded up to ERROR_DIGITS decimals

    The remainder is monotone in |x| on [-π, π] for every tabulated pair, so
    the endpoints decide; a dense grid is evaluated as well.
    """
    lo, hi = _interval(domain)
    poly = sympy.lambdify(_u, TAYLOR[(kind, order)], "mpmath")
    f = getattr(mpmath, kind)
    with mpmath.workdps(MP_DIGITS):
        a, b = _mpf(lo), _mpf(hi)
        points = [a, b] + ([mpmath.mpf(0)] if a < 0 < b else [])
        if a < b:
            points += mpmath.linspace(a, b, ERROR_GRID)
        worst = max(abs(f(x) - poly(x)) for x in points)
        if worst == 0:
            return Fraction(0)
        return round_up(worst, ERROR_DIGITS)


def _check_trig_domain(kind: str, lo: Fraction, hi: Fraction, limit_lo, limit_hi, label: str) -> None:
    with mpmath.workdps(MP_DIGITS):
        slack = mpmath.mpf(10) ** -12
        if _mpf(lo) < limit_lo - slack or _mpf(hi) > limit_hi + slack:
            raise AbstractionError(f"{kind} abstraction supports domains inside {label}, got [{float(lo)}, {float(hi)}]")


def _pwl_sin(domain: Interval) -> Relation:
    lo, hi = domain
    _check_trig_domain("pwl sin", lo, hi, mpmath.mpf(0), mpmath.pi / 2, "[0, pi/2]")
    # breakpoints 0, 0.8, 1.6 selected by v1; w2 places x inside the piece
    position = Fraction(1, 5) * ((1 + _v1) * (1 + _w2) + (1 - _v1) * (3 + _w2))
    value = Fraction(9, 20) * (1 + _v1) * _u + (1 - _v1) * (_u / 5 + Fraction(1, 5)) + Fraction(3, 50) * _w1
    return Relation(
        "sin[pwl]", (_u,), sympy.expand(value), (_w1, _w2), (_v1,),
        equalities=(sympy.expand(_u - position),), error=Fraction(3, 50), domain=domain,
    )


def _range_relation(kind: str, lo: Fraction, hi: Fraction) -> Relation:
    if kind in ("sin", "cos", "sign", "sgn"):
        name = "sign" if kind == "sgn" else kind
        return Relation(f"{name}[range]", (_u,), _w1, (_w1,), domain=(lo, hi))
    if kind == "abs":
        R = max(abs(lo), abs(hi))
        half = sympy.Rational(R.numerator, R.denominator) / 2
        return Relation("abs[range]", (_u,), half + half * _w1, (_w1,) if R else (), domain=(lo, hi))
    raise AbstractionError(f"unknown nonlinearity {kind!r}; expected sin, cos, sign or abs")


def abstract_nonlinearity(kind: str, domain, order: str = "linear") -> Relation:
    """
    Relation containing the graph of sin, cos, sign or abs on ``domain``

    sin/cos: Taylor polynomial plus a·w with a the rounded-up remainder bound
    (order linear or cubic), or for sin the two-piece encoding (order pwl).
    sign: {v | x·v ≥ 0}, so sign(0) may be either ±1. abs: x = R(v + w)/2,
    |x| = x·v on [-R, R]. Order range keeps only the output range, one w and
    no binaries: [-1, 1] for sin, cos and sign, [0, R] for abs.
    """
    lo, hi = _interval(domain)
    if order == "range":
        return _range_relation(kind, lo, hi)
    if kind in ("sin", "cos"):
        if order == "pwl":
            if kind != "sin":
                raise AbstractionError("the piecewise-linear encoding is only available for sin")
            return _pwl_sin((lo, hi))
        if order not in ("linear", "cubic"):
            raise AbstractionError(f"unknown order {order!r}; expected range, linear, cubic or pwl")
        _check_trig_domain(kind, lo, hi, -mpmath.pi, mpmath.pi, "[-pi, pi]")
        a = taylor_error(kind, order, (lo, hi))
        output = TAYLOR[(kind, order)] + sympy.Rational(a.numerator, a.denominator) * _w1
        ws = (_w1,) if a else ()
        logger.debug("%s %s on [%s, %s]: a = %s", kind, order, lo, hi, a)
        return Relation(f"{kind}[{order}]", (_u,), output, ws, error=a, domain=(lo, hi))
    if kind in ("sign", "sgn"):
        return Relation("sign", (_u,), _v1, (), (_v1,), inequalities=(_u * _v1,), domain=(lo, hi))
    if kind == "abs":
        R = max(abs(lo), abs(hi))
        if R == 0:
            return Relation("abs", (_u,), sympy.Integer(0), domain=(lo, hi))
        half = sympy.Rational(R.numerator, R.denominator) / 2
        return Relation(
            "abs", (_u,), _u * _v1, (_w1,), (_v1,),
            equalities=(sympy.expand(_u - half * (_v1 + _w1)),), domain=(lo, hi),
        )
    raise AbstractionError(f"unknown nonlinearity {kind!r}; expected sin, cos, sign or abs")


# ---------------------------------------------------------------------------
# modulo
# ---------------------------------------------------------------------------


def abstract_mod(t_range, s: int, binary: bool = True) -> Relation:
    """
    mod(t, s) for integer t in [lo, hi) ⊆ [0, M·s)

    One selector per multiple k·s with 0 < k < M; (t − k·s)·v_k ≥ 0 ties v_k = 1
    to t ≥ k·s. With ``binary`` off the selectors become continuous w ∈ [-1, 1],
    a coarser relation needing no binaries.
    """
    if isinstance(s, bool) or not isinstance(s, int) and not (isinstance(s, Fraction) and s.denominator == 1):
        raise AbstractionError(f"modulus must be a positive integer, got {s!r}")
    s = int(s)
    if s <= 0:
        raise AbstractionError(f"modulus must be a positive integer, got {s}")
    lo, hi = _interval(t_range)
    if lo < 0:
        raise AbstractionError(f"mod abstraction needs a nonnegative range, got [{lo}, {hi})")
    M = max(1, math.ceil(hi / s))
    t = sympy.Symbol("t", real=True)
    selectors = make_symbols([f"{'v' if binary else 'w'}{k}" for k in range(1, M)])
    value = t - sympy.Rational(s, 2) * sum((1 + sel for sel in selectors), sympy.Integer(0))
    guards = tuple(sympy.expand((t - k * s) * sel) for k, sel in enumerate(selectors, start=1))
    return Relation(
        f"mod {s}", (t,), sympy.expand(value),
        ws=() if binary else selectors, vs=selectors if binary else (),
        inequalities=guards, domain=(lo, hi), notes={"M": M},
    )


# ---------------------------------------------------------------------------
# floating point and fixed point arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FloatFormat:
    """Binary IEEE-754 format with p fraction bits, q exponent bits and an exponent bias"""

    name: str
    p: int
    q: int
    bias: int

    @property
    def gamma(self) -> Fraction:
        return Fraction(1, 2**self.p)

    @property
    def beta(self) -> Fraction:
        """Smallest positive subnormal"""
        return Fraction(2) ** (1 - self.bias - self.p)

    @property
    def alpha_max(self) -> Fraction:
        """Largest finite number"""
        return (2 - self.gamma) * Fraction(2) ** (2**self.q - self.bias - 2)

    def delta(self, alpha) -> Fraction:
        """Rounding error bound α·γ + β for results inside [-α, α]"""
        alpha = to_fraction(alpha)
        if alpha <= 0:
            raise AbstractionError(f"range bound must be positive, got {alpha}")
        if alpha >= self.alpha_max:
            raise AbstractionError(f"range bound {float(alpha):g} reaches the {self.name} overflow threshold; infinities are not modeled")
        return alpha * self.gamma + self.beta


@dataclass(frozen=True)
class FixedPointFormat:
    """Two's complement fixed point with ``bits`` bits over a dynamic range ρ"""

    bits: int
    dynamic_range: Fraction

    @property
    def name(self) -> str:
        return f"fixed{self.bits}"

    def delta(self, alpha) -> Fraction:
        alpha = to_fraction(alpha)
        rho = to_fraction(self.dynamic_range)
        if self.bits < 2 or rho <= 0:
            raise AbstractionError("fixed-point formats need at least 2 bits and a positive dynamic range")
        if alpha <= 0 or alpha > rho:
            raise AbstractionError(f"range bound {alpha} is outside the dynamic range {rho}")
        return rho / (2**self.bits - 1)


F32 = FloatFormat("f32", 23, 8, 127)
F64 = FloatFormat("f64", 52, 11, 1023)
FORMATS = {"f32": F32, "f64": F64}

_OPS = {"+": "+", "-": "-", "−": "-", "*": "*", "×": "*", "/": "/", "÷": "/"}

Format = Union[FloatFormat, FixedPointFormat]


def abstract_float_op(op: str, fmt: Union[str, Format], alpha) -> Relation:
    """
    {x ⊛ y + δ·w} with δ = α·γ + β, for operands and result inside [-α, α]

    Division is written without a quotient: z = α·w₂ + δ·w₁ with α·w₂·y = x.
    """
    if isinstance(fmt, str):
        if fmt not in FORMATS:
            raise AbstractionError(f"unknown float format {fmt!r}; expected one of {sorted(FORMATS)}")
        fmt = FORMATS[fmt]
    if op not in _OPS:
        raise AbstractionError(f"unknown operation {op!r}")
    op = _OPS[op]
    alpha = to_fraction(alpha)
    delta = fmt.delta(alpha)
    x, y = make_symbols(["x", "y"])
    d = sympy.Rational(delta.numerator, delta.denominator)
    equalities: Tuple[sympy.Expr, ...] = ()
    ws: Tuple[sympy.Symbol, ...] = (_w1,)
    if op == "+":
        exact = x + y
    elif op == "-":
        exact = x - y
    elif op == "*":
        exact = x * y
    else:
        a = sympy.Rational(alpha.numerator, alpha.denominator)
        exact = a * _w2
        ws = (_w1, _w2)
        equalities = (a * _w2 * y - x,)
    logger.debug("%s %s with alpha=%s: delta=%s", fmt.name, op, alpha, format_fraction(delta))
    return Relation(
        f"{fmt.name}{op}", (x, y), exact + d * _w1, ws, (), equalities,
        error=delta, domain=(-alpha, alpha), notes={"format": fmt.name},
    )


def printed(value: Fraction, digits: int = 2) -> float:
    """``value`` rounded up to ``digits`` significant digits"""
    value = to_fraction(value)
    if value <= 0:
        return float(value)
    exponent = math.floor(math.log10(value.numerator) - math.log10(value.denominator))
    scale = Fraction(10) ** (digits - 1 - exponent)
    return float(Fraction(math.ceil(value * scale)) / scale)
