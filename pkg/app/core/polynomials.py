"""
Polynomial helpers on top of sympy

Constant polynomials are sympy ``Poly`` objects over QQ. Polynomials whose
coefficients are affine in decision variables (Lyapunov candidates,
multipliers, Gram forms) are ``AffinePoly``: monomial exponent → AffineScalar.
"""

from fractions import Fraction
from itertools import combinations_with_replacement
from math import comb
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy

from app.core.conic import AffineScalar, ConicProblem, Variable, VariableKind
from app.core.rational import to_fraction
from app.errors import AssemblyError

Exponent = Tuple[int, ...]


def make_symbols(names: Sequence[str]) -> Tuple[sympy.Symbol, ...]:
    return tuple(sympy.Symbol(n, real=True) for n in names)


def basis_size(n: int, d: int) -> int:
    return comb(n + d, d)


def monomials(n: int, degree: int, min_degree: int = 0) -> List[Exponent]:
    """All exponents of total degree in [min_degree, degree], graded order"""
    out: List[Exponent] = []
    for d in range(min_degree, degree + 1):
        for combo in combinations_with_replacement(range(n), d):
            exp = [0] * n
            for i in combo:
                exp[i] += 1
            out.append(tuple(exp))
    return out


def add_exp(a: Exponent, b: Exponent) -> Exponent:
    return tuple(x + y for x, y in zip(a, b))


def total_degree(exp: Exponent) -> int:
    return sum(exp)


def poly_terms(p: sympy.Poly) -> Dict[Exponent, Fraction]:
    return {tuple(e): to_fraction(c) for e, c in p.terms() if c != 0}


def terms_to_poly(terms: Mapping[Exponent, Fraction], gens: Sequence[sympy.Symbol]) -> sympy.Poly:
    expr = sympy.Integer(0)
    for exp, c in terms.items():
        mono = sympy.Integer(1)
        for g, e in zip(gens, exp):
            mono *= g ** e
        expr += sympy.Rational(c.numerator, c.denominator) * mono
    return sympy.Poly(expr, *gens, domain="QQ")


def evaluate_terms(terms: Mapping[Exponent, Fraction], point: Sequence) -> object:
    """Evaluate a coefficient dictionary; exact for rational points"""
    exact = all(isinstance(v, (int, Fraction)) for v in point)
    total = Fraction(0) if exact else 0.0
    for exp, c in terms.items():
        mono = Fraction(1) if exact else 1.0
        for v, e in zip(point, exp):
            if e:
                mono *= (v if exact else float(v)) ** e
        total += (c if exact else float(c)) * mono
    return total


def quadratic_form_terms(P: np.ndarray) -> Dict[Exponent, Fraction]:
    """[x; 1]ᵀ P [x; 1] as a coefficient dictionary over x"""
    P = np.asarray(P, dtype=object)
    n = P.shape[0] - 1
    out: Dict[Exponent, Fraction] = {}

    def unit(i):
        e = [0] * n
        if i < n:
            e[i] = 1
        return e

    for i in range(n + 1):
        for j in range(n + 1):
            c = to_fraction(P[i, j])
            if c == 0:
                continue
            exp = tuple(a + b for a, b in zip(unit(i), unit(j)))
            out[exp] = out.get(exp, Fraction(0)) + c
    return {e: c for e, c in out.items() if c != 0}


def affine_images(
    A: np.ndarray, b: np.ndarray, gens: Sequence[sympy.Symbol], extra: Optional[Sequence[Mapping[Exponent, Fraction]]] = None
) -> List[sympy.Expr]:
    """Coordinates of y = A·g + b (+ optional higher-order terms) as sympy expressions"""
    A = np.asarray(A, dtype=object)
    out = []
    for r in range(A.shape[0]):
        expr = sympy.Rational(to_fraction(b[r]).numerator, to_fraction(b[r]).denominator)
        for c, g in enumerate(gens):
            a = to_fraction(A[r, c])
            if a != 0:
                expr += sympy.Rational(a.numerator, a.denominator) * g
        if extra is not None and extra[r]:
            expr += terms_to_poly(extra[r], gens).as_expr()
        out.append(expr)
    return out


# ---------------------------------------------------------------------------
# polynomials with decision-dependent coefficients
# ---------------------------------------------------------------------------


class AffinePoly:
    """Σ_α c_α(y) x^α with each c_α affine in the decision vector y"""

    def __init__(self, nvars: int, coeffs: Optional[Dict[Exponent, AffineScalar]] = None):
        self.nvars = nvars
        self.coeffs: Dict[Exponent, AffineScalar] = dict(coeffs or {})

    @classmethod
    def constant(cls, nvars: int, terms: Mapping[Exponent, Fraction]) -> "AffinePoly":
        return cls(nvars, {e: AffineScalar(c) for e, c in terms.items()})

    def __add__(self, other: "AffinePoly") -> "AffinePoly":
        out = dict(self.coeffs)
        for e, c in other.coeffs.items():
            out[e] = out[e] + c if e in out else c
        return AffinePoly(self.nvars, out)

    def __neg__(self) -> "AffinePoly":
        return AffinePoly(self.nvars, {e: -c for e, c in self.coeffs.items()})

    def __sub__(self, other: "AffinePoly") -> "AffinePoly":
        return self + (-other)

    def scale(self, s) -> "AffinePoly":
        return AffinePoly(self.nvars, {e: c * s for e, c in self.coeffs.items()})

    def times_terms(self, terms: Mapping[Exponent, Fraction]) -> "AffinePoly":
        """Product with a constant polynomial"""
        out: Dict[Exponent, AffineScalar] = {}
        for e1, c1 in self.coeffs.items():
            for e2, c2 in terms.items():
                e = add_exp(e1, e2)
                term = c1 * c2
                out[e] = out[e] + term if e in out else term
        return AffinePoly(self.nvars, out)

    def add_constant(self, value) -> "AffinePoly":
        zero = (0,) * self.nvars
        out = dict(self.coeffs)
        out[zero] = out.get(zero, AffineScalar(0)) + value
        return AffinePoly(self.nvars, out)

    def degree(self) -> int:
        return max((total_degree(e) for e, c in self.coeffs.items() if c.terms or c.const != 0), default=0)

    def evaluate_coefficients(self, y) -> Dict[Exponent, object]:
        return {e: c.evaluate(y) for e, c in self.coeffs.items()}


def candidate_poly(problem: ConicProblem, name: str, nvars: int, degree: int, min_degree: int = 0) -> Tuple[AffinePoly, Variable, List[Exponent]]:
    """Free-coefficient polynomial Kᵀ Z(x) with Z the monomials of degree ≤ d"""
    basis = monomials(nvars, degree, min_degree)
    var = problem.add_variable(name, VariableKind.FREE, len(basis), 1)
    coeffs = {e: AffineScalar.variable(var.offset + k) for k, e in enumerate(basis)}
    return AffinePoly(nvars, coeffs), var, basis


def gram_poly(problem: ConicProblem, name: str, nvars: int, half_degree: int) -> Tuple[AffinePoly, Variable, List[Exponent]]:
    """z(x)ᵀ Q z(x) with Q ⪰ 0 a fresh Gram variable"""
    basis = monomials(nvars, half_degree)
    var = problem.add_variable(name, VariableKind.SOS_GRAM, len(basis))
    coeffs: Dict[Exponent, AffineScalar] = {}
    for k, (i, j) in enumerate(var.positions()):
        e = add_exp(basis[i], basis[j])
        weight = 1 if i == j else 2
        term = AffineScalar.variable(var.offset + k, weight)
        coeffs[e] = coeffs[e] + term if e in coeffs else term
    return AffinePoly(nvars, coeffs), var, basis


def match_coefficients(problem: ConicProblem, name: str, target: AffinePoly, gram: AffinePoly, gram_name: str) -> None:
    """Equalities target ≡ gram, coefficient by coefficient"""
    exps = set(target.coeffs) | set(gram.coeffs)
    for e in sorted(exps):
        label = f"{name}[{','.join(map(str, e))}]"
        lhs = target.coeffs.get(e, AffineScalar(0)) - gram.coeffs.get(e, AffineScalar(0))
        if lhs.is_constant:
            if lhs.const != 0:
                raise AssemblyError(f"{name}: monomial {e} cannot be matched by the chosen degree bounds")
            continue
        if e not in gram.coeffs:
            problem.add_equality(label, lhs)
        else:
            problem.add_equality(label, lhs, project_onto=gram_name)


def compose_terms(
    terms: Mapping[Exponent, Fraction], images: Sequence[sympy.Expr], gens: Sequence[sympy.Symbol]
) -> Dict[Exponent, Fraction]:
    """p(T(g)) for p given by ``terms`` over len(images) variables"""
    expr = sympy.Integer(0)
    for exp, c in terms.items():
        mono = sympy.Integer(1)
        for img, e in zip(images, exp):
            if e:
                mono *= img ** e
        expr += sympy.Rational(c.numerator, c.denominator) * mono
    return poly_terms(sympy.Poly(sympy.expand(expr), *gens, domain="QQ"))


def monomial_images(basis: Iterable[Exponent], images: Sequence[sympy.Expr], gens: Sequence[sympy.Symbol]) -> List[Dict[Exponent, Fraction]]:
    return [compose_terms({e: Fraction(1)}, images, gens) for e in basis]


def parse_polynomial(text: str, names: Sequence[str]) -> Dict[Exponent, Fraction]:
    """Parse an arithmetic expression over the given variable names"""
    gens = make_symbols(names)
    local = {n: g for n, g in zip(names, gens)}
    expr = sympy.sympify(text, locals=local, rational=True)
    return poly_terms(sympy.Poly(sympy.expand(expr), *gens, domain="QQ"))


def format_terms(terms: Mapping[Exponent, Fraction], names: Sequence[str]) -> str:
    gens = make_symbols(names)
    if not terms:
        return "0"
    return str(terms_to_poly(terms, gens).as_expr())
