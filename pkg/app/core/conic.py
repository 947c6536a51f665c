"""
Block-structured conic feasibility problems

Decision variables are named matrices (symmetric, free, diagonal, scalar or
Gram) flattened into one scalar vector y. Constraints are

    * LMI blocks      F(y) = F₀ + Σ yᵢ Fᵢ ⪰ 0
    * equalities      a(y) = 0
    * inequalities    a(y) ≥ 0

all affine in y, with exact rational data so the same problem can be
re-evaluated exactly at a rounded solution.
"""

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from app.core.rational import format_fraction, qzeros, to_fraction
from app.errors import AssemblyError

Coefficient = Union[int, Fraction]


class VariableKind(str, Enum):
    SYMMETRIC = "symmetric-matrix"
    FREE = "free-matrix"
    NONNEG_DIAG = "nonneg-diagonal"
    FREE_DIAG = "free-diagonal"
    SCALAR = "scalar"
    NONNEG_SCALAR = "nonneg-scalar"
    NONPOS_SCALAR = "nonpos-scalar"
    SOS_GRAM = "sos-gram"


# ---------------------------------------------------------------------------
# affine expressions
# ---------------------------------------------------------------------------


class AffineScalar:
    """c + Σ aᵢ yᵢ with rational coefficients"""

    __slots__ = ("const", "terms")
    __array_ufunc__ = None

    def __init__(self, const: Coefficient = 0, terms: Optional[Mapping[int, Coefficient]] = None):
        self.const = to_fraction(const)
        self.terms: Dict[int, Fraction] = {}
        for i, a in (terms or {}).items():
            a = to_fraction(a)
            if a != 0:
                self.terms[i] = a

    @classmethod
    def variable(cls, index: int, coef: Coefficient = 1) -> "AffineScalar":
        return cls(0, {index: coef})

    def __add__(self, other) -> "AffineScalar":
        if not isinstance(other, AffineScalar):
            return AffineScalar(self.const + to_fraction(other), self.terms)
        terms = dict(self.terms)
        for i, a in other.terms.items():
            terms[i] = terms.get(i, Fraction(0)) + a
        return AffineScalar(self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self) -> "AffineScalar":
        return AffineScalar(-self.const, {i: -a for i, a in self.terms.items()})

    def __sub__(self, other) -> "AffineScalar":
        return self + (-other if isinstance(other, AffineScalar) else -to_fraction(other))

    def __rsub__(self, other) -> "AffineScalar":
        return (-self) + other

    def __mul__(self, scalar) -> "AffineScalar":
        if isinstance(scalar, AffineScalar):
            if scalar.terms and self.terms:
                raise AssemblyError("product of two decision-dependent expressions is not affine")
            if scalar.terms:
                return scalar * self.const
            scalar = scalar.const
        s = to_fraction(scalar)
        return AffineScalar(self.const * s, {i: a * s for i, a in self.terms.items()})

    __rmul__ = __mul__

    def times_matrix(self, m) -> "AffineMatrix":
        m = np.asarray(m, dtype=object)
        out = AffineMatrix.constant(m * self.const)
        for i, a in self.terms.items():
            out.terms[i] = m * a
        return out

    @property
    def is_constant(self) -> bool:
        return not self.terms

    def evaluate(self, y) -> Union[Fraction, float]:
        if _is_exact(y):
            return self.const + sum((a * y[i] for i, a in self.terms.items()), Fraction(0))
        return float(self.const) + sum(float(a) * float(y[i]) for i, a in self.terms.items())

    def __repr__(self) -> str:
        parts = [format_fraction(self.const)] + [f"{format_fraction(a)}*y{i}" for i, a in sorted(self.terms.items())]
        return " + ".join(parts)


def _is_exact(y) -> bool:
    if isinstance(y, np.ndarray):
        return y.dtype == object
    return bool(y) and isinstance(next(iter(y.values() if isinstance(y, dict) else y)), Fraction)


class AffineMatrix:
    """C + Σ yᵢ Mᵢ with rational coefficient matrices (possibly rectangular)"""

    # numpy defers @, + and * to our reflected operators
    __array_ufunc__ = None

    def __init__(self, shape: Tuple[int, int], const=None, terms: Optional[Dict[int, np.ndarray]] = None):
        self.shape = tuple(shape)
        self.const = qzeros(self.shape) if const is None else np.asarray(const, dtype=object)
        self.terms: Dict[int, np.ndarray] = dict(terms or {})

    @classmethod
    def constant(cls, m) -> "AffineMatrix":
        m = np.asarray(m, dtype=object)
        if m.ndim != 2:
            raise AssemblyError(f"expected a matrix, got shape {m.shape}")
        return cls(m.shape, m.copy())

    @classmethod
    def zeros(cls, rows: int, cols: Optional[int] = None) -> "AffineMatrix":
        return cls((rows, rows if cols is None else cols))

    def copy(self) -> "AffineMatrix":
        return AffineMatrix(self.shape, self.const.copy(), {i: m.copy() for i, m in self.terms.items()})

    def _check(self, other: "AffineMatrix"):
        if other.shape != self.shape:
            raise AssemblyError(f"shape mismatch {self.shape} vs {other.shape}")

    def __add__(self, other) -> "AffineMatrix":
        if not isinstance(other, AffineMatrix):
            other = AffineMatrix.constant(other)
        self._check(other)
        terms = {i: m.copy() for i, m in self.terms.items()}
        for i, m in other.terms.items():
            terms[i] = terms[i] + m if i in terms else m.copy()
        return AffineMatrix(self.shape, self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self) -> "AffineMatrix":
        return AffineMatrix(self.shape, -self.const, {i: -m for i, m in self.terms.items()})

    def __sub__(self, other) -> "AffineMatrix":
        if not isinstance(other, AffineMatrix):
            other = AffineMatrix.constant(other)
        return self + (-other)

    def __rsub__(self, other) -> "AffineMatrix":
        return (-self) + other

    def __mul__(self, scalar) -> "AffineMatrix":
        if isinstance(scalar, AffineScalar):
            if not scalar.is_constant:
                raise AssemblyError("product of two decision-dependent expressions is not affine")
            scalar = scalar.const
        s = to_fraction(scalar)
        return AffineMatrix(self.shape, self.const * s, {i: m * s for i, m in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, right) -> "AffineMatrix":
        right = np.asarray(right, dtype=object)
        if right.shape[0] != self.shape[1]:
            raise AssemblyError(f"cannot multiply {self.shape} by {right.shape}")
        return AffineMatrix(
            (self.shape[0], right.shape[1]),
            self.const.dot(right),
            {i: m.dot(right) for i, m in self.terms.items()},
        )

    def __rmatmul__(self, left) -> "AffineMatrix":
        left = np.asarray(left, dtype=object)
        if left.shape[1] != self.shape[0]:
            raise AssemblyError(f"cannot multiply {left.shape} by {self.shape}")
        return AffineMatrix(
            (left.shape[0], self.shape[1]),
            left.dot(self.const),
            {i: left.dot(m) for i, m in self.terms.items()},
        )

    @property
    def T(self) -> "AffineMatrix":
        return AffineMatrix((self.shape[1], self.shape[0]), self.const.T.copy(), {i: m.T.copy() for i, m in self.terms.items()})

    def he(self) -> "AffineMatrix":
        """M + Mᵀ"""
        return self + self.T

    def congruence(self, L) -> "AffineMatrix":
        """Lᵀ · self · L"""
        L = np.asarray(L, dtype=object)
        return L.T @ (self @ L)

    def entry(self, i: int, j: int) -> AffineScalar:
        return AffineScalar(self.const[i, j], {k: m[i, j] for k, m in self.terms.items()})

    def trace(self) -> AffineScalar:
        return AffineScalar(sum(self.const.diagonal(), Fraction(0)), {k: sum(m.diagonal(), Fraction(0)) for k, m in self.terms.items()})

    def evaluate(self, y) -> np.ndarray:
        exact = _is_exact(y)
        out = self.const.copy() if exact else self.const.astype(float)
        for i, m in self.terms.items():
            out = out + (m * y[i] if exact else m.astype(float) * float(y[i]))
        return out

    def variables(self) -> List[int]:
        return sorted(self.terms)


# ---------------------------------------------------------------------------
# variables and problems
# ---------------------------------------------------------------------------


@dataclass
class Variable:
    name: str
    kind: VariableKind
    rows: int
    cols: int
    offset: int

    @property
    def size(self) -> int:
        if self.kind in (VariableKind.SYMMETRIC, VariableKind.SOS_GRAM):
            return self.rows * (self.rows + 1) // 2
        if self.kind in (VariableKind.NONNEG_DIAG, VariableKind.FREE_DIAG):
            return self.rows
        if self.kind == VariableKind.FREE:
            return self.rows * self.cols
        return 1

    @property
    def symmetric(self) -> bool:
        return self.kind in (VariableKind.SYMMETRIC, VariableKind.SOS_GRAM)

    def positions(self) -> List[Tuple[int, int]]:
        """Matrix position (i, j) of each scalar in storage order"""
        if self.kind in (VariableKind.SYMMETRIC, VariableKind.SOS_GRAM):
            return [(i, j) for i in range(self.rows) for j in range(i, self.rows)]
        if self.kind in (VariableKind.NONNEG_DIAG, VariableKind.FREE_DIAG):
            return [(i, i) for i in range(self.rows)]
        if self.kind == VariableKind.FREE:
            return [(i, j) for i in range(self.rows) for j in range(self.cols)]
        return [(0, 0)]

    def indices(self) -> range:
        return range(self.offset, self.offset + self.size)

    def matrix(self) -> AffineMatrix:
        out = AffineMatrix((self.rows, self.cols))
        for k, (i, j) in enumerate(self.positions()):
            basis = qzeros((self.rows, self.cols))
            basis[i, j] = Fraction(1)
            if self.symmetric:
                basis[j, i] = Fraction(1)
            out.terms[self.offset + k] = basis
        return out

    def scalar(self) -> AffineScalar:
        if self.size != 1:
            raise AssemblyError(f"variable {self.name} is not a scalar")
        return AffineScalar.variable(self.offset)

    def entry(self, i: int, j: int) -> AffineScalar:
        if self.kind in (VariableKind.SYMMETRIC, VariableKind.SOS_GRAM) and i > j:
            i, j = j, i
        for k, pos in enumerate(self.positions()):
            if pos == (i, j):
                return AffineScalar.variable(self.offset + k)
        return AffineScalar(0)

    def diagonal(self) -> List[AffineScalar]:
        return [self.entry(i, i) for i in range(self.rows)]

    def trace(self) -> AffineScalar:
        total = AffineScalar(0)
        for e in self.diagonal():
            total = total + e
        return total

    def unpack(self, y) -> np.ndarray:
        """Matrix value of this variable in the solution vector y"""
        exact = isinstance(y, np.ndarray) and y.dtype == object
        out = qzeros((self.rows, self.cols)) if exact else np.zeros((self.rows, self.cols))
        for k, (i, j) in enumerate(self.positions()):
            out[i, j] = y[self.offset + k]
            if self.symmetric:
                out[j, i] = y[self.offset + k]
        return out

    def is_diagonal_storage(self, k: int) -> bool:
        i, j = self.positions()[k]
        return i == j


@dataclass
class LMIBlock:
    name: str
    expr: AffineMatrix  # expr ⪰ 0


@dataclass
class LinearConstraint:
    name: str
    expr: AffineScalar
    sense: str  # "==" or ">="
    project_onto: Optional[str] = None  # Gram variable absorbing rounding residue


class ConicProblem:
    """Named decision variables plus LMI / linear constraints"""

    def __init__(self, name: str = "problem"):
        self.name = name
        self.variables: List[Variable] = []
        self.by_name: Dict[str, Variable] = {}
        self.lmis: List[LMIBlock] = []
        self.linear: List[LinearConstraint] = []
        self.objective: Optional[AffineScalar] = None
        self.n_scalars = 0
        self.notes: Dict[str, object] = {}

    # variables

    def add_variable(self, name: str, kind: VariableKind, rows: int = 1, cols: Optional[int] = None) -> Variable:
        if name in self.by_name:
            raise AssemblyError(f"duplicate decision variable {name}")
        kind = VariableKind(kind)
        if kind in (VariableKind.SCALAR, VariableKind.NONNEG_SCALAR, VariableKind.NONPOS_SCALAR):
            rows, cols = 1, 1
        cols = rows if cols is None else cols
        if kind in (VariableKind.SYMMETRIC, VariableKind.SOS_GRAM, VariableKind.NONNEG_DIAG, VariableKind.FREE_DIAG) and cols != rows:
            raise AssemblyError(f"variable {name} of kind {kind.value} must be square")
        var = Variable(name, kind, rows, cols, self.n_scalars)
        self.variables.append(var)
        self.by_name[name] = var
        self.n_scalars += var.size
        if kind in (VariableKind.NONNEG_DIAG, VariableKind.NONNEG_SCALAR):
            for k, idx in enumerate(var.indices()):
                self.add_inequality(f"{name}[{k}]>=0", AffineScalar.variable(idx))
        elif kind == VariableKind.NONPOS_SCALAR:
            self.add_inequality(f"{name}<=0", AffineScalar.variable(var.offset, -1))
        elif kind == VariableKind.SOS_GRAM and rows > 0:
            self.add_psd(f"{name}>=0", var.matrix())
        return var

    def variable(self, name: str) -> Variable:
        return self.by_name[name]

    # constraints

    def add_psd(self, name: str, expr: AffineMatrix) -> None:
        if expr.shape[0] != expr.shape[1]:
            raise AssemblyError(f"LMI {name} is not square: {expr.shape}")
        if expr.shape[0] == 0:
            return
        sym = (expr + expr.T) * Fraction(1, 2)
        self.lmis.append(LMIBlock(name, sym))

    def add_nsd(self, name: str, expr: AffineMatrix) -> None:
        self.add_psd(name, -expr)

    def add_equality(self, name: str, expr: AffineScalar, project_onto: Optional[str] = None) -> None:
        if expr.is_constant:
            if expr.const != 0:
                raise AssemblyError(f"constraint {name} is inconsistent: {format_fraction(expr.const)} = 0")
            return
        self.linear.append(LinearConstraint(name, expr, "==", project_onto))

    def add_inequality(self, name: str, expr: AffineScalar) -> None:
        """expr ≥ 0"""
        self.linear.append(LinearConstraint(name, expr, ">="))

    def minimize(self, expr: AffineScalar) -> None:
        self.objective = expr

    # structure

    @property
    def equalities(self) -> List[LinearConstraint]:
        return [c for c in self.linear if c.sense == "=="]

    @property
    def inequalities(self) -> List[LinearConstraint]:
        return [c for c in self.linear if c.sense == ">="]

    @property
    def is_linear(self) -> bool:
        return all(b.expr.shape[0] == 1 for b in self.lmis)

    def block_sizes(self) -> List[int]:
        return [b.expr.shape[0] for b in self.lmis]

    def unpack(self, y) -> Dict[str, np.ndarray]:
        return {v.name: v.unpack(y) for v in self.variables}

    def pack(self, values: Mapping[str, np.ndarray], exact: bool = True) -> np.ndarray:
        y = qzeros(self.n_scalars) if exact else np.zeros(self.n_scalars)
        for var in self.variables:
            if var.name not in values:
                continue
            m = np.asarray(values[var.name], dtype=object if exact else float).reshape(var.rows, var.cols)
            for k, (i, j) in enumerate(var.positions()):
                y[var.offset + k] = to_fraction(m[i, j]) if exact else float(m[i, j])
        return y

    def margins(self, y) -> Dict[str, float]:
        """Minimum eigenvalue of each LMI block at y (float)"""
        y = np.asarray(y, dtype=float)
        return {b.name: float(np.linalg.eigvalsh(b.expr.evaluate(y).astype(float)).min()) for b in self.lmis}

    def residuals(self, y) -> Tuple[float, float]:
        """(max |equality residual|, max inequality violation) at y"""
        y = np.asarray(y, dtype=float)
        eq = [abs(float(c.expr.evaluate(y))) for c in self.equalities]
        ineq = [max(0.0, -float(c.expr.evaluate(y))) for c in self.inequalities]
        return (max(eq, default=0.0), max(ineq, default=0.0))

    # sparse block text format

    def to_sparse_block(self) -> str:
        lines = ["# lyacert sparse block format v1", f"problem {self.name}", f"scalars {self.n_scalars}"]
        for v in self.variables:
            lines.append(f"var {v.name} {v.kind.value} {v.rows} {v.cols} {v.offset}")
        if self.objective is not None:
            lines.append(f"objective {format_fraction(self.objective.const)}")
            lines += [f"t {i} {format_fraction(a)}" for i, a in sorted(self.objective.terms.items())]
        for b in self.lmis:
            n = b.expr.shape[0]
            lines.append(f"lmi {b.name} {n}")
            for i in range(n):
                for j in range(i, n):
                    if b.expr.const[i, j] != 0:
                        lines.append(f"c {i} {j} {format_fraction(b.expr.const[i, j])}")
            for k in sorted(b.expr.terms):
                m = b.expr.terms[k]
                for i in range(n):
                    for j in range(i, n):
                        if m[i, j] != 0:
                            lines.append(f"m {k} {i} {j} {format_fraction(m[i, j])}")
        for c in self.linear:
            tag = "eq" if c.sense == "==" else "ineq"
            suffix = f" {c.project_onto}" if c.project_onto else ""
            lines.append(f"{tag} {c.name} {format_fraction(c.expr.const)}{suffix}")
            lines += [f"t {i} {format_fraction(a)}" for i, a in sorted(c.expr.terms.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_sparse_block(cls, text: str) -> "ConicProblem":
        problem = cls()
        expected = 0
        current = None  # ("lmi", block) | ("lin", constraint) | ("obj", expr)
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head, *rest = line.split()
            if head == "problem":
                problem.name = rest[0] if rest else "problem"
            elif head == "scalars":
                expected = int(rest[0])
            elif head == "var":
                name, kind, rows, cols, offset = rest
                var = Variable(name, VariableKind(kind), int(rows), int(cols), int(offset))
                problem.variables.append(var)
                problem.by_name[name] = var
                problem.n_scalars = max(problem.n_scalars, var.offset + var.size)
            elif head == "objective":
                problem.objective = AffineScalar(Fraction(rest[0]))
                current = ("obj", problem.objective)
            elif head == "lmi":
                n = int(rest[1])
                block = LMIBlock(rest[0], AffineMatrix((n, n)))
                problem.lmis.append(block)
                current = ("lmi", block)
            elif head in ("c", "m"):
                block = current[1]
                if head == "c":
                    i, j, v = int(rest[0]), int(rest[1]), Fraction(rest[2])
                    target = block.expr.const
                else:
                    k, i, j, v = int(rest[0]), int(rest[1]), int(rest[2]), Fraction(rest[3])
                    n = block.expr.shape[0]
                    target = block.expr.terms.setdefault(k, qzeros((n, n)))
                target[i, j] = v
                target[j, i] = v
            elif head in ("eq", "ineq"):
                constraint = LinearConstraint(
                    rest[0],
                    AffineScalar(Fraction(rest[1])),
                    "==" if head == "eq" else ">=",
                    rest[2] if len(rest) > 2 else None,
                )
                problem.linear.append(constraint)
                current = ("lin", constraint)
            elif head == "t":
                i, v = int(rest[0]), Fraction(rest[1])
                expr = current[1] if current[0] == "obj" else current[1].expr
                expr.terms[i] = v
            else:
                raise AssemblyError(f"unknown record '{head}' in sparse block text")
        if problem.n_scalars != expected:
            raise AssemblyError(f"sparse block text declares {expected} scalars, variables cover {problem.n_scalars}")
        return problem


# ---------------------------------------------------------------------------
# solver results
# ---------------------------------------------------------------------------


class SolveStatus(str, Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERIC_FAILURE = "numeric-failure"
    ITERATION_LIMIT = "iteration-limit"


@dataclass
class DualRay:
    """
    Farkas multipliers of an infeasible problem: one Z_k ⪰ 0 per matrix
    block, z ≥ 0 per scalar row (1×1 blocks, inequalities, then the variable
    box), λ per equality
    """

    blocks: List[np.ndarray]
    rows: np.ndarray
    equalities: np.ndarray


@dataclass
class SolveResult:
    status: SolveStatus
    y: Optional[np.ndarray] = None
    objective: Optional[Union[float, Fraction]] = None
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    margin: float = 0.0  # smallest LMI eigenvalue at y
    iterations: int = 0
    message: str = ""
    dual_ray: Optional[DualRay] = None

    @property
    def feasible(self) -> bool:
        return self.status == SolveStatus.FEASIBLE
