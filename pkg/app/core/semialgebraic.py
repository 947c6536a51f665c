"""
Semialgebraic sets described by linear and quadratic (in)equalities

A set over ``dim`` variables is written in the homogeneous coordinates
x̄ = [x; 1]:

    G x̄ ≥ 0,   H x̄ = 0,   x̄ᵀ Q_s x̄ ≥ 0,   x̄ᵀ R_m x̄ = 0
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.rational import as_float, exact_equal, qmatrix, qzeros, to_fraction
from app.errors import ModelError


def _sym(m: np.ndarray) -> np.ndarray:
    return (m + m.T) * Fraction(1, 2)


def terms_row(terms: Mapping[Tuple[int, ...], Fraction], dim: int) -> List[Fraction]:
    """Row g with g·[x; 1] equal to an affine coefficient dictionary"""
    row = [Fraction(0)] * (dim + 1)
    for e, c in terms.items():
        if sum(e) > 1:
            raise ModelError(f"term of degree {sum(e)} in a linear constraint")
        row[e.index(1) if sum(e) else dim] += to_fraction(c)
    return row


def terms_matrix(terms: Mapping[Tuple[int, ...], Fraction], dim: int) -> np.ndarray:
    """Symmetric Q with [x; 1]ᵀ Q [x; 1] equal to a degree-2 coefficient dictionary"""
    Q = qzeros((dim + 1, dim + 1))
    for e, c in terms.items():
        if sum(e) > 2:
            raise ModelError(f"term of degree {sum(e)} in a quadratic constraint")
        i, j = ([i for i, p in enumerate(e) for _ in range(p)] + [dim, dim])[:2]
        c = to_fraction(c)
        if i == j:
            Q[i, i] += c
        else:
            Q[i, j] += c / 2
            Q[j, i] += c / 2
    return Q


@dataclass(frozen=True, eq=False)
class SemialgebraicSet:
    dim: int
    lin_ineq: np.ndarray = field(default=None)  # rows G, G x̄ ≥ 0
    lin_eq: np.ndarray = field(default=None)  # rows H, H x̄ = 0
    quad_ineq: Tuple[np.ndarray, ...] = ()  # x̄ᵀ Q x̄ ≥ 0
    quad_eq: Tuple[np.ndarray, ...] = ()  # x̄ᵀ R x̄ = 0

    def __post_init__(self):
        width = self.dim + 1
        for name in ("lin_ineq", "lin_eq"):
            rows = getattr(self, name)
            rows = qzeros((0, width)) if rows is None else np.asarray(rows, dtype=object)
            if rows.ndim != 2 or rows.shape[1] != width:
                raise ModelError(f"expected {width} columns, got shape {rows.shape}", field=name)
            object.__setattr__(self, name, rows)
        for name in ("quad_ineq", "quad_eq"):
            mats = []
            for m in getattr(self, name):
                m = np.asarray(m, dtype=object)
                if m.shape != (width, width):
                    raise ModelError(f"expected {width}x{width} matrix, got {m.shape}", field=name)
                if not exact_equal(m, m.T):
                    raise ModelError("quadratic constraint matrix must be symmetric", field=name)
                mats.append(m)
            object.__setattr__(self, name, tuple(mats))

    # construction

    @classmethod
    def universal(cls, dim: int) -> "SemialgebraicSet":
        return cls(dim)

    @classmethod
    def from_rows(
        cls,
        dim: int,
        ineq: Iterable[Sequence] = (),
        eq: Iterable[Sequence] = (),
        quad_ineq: Iterable = (),
        quad_eq: Iterable = (),
    ) -> "SemialgebraicSet":
        return cls(
            dim,
            qmatrix(list(ineq), dim + 1),
            qmatrix(list(eq), dim + 1),
            tuple(qmatrix(q) for q in quad_ineq),
            tuple(qmatrix(r) for r in quad_eq),
        )

    @classmethod
    def from_terms(
        cls, dim: int, ineq: Iterable[Mapping] = (), eq: Iterable[Mapping] = ()
    ) -> "SemialgebraicSet":
        """p ≥ 0 / p = 0 for coefficient dictionaries of degree ≤ 2, sorted into linear and quadratic parts"""
        rows = {"ineq": [], "eq": [], "quad_ineq": [], "quad_eq": []}
        for key, polys in (("ineq", ineq), ("eq", eq)):
            for terms in polys:
                if max((sum(e) for e in terms), default=0) <= 1:
                    rows[key].append(terms_row(terms, dim))
                else:
                    rows[f"quad_{key}"].append(terms_matrix(terms, dim))
        return cls.from_rows(dim, **rows)

    @classmethod
    def box(cls, lower: Sequence, upper: Sequence) -> "SemialgebraicSet":
        """{x | lower ≤ x ≤ upper}; ``None`` leaves a side open"""
        dim = len(lower)
        rows = []
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if lo is not None:
                row = [0] * (dim + 1)
                row[i], row[dim] = 1, -to_fraction(lo)
                rows.append(row)
            if hi is not None:
                row = [0] * (dim + 1)
                row[i], row[dim] = -1, to_fraction(hi)
                rows.append(row)
        return cls.from_rows(dim, ineq=rows)

    # queries

    @property
    def is_universal(self) -> bool:
        return (
            self.lin_ineq.shape[0] == 0
            and self.lin_eq.shape[0] == 0
            and not self.quad_ineq
            and not self.quad_eq
        )

    @property
    def is_linear(self) -> bool:
        return not self.quad_ineq and not self.quad_eq

    def num_constraints(self) -> int:
        return self.lin_ineq.shape[0] + self.lin_eq.shape[0] + len(self.quad_ineq) + len(self.quad_eq)

    def contains(self, x: Sequence, tol: float = 0.0) -> bool:
        """Membership test; exact for rational points when ``tol`` is 0"""
        if len(x) != self.dim:
            raise ModelError(f"point has {len(x)} coordinates, set has {self.dim}", field="x")
        exact = tol == 0 and all(isinstance(v, (int, Fraction)) for v in x)
        if exact:
            xb = np.array([to_fraction(v) for v in x] + [Fraction(1)], dtype=object)
            G, H = self.lin_ineq, self.lin_eq
            quads_i, quads_e = self.quad_ineq, self.quad_eq
        else:
            xb = np.array([float(v) for v in x] + [1.0])
            G, H = as_float(self.lin_ineq), as_float(self.lin_eq)
            quads_i = [as_float(q) for q in self.quad_ineq]
            quads_e = [as_float(r) for r in self.quad_eq]
        if G.shape[0] and any(v < -tol for v in G.dot(xb)):
            return False
        if H.shape[0] and any(abs(v) > tol for v in H.dot(xb)):
            return False
        for q in quads_i:
            if xb.dot(q.dot(xb)) < -tol:
                return False
        for r in quads_e:
            if abs(xb.dot(r.dot(xb))) > tol:
                return False
        return True

    def linear_residuals(self, x: Sequence) -> np.ndarray:
        """Float values of every constraint function at x (ineq, eq, quad ineq, quad eq)"""
        xb = np.array([float(v) for v in x] + [1.0])
        parts = [as_float(self.lin_ineq).dot(xb), as_float(self.lin_eq).dot(xb)]
        parts.append(np.array([xb.dot(as_float(q).dot(xb)) for q in self.quad_ineq]))
        parts.append(np.array([xb.dot(as_float(r).dot(xb)) for r in self.quad_eq]))
        return np.concatenate(parts)

    # algebra

    def intersect(self, other: "SemialgebraicSet") -> "SemialgebraicSet":
        if other.dim != self.dim:
            raise ModelError(f"cannot intersect sets of dimension {self.dim} and {other.dim}")
        return SemialgebraicSet(
            self.dim,
            np.vstack([self.lin_ineq, other.lin_ineq]),
            np.vstack([self.lin_eq, other.lin_eq]),
            self.quad_ineq + other.quad_ineq,
            self.quad_eq + other.quad_eq,
        )

    def pullback(self, A: np.ndarray, b: Optional[np.ndarray] = None) -> "SemialgebraicSet":
        """
        {y | A y + b ∈ self} for an affine map y ↦ A y + b

        ``A`` is dim × m, the result lives over m variables.
        """
        A = np.asarray(A, dtype=object)
        if A.shape[0] != self.dim:
            raise ModelError(f"map has {A.shape[0]} outputs, set has dimension {self.dim}")
        m = A.shape[1]
        b = qzeros(self.dim) if b is None else np.asarray(b, dtype=object)
        lift = qzeros((self.dim + 1, m + 1))
        lift[: self.dim, :m] = A
        lift[: self.dim, m] = b
        lift[self.dim, m] = Fraction(1)
        return SemialgebraicSet(
            m,
            self.lin_ineq.dot(lift) if self.lin_ineq.shape[0] else qzeros((0, m + 1)),
            self.lin_eq.dot(lift) if self.lin_eq.shape[0] else qzeros((0, m + 1)),
            tuple(lift.T.dot(q).dot(lift) for q in self.quad_ineq),
            tuple(lift.T.dot(r).dot(lift) for r in self.quad_eq),
        )

    def embed(self, total_dim: int, offset: int = 0) -> "SemialgebraicSet":
        """Same set over a larger vector whose coordinates offset..offset+dim are ours"""
        select = qzeros((self.dim, total_dim))
        for i in range(self.dim):
            select[i, offset + i] = Fraction(1)
        return self.pullback(select)

    def with_products(self) -> "SemialgebraicSet":
        """
        Append pairwise products of the linear constraints as quadratic ones

        g_a g_b ≥ 0 for inequality pairs, h_a·(anything linear) = 0 for
        equalities.
        """
        quad_ineq: List[np.ndarray] = list(self.quad_ineq)
        quad_eq: List[np.ndarray] = list(self.quad_eq)
        G, H = self.lin_ineq, self.lin_eq
        for a in range(G.shape[0]):
            for b in range(a + 1, G.shape[0]):
                quad_ineq.append(_sym(np.outer(G[a], G[b]) * 2))
        for a in range(H.shape[0]):
            for b in range(a, H.shape[0]):
                quad_eq.append(_sym(np.outer(H[a], H[b]) * 2))
            for b in range(G.shape[0]):
                quad_eq.append(_sym(np.outer(H[a], G[b]) * 2))
        return SemialgebraicSet(self.dim, G, H, tuple(quad_ineq), tuple(quad_eq))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemialgebraicSet) or other.dim != self.dim:
            return False
        if not (exact_equal(self.lin_ineq, other.lin_ineq) and exact_equal(self.lin_eq, other.lin_eq)):
            return False
        if len(self.quad_ineq) != len(other.quad_ineq) or len(self.quad_eq) != len(other.quad_eq):
            return False
        pairs = list(zip(self.quad_ineq, other.quad_ineq)) + list(zip(self.quad_eq, other.quad_eq))
        return all(exact_equal(a, b) for a, b in pairs)

    __hash__ = None  # type: ignore[assignment]
