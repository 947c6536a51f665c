"""
Piecewise affine maps and their mixed-integer linear encoding

A ``PwaFunction`` lists pieces f(x) ∈ 2Aᵢx + 2Bᵢ on Xᵢ = {x | Sᵢx ≤ sᵢ}.
``pwa_to_milm`` builds an MILM whose transition relation equals the graph of
f: one binary vᵢ selects the active piece (exactly one vᵢ = 1), uᵢ = x·vᵢ is
linearized through box-bounded auxiliaries, and the piece inequalities are
turned into equalities with slacks scaled by R̲ᵢⱼ = min over Xᵢ of Sᵢⱼx − sᵢⱼ.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.milm import MILM
from app.core.rational import qmatrix, qvector, qzeros, to_fraction
from app.core.conic import SolveStatus
from app.errors import AbstractionError, ModelError
from app.services.lp_solver import minimize_over_polytope

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Piece:
    A: np.ndarray
    B: np.ndarray
    S: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=object)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError(f"A must be square, got {A.shape}", field="A")
        B = np.asarray(self.B, dtype=object).reshape(n)
        S = np.asarray(self.S, dtype=object)
        s = np.asarray(self.s, dtype=object).reshape(-1)
        if S.ndim != 2 or S.shape[1] != n or S.shape[0] != len(s) or len(s) == 0:
            raise ModelError(f"piece polytope needs rows S ({len(s)} × {n}) and s", field="S")
        for name, value in (("A", A), ("B", B), ("S", S), ("s", s)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def contains(self, x, tol: float = 0.0) -> bool:
        exact = tol == 0 and all(isinstance(a, (int, Fraction)) for a in x)
        if exact:
            xv = qvector(x)
            return all(v <= 0 for v in self.S.dot(xv) - self.s)
        xv = np.asarray(x, dtype=float)
        return bool(np.all(self.S.astype(float).dot(xv) - self.s.astype(float) <= tol))

    def value(self, x) -> np.ndarray:
        exact = all(isinstance(a, (int, Fraction)) for a in x)
        if exact:
            return 2 * self.A.dot(qvector(x)) + 2 * self.B
        return 2 * self.A.astype(float).dot(np.asarray(x, dtype=float)) + 2 * self.B.astype(float)


@dataclass(frozen=True, eq=False)
class PwaFunction:
    pieces: Tuple[Piece, ...]

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise ModelError("a piecewise affine map needs at least one piece", field="pieces")
        if len({p.n for p in pieces}) != 1:
            raise ModelError("pieces act on different dimensions", field="pieces")
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def from_affine(cls, pieces: Sequence[Tuple[Sequence, Sequence, Sequence, Sequence]]) -> "PwaFunction":
        """Pieces given as (M, c, S, s) with f(x) = Mx + c on {Sx ≤ s}"""
        out = []
        for M, c, S, s in pieces:
            M = qmatrix(M)
            out.append(Piece(M / 2, qvector(c) / 2, qmatrix(S), qvector(s)))
        return cls(tuple(out))

    @property
    def n(self) -> int:
        return self.pieces[0].n

    @property
    def N(self) -> int:
        return len(self.pieces)

    def values(self, x, tol: float = 0.0) -> List[np.ndarray]:
        """f(x) for every piece whose polytope contains x"""
        return [p.value(x) for p in self.pieces if p.contains(x, tol)]


def _lower_bounds(piece: Piece, index: int) -> List[Fraction]:
    """R̲ᵢⱼ for every row of the piece, plus a check that the piece sits in [-1, 1]ⁿ"""
    n = piece.n
    for k in range(n):
        for sign in (1, -1):
            cost = qzeros(n)
            cost[k] = Fraction(sign)
            r = minimize_over_polytope(cost, 0, piece.S, piece.s)
            if r.status == SolveStatus.UNBOUNDED:
                raise AbstractionError(f"piece {index} is unbounded")
            if r.status == SolveStatus.INFEASIBLE:
                raise AbstractionError(f"piece {index} is empty")
            if r.objective < -1:
                raise AbstractionError(f"piece {index} leaves [-1, 1]^{n} along coordinate {k}")
    out = []
    for j in range(piece.S.shape[0]):
        r = minimize_over_polytope(piece.S[j], -piece.s[j], piece.S, piece.s)
        if not r.feasible:
            raise AbstractionError(f"LP for row {j} of piece {index} failed: {r.status.value}")
        out.append(to_fraction(r.objective))
    return out


def pwa_to_milm(f: PwaFunction, variables: Sequence[str] = (), init: Optional[Sequence[Sequence]] = None) -> MILM:
    """
    MILM whose relation {F x_e | H x_e = 0} is the graph of f

    Per piece i the uncertainty block is [z̲ᵢ; z̄ᵢ; w̲ᵢ; w̄ᵢ; ωᵢ] (n, n, n, n
    and Nᵢ entries) with uᵢ = 2z̲ᵢ − x − (vᵢ − 1)𝟏:

        2Sᵢz̲ᵢ − (Sᵢ𝟏 + sᵢ)vᵢ − R̲ᵢωᵢ + Sᵢ𝟏 − sᵢ − R̲ᵢ𝟏 = 0
        z̲ᵢ − x + z̄ᵢ + 𝟏 = 0,   z̲ᵢ − vᵢ𝟏 − w̲ᵢ + 𝟏 = 0,   z̄ᵢ + vᵢ𝟏 − w̄ᵢ + 𝟏 = 0
        Σ vᵢ + N − 2 = 0

    and y = Σᵢ 2Aᵢz̲ᵢ + (Bᵢ − Aᵢ𝟏)vᵢ + Aᵢ𝟏 + Bᵢ. Without ``init`` the initial
    set is the domain of f.
    """
    n, N = f.n, f.N
    R = [_lower_bounds(p, i) for i, p in enumerate(f.pieces)]
    sizes = [4 * n + p.S.shape[0] for p in f.pieces]
    n_w = sum(sizes)
    n_e = n + n_w + N + 1
    one = n_e - 1
    rows: List[np.ndarray] = []
    F = qzeros((n, n_e))
    offset = n
    for i, (p, Ri) in enumerate(zip(f.pieces, R)):
        zl, zu, wl, wu, om = (offset + k * n for k in range(5))
        vi = n + n_w + i
        S, s = p.S, p.s
        ones_S = S.dot(np.array([Fraction(1)] * n, dtype=object))
        for j in range(S.shape[0]):
            row = qzeros(n_e)
            row[zl:zl + n] = 2 * S[j]
            row[vi] = -(ones_S[j] + s[j])
            row[om + j] = -Ri[j]
            row[one] = ones_S[j] - s[j] - Ri[j]
            rows.append(row)
        for k in range(n):
            row = qzeros(n_e)
            row[zl + k], row[k], row[zu + k], row[one] = Fraction(1), Fraction(-1), Fraction(1), Fraction(1)
            rows.append(row)
            row = qzeros(n_e)
            row[zl + k], row[vi], row[wl + k], row[one] = Fraction(1), Fraction(-1), Fraction(-1), Fraction(1)
            rows.append(row)
            row = qzeros(n_e)
            row[zu + k], row[vi], row[wu + k], row[one] = Fraction(1), Fraction(1), Fraction(-1), Fraction(1)
            rows.append(row)
        ones_A = p.A.dot(np.array([Fraction(1)] * n, dtype=object))
        F[:, zl:zl + n] += 2 * p.A
        F[:, vi] += p.B - ones_A
        F[:, one] += ones_A + p.B
        offset += sizes[i]
    selector = qzeros(n_e)
    selector[n + n_w:n + n_w + N] = [Fraction(1)] * N
    selector[one] = Fraction(N - 2)
    rows.append(selector)
    H = np.vstack(rows)
    logger.info("encoded %d-piece PWA map on R^%d as MILM: n_w=%d, n_v=%d, %d equalities", N, n, n_w, N, H.shape[0])
    if init is not None:
        return MILM(F, H, n, n_w, N, X0=tuple(tuple(s) for s in init), variables=tuple(variables))
    return MILM(F, H, n, n_w, N, H0=H.copy(), variables=tuple(variables))
