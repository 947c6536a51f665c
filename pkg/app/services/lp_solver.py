"""
Two-phase tableau simplex, exact over Fractions or in float64

Bland's rule is used for both entering and leaving choices so the exact
variant never cycles on the degenerate instances the relaxations produce.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.core.conic import ConicProblem, DualRay, SolveResult, SolveStatus
from app.core.rational import qzeros, to_fraction
from app.errors import AssemblyError

logger = logging.getLogger(__name__)

FLOAT_TOL = 1e-9


@dataclass
class LinearProgram:
    """min cᵀy  s.t.  A_eq y = b_eq,  A_ge y ≥ b_ge,  y free"""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ge: np.ndarray
    b_ge: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)


class _Tableau:
    def __init__(self, exact: bool):
        self.exact = exact
        self.tol = 0 if exact else FLOAT_TOL

    def array(self, a):
        if self.exact:
            out = np.asarray(a, dtype=object)
            flat = [to_fraction(v) for v in out.ravel()]
            return np.array(flat, dtype=object).reshape(out.shape)
        return np.asarray(a, dtype=object).astype(float)

    def zeros(self, shape):
        return qzeros(shape) if self.exact else np.zeros(shape)

    def pivot(self, T: np.ndarray, basis: List[int], row: int, col: int) -> None:
        T[row, :] = T[row, :] / T[row, col]
        column = T[:, col].copy()
        column[row] = 0
        T -= np.outer(column, T[row, :])
        if not self.exact:
            T[np.abs(T) < 1e-14] = 0.0
        basis[row] = col

    def iterate(self, T: np.ndarray, basis: List[int], allowed: int, max_iter: int) -> Tuple[str, int]:
        """Minimize the objective in the last row; columns ≥ allowed never enter"""
        m = T.shape[0] - 1
        for it in range(max_iter):
            entering = next((j for j in range(allowed) if T[m, j] < -self.tol), None)
            if entering is None:
                return "optimal", it
            best, leaving = None, None
            for i in range(m):
                a = T[i, entering]
                if a > self.tol:
                    ratio = T[i, -1] / a
                    if best is None or ratio < best - self.tol or (abs(ratio - best) <= self.tol and basis[i] < basis[leaving]):
                        best, leaving = ratio, i
            if leaving is None:
                return "unbounded", it
            self.pivot(T, basis, leaving, entering)
        return "iteration-limit", max_iter


def _standard_form(lp: LinearProgram, tab: _Tableau):
    """y = u - v, A_ge y - s = b_ge; returns (A, b, c) with all columns ≥ 0"""
    n = lp.n
    A_eq, A_ge = tab.array(lp.A_eq).reshape(-1, n), tab.array(lp.A_ge).reshape(-1, n)
    m_eq, m_ge = A_eq.shape[0], A_ge.shape[0]
    A = tab.zeros((m_eq + m_ge, 2 * n + m_ge))
    A[:m_eq, :n], A[:m_eq, n:2 * n] = A_eq, -A_eq
    A[m_eq:, :n], A[m_eq:, n:2 * n] = A_ge, -A_ge
    for k in range(m_ge):
        A[m_eq + k, 2 * n + k] = -1
    b = np.concatenate([tab.array(lp.b_eq).reshape(-1), tab.array(lp.b_ge).reshape(-1)])
    c = tab.zeros(2 * n + m_ge)
    c[:n], c[n:2 * n] = tab.array(lp.c), -tab.array(lp.c)
    return A, b, c


def _farkas(T: np.ndarray, signs: Sequence[int], N: int, m_eq: int, tab: _Tableau) -> DualRay:
    """
    Phase I multipliers π = 1 − (reduced cost of each artificial column)

    At the phase I optimum πᵀA ≤ 0 on every standard-form column and πᵀb > 0,
    so π_ge ≥ 0 and π_eqᵀA_eq + π_geᵀA_ge = 0 while π_eqᵀb_eq + π_geᵀb_ge > 0.
    """
    m = len(signs)
    pi = tab.array([signs[i] * (1 - T[m, N + i]) for i in range(m)])
    return DualRay([], pi[m_eq:], pi[:m_eq])


def solve_linear_program(lp: LinearProgram, exact: bool = True, max_iter: Optional[int] = None) -> SolveResult:
    tab = _Tableau(exact)
    max_iter = max_iter or 50 * (lp.n + len(lp.b_eq) + len(lp.b_ge) + 10)
    A, b, c = _standard_form(lp, tab)
    m, N = A.shape
    if m == 0:
        y = tab.zeros(lp.n)
        if any(v != 0 for v in tab.array(lp.c)):
            return SolveResult(SolveStatus.UNBOUNDED, message="objective unbounded without constraints")
        return SolveResult(SolveStatus.FEASIBLE, y, objective=0 if exact else 0.0)
    signs = [1] * m
    for i in range(m):
        if b[i] < 0:
            A[i, :], b[i] = -A[i, :], -b[i]
            signs[i] = -1

    # phase I: artificials in columns N..N+m-1
    T = tab.zeros((m + 1, N + m + 1))
    T[:m, :N] = A
    for i in range(m):
        T[i, N + i] = 1
    T[:m, -1] = b
    T[m, :N] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(N, N + m))
    status, it1 = tab.iterate(T, basis, N, max_iter)
    if status == "iteration-limit":
        return SolveResult(SolveStatus.ITERATION_LIMIT, iterations=it1, message="phase I iteration limit")
    infeasibility = -T[m, -1]
    if infeasibility > (0 if exact else 1e-7 * max(1.0, float(np.abs(b).max()))):
        logger.debug("LP infeasible, phase I optimum %s", infeasibility)
        result = SolveResult(SolveStatus.INFEASIBLE, iterations=it1, primal_residual=float(infeasibility))
        result.dual_ray = _farkas(T, signs, N, len(lp.b_eq), tab)
        return result

    # drive remaining artificials out of the basis, drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= N:
            col = next((j for j in range(N) if abs(T[i, j]) > tab.tol), None)
            if col is None:
                continue
            tab.pivot(T, basis, i, col)
        keep.append(i)
    T = np.vstack([T[keep][:, list(range(N)) + [N + m]], tab.zeros((1, N + 1))])
    basis = [basis[i] for i in keep]
    m = len(keep)

    # phase II
    T[m, :N] = c
    for i, j in enumerate(basis):
        if T[m, j] != 0:
            T[m, :] = T[m, :] - T[m, j] * T[i, :]
    status, it2 = tab.iterate(T, basis, N, max_iter)
    if status == "unbounded":
        return SolveResult(SolveStatus.UNBOUNDED, iterations=it1 + it2, message="objective unbounded below")
    if status == "iteration-limit":
        return SolveResult(SolveStatus.ITERATION_LIMIT, iterations=it1 + it2, message="phase II iteration limit")
    x = tab.zeros(N)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    y = x[:lp.n] - x[lp.n:2 * lp.n]
    objective = -T[m, -1]
    result = SolveResult(SolveStatus.FEASIBLE, y, objective=objective, iterations=it1 + it2)
    if not exact:
        yf = y.astype(float)
        eq = np.asarray(lp.A_eq, dtype=float).reshape(-1, lp.n).dot(yf) - np.asarray(lp.b_eq, dtype=float)
        ge = np.asarray(lp.A_ge, dtype=float).reshape(-1, lp.n).dot(yf) - np.asarray(lp.b_ge, dtype=float)
        result.primal_residual = float(max(np.abs(eq).max(initial=0.0), (-ge).max(initial=0.0)))
    return result


def minimize_over_polytope(cost: Sequence, offset, S: np.ndarray, s: Sequence, exact: bool = True) -> SolveResult:
    """min costᵀx + offset over {x | S x ≤ s}"""
    S = np.asarray(S, dtype=object)
    n = S.shape[1]
    lp = LinearProgram(
        c=np.asarray(list(cost), dtype=object),
        A_eq=qzeros((0, n)),
        b_eq=qzeros(0),
        A_ge=-S,
        b_ge=-np.asarray(list(s), dtype=object),
    )
    result = solve_linear_program(lp, exact=exact)
    if result.feasible:
        result.objective = result.objective + (to_fraction(offset) if exact else float(offset))
    return result


def problem_to_lp(problem: ConicProblem) -> LinearProgram:
    """Read the linear parts of a conic problem; 1×1 LMI blocks become inequalities"""
    if not problem.is_linear:
        raise AssemblyError(f"{problem.name} has matrix-valued LMI blocks; use the SDP solver")
    n = problem.n_scalars

    def row(expr) -> Tuple[np.ndarray, Fraction]:
        r = qzeros(n)
        for i, a in expr.terms.items():
            r[i] = a
        return r, -expr.const

    eq_rows, eq_rhs, ge_rows, ge_rhs = [], [], [], []
    for con in problem.linear:
        r, rhs = row(con.expr)
        (eq_rows if con.sense == "==" else ge_rows).append(r)
        (eq_rhs if con.sense == "==" else ge_rhs).append(rhs)
    for block in problem.lmis:
        r, rhs = row(block.expr.entry(0, 0))
        ge_rows.append(r)
        ge_rhs.append(rhs)
    c = qzeros(n)
    if problem.objective is not None:
        for i, a in problem.objective.terms.items():
            c[i] = a
    as_matrix = lambda rows: np.vstack(rows) if rows else qzeros((0, n))  # noqa: E731
    return LinearProgram(c, as_matrix(eq_rows), np.array(eq_rhs, dtype=object), as_matrix(ge_rows), np.array(ge_rhs, dtype=object))


def solve_lp(problem: ConicProblem, exact: bool = True) -> SolveResult:
    """Solve a conic problem without matrix cones"""
    lp = problem_to_lp(problem)
    logger.debug("LP %s: %d scalars, %d eq, %d ineq (exact=%s)", problem.name, lp.n, len(lp.b_eq), len(lp.b_ge), exact)
    result = solve_linear_program(lp, exact=exact, max_iter=max(settings.max_iterations, 50 * (lp.n + len(lp.b_ge) + len(lp.b_eq) + 10)))
    if result.dual_ray is not None:
        # conic row order: 1×1 blocks, inequalities, then a zero variable box
        ray, k = result.dual_ray, len(problem.inequalities)
        box = qzeros(2 * lp.n) if exact else np.zeros(2 * lp.n)
        result.dual_ray = DualRay([], np.concatenate([ray.rows[k:], ray.rows[:k], box]), ray.equalities)
    if result.feasible:
        if problem.objective is not None:
            result.objective = problem.objective.evaluate(result.y)
        eq, ineq = problem.residuals(np.asarray(result.y, dtype=object).astype(float))
        result.primal_residual = max(eq, ineq)
        if problem.lmis:
            result.margin = min(problem.margins(np.asarray(result.y, dtype=object).astype(float)).values())
    return result
