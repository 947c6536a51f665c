"""
Interior-point solving of block-diagonal LMI problems

A ConicProblem is handed to cvxopt's primal-dual cone solver (Nesterov-Todd
scaling) in the form

    min cᵀy   s.t.   S_k = G₀ + Σ yᵢ Gᵢ ⪰ 0,   a₀ + A y ≥ 0,   E y = d

after Ruiz equilibration. Feasibility goes through a phase-I problem

    min t   s.t.   S_k + t I ⪰ 0,   a₀ + A y + t ≥ 0,   t ≥ -1

and its point is re-checked against the unscaled problem. Every variable
also lives in a box |yᵢ| ≤ variable_bound. When no feasible point exists
the plain feasibility problem is solved once more for a dual improving ray.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from cvxopt import matrix, solvers, spmatrix

from app.config import settings
from app.core.conic import ConicProblem, DualRay, SolveResult, SolveStatus
from app.errors import AssemblyError

logger = logging.getLogger(__name__)


@dataclass
class _Data:
    """Float problem data in (possibly) equilibrated coordinates"""

    n: int
    blocks: List[Tuple[np.ndarray, Dict[int, np.ndarray]]]
    lp_a0: np.ndarray
    lp_A: np.ndarray
    E: np.ndarray
    d: np.ndarray
    c: np.ndarray
    block_names: List[str] = field(default_factory=list)


@dataclass
class _Scaling:
    """y = D ỹ; every scaled constraint is its original times a positive factor"""

    D: np.ndarray
    blocks: np.ndarray
    rows: np.ndarray
    equalities: np.ndarray


def _extract(problem: ConicProblem) -> _Data:
    n = problem.n_scalars
    blocks: List[Tuple[np.ndarray, Dict[int, np.ndarray]]] = []
    names: List[str] = []
    lp_rows, lp_consts = [], []
    for b in problem.lmis:
        size = b.expr.shape[0]
        if size > settings.block_size_cap:
            raise AssemblyError(f"LMI {b.name} has size {size} > block cap {settings.block_size_cap}")
        if size == 1:
            row = np.zeros(n)
            for i, m in b.expr.terms.items():
                row[i] = float(m[0, 0])
            lp_rows.append(row)
            lp_consts.append(float(b.expr.const[0, 0]))
            continue
        G0 = b.expr.const.astype(float)
        Gi = {i: m.astype(float) for i, m in b.expr.terms.items() if np.any(m != 0)}
        blocks.append((G0, Gi))
        names.append(b.name)
    for con in problem.inequalities:
        row = np.zeros(n)
        for i, a in con.expr.terms.items():
            row[i] = float(a)
        lp_rows.append(row)
        lp_consts.append(float(con.expr.const))
    eq = problem.equalities
    E = np.zeros((len(eq), n))
    d = np.zeros(len(eq))
    for r, con in enumerate(eq):
        for i, a in con.expr.terms.items():
            E[r, i] = float(a)
        d[r] = -float(con.expr.const)
    c = np.zeros(n)
    if problem.objective is not None:
        for i, a in problem.objective.terms.items():
            c[i] = float(a)
    lp_A = np.array(lp_rows) if lp_rows else np.zeros((0, n))
    return _Data(n, blocks, np.array(lp_consts, dtype=float), lp_A, E, d, c, names)


def _equilibrate(data: _Data, passes: int) -> Tuple[_Data, _Scaling]:
    """
    Ruiz scaling: alternate variable (column) and constraint (row/block)
    max-norm equilibration
    """
    n = data.n
    D = np.ones(n)
    blocks = [(G0.copy(), {i: m.copy() for i, m in Gi.items()}) for G0, Gi in data.blocks]
    block_s = np.ones(len(blocks))
    lp_a0, lp_A = data.lp_a0.copy(), data.lp_A.copy()
    row_s = np.ones(len(lp_a0))
    E, d = data.E.copy(), data.d.copy()
    eq_s = np.ones(len(d))
    for _ in range(passes):
        col = np.zeros(n)
        for _, Gi in blocks:
            for i, m in Gi.items():
                col[i] = max(col[i], np.abs(m).max())
        if lp_A.size:
            col = np.maximum(col, np.abs(lp_A).max(axis=0))
        if E.size:
            col = np.maximum(col, np.abs(E).max(axis=0))
        scale = np.where(col > 0, 1.0 / np.sqrt(np.where(col > 0, col, 1.0)), 1.0)
        D *= scale
        for _, Gi in blocks:
            for i in Gi:
                Gi[i] *= scale[i]
        lp_A *= scale
        E *= scale
        for k, (G0, Gi) in enumerate(blocks):
            r = max((np.abs(m).max() for m in Gi.values()), default=0.0)
            if r > 0:
                s = 1.0 / np.sqrt(r)
                blocks[k] = (G0 * s, {i: m * s for i, m in Gi.items()})
                block_s[k] *= s
        if lp_A.size:
            r = np.abs(lp_A).max(axis=1)
            s = np.where(r > 0, 1.0 / np.sqrt(np.where(r > 0, r, 1.0)), 1.0)
            lp_A *= s[:, None]
            lp_a0 = lp_a0 * s
            row_s *= s
        if E.size:
            r = np.abs(E).max(axis=1)
            s = np.where(r > 0, 1.0 / np.sqrt(np.where(r > 0, r, 1.0)), 1.0)
            E *= s[:, None]
            d = d * s
            eq_s *= s
    scaled = _Data(n, blocks, lp_a0, lp_A, E, d, data.c * D, data.block_names)
    return scaled, _Scaling(D, block_s, row_s, eq_s)


def _independent_rows(E: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Rows of E y = d with full row rank, and whether the system is consistent"""
    p, n = E.shape
    if p == 0:
        return np.zeros(0, dtype=int), True
    _, R, piv = scipy.linalg.qr(E.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > 1e-10 * max(diag.max(initial=0.0), 1.0)).sum())
    keep = np.sort(piv[:rank])
    y0 = scipy.linalg.lstsq(E[keep], d[keep])[0] if rank else np.zeros(n)
    consistent = np.linalg.norm(E @ y0 - d) <= 1e-9 * (1.0 + np.linalg.norm(d))
    return keep, bool(consistent)


def _with_box(data: _Data, bound: np.ndarray) -> _Data:
    """bound ± yᵢ ≥ 0 appended to the scalar rows"""
    n = data.n
    box = np.vstack([np.eye(n), -np.eye(n)])
    return _Data(
        n,
        data.blocks,
        np.concatenate([data.lp_a0, bound, bound]),
        np.vstack([data.lp_A, box]),
        data.E,
        data.d,
        data.c,
        data.block_names,
    )


def _phase_one(data: _Data, bound: np.ndarray) -> _Data:
    """Append t: blocks and scalar rows are shifted by t, the box rows are not"""
    n = data.n
    blocks = [(G0, {**Gi, n: np.eye(len(G0))}) for G0, Gi in data.blocks]
    m = len(data.lp_a0)
    lp_A = np.vstack([
        np.hstack([data.lp_A, np.ones((m, 1))]),
        np.hstack([np.eye(n), np.zeros((n, 1))]),
        np.hstack([-np.eye(n), np.zeros((n, 1))]),
        np.eye(1, n + 1, n),
    ])
    lp_a0 = np.concatenate([data.lp_a0, bound, bound, [1.0]])
    E = np.hstack([data.E, np.zeros((len(data.d), 1))])
    return _Data(n + 1, blocks, lp_a0, lp_A, E, data.d, np.eye(1, n + 1, n).ravel(), data.block_names)


# cvxopt plumbing


def _sparse(M: np.ndarray) -> spmatrix:
    r, q = np.nonzero(M)
    return spmatrix(M[r, q].astype(float).tolist(), r.tolist(), q.tolist(), (int(M.shape[0]), int(M.shape[1])))


def _column(v: np.ndarray) -> matrix:
    return matrix(np.ascontiguousarray(v, dtype=float).reshape(-1, 1))


def _cone_args(data: _Data, eq_rows: np.ndarray) -> Dict[str, object]:
    """solvers.sdp arguments: G x + s = h with s in the cone, A x = b"""
    n = data.n
    Gs, hs = [], []
    for G0, Gi in data.blocks:
        size = len(G0)
        vals, rows, cols = [], [], []
        for i, g in Gi.items():
            r, q = np.nonzero(g)
            vals += (-g[r, q]).tolist()
            rows += (r + q * size).tolist()
            cols += [int(i)] * len(r)
        Gs.append(spmatrix(vals, rows, cols, (size * size, n)))
        hs.append(matrix(np.ascontiguousarray(G0, dtype=float)))
    args: Dict[str, object] = {"c": _column(data.c), "Gl": _sparse(-data.lp_A), "hl": _column(data.lp_a0), "Gs": Gs, "hs": hs}
    if len(eq_rows):
        args["A"] = _sparse(data.E[eq_rows])
        args["b"] = _column(data.d[eq_rows])
    return args


def _run(args: Dict[str, object], tol: float, max_iterations: int) -> Dict[str, object]:
    options = {"show_progress": False, "maxiters": max_iterations, "abstol": 1e-9, "reltol": 1e-8, "feastol": tol}
    try:
        return solvers.sdp(options=options, **args)
    except (ValueError, ArithmeticError) as e:
        logger.debug("cone solver raised %s", e)
        return {"status": "failure", "x": None, "iterations": 0, "message": str(e)}


def _symmetric(Z) -> np.ndarray:
    Z = np.array(Z, dtype=float)
    return np.tril(Z) + np.tril(Z, -1).T


def _psd_part(Z: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((Z + Z.T) / 2)
    return (V * np.maximum(w, 0.0)) @ V.T


# results


def _acceptable(problem: ConicProblem, y: np.ndarray, tol: float) -> bool:
    eq, ineq = problem.residuals(y)
    margins = problem.margins(y)
    margin = min(margins.values()) if margins else 0.0
    return margin >= -settings.tol_psd and ineq <= settings.tol_psd and eq <= max(1e-6, 100 * tol)


def _finish(problem: ConicProblem, status: SolveStatus, y: np.ndarray, iterations: int, message: str, sol=None) -> SolveResult:
    result = SolveResult(status, y, iterations=iterations, message=message)
    eq, ineq = problem.residuals(y)
    result.primal_residual = max(eq, ineq)
    if sol is not None and sol.get("dual infeasibility") is not None:
        result.dual_residual = float(sol["dual infeasibility"])
    margins = problem.margins(y)
    result.margin = min(margins.values()) if margins else 0.0
    if problem.objective is not None:
        result.objective = float(problem.objective.evaluate(y))
    return result


def ray_certifies_infeasibility(problem: ConicProblem, ray: DualRay, bound: Optional[float] = None) -> bool:
    """
    Check a Farkas ray against the unscaled problem and its variable box

    With Z_k ⪰ 0, z ≥ 0 and any λ, every feasible y gives
    0 ≤ Σ⟨S_k(y), Z_k⟩ + Σ z_r l_r(y) + Σ λ_q e_q(y) = v + gᵀy, and
    |gᵀy| ≤ ‖g‖₁·bound inside the box; v + ‖g‖₁·bound < 0 rules out every y.
    """
    bound = settings.variable_bound if bound is None else float(bound)
    data = _with_box(_extract(problem), np.full(problem.n_scalars, bound))
    if len(ray.rows) != len(data.lp_a0) or len(ray.blocks) != len(data.blocks) or len(ray.equalities) != len(data.d):
        return False
    z = np.maximum(np.asarray(ray.rows, dtype=float), 0.0)
    lam = np.asarray(ray.equalities, dtype=float)
    g = data.lp_A.T @ z + data.E.T @ lam
    value = float(data.lp_a0 @ z - data.d @ lam)
    for (G0, Gi), Zk in zip(data.blocks, ray.blocks):
        Zk = _psd_part(np.asarray(Zk, dtype=float))
        value += float(np.sum(G0 * Zk))
        for i, G in Gi.items():
            g[i] += np.sum(G * Zk)
    return value + np.abs(g).sum() * bound < 0


def _dual_ray(problem: ConicProblem, data: _Data, scaling: _Scaling, keep: np.ndarray, bound: np.ndarray, tol: float, max_iterations: int) -> Optional[DualRay]:
    """Solve the plain feasibility problem; a primal-infeasible report carries the ray"""
    plain = _with_box(_Data(data.n, data.blocks, data.lp_a0, data.lp_A, data.E, data.d, np.zeros(data.n)), bound)
    sol = _run(_cone_args(plain, keep), tol, max_iterations)
    if sol["status"] != "primal infeasible":
        logger.debug("no dual ray for %s: status %s", problem.name, sol["status"])
        return None
    n, m = data.n, len(data.lp_a0)
    zl = np.array(sol["zl"], dtype=float).ravel()
    rows = np.concatenate([zl[:m] * scaling.rows, zl[m:m + n] / scaling.D, zl[m + n:] / scaling.D])
    blocks = [_symmetric(Z) * s for Z, s in zip(sol["zs"], scaling.blocks)]
    lam = np.zeros(len(data.d))
    if len(keep):
        lam[keep] = -np.array(sol["y"], dtype=float).ravel() * scaling.equalities[keep]
    ray = DualRay(blocks, rows, lam)
    if not ray_certifies_infeasibility(problem, ray):
        logger.debug("dual ray for %s does not survive the unscaled check", problem.name)
        return None
    return ray


def solve_sdp(problem: ConicProblem, tol: Optional[float] = None, max_iterations: Optional[int] = None) -> SolveResult:
    """
    Solve a ConicProblem; feasibility problems go through phase I, problems
    with an objective are solved directly after a feasibility check
    """
    tol = settings.tol if tol is None else tol
    max_iterations = max_iterations or settings.max_iterations
    raw = _extract(problem)
    if raw.n == 0:
        y = np.zeros(0)
        status = SolveStatus.FEASIBLE if _acceptable(problem, y, tol) else SolveStatus.INFEASIBLE
        return _finish(problem, status, y, 0, "no decision variables")
    data, scaling = _equilibrate(raw, settings.ruiz_passes)
    bound = settings.variable_bound / scaling.D
    keep, consistent = _independent_rows(data.E, data.d)
    logger.info(
        "SDP %s: %d scalars, blocks %s, %d linear rows, %d equalities (%d independent)",
        problem.name, data.n, [len(G0) for G0, _ in data.blocks], len(data.lp_a0), len(data.d), len(keep),
    )
    if not consistent:
        return _finish(problem, SolveStatus.INFEASIBLE, np.zeros(data.n), 0, "equality constraints are inconsistent")

    sol = _run(_cone_args(_phase_one(data, bound), keep), tol, max_iterations)
    iterations = int(sol.get("iterations") or 0)
    if sol["x"] is None:
        message = sol.get("message") or sol["status"]
        return _finish(problem, SolveStatus.NUMERIC_FAILURE, np.zeros(data.n), iterations, f"phase I: {message}")
    z = np.array(sol["x"], dtype=float).ravel()
    y = scaling.D * z[:data.n]
    t_star = float(z[data.n])
    logger.debug("phase I: status=%s t*=%.3e after %d iterations", sol["status"], t_star, iterations)

    if not _acceptable(problem, y, tol):
        lower = sol.get("dual objective")
        dual_ok = sol.get("dual infeasibility") is not None and sol["dual infeasibility"] <= np.sqrt(tol)
        if sol["status"] == "optimal" or (lower is not None and lower > 0 and dual_ok):
            result = _finish(problem, SolveStatus.INFEASIBLE, y, iterations, f"phase I optimum t* = {t_star:.3e}", sol)
            result.dual_ray = _dual_ray(problem, data, scaling, keep, bound, tol, max_iterations)
            if result.dual_ray is not None:
                result.message += "; dual ray found"
            return result
        if iterations >= max_iterations:
            return _finish(problem, SolveStatus.ITERATION_LIMIT, y, iterations, "iteration limit reached", sol)
        return _finish(problem, SolveStatus.NUMERIC_FAILURE, y, iterations, f"phase I stopped with status {sol['status']}, t* = {t_star:.3e}", sol)
    if problem.objective is None:
        return _finish(problem, SolveStatus.FEASIBLE, y, iterations, f"phase I optimum t* = {t_star:.3e}", sol)

    opt = _run(_cone_args(_with_box(data, bound), keep), tol, max_iterations)
    iterations += int(opt.get("iterations") or 0)
    if opt["x"] is not None:
        y_opt = scaling.D * np.array(opt["x"], dtype=float).ravel()
        if _acceptable(problem, y_opt, tol):
            return _finish(problem, SolveStatus.FEASIBLE, y_opt, iterations, f"objective run: {opt['status']}", opt)
    # objective run drifted to the boundary; fall back to the phase I point
    logger.warning("objective solve of %s ended outside tolerance, returning the feasibility point", problem.name)
    return _finish(problem, SolveStatus.FEASIBLE, y, iterations, "objective run outside tolerance", sol)
