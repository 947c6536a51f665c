"""
Concrete-semantics simulator for graph models and MILMs

Used as the soundness oracle: certified verdicts are cross-checked against
sampled trajectories. Uncertainties are drawn by an ``UncertaintyPolicy``;
when label constraints pin w down (equalities, polytopes) an admissible w
is found by a small LP with a random objective.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.core.certificate import MILM_EDGE, MILM_NODE
from app.core.graph import Edge, GraphModel, StateVec, Trace, TraceStatus, TransitionLabel
from app.core.milm import MILM
from app.core.rational import qzeros, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import ModelError
from app.services.lp_solver import LinearProgram, solve_linear_program

logger = logging.getLogger(__name__)

FLOAT_TOL = 1e-9
SAMPLE_DENOMINATOR = 2**16
SAMPLE_TRIES = 32


class PolicyMode(str, Enum):
    RANDOM = "random"
    EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class UncertaintyPolicy:
    """
    How (w, v) and parallel enabled edges are chosen

    random: seeded uniform w, shuffled binary vectors and edges.
    exhaustive: binary vectors and edges tried in fixed order (n_v capped).
    """

    mode: PolicyMode = PolicyMode.RANDOM
    seed: int = 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _binary_choices(n_v: int, policy: UncertaintyPolicy, rng) -> Iterator[Tuple[Fraction, ...]]:
    if n_v == 0:
        yield ()
        return
    cap = settings.exhaustive_binary_cap
    if policy.mode == PolicyMode.EXHAUSTIVE:
        if n_v > cap:
            raise ModelError(f"exhaustive mode supports n_v ≤ {cap}, got {n_v}", field="policy")
        for combo in itertools.product((-1, 1), repeat=n_v):
            yield tuple(Fraction(c) for c in combo)
        return
    if n_v <= cap:
        combos = list(itertools.product((-1, 1), repeat=n_v))
        for k in rng.permutation(len(combos)):
            yield tuple(Fraction(c) for c in combos[int(k)])
    else:
        for _ in range(64):
            yield tuple(Fraction(int(c)) for c in rng.choice([-1, 1], size=n_v))


def _uniform_w(n_w: int, rng, exact: bool):
    if exact:
        ks = rng.integers(-SAMPLE_DENOMINATOR, SAMPLE_DENOMINATOR + 1, size=n_w)
        return [Fraction(int(k), SAMPLE_DENOMINATOR) for k in ks]
    return list(rng.uniform(-1.0, 1.0, size=n_w))


def _solve_w(cons: SemialgebraicSet, x, v, n_w: int, rng, exact: bool, target=None):
    """
    An admissible w for fixed x and v, or None

    ``target`` optionally adds the affine equalities (rows, rhs) that tie w
    to a prescribed successor (used when replaying traces).
    """
    n = len(x)
    lo, hi = n, n + n_w
    tol = 0 if exact else FLOAT_TOL
    num = (lambda a: to_fraction(a)) if exact else float
    fixed = [num(a) for a in x] + [None] * n_w + [num(a) for a in v] + [num(1)]

    def split(rows):
        if rows.shape[0] == 0:
            return qzeros((0, n_w)) if exact else np.zeros((0, n_w)), qzeros(0) if exact else np.zeros(0)
        R = rows if exact else rows.astype(float)
        W = R[:, lo:hi]
        rest = np.concatenate([R[:, :lo], R[:, hi:]], axis=1)
        vals = np.array([f for f in fixed if f is not None], dtype=object if exact else float)
        return W, rest.dot(vals)

    Gw, gc = split(cons.lin_ineq)
    Hw, hc = split(cons.lin_eq)
    touches = (Gw.size and np.any(Gw != 0)) or (Hw.size and np.any(Hw != 0)) or target is not None
    candidates = []
    if n_w and touches:
        ones = np.array([num(1)] * n_w, dtype=object if exact else float)
        eye = np.eye(n_w, dtype=float)
        if exact:
            eye = np.array([[Fraction(int(i == j)) for j in range(n_w)] for i in range(n_w)], dtype=object)
        A_eq, b_eq = Hw, -hc
        if target is not None:
            A_eq = np.vstack([A_eq, target[0]]) if A_eq.size else target[0]
            b_eq = np.concatenate([b_eq, target[1]])
        cost = rng.standard_normal(n_w)
        lp = LinearProgram(
            c=np.array([Fraction(int(round(c * 1000)), 1000) for c in cost], dtype=object) if exact else cost,
            A_eq=A_eq.reshape(-1, n_w),
            b_eq=np.asarray(b_eq),
            A_ge=np.vstack([Gw.reshape(-1, n_w), eye, -eye]),
            b_ge=np.concatenate([-gc, -ones, -ones]),
        )
        result = solve_linear_program(lp, exact=exact)
        if not result.feasible:
            return None
        candidates.append(list(result.y))
    if not candidates or not cons.is_linear:
        candidates += [_uniform_w(n_w, rng, exact) for _ in range(SAMPLE_TRIES if n_w else 1)]
    for w in candidates:
        if not cons.contains(list(x) + list(w) + list(v), tol=tol):
            continue
        if target is not None:
            rows, rhs = target
            lhs = rows.dot(np.array(w, dtype=object if exact else float)) if n_w else np.zeros(len(rhs))
            if any(abs(a - b) > tol for a, b in zip(lhs, rhs)):
                continue
        return list(w)
    return None


def admissible_choice(label: TransitionLabel, x, policy: UncertaintyPolicy, rng, exact: bool):
    """An admissible (w, v) for the label at x, or None"""
    if label.milm is not None:
        return milm_choice(label.milm, x, policy, rng, exact)
    for v in _binary_choices(label.n_v, policy, rng):
        w = _solve_w(label.constraints, x, v, label.n_w, rng, exact)
        if w is not None:
            return w, list(v)
    return None


def _milm_constraints(m: MILM) -> SemialgebraicSet:
    return SemialgebraicSet(m.n + m.n_w + m.n_v, lin_eq=m.H)


def milm_choice(m: MILM, x, policy: UncertaintyPolicy, rng, exact: bool, H: Optional[np.ndarray] = None):
    cons = SemialgebraicSet(m.n + m.n_w + m.n_v, lin_eq=m.H if H is None else H)
    for v in _binary_choices(m.n_v, policy, rng):
        w = _solve_w(cons, x, v, m.n_w, rng, exact)
        if w is not None:
            return w, list(v)
    return None


def _apply(label: TransitionLabel, x, w, v, exact: bool):
    if label.milm is not None:
        m = label.milm
        return list(m.step(m.extended(x, w, v)))
    out = label.apply(x, w, v)
    return [to_fraction(a) for a in out] if exact else [float(a) for a in out]


def _unsafe(model: Union[GraphModel, MILM], node: str, x, tol) -> Optional[str]:
    if isinstance(model, MILM):
        return "overflow" if any(abs(a) > 1 + tol for a in x) else None
    if model.overflow is not None and any(abs(a) > alpha + tol for a, alpha in zip(x, model.overflow)):
        return "overflow"
    for k, s in enumerate(model.unsafe.get(node, ())):
        if s.contains(list(x), tol=tol):
            return f"unsafe[{k}]"
    return None


def simulate(
    model: Union[GraphModel, MILM],
    init: StateVec,
    policy: Optional[UncertaintyPolicy] = None,
    max_steps: Optional[int] = None,
    exact: Optional[bool] = None,
) -> Trace:
    """
    Run one trajectory from ``init``

    Stops on terminal entry (graph terminal node, or a MILM state with no
    admissible successor), unsafe-set or overflow entry, a stuck state, or
    after ``max_steps`` transitions.
    """
    policy = policy or UncertaintyPolicy(seed=settings.seed)
    max_steps = settings.step_budget if max_steps is None else max_steps
    rng = policy.rng()
    if exact is None:
        exact = all(isinstance(a, (int, Fraction)) for a in init.x)
    tol = 0 if exact else FLOAT_TOL
    x = [to_fraction(a) for a in init.x] if exact else [float(a) for a in init.x]
    _check_initial(model, init.node, x, tol, policy, rng, exact)

    states: List[StateVec] = [StateVec(init.node, tuple(x))]
    taken = []
    node = init.node
    status = TraceStatus.BUDGET_EXHAUSTED
    note = ""
    for _ in range(max_steps + 1):
        hit = _unsafe(model, node, x, tol)
        if hit:
            status, note = TraceStatus.UNSAFE_HIT, hit
            break
        if isinstance(model, GraphModel) and node == model.terminal:
            status = TraceStatus.REACHED_TERMINAL
            break
        if len(taken) == max_steps:
            break
        step = _step(model, node, x, policy, rng, exact, tol)
        if step is None:
            if isinstance(model, MILM):
                status = TraceStatus.REACHED_TERMINAL
            else:
                status, note = TraceStatus.STUCK, f"no enabled edge at {node}"
            break
        key, node, x = step
        taken.append(key)
        states.append(StateVec(node, tuple(x)))
    logger.debug("simulation ended after %d steps: %s %s", len(taken), status.value, note)
    return Trace(states, status, taken, note)


def _check_initial(model, node, x, tol, policy, rng, exact):
    if isinstance(model, MILM):
        if len(x) != model.n:
            raise ModelError(f"initial state has {len(x)} entries, MILM has n = {model.n}", field="init")
        if model.X0 is not None:
            if not any(all(abs(a - b) <= tol for a, b in zip(x, s)) for s in model.X0):
                raise ModelError("initial state is not in the explicit initial list", field="init")
        elif milm_choice(model, x, policy, rng, exact, H=model.H0) is None:
            raise ModelError("initial state violates H0", field="init")
        return
    if node not in model.nodes:
        raise ModelError(f"unknown node {node!r}", field="init")
    if len(x) != model.n:
        raise ModelError(f"initial state has {len(x)} entries, model has {model.n}", field="init")
    if node == model.start and not model.init.contains(x, tol=tol):
        raise ModelError("initial state is outside the initial set", field="init")


def _step(model, node, x, policy, rng, exact, tol):
    if isinstance(model, MILM):
        choice = milm_choice(model, x, policy, rng, exact)
        if choice is None:
            return None
        w, v = choice
        nxt = list(model.step(model.extended(x, w, v)))
        return MILM_EDGE, MILM_NODE, [to_fraction(a) for a in nxt] if exact else [float(a) for a in nxt]
    enabled: List[Edge] = [e for e in model.edges_from(node) if e.passport.contains(list(x), tol=tol)]
    if policy.mode == PolicyMode.RANDOM and len(enabled) > 1:
        enabled = [enabled[int(k)] for k in rng.permutation(len(enabled))]
    for edge in enabled:
        choice = admissible_choice(edge.label, x, policy, rng, exact)
        if choice is None:
            continue
        w, v = choice
        return edge.key, edge.target, _apply(edge.label, x, w, v, exact)
    return None


def simulate_many(
    model: Union[GraphModel, MILM],
    inits: Sequence[StateVec],
    runs: int = 1,
    policy: Optional[UncertaintyPolicy] = None,
    max_steps: Optional[int] = None,
    exact: Optional[bool] = None,
) -> List[Trace]:
    """Independent runs: run r from inits[r % len(inits)] with seed base + r"""
    policy = policy or UncertaintyPolicy(seed=settings.seed)
    traces = []
    for r in range(runs):
        p = UncertaintyPolicy(policy.mode, policy.seed + r)
        traces.append(simulate(model, inits[r % len(inits)], p, max_steps, exact))
    return traces


def is_transition(model: Union[GraphModel, MILM], state: StateVec, nxt: StateVec, tol: float = 0.0) -> bool:
    """
    Whether ``nxt`` is a successor of ``state`` under the model's transition relation

    Used to replay concrete traces through an abstraction.
    """
    exact = tol == 0 and all(isinstance(a, (int, Fraction)) for a in list(state.x) + list(nxt.x))
    rng = np.random.default_rng(0)
    policy = UncertaintyPolicy(PolicyMode.EXHAUSTIVE)
    x = [to_fraction(a) for a in state.x] if exact else [float(a) for a in state.x]
    y = [to_fraction(a) for a in nxt.x] if exact else [float(a) for a in nxt.x]
    if isinstance(model, MILM):
        return _milm_admits(model, x, y, policy, rng, exact, tol)
    for edge in model.edges_from(state.node):
        if edge.target != nxt.node or not edge.passport.contains(x, tol=tol):
            continue
        label = edge.label
        if label.milm is not None:
            if _milm_admits(label.milm, x, y, policy, rng, exact, tol):
                return True
            continue
        if label.n_w == 0 and label.n_v == 0 or not label.is_affine:
            if label.n_w or label.n_v:
                logger.warning("replay through nonlinear uncertain label %s is not supported", edge.key)
                continue
            if not label.constraints.contains(x, tol=tol):
                continue
            out = label.apply(x)
            if all(abs(a - b) <= tol for a, b in zip(out, y)):
                return True
            continue
        for v in _binary_choices(label.n_v, policy, rng):
            rows, rhs = _successor_rows(label.A, label.B, label.C, label.E, x, v, y, exact)
            if _solve_w(label.constraints, x, v, label.n_w, rng, exact, target=(rows, rhs)) is not None:
                return True
    return False


def _successor_rows(A, B, C, E, x, v, y, exact):
    num = to_fraction if exact else float
    xv = np.array([num(a) for a in x], dtype=object if exact else float)
    vv = np.array([num(a) for a in v], dtype=object if exact else float)
    conv = (lambda m: m) if exact else (lambda m: np.asarray(m, dtype=object).astype(float))
    base = conv(A).dot(xv) + conv(E)
    if len(vv):
        base = base + conv(C).dot(vv)
    rhs = np.array([num(b) for b in y], dtype=object if exact else float) - base
    return conv(B), rhs


def _milm_admits(m: MILM, x, y, policy, rng, exact, tol) -> bool:
    n, nw = m.n, m.n_w
    for v in _binary_choices(m.n_v, policy, rng):
        F = m.F
        rows, rhs = _successor_rows(F[:, :n], F[:, n:n + nw], F[:, n + nw:n + nw + m.n_v], F[:, -1], x, v, y, exact)
        if _solve_w(_milm_constraints(m), x, v, nw, rng, exact, target=(rows, rhs)) is not None:
            return True
    return False


def milm_transition(m: MILM, x, exact: bool = False) -> List[Tuple[Tuple[int, ...], np.ndarray, np.ndarray]]:
    """
    Successors of x under a small MILM

    For every binary vector v admitting some w, the coordinate-wise minimum
    and maximum of F·x_e over the feasible w. A deterministic map shows up as
    lower == upper for every admissible v.
    """
    cap = settings.exhaustive_binary_cap
    if m.n_v > cap:
        raise ModelError(f"successor enumeration supports n_v ≤ {cap}, got {m.n_v}", field="n_v")
    n, nw, nv = m.n, m.n_w, m.n_v
    num = to_fraction if exact else float
    conv = (lambda a: a) if exact else (lambda a: np.asarray(a, dtype=object).astype(float))
    H, F = conv(m.H), conv(m.F)
    xv = np.array([num(a) for a in x], dtype=object if exact else float)
    out = []
    for combo in itertools.product((-1, 1), repeat=nv):
        vv = np.array([num(c) for c in combo], dtype=object if exact else float)
        fixed = np.concatenate([xv, vv, np.array([num(1)], dtype=object if exact else float)])

        def split(M):
            return M[:, n:n + nw], np.concatenate([M[:, :n], M[:, n + nw:]], axis=1).dot(fixed)

        Hw, h0 = split(H)
        Fw, f0 = split(F)
        tol = 0 if exact else FLOAT_TOL
        free = [r for r in range(H.shape[0]) if not np.any(Hw[r] != 0)]
        if any(abs(h0[r]) > tol for r in free):
            continue
        if nw == 0:
            out.append((combo, f0, f0.copy()))
            continue
        eye = np.array([[num(int(i == j)) for j in range(nw)] for i in range(nw)], dtype=object if exact else float)
        ones = np.array([num(1)] * nw, dtype=object if exact else float)

        def extreme(c):
            lp = LinearProgram(c=c, A_eq=Hw, b_eq=-h0, A_ge=np.vstack([eye, -eye]), b_ge=np.concatenate([-ones, -ones]))
            return solve_linear_program(lp, exact=exact)

        if not extreme(np.zeros(nw) if not exact else qzeros(nw)).feasible:
            continue
        lower, upper = f0.copy(), f0.copy()
        for k in range(n):
            lo, hi = extreme(Fw[k]), extreme(-Fw[k])
            lower[k] = f0[k] + lo.objective
            upper[k] = f0[k] - hi.objective
        out.append((combo, lower, upper))
    return out


SAMPLE_BOX = 100


def sample_initial_states(model: Union[GraphModel, MILM], count: int, seed: Optional[int] = None) -> List[StateVec]:
    """
    Rational points of the initial set

    Graph models: midpoints of pairs of vertices picked by random objectives
    over the linear part of the initial set, clipped to |x| ≤ SAMPLE_BOX
    where it is unbounded. MILMs: the explicit list, or rejection-sampled
    grid points admitted by H₀.
    """
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    if isinstance(model, MILM):
        if model.X0 is not None:
            return [StateVec(MILM_NODE, s) for s in model.X0]
        out = []
        policy = UncertaintyPolicy(seed=settings.seed if seed is None else seed)
        for _ in range(count * SAMPLE_TRIES):
            x = _uniform_w(model.n, rng, exact=True)
            if milm_choice(model, x, policy, rng, True, H=model.H0) is not None:
                out.append(StateVec(MILM_NODE, tuple(x)))
                if len(out) == count:
                    break
        return out

    n = model.n
    s = model.init
    G, H = s.lin_ineq, s.lin_eq
    eye = np.array([[Fraction(int(i == j)) for j in range(n)] for i in range(n)], dtype=object)
    box = np.array([Fraction(SAMPLE_BOX)] * n, dtype=object)

    def vertex():
        cost = np.array([Fraction(int(c), 100) for c in rng.integers(-100, 101, size=n)], dtype=object)
        lp = LinearProgram(
            c=cost,
            A_eq=H[:, :n] if H.shape[0] else qzeros((0, n)),
            b_eq=-H[:, n] if H.shape[0] else qzeros(0),
            A_ge=np.vstack([G[:, :n], eye, -eye]) if G.shape[0] else np.vstack([eye, -eye]),
            b_ge=np.concatenate([-G[:, n], -box, -box]) if G.shape[0] else np.concatenate([-box, -box]),
        )
        result = solve_linear_program(lp, exact=True)
        return list(result.y) if result.feasible else None

    out: List[StateVec] = []
    for _ in range(count * 4):
        a, b = vertex(), vertex()
        if a is None or b is None:
            break
        weight = Fraction(int(rng.integers(1, 16)), 16)
        x = tuple(weight * p + (1 - weight) * q for p, q in zip(a, b))
        if s.contains(list(x)):
            out.append(StateVec(model.start, x))
            if len(out) == count:
                break
    logger.debug("sampled %d initial states for %s", len(out), model.name)
    return out
