"""
Mixed-integer linear models

A MILM S(F, H, H₀, n, n_w, n_v) describes the transition relation

    x₊ ∈ { F x_e | H x_e = 0,  w ∈ [-1,1]^{n_w},  v ∈ {-1,1}^{n_v} }

over the extended vector x_e = [x; w; v; 1] of length n_e = n + n_w + n_v + 1.
Initial states are either an explicit list X₀ or the projection of
{x_e | H₀ x_e = 0} onto x.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

from app.core.rational import exact_equal, qeye, qzeros, to_fraction
from app.errors import ModelError


@dataclass(frozen=True, eq=False)
class MILM:
    F: np.ndarray
    H: np.ndarray
    n: int
    n_w: int = 0
    n_v: int = 0
    H0: Optional[np.ndarray] = None
    X0: Optional[Tuple[Tuple[Fraction, ...], ...]] = None
    scale: Fraction = Fraction(1)
    variables: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.n <= 0 or self.n_w < 0 or self.n_v < 0:
            raise ModelError("dimensions must satisfy n > 0, n_w ≥ 0, n_v ≥ 0", field="n")
        n_e = self.n_e
        F = np.asarray(self.F, dtype=object)
        H = np.asarray(self.H, dtype=object) if self.H is not None else qzeros((0, n_e))
        if H.size == 0:
            H = qzeros((0, n_e))
        if F.ndim != 2 or F.shape != (self.n, n_e):
            raise ModelError(f"expected shape ({self.n}, {n_e}), got {F.shape}", field="F")
        if H.ndim != 2 or H.shape[1] != n_e:
            raise ModelError(f"expected {n_e} columns, got shape {H.shape}", field="H")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "H", H)
        if self.H0 is not None:
            H0 = np.asarray(self.H0, dtype=object)
            if H0.ndim != 2 or H0.shape[1] != n_e:
                raise ModelError(f"expected {n_e} columns, got shape {H0.shape}", field="H0")
            object.__setattr__(self, "H0", H0)
        if self.X0 is not None:
            states = tuple(tuple(to_fraction(v) for v in s) for s in self.X0)
            for s in states:
                if len(s) != self.n:
                    raise ModelError(f"initial state has {len(s)} entries, expected {self.n}", field="X0")
                if any(abs(v) > 1 for v in s):
                    raise ModelError("initial states must lie in [-1, 1]^n after scaling", field="X0")
            object.__setattr__(self, "X0", states)
        if self.H0 is None and self.X0 is None:
            raise ModelError("either H0 or an explicit initial-state list is required", field="init")
        object.__setattr__(self, "scale", to_fraction(self.scale))
        if self.scale <= 0:
            raise ModelError("scale must be positive", field="scale")
        names = tuple(self.variables) or tuple(f"x{i + 1}" for i in range(self.n))
        if len(names) != self.n:
            raise ModelError(f"{len(names)} variable names for n = {self.n}", field="variables")
        object.__setattr__(self, "variables", names)

    @property
    def n_e(self) -> int:
        return self.n + self.n_w + self.n_v + 1

    @property
    def n_H(self) -> int:
        return self.H.shape[0]

    def extended(self, x: Sequence, w: Sequence = (), v: Sequence = ()) -> np.ndarray:
        if len(x) != self.n or len(w) != self.n_w or len(v) != self.n_v:
            raise ModelError("extended vector pieces do not match (n, n_w, n_v)")
        exact = all(isinstance(a, (int, Fraction)) for a in list(x) + list(w) + list(v))
        if exact:
            return np.array([to_fraction(a) for a in list(x) + list(w) + list(v)] + [Fraction(1)], dtype=object)
        return np.array([float(a) for a in list(x) + list(w) + list(v)] + [1.0])

    def admissible(self, x_e: np.ndarray, tol: float = 0.0) -> bool:
        """H x_e = 0 with w in the box and v binary"""
        w = x_e[self.n:self.n + self.n_w]
        v = x_e[self.n + self.n_w:self.n + self.n_w + self.n_v]
        if any(abs(a) > 1 + tol for a in w):
            return False
        if any(abs(abs(a) - 1) > tol for a in v):
            return False
        H = self.H if x_e.dtype == object else self.H.astype(float)
        return all(abs(r) <= tol for r in H.dot(x_e))

    def step(self, x_e: np.ndarray) -> np.ndarray:
        F = self.F if x_e.dtype == object else self.F.astype(float)
        return F.dot(x_e)

    def selectors(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Selector matrices L₁..L₅ of the quadratic-invariant LMI

        L₁ x_e = [F x_e; 1], L₂ x_e = [x; 1], L₃ x_e = [x; w], L₄ x_e = v,
        L₅ x_e = 1.
        """
        n, nw, nv, ne = self.n, self.n_w, self.n_v, self.n_e
        L5 = qzeros((1, ne))
        L5[0, ne - 1] = Fraction(1)
        L1 = np.vstack([self.F, L5])
        L2 = qzeros((n + 1, ne))
        L2[:n, :n] = qeye(n)
        L2[n, ne - 1] = Fraction(1)
        L3 = qzeros((n + nw, ne))
        L3[:, : n + nw] = qeye(n + nw)
        L4 = qzeros((nv, ne))
        if nv:
            L4[:, n + nw : n + nw + nv] = qeye(nv)
        return L1, L2, L3, L4, L5

    def __eq__(self, other) -> bool:
        if not isinstance(other, MILM):
            return False
        if (self.n, self.n_w, self.n_v, self.scale, self.variables) != (other.n, other.n_w, other.n_v, other.scale, other.variables):
            return False
        if not (exact_equal(self.F, other.F) and exact_equal(self.H, other.H)):
            return False
        if (self.H0 is None) != (other.H0 is None) or (self.H0 is not None and not exact_equal(self.H0, other.H0)):
            return False
        return self.X0 == other.X0

    __hash__ = None  # type: ignore[assignment]
