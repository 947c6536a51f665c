"""
Certificates, rate plans and verdicts
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from app.core.polynomials import Exponent, evaluate_terms, quadratic_form_terms
from app.core.rational import to_fraction

EdgeKey = Tuple[str, str, int]

# pseudo edge under which a plain MILM stores its single rate pair
MILM_NODE = "milm"
MILM_EDGE: EdgeKey = (MILM_NODE, MILM_NODE, 1)


@dataclass(frozen=True)
class RatePlan:
    """Per-edge (θ, μ) with a default for edges not listed"""

    default: Tuple[Fraction, Fraction] = (Fraction(1), Fraction(0))
    per_edge: Mapping[EdgeKey, Tuple[Fraction, Fraction]] = field(default_factory=dict)

    def __post_init__(self):
        default = (to_fraction(self.default[0]), to_fraction(self.default[1]))
        per_edge = {tuple(k): (to_fraction(t), to_fraction(m)) for k, (t, m) in dict(self.per_edge).items()}
        for key, (theta, _) in [(None, default)] + list(per_edge.items()):
            if theta < 0:
                raise ValueError(f"θ must be nonnegative (edge {key})")
        object.__setattr__(self, "default", default)
        object.__setattr__(self, "per_edge", per_edge)

    @classmethod
    def uniform(cls, theta, mu) -> "RatePlan":
        return cls((theta, mu))

    def rate(self, key: EdgeKey) -> Tuple[Fraction, Fraction]:
        return self.per_edge.get(tuple(key), self.default)

    def theta(self, key: EdgeKey) -> Fraction:
        return self.rate(key)[0]

    def mu(self, key: EdgeKey) -> Fraction:
        return self.rate(key)[1]

    def with_rate(self, key: EdgeKey, theta, mu) -> "RatePlan":
        per_edge = dict(self.per_edge)
        per_edge[tuple(key)] = (to_fraction(theta), to_fraction(mu))
        return RatePlan(self.default, per_edge)

    def describe(self) -> str:
        parts = [f"default=({self.default[0]}, {self.default[1]})"]
        parts += [f"{i}->{j}#{k}=({t}, {m})" for (i, j, k), (t, m) in sorted(self.per_edge.items())]
        return ", ".join(parts)


class CertificateKind(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    POLYNOMIAL = "polynomial"


@dataclass
class Certificate:
    """
    Per-node invariant functions σᵢ plus everything needed to re-check them

    ``functions`` maps a node to the coefficient dictionary of σᵢ over the
    model variables; quadratic certificates also keep the matrices Pᵢ with
    σᵢ(x) = [x; 1]ᵀ Pᵢ [x; 1]. ``values`` holds the rounded decision vector
    by variable name (multipliers included).
    """

    kind: CertificateKind
    variables: Tuple[str, ...]
    functions: Dict[str, Dict[Exponent, Fraction]]
    rates: RatePlan
    P: Dict[str, np.ndarray] = field(default_factory=dict)
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    level: Optional[Fraction] = None  # certified overflow level (M or γ)
    z: Fraction = Fraction(1)  # normalization, ‖σ‖∞ ≤ z on the reachable set
    T_u: Optional[Fraction] = None
    provenance: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_quadratic(cls, variables, P: Mapping[str, np.ndarray], rates: RatePlan, **kwargs) -> "Certificate":
        functions = {node: quadratic_form_terms(m) for node, m in P.items()}
        return cls(CertificateKind.QUADRATIC, tuple(variables), functions, rates, P=dict(P), **kwargs)

    def function(self, node: str) -> Dict[Exponent, Fraction]:
        return self.functions.get(node, {})

    def evaluate(self, node: str, x) -> object:
        return evaluate_terms(self.function(node), list(x))

    def degree(self) -> int:
        return max((sum(e) for f in self.functions.values() for e in f), default=0)


class VerdictStatus(str, Enum):
    CERTIFIED = "certified"
    NOT_CERTIFIED = "not-certified"


@dataclass
class Verdict:
    property: str
    status: VerdictStatus
    location: Optional[str] = None
    T_u: Optional[Fraction] = None
    level: Optional[Fraction] = None
    binding: List[str] = field(default_factory=list)
    trace: List[str] = field(default_factory=list)
    certificate: Optional[Certificate] = None
    witness: Optional[object] = None  # simulation Trace reaching the unsafe set

    @property
    def certified(self) -> bool:
        return self.status == VerdictStatus.CERTIFIED

    def note(self, message: str) -> None:
        self.trace.append(message)
