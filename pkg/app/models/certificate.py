from pydantic import BaseModel, Field, field_validator
from typing import Any, Dict, List, Literal, Optional, Union

CERTIFICATE_VERSION = 1

Rational = Union[str, int]  # "p/q", "-3" or a plain integer


class EdgeRate(BaseModel):
    """(θ, μ) of one edge (from, to, k)"""
    source: str = Field(alias="from")
    target: str = Field(alias="to")
    k: int = Field(1, ge=1)
    theta: Rational
    mu: Rational

    class Config:
        populate_by_name = True


class RateSpec(BaseModel):
    """Default rates plus per-edge overrides"""
    default: List[Rational] = ["1", "0"]  # [θ, μ]
    edges: List[EdgeRate] = []

    @field_validator("default")
    @classmethod
    def pair(cls, v: List[Rational]) -> List[Rational]:
        if len(v) != 2:
            raise ValueError("default rates are a [theta, mu] pair")
        return v


class CertificateFile(BaseModel):
    """
    Versioned certificate document

    ``functions`` gives every σᵢ as a polynomial over ``variables``;
    ``values`` carries the decision matrices (multipliers included) so the
    problem can be rebuilt and re-checked exactly.
    """
    version: int = CERTIFICATE_VERSION
    kind: Literal["linear", "quadratic", "polynomial"]
    variables: List[str]
    functions: Dict[str, str] = {}
    rates: RateSpec = RateSpec()
    P: Dict[str, List[List[Rational]]] = {}
    values: Dict[str, List[List[Rational]]] = {}
    level: Optional[Rational] = None  # certified overflow level M or γ
    z: Rational = "1"
    T_u: Optional[Rational] = None
    provenance: Dict[str, Any] = {}  # assembly kind and options; "functions" when only σᵢ are given

    @field_validator("version")
    @classmethod
    def supported_version(cls, v: int) -> int:
        if v != CERTIFICATE_VERSION:
            raise ValueError(f"unsupported certificate version {v}, expected {CERTIFICATE_VERSION}")
        return v

    class Config:
        json_schema_extra = {
            "example": {
                "version": 1,
                "kind": "polynomial",
                "variables": ["x"],
                "functions": {"L6": "-x^2 - 100*x + 1"},
                "rates": {"default": ["0", "1"], "edges": [{"from": "L5", "to": "L6", "k": 1, "theta": "1", "mu": "1"}]},
                "provenance": {"kind": "functions"}
            }
        }
