from pydantic import BaseModel, Field, field_validator
from typing import Any, Dict, List, Literal, Optional

from app.config import settings

Command = Literal["compile", "simulate", "reduce", "verify", "check-cert", "casestudy"]
Method = Literal["joint", "simplified", "per-coordinate", "sos", "quadratic", "linear"]


def _theta_grid() -> List[float]:
    return list(settings.theta_grid)


def _mu_grid() -> List[float]:
    return list(settings.mu_grid)


class RunConfig(BaseModel):
    """Everything a CLI run depends on; echoed into its report"""
    command: Command
    model: Optional[str] = None  # model file (.json) or program (.lc)
    certificate: Optional[str] = None
    casestudy: Optional[str] = None
    parameters: Dict[str, Any] = {}  # case-study parameters (M, B, precision, ...)
    method: Method = "joint"
    theta: List[float] = Field(default_factory=_theta_grid)
    mu: List[float] = Field(default_factory=_mu_grid)
    degree: int = Field(2, ge=1)
    ftt: bool = False
    bisect: bool = False  # smallest certified overflow level instead of a fixed α
    runs: int = Field(1, ge=1)
    steps: Optional[int] = None
    eliminate: List[str] = []
    tol: float = Field(default_factory=lambda: settings.tol, gt=0)
    seed: int = Field(default_factory=lambda: settings.seed)
    output: Optional[str] = None  # JSON report path
    export_certificate: Optional[str] = None
    export_invariant: Optional[str] = None  # node whose sublevel set is written next to the certificate

    @field_validator("degree")
    @classmethod
    def degree_cap(cls, v: int) -> int:
        if v > settings.sos_degree_cap:
            raise ValueError(f"degree {v} exceeds the cap {settings.sos_degree_cap}")
        return v

    class Config:
        json_schema_extra = {
            "example": {
                "command": "verify",
                "model": "casestudies/filter.json",
                "method": "joint",
                "theta": [0.98],
                "mu": [0],
                "bisect": True,
                "seed": 0
            }
        }


class VerdictReport(BaseModel):
    """One verdict as written to reports"""
    property: str
    status: Literal["certified", "not-certified"]
    location: Optional[str] = None
    T_u: Optional[float] = None
    level: Optional[float] = None
    binding: List[str] = []
    trace: List[str] = []
    witness: Optional[List[Dict[str, Any]]] = None  # visited states of a simulation witness


class RunReport(BaseModel):
    """Output of one CLI run or API call"""
    tool: str = settings.app_name
    version: str = settings.app_version
    config: Optional[RunConfig] = None
    status: Literal["certified", "not-certified", "ok"]
    verdicts: List[VerdictReport] = []
    rows: List[Dict[str, Any]] = []
    certificate: Optional[Dict[str, Any]] = None
    bounds: Dict[str, List[List[float]]] = {}
    notes: List[str] = []
