from pydantic import BaseModel, Field
from typing import Any, Dict, List, Literal, Optional

from app.models.certificate import CertificateFile
from app.models.model_file import ModelFile


class CompileRequest(BaseModel):
    """Pydantic model for program compilation requests"""
    source: str
    name: str = "program"
    scale: bool = False  # divide every variable by the largest declared bound

    class Config:
        json_schema_extra = {
            "example": {
                "source": "int f(int x in [0, 10]) {\n  while (x >= 1) {\n    x = x - 1;\n  }\n  return x;\n}\n",
                "name": "countdown"
            }
        }


class SimulateRequest(BaseModel):
    """Pydantic model for simulation requests"""
    model: ModelFile
    runs: int = Field(10, ge=1, le=1000)
    steps: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = None


class ReduceRequest(BaseModel):
    """Pydantic model for graph reduction requests"""
    model: ModelFile
    eliminate: List[str] = []


class CyclesRequest(BaseModel):
    model: ModelFile


class VerifyRequest(BaseModel):
    """Pydantic model for verification requests"""
    model: ModelFile
    method: Literal["joint", "simplified", "per-coordinate", "sos", "quadratic", "linear"] = "joint"
    theta: Optional[List[float]] = None  # swept together with mu; settings grids when both are omitted
    mu: Optional[List[float]] = None
    degree: int = Field(2, ge=1)
    ftt: bool = False
    bisect: bool = False  # smallest certified overflow level under (theta[0], mu[0])


class CheckCertificateRequest(BaseModel):
    """Pydantic model for certificate re-checks"""
    model: ModelFile
    certificate: CertificateFile


class CaseStudyInfo(BaseModel):
    name: str
    title: str
    file: str
    parameters: List[str] = []


class CaseStudyRequest(BaseModel):
    """Case-study parameters; omitted ones take their defaults"""
    parameters: Dict[str, Any] = {}

    class Config:
        json_schema_extra = {
            "example": {"parameters": {"M": 100, "search": False}}
        }


class CycleResponse(BaseModel):
    nodes: int
    edges: int
    cycles: List[List[str]]  # edge keys as "from->to#k"


class ReduceResponse(BaseModel):
    model: ModelFile
    cycles: List[List[str]]
