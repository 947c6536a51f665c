from pydantic import BaseModel, Field, field_validator
from typing import Dict, List, Literal, Optional, Union

# Bump when the on-disk layout changes
FORMAT_VERSION = 1

Rational = Union[str, int]  # "p/q", "-3", "1.0472" or a plain integer


class SetSpec(BaseModel):
    """Conjunction of constraints, each written as "expr >= 0", "a <= b" or "a == b" """
    linear: List[str] = []
    quadratic: List[str] = []  # degree ≤ 2

    class Config:
        json_schema_extra = {
            "example": {
                "linear": ["x + 1 >= 0"],
                "quadratic": ["1 - x^2 >= 0"]
            }
        }


class MilmSpec(BaseModel):
    """Mixed-integer linear model S(F, H, H0, n, n_w, n_v)"""
    n: int = Field(gt=0)
    n_w: int = Field(0, ge=0)
    n_v: int = Field(0, ge=0)
    F: List[List[Rational]]
    H: List[List[Rational]] = []
    H0: Optional[List[List[Rational]]] = None  # initial set as {x_e | H0 x_e = 0}
    X0: Optional[List[List[Rational]]] = None  # or an explicit list of initial states
    scale: Rational = "1"
    variables: List[str] = []

    class Config:
        json_schema_extra = {
            "example": {
                "n": 1,
                "n_w": 0,
                "n_v": 0,
                "F": [["1/2", "0"]],
                "H": [],
                "X0": [["1/2"]],
                "scale": "1",
                "variables": ["x"]
            }
        }


class EdgeSpec(BaseModel):
    """One edge (from, to, k) with its transition label and passport"""
    source: str = Field(alias="from")
    target: str = Field(alias="to")
    k: int = Field(1, ge=1)
    uncertain: List[str] = []  # names of w ∈ [-1, 1]
    binary: List[str] = []  # names of v ∈ {-1, 1}
    update: Dict[str, str] = {}  # variable → new value; omitted variables keep their value
    constraints: Optional[SetSpec] = None  # over variables, uncertain and binary names
    passport: Optional[SetSpec] = None
    milm: Optional[MilmSpec] = None  # mixed-integer block instead of an update

    class Config:
        populate_by_name = True
        json_schema_extra = {
            "example": {
                "from": "L1",
                "to": "L4",
                "k": 1,
                "uncertain": ["w1"],
                "update": {"x": "1/3 + 5/3*w1"}
            }
        }


class ModelFile(BaseModel):
    """Versioned text format for graph models and MILMs"""
    format: Literal["graph", "milm"] = "graph"
    version: int = FORMAT_VERSION
    name: str = "model"
    variables: List[str] = []
    nodes: List[str] = []
    start: Optional[str] = None
    terminal: Optional[str] = None
    edges: List[EdgeSpec] = []
    init: Optional[SetSpec] = None
    invariants: Dict[str, SetSpec] = {}
    unsafe: Dict[str, List[SetSpec]] = {}
    overflow_limits: Optional[List[Rational]] = Field(None, alias="overflow-limits")
    scale: Rational = "1"
    milm: Optional[MilmSpec] = None  # only for format "milm"

    @field_validator("version")
    @classmethod
    def supported_version(cls, v: int) -> int:
        if v != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {v}, expected {FORMAT_VERSION}")
        return v

    class Config:
        populate_by_name = True
        json_schema_extra = {
            "example": {
                "format": "graph",
                "version": 1,
                "name": "halving",
                "variables": ["x"],
                "nodes": ["entry", "loop", "exit"],
                "start": "entry",
                "terminal": "exit",
                "edges": [
                    {"from": "entry", "to": "loop"},
                    {"from": "loop", "to": "loop", "update": {"x": "x/2"}}
                ],
                "init": {"linear": ["x - 1 == 0"]},
                "overflow-limits": ["1"]
            }
        }
