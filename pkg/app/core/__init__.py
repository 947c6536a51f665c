# Numerical domain types shared by every service
from .semialgebraic import SemialgebraicSet
from .milm import MILM
from .graph import (
    ENTRY,
    EXIT,
    Edge,
    GraphModel,
    MILGHM,
    StateVec,
    Trace,
    TraceStatus,
    TransitionLabel,
)
from .conic import AffineMatrix, AffineScalar, ConicProblem, SolveResult, SolveStatus, Variable, VariableKind
from .certificate import MILM_EDGE, Certificate, CertificateKind, RatePlan, Verdict, VerdictStatus

__all__ = [
    "SemialgebraicSet",
    "MILM",
    "ENTRY",
    "EXIT",
    "Edge",
    "GraphModel",
    "MILGHM",
    "StateVec",
    "Trace",
    "TraceStatus",
    "TransitionLabel",
    "AffineMatrix",
    "AffineScalar",
    "ConicProblem",
    "SolveResult",
    "SolveStatus",
    "Variable",
    "VariableKind",
    "Certificate",
    "RatePlan",
    "Verdict",
    "VerdictStatus",
    "CertificateKind",
    "MILM_EDGE",
]
