from .model_file import EdgeSpec, MilmSpec, ModelFile, SetSpec
from .certificate import CertificateFile, EdgeRate, RateSpec
from .run_config import RunConfig, RunReport, VerdictReport

__all__ = [
    "EdgeSpec",
    "MilmSpec",
    "ModelFile",
    "SetSpec",
    "CertificateFile",
    "EdgeRate",
    "RateSpec",
    "RunConfig",
    "RunReport",
    "VerdictReport"
]
