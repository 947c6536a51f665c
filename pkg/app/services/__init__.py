from .casestudies import CASESTUDIES, run_casestudy
from .certify import check_certificate, conclude_unreachability, ftt_bound
from .frontend import compile_source
from .model_io import load_certificate, load_model
from .search import run_verification, verify_model

__all__ = [
    "CASESTUDIES",
    "run_casestudy",
    "check_certificate",
    "conclude_unreachability",
    "ftt_bound",
    "compile_source",
    "load_certificate",
    "load_model",
    "run_verification",
    "verify_model"
]
