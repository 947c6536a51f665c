from fastapi import APIRouter, HTTPException, status

from app.core.certificate import Verdict, VerdictStatus
from app.core.graph import GraphModel
from app.core.milm import MILM
from app.errors import LyacertError
from app.models.run_config import RunReport
from app.routers.models import bad_request
from app.schemas import CheckCertificateRequest, VerifyRequest
from app.services.certify import check_certificate, conclude_overflow, conclude_unreachability
from app.services.model_io import certificate_from_file, model_from_file
from app.services.reporting import build_report
from app.services.search import run_verification

router = APIRouter(prefix="/verify", tags=["Verification"])


@router.post("", response_model=RunReport)
async def verify(request: VerifyRequest):
    """
    Search for a Lyapunov invariant and report the verdicts it supports

    - **method**: joint, simplified or per-coordinate LMI, sos, or a MILM method
    - **theta**, **mu**: rate grids; the configured grids when omitted
    - **bisect**: report the smallest certified overflow level
    """
    try:
        model = model_from_file(request.model)
        outcome = run_verification(
            model, request.method, request.theta, request.mu, request.degree, request.ftt, request.bisect
        )
        return build_report(outcome.verdicts, certificate=outcome.certificate, bounds=outcome.bounds)
    except LyacertError as e:
        raise bad_request(e)
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Verification failed: {str(e)}"
        )


@router.post("/check-cert", response_model=RunReport)
async def check_cert(request: CheckCertificateRequest):
    """Re-check a certificate exactly; no solver is involved"""
    try:
        model = model_from_file(request.model)
        cert = certificate_from_file(request.certificate)
        check = check_certificate(model, cert)
        verdict = Verdict("certificate", VerdictStatus.CERTIFIED if check.valid else VerdictStatus.NOT_CERTIFIED)
        verdict.trace = [f"{v.kind} {v.constraint}: margin {v.margin:.3g}" for v in check.violations]
        verdicts = [verdict]
        if check.valid:
            if isinstance(model, MILM) or model.overflow is not None:
                verdicts.append(conclude_overflow(cert, model, validated=True))
            if isinstance(model, GraphModel):
                verdicts += [conclude_unreachability(cert, model, loc, validated=True) for loc in model.unsafe]
        return build_report(verdicts, notes=[f"{check.checked} conditions checked"])
    except LyacertError as e:
        raise bad_request(e)
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Certificate check failed: {str(e)}"
        )
