from typing import List

from fastapi import APIRouter, HTTPException, status

from app.errors import LyacertError
from app.models.run_config import RunReport
from app.routers.models import bad_request
from app.schemas import CaseStudyInfo, CaseStudyRequest
from app.services.casestudies import CASESTUDIES, extra_models, run_casestudy
from app.services.model_io import load_model
from app.services.reporting import build_report
from app.services.search import run_verification

router = APIRouter(prefix="/casestudies", tags=["Case Studies"])


@router.get("", response_model=List[CaseStudyInfo])
async def list_casestudies():
    """Bundled case studies plus model files from the configured directory"""
    bundled = [CaseStudyInfo(name=c.name, title=c.title, file=c.filename, parameters=list(c.parameters)) for c in CASESTUDIES.values()]
    extra = [CaseStudyInfo(name=name, title="model file", file=str(path)) for name, path in extra_models().items() if name not in CASESTUDIES]
    return bundled + extra


@router.post("/{name}", response_model=RunReport)
async def run(name: str, request: CaseStudyRequest = CaseStudyRequest()):
    """Run a case study end to end; this can take a while"""
    extra = extra_models()
    if name not in CASESTUDIES and name not in extra:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Unknown case study {name}")
    try:
        if name in CASESTUDIES:
            report = run_casestudy(name, **request.parameters)
            return build_report(report.verdicts, certificate=report.certificate, rows=report.rows, notes=report.notes)
        outcome = run_verification(load_model(extra[name]))
        return build_report(outcome.verdicts, certificate=outcome.certificate, bounds=outcome.bounds)
    except LyacertError as e:
        raise bad_request(e)
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Case study failed: {str(e)}"
        )
