"""
Verdict reports in JSON and text
"""

from typing import Dict, List, Optional, Sequence, Tuple

from app.core.certificate import Certificate, Verdict
from app.models.run_config import RunConfig, RunReport, VerdictReport
from app.services.model_io import certificate_to_file


def _float(value) -> Optional[float]:
    return None if value is None else float(value)


def verdict_report(verdict: Verdict) -> VerdictReport:
    witness = None
    if verdict.witness is not None:
        witness = [{"node": s.node, "x": [float(a) for a in s.x]} for s in verdict.witness.states]
    return VerdictReport(
        property=verdict.property,
        status=verdict.status.value,
        location=verdict.location,
        T_u=_float(verdict.T_u),
        level=_float(verdict.level),
        binding=list(verdict.binding),
        trace=list(verdict.trace),
        witness=witness,
    )


def build_report(
    verdicts: Sequence[Verdict] = (),
    config: Optional[RunConfig] = None,
    certificate: Optional[Certificate] = None,
    rows: Sequence[Dict] = (),
    bounds: Optional[Dict[str, List[Tuple[float, float]]]] = None,
    notes: Sequence[str] = (),
) -> RunReport:
    if verdicts:
        status = "certified" if all(v.certified for v in verdicts) else "not-certified"
    else:
        status = "ok"
    return RunReport(
        config=config,
        status=status,
        verdicts=[verdict_report(v) for v in verdicts],
        rows=list(rows),
        certificate=None if certificate is None else certificate_to_file(certificate).model_dump(by_alias=True, exclude_none=True),
        bounds={node: [list(b) for b in pairs] for node, pairs in (bounds or {}).items()},
        notes=list(notes),
    )


def report_json(report: RunReport) -> str:
    return report.model_dump_json(indent=2, exclude_none=True)


def render_text(report: RunReport) -> str:
    lines = [f"{report.tool} {report.version}: {report.status}"]
    for v in report.verdicts:
        head = f"  [{v.status}] {v.property}"
        if v.location:
            head += f" at {v.location}"
        if v.level is not None:
            head += f", level {v.level:.6g}"
        if v.T_u is not None:
            head += f", T_u = {v.T_u:.6g}"
        lines.append(head)
        lines += [f"      {t}" for t in v.trace]
    for row in report.rows:
        lines.append("  " + ", ".join(f"{k} = {_cell(val)}" for k, val in row.items()))
    for node, pairs in report.bounds.items():
        lines.append(f"  {node}: " + ", ".join(f"[{lo:.4g}, {hi:.4g}]" for lo, hi in pairs))
    lines += [f"  note: {n}" for n in report.notes]
    return "\n".join(lines)


def _cell(value) -> str:
    return f"{value:.6g}" if isinstance(value, float) else str(value)
