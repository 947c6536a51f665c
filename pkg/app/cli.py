"""
Command-line surface

    python -m app compile casestudies/program1.lc -o program1.json
    python -m app verify --model casestudies/filter.json --method joint --theta 0.98 --mu 0
    python -m app casestudy euclid --M 100

Exit codes: 0 certified or done, 1 not certified, 2 usage or input error,
3 numeric failure inside a solver.
"""

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

from pydantic import ValidationError

from app.config import settings
from app.core.certificate import Verdict, VerdictStatus
from app.core.graph import GraphModel
from app.core.milm import MILM
from app.errors import LyacertError, ModelError
from app.models.run_config import RunConfig, RunReport
from app.services.casestudies import CASESTUDIES, run_casestudy
from app.services.certify import check_certificate, conclude_overflow, conclude_unreachability
from app.services.frontend import CompileOptions, compile_source
from app.services.model_io import dumps_model, load_certificate, load_model, save_certificate, save_model, sublevel_spec
from app.services.reduction import enumerate_simple_cycles, reduce_graph
from app.services.reporting import build_report, render_text, report_json
from app.services.search import run_verification
from app.services.simulator import UncertaintyPolicy, sample_initial_states, simulate_many

logger = logging.getLogger("app.cli")

Model = Union[GraphModel, MILM]

EXIT_OK = 0
EXIT_NOT_CERTIFIED = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


def load_any(path: str) -> Model:
    """A model file, or a mini-language program compiled on the fly"""
    p = Path(path)
    if not p.exists():
        raise ModelError(f"no such file {path}", field="model")
    if p.suffix == ".lc":
        return compile_source(p.read_text(encoding="utf-8"), CompileOptions(name=p.stem))
    return load_model(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lyacert", description="Lyapunov-invariant verification of numerical programs")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--json", dest="output", help="write the JSON report here")
    parser.add_argument("--seed", type=int, default=settings.seed)
    parser.add_argument("--tol", type=float, default=settings.tol)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a program into a graph model")
    p.add_argument("model", help="program source (.lc)")
    p.add_argument("-o", "--out", help="model file to write (stdout when omitted)")
    p.add_argument("--scale", nargs="?", const=True, default=False, type=Fraction, metavar="M",
                   help="divide every variable by M (default: the largest declared bound)")

    p = sub.add_parser("simulate", help="run random trajectories from the initial set")
    p.add_argument("--model", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("reduce", help="eliminate nodes and list the simple cycles")
    p.add_argument("--model", required=True)
    p.add_argument("--eliminate", nargs="*", default=[])
    p.add_argument("-o", "--out")

    p = sub.add_parser("verify", help="search for a Lyapunov invariant and report verdicts")
    p.add_argument("--model", required=True)
    p.add_argument("--method", default="joint", choices=["joint", "simplified", "per-coordinate", "sos", "quadratic", "linear"])
    p.add_argument("--theta", type=float, nargs="*")
    p.add_argument("--mu", type=float, nargs="*")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--ftt", action="store_true", help="also bound the number of steps to termination")
    p.add_argument("--bisect", action="store_true", help="find the smallest certified overflow level")
    p.add_argument("--export-certificate")
    p.add_argument("--export-invariant", metavar="NODE", help="print the sublevel set of σ at NODE as an invariants entry")

    p = sub.add_parser("check-cert", help="re-check a certificate exactly against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--certificate", required=True)

    p = sub.add_parser("casestudy", help="run a bundled case study")
    p.add_argument("name", choices=sorted(CASESTUDIES))
    p.add_argument("--M", type=int)
    p.add_argument("--B", type=float)
    p.add_argument("--method", choices=["joint", "per-coordinate"])
    p.add_argument("--precision", choices=["exact", "f64", "f32"])
    p.add_argument("--no-search", dest="search", action="store_false", default=None)
    return parser


def to_config(args: argparse.Namespace) -> RunConfig:
    values = {"command": args.command, "seed": args.seed, "tol": args.tol, "output": args.output}
    if args.command == "casestudy":
        values["casestudy"] = args.name
        values["parameters"] = {
            k: getattr(args, k) for k in ("M", "B", "method", "precision", "search")
            if getattr(args, k) is not None
        }
        return RunConfig(**values)
    values["model"] = args.model
    if args.command == "simulate":
        values.update(runs=args.runs, steps=args.steps)
    elif args.command == "reduce":
        values["eliminate"] = args.eliminate
    elif args.command == "verify":
        values.update(method=args.method, degree=args.degree, ftt=args.ftt, bisect=args.bisect)
        values.update(export_certificate=args.export_certificate, export_invariant=args.export_invariant)
        if args.theta:
            values["theta"] = args.theta
        if args.mu:
            values["mu"] = args.mu
    elif args.command == "check-cert":
        values["certificate"] = args.certificate
    return RunConfig(**values)


def cmd_compile(config: RunConfig, args: argparse.Namespace) -> RunReport:
    source = Path(config.model).read_text(encoding="utf-8")
    model = compile_source(source, CompileOptions(scale=args.scale, name=Path(config.model).stem))
    if args.out:
        save_model(model, args.out)
    else:
        print(dumps_model(model))
    row = {"nodes": len(model.nodes), "edges": len(model.edges), "variables": " ".join(model.variables)}
    return build_report(config=config, rows=[row])


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> RunReport:
    model = load_any(config.model)
    inits = sample_initial_states(model, config.runs, seed=config.seed)
    if not inits:
        raise ModelError("no initial state found", field="init")
    traces = simulate_many(model, inits, runs=config.runs, policy=UncertaintyPolicy(seed=config.seed), max_steps=config.steps)
    rows = [{"run": r, "status": t.status.value, "steps": t.steps, "last": t.states[-1].node} for r, t in enumerate(traces)]
    return build_report(config=config, rows=rows)


def cmd_reduce(config: RunConfig, args: argparse.Namespace) -> RunReport:
    model = load_any(config.model)
    if not isinstance(model, GraphModel):
        raise ModelError("reduction needs a graph model", field="model")
    model = reduce_graph(model, config.eliminate)
    if args.out:
        save_model(model, args.out)
    cycles = enumerate_simple_cycles(model)
    rows = [{"cycle": " ".join(f"{a}->{b}#{k}" for a, b, k in c)} for c in cycles]
    notes = [f"{len(model.nodes)} nodes, {len(model.edges)} edges, {len(cycles)} simple cycles"]
    return build_report(config=config, rows=rows, notes=notes)


def cmd_verify(config: RunConfig, args: argparse.Namespace) -> RunReport:
    model = load_any(config.model)
    outcome = run_verification(
        model, config.method, args.theta and config.theta, args.mu and config.mu, config.degree, config.ftt, config.bisect
    )
    cert, verdicts, bounds = outcome.certificate, outcome.verdicts, outcome.bounds
    notes = []
    if cert is not None and config.export_certificate:
        save_certificate(cert, config.export_certificate)
        notes.append(f"certificate written to {config.export_certificate}")
    if cert is not None and config.export_invariant:
        spec = sublevel_spec(cert, config.export_invariant)
        notes.append(f"invariants[{config.export_invariant}] = {spec.model_dump_json(exclude_defaults=True)}")
    return build_report(verdicts, config, cert, bounds=bounds, notes=notes)


def cmd_check_cert(config: RunConfig, args: argparse.Namespace) -> RunReport:
    model = load_any(config.model)
    cert = load_certificate(config.certificate)
    check = check_certificate(model, cert)
    verdict = Verdict("certificate", VerdictStatus.CERTIFIED if check.valid else VerdictStatus.NOT_CERTIFIED)
    verdict.trace = [f"{v.kind} {v.constraint}: margin {v.margin:.3g}" for v in check.violations] + check.notes
    verdicts = [verdict]
    if check.valid:
        if isinstance(model, MILM) or model.overflow is not None:
            verdicts.append(conclude_overflow(cert, model, validated=True))
        if isinstance(model, GraphModel):
            verdicts += [conclude_unreachability(cert, model, loc, validated=True) for loc in model.unsafe]
    return build_report(verdicts, config, notes=[f"{check.checked} conditions checked, exact={check.exact}"])


def cmd_casestudy(config: RunConfig, args: argparse.Namespace) -> RunReport:
    report = run_casestudy(config.casestudy, **config.parameters)
    return build_report(report.verdicts, config, report.certificate, rows=report.rows, notes=report.notes)


COMMANDS = {
    "compile": cmd_compile,
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "verify": cmd_verify,
    "check-cert": cmd_check_cert,
    "casestudy": cmd_casestudy,
}


def exit_code(report: RunReport) -> int:
    return EXIT_NOT_CERTIFIED if report.status == "not-certified" else EXIT_OK


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = to_config(args)
        settings.seed, settings.tol = config.seed, config.tol
        report = COMMANDS[config.command](config, args)
    except ValidationError as e:
        logger.error("invalid input: %s", e)
        return EXIT_INPUT
    except LyacertError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("%s", e)
        return EXIT_INPUT
    if config.output:
        Path(config.output).write_text(report_json(report) + "\n", encoding="utf-8")
    if config.command != "compile" or args.out:
        print(render_text(report))
    return exit_code(report)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
