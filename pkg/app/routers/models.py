from fastapi import APIRouter, HTTPException, status

from app.core.graph import GraphModel
from app.errors import LyacertError, SolverError
from app.models.model_file import ModelFile
from app.models.run_config import RunReport
from app.schemas import CompileRequest, CycleResponse, CyclesRequest, ReduceRequest, ReduceResponse, SimulateRequest
from app.services.frontend import CompileOptions, compile_source
from app.services.model_io import model_from_file, model_to_file
from app.services.reduction import enumerate_simple_cycles, reduce_graph
from app.services.reporting import build_report
from app.services.simulator import UncertaintyPolicy, sample_initial_states, simulate_many

router = APIRouter(prefix="/models", tags=["Models"])


def bad_request(e: LyacertError) -> HTTPException:
    if isinstance(e, SolverError):
        return HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=f"Solver failure: {e}")
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


def graph_from(doc: ModelFile) -> GraphModel:
    model = model_from_file(doc)
    if not isinstance(model, GraphModel):
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="A graph model is required")
    return model


def _cycle_keys(model: GraphModel):
    return [[f"{a}->{b}#{k}" for a, b, k in c] for c in enumerate_simple_cycles(model)]


@router.post("/compile", response_model=ModelFile)
async def compile_program(request: CompileRequest):
    """
    Compile a mini-language program into a graph model

    - **source**: program text
    - **scale**: divide every variable by the largest declared bound
    """
    try:
        model = compile_source(request.source, CompileOptions(scale=request.scale, name=request.name))
        return model_to_file(model)
    except LyacertError as e:
        raise bad_request(e)
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to compile program: {str(e)}"
        )


@router.post("/simulate", response_model=RunReport)
async def simulate_model(request: SimulateRequest):
    """Random trajectories from sampled initial states"""
    try:
        model = model_from_file(request.model)
        policy = UncertaintyPolicy() if request.seed is None else UncertaintyPolicy(seed=request.seed)
        inits = sample_initial_states(model, request.runs, seed=policy.seed)
        if not inits:
            raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="No initial state found")
        traces = simulate_many(model, inits, runs=request.runs, policy=policy, max_steps=request.steps)
        rows = [
            {"run": r, "status": t.status.value, "steps": t.steps, "last": t.states[-1].node, "note": t.note}
            for r, t in enumerate(traces)
        ]
        return build_report(rows=rows)
    except HTTPException:
        raise
    except LyacertError as e:
        raise bad_request(e)
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Simulation failed: {str(e)}"
        )


@router.post("/reduce", response_model=ReduceResponse)
async def reduce_model(request: ReduceRequest):
    """Eliminate nodes in the given order and return the reduced model"""
    try:
        model = reduce_graph(graph_from(request.model), request.eliminate)
        return ReduceResponse(model=model_to_file(model), cycles=_cycle_keys(model))
    except HTTPException:
        raise
    except LyacertError as e:
        raise bad_request(e)
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Reduction failed: {str(e)}"
        )


@router.post("/cycles", response_model=CycleResponse)
async def list_cycles(request: CyclesRequest):
    try:
        model = graph_from(request.model)
        return CycleResponse(nodes=len(model.nodes), edges=len(model.edges), cycles=_cycle_keys(model))
    except HTTPException:
        raise
    except LyacertError as e:
        raise bad_request(e)
