"""API route handlers."""
import asyncio
import logging
from pathlib import Path
from typing import List, Optional, Union

from fastapi import APIRouter, BackgroundTasks, HTTPException, status
from pydantic import ValidationError

from app.config import settings
from app.models.schemas import (
    DecodePolicy,
    DegreeDistribution,
    EstimateResult,
    ExampleResponse,
    SimulateRequest,
    SweepJobListItem,
    SweepJobListResponse,
    SweepJobResponse,
    SweepJobStatus,
    SweepLoadRequest,
    SweepStatusResponse,
    TrialPlan,
)
from app.services.cache_service import cache_service
from app.services.montecarlo import estimate, users_for_load
from app.services.per_model import PerTable, PerTableError, build_per_table
from app.services.sweep_job_store import sweep_job_store
from app.services.worked_example import run_both

logger = logging.getLogger(__name__)

router = APIRouter()

SERVICE_NAME = "MuSCA SIC Simulator"
SERVICE_VERSION = "1.0.0"


def _build_plan(request: Union[SimulateRequest, SweepLoadRequest], g: float) -> TrialPlan:
    """Plan for one load; invalid combinations (e.g. crdsa with an irregular dist) are 400s."""
    try:
        return TrialPlan(
            n_slots=request.n_slots,
            n_users=users_for_load(g, request.n_slots),
            dist=DegreeDistribution.parse(request.dist),
            snr_db=request.snr_db,
            trials=request.trials,
            master_seed=request.seed,
            policy=DecodePolicy(mode=request.mode),
            chunk_size=settings.trial_chunk_size,
        )
    except (ValidationError, ValueError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


def _build_table(source: str, plan: TrialPlan) -> PerTable:
    profiles = plan.profile_map().values()
    code_ids = sorted({p.code_id for p in profiles} | {p.signalling_code_id for p in profiles})
    try:
        return build_per_table(
            source,
            snr_values=[plan.snr_db],
            code_ids=code_ids,
            max_degree=max(3, plan.dist.max_degree),
        )
    except PerTableError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


async def _run_point(
    job_id: str,
    idx: int,
    plan: TrialPlan,
    table: PerTable,
    sem: asyncio.Semaphore,
) -> None:
    """
    Evaluate one grid point in a worker thread.
    Failures are isolated: one bad point does not fail the whole sweep.
    """
    try:
        async with sem:
            result = await asyncio.to_thread(estimate, plan, table)
        sweep_job_store.append_result(job_id, idx, True, result=result)
    except Exception as e:
        logger.exception("Sweep %s point %s failed", job_id, idx)
        sweep_job_store.append_result(job_id, idx, False, error=str(e))


async def _process_sweep(job_id: str, plans: List[TrialPlan], table: PerTable) -> None:
    """
    Background task: evaluate every load with at most
    sweep_max_concurrent_points points in flight. Partial results are
    visible through the status endpoint.
    """
    sweep_job_store.set_processing(job_id)
    sem = asyncio.Semaphore(settings.sweep_max_concurrent_points)
    try:
        await asyncio.gather(
            *[_run_point(job_id, idx, plan, table, sem) for idx, plan in enumerate(plans)]
        )
    except Exception as e:
        logger.exception("Sweep job %s fatal error: %s", job_id, e)
        sweep_job_store.set_job_failed(job_id, message=str(e))
        return
    sweep_job_store.set_job_completed(job_id)
    logger.info("Sweep job %s completed", job_id)


@router.post("/simulate", response_model=EstimateResult, status_code=status.HTTP_200_OK)
async def simulate(request: SimulateRequest) -> EstimateResult:
    """
    Estimate PLR and throughput at one (load, SNR) point.

    Results are deterministic for a fixed seed and are cached by request.
    """
    try:
        key = request.model_dump(mode="json")
        cached = cache_service.get(key)
        if cached:
            logger.info("Returning cached estimate")
            return cached

        plan = _build_plan(request, request.g)
        table = _build_table(request.per_source, plan)
        result = await asyncio.to_thread(estimate, plan, table)

        cache_service.set(key, result)
        return result

    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail="An unexpected error occurred"
        )


@router.post("/example", response_model=ExampleResponse)
async def example(seed: Optional[int] = None) -> ExampleResponse:
    """
    Decode the four-user, three-slot scenario twice: every draw forced to
    succeed, then with random draws from ``seed``.
    """
    if seed is not None and seed < 0:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail="seed must be >= 0")
    return ExampleResponse(runs=run_both(seed if seed is not None else settings.default_seed))


@router.post(
    "/sweeps/load",
    response_model=SweepJobResponse,
    status_code=status.HTTP_202_ACCEPTED,
    summary="Submit a background load sweep",
)
async def sweep_load_job(
    request: SweepLoadRequest,
    background_tasks: BackgroundTasks,
) -> SweepJobResponse:
    """
    Submit a load sweep. Returns immediately with a job_id.
    Use GET /api/v1/sweeps/{job_id}/status to track progress and read results.
    """
    plans = [_build_plan(request, g) for g in request.g_values]
    table = _build_table(request.per_source, plans[0])
    job_id = sweep_job_store.create_job(total_points=len(plans))
    background_tasks.add_task(_process_sweep, job_id, plans, table)
    logger.info("Sweep job %s submitted with %s points", job_id, len(plans))
    return SweepJobResponse(
        job_id=job_id,
        status=SweepJobStatus.ACCEPTED,
        total_points=len(plans),
    )


@router.get(
    "/sweeps/jobs",
    response_model=SweepJobListResponse,
    summary="List sweep jobs",
)
async def sweep_list_jobs(limit: int = 50) -> SweepJobListResponse:
    """Most recent first. Use limit to cap results (default 50)."""
    if limit < 1 or limit > 200:
        limit = 50
    rows = sweep_job_store.list_jobs(limit=limit)
    return SweepJobListResponse(jobs=[SweepJobListItem(**r) for r in rows])


@router.get(
    "/sweeps/{job_id}/status",
    response_model=SweepStatusResponse,
    summary="Get sweep job status and progress",
)
async def sweep_status(job_id: str) -> SweepStatusResponse:
    """Progress counts plus every finished point so far."""
    data = sweep_job_store.get_status_response(job_id)
    if not data:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Job not found: {job_id}",
        )
    return SweepStatusResponse(**data)


@router.get("/health")
async def health_check():
    """Health check endpoint (liveness)."""
    return {
        "status": "healthy",
        "service": SERVICE_NAME,
        "version": SERVICE_VERSION
    }


@router.get("/ready")
async def readiness_check():
    """Readiness probe: with the file backend the job directory must be writable."""
    if settings.sweep_persistence_backend == "file":
        path = Path(settings.sweep_job_storage_path)
        try:
            path.mkdir(parents=True, exist_ok=True)
            probe = path / ".ready_probe"
            probe.write_text("ok")
            probe.unlink()
        except OSError as err:
            logger.warning("Readiness check failed: %s", err)
            raise HTTPException(
                status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
                detail=f"Storage not ready: {err}",
            )
    return {"status": "ready"}
