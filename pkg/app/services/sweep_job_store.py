"""
Sweep job store: progress tracking and optional persistence for background load sweeps.

- memory: in-memory only (default, dev).
- file: one JSON file per job under sweep_job_storage_path; survives restarts.
Partial results are readable while a sweep is still running.
"""
import json
import logging
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.config import settings
from app.models.schemas import EstimateResult, SweepJobStatus, SweepPointResult

logger = logging.getLogger(__name__)


def _serialize_result(r: SweepPointResult) -> Dict[str, Any]:
    return {
        "index": r.index,
        "success": r.success,
        "result": r.result.model_dump() if r.result else None,
        "error": r.error,
    }


def _deserialize_result(d: Dict[str, Any]) -> SweepPointResult:
    result = d.get("result")
    return SweepPointResult(
        index=d["index"],
        success=d["success"],
        result=EstimateResult(**result) if result else None,
        error=d.get("error"),
    )


def _serialize_datetime(dt: Optional[datetime]) -> Optional[str]:
    return dt.isoformat() if dt else None


def _deserialize_datetime(s: Optional[str]) -> Optional[datetime]:
    if not s:
        return None
    return datetime.fromisoformat(s.replace("Z", "+00:00"))


def _status_value(status: Any) -> str:
    return status.value if hasattr(status, "value") else str(status)


class SweepJobStore:
    """Thread-safe job state; each grid point appends its result as it finishes."""

    def __init__(self, backend: Optional[str] = None, storage_path: Optional[str] = None):
        self._jobs: Dict[str, Dict[str, Any]] = {}
        self._lock = threading.Lock()
        self._backend = backend or settings.sweep_persistence_backend or "memory"
        self._storage_path = Path(storage_path or settings.sweep_job_storage_path)

    def _persist(self, job_id: str) -> None:
        """Persist job to a JSON file. No-op for memory."""
        if self._backend != "file":
            return
        with self._lock:
            job = self._jobs.get(job_id)
            if not job:
                return
            payload = {
                "job_id": job_id,
                "status": _status_value(job["status"]),
                "total_points": job["total_points"],
                "completed_count": job["completed_count"],
                "failed_count": job["failed_count"],
                "failure_message": job.get("failure_message"),
                "results": [_serialize_result(r) for r in job["results"]],
                "created_at": _serialize_datetime(job["created_at"]),
                "updated_at": _serialize_datetime(job["updated_at"]),
            }
        self._storage_path.mkdir(parents=True, exist_ok=True)
        path = self._storage_path / f"{job_id}.json"
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)

    def _load_from_file(self, job_id: str) -> Optional[Dict[str, Any]]:
        """Load job from file if it exists (e.g. after restart)."""
        if self._backend != "file":
            return None
        path = self._storage_path / f"{job_id}.json"
        if not path.exists():
            return None
        try:
            with open(path) as f:
                data = json.load(f)
        except (json.JSONDecodeError, OSError) as e:
            logger.warning("Unreadable sweep job file %s: %s", path, e)
            return None
        results = []
        for r in data.get("results", []):
            try:
                results.append(_deserialize_result(r))
            except Exception:
                results.append(
                    SweepPointResult(index=r.get("index", 0), success=False, error=r.get("error", "Parse error"))
                )
        try:
            status = SweepJobStatus(data.get("status", "completed"))
        except ValueError:
            status = SweepJobStatus.COMPLETED
        return {
            "job_id": job_id,
            "status": status,
            "total_points": data["total_points"],
            "completed_count": data["completed_count"],
            "failed_count": data["failed_count"],
            "failure_message": data.get("failure_message"),
            "results": results,
            "created_at": _deserialize_datetime(data.get("created_at")),
            "updated_at": _deserialize_datetime(data.get("updated_at")),
        }

    def create_job(self, total_points: int) -> str:
        """Create a new sweep job and return its job_id."""
        job_id = str(uuid.uuid4())
        now = datetime.now(timezone.utc)
        with self._lock:
            self._jobs[job_id] = {
                "job_id": job_id,
                "status": SweepJobStatus.ACCEPTED,
                "total_points": total_points,
                "completed_count": 0,
                "failed_count": 0,
                "results": [],
                "created_at": now,
                "updated_at": now,
            }
        self._persist(job_id)
        return job_id

    def get_job(self, job_id: str) -> Optional[Dict[str, Any]]:
        """Get job state by job_id, loading it from storage if needed."""
        with self._lock:
            if job_id in self._jobs:
                return self._jobs[job_id]
        loaded = self._load_from_file(job_id)
        if loaded:
            with self._lock:
                self._jobs[job_id] = loaded
            return loaded
        return None

    def _set_status(self, job_id: str, status: SweepJobStatus, message: Optional[str] = None) -> bool:
        with self._lock:
            if job_id not in self._jobs:
                return False
            self._jobs[job_id]["status"] = status
            self._jobs[job_id]["updated_at"] = datetime.now(timezone.utc)
            if message:
                self._jobs[job_id]["failure_message"] = message
        self._persist(job_id)
        return True

    def set_processing(self, job_id: str) -> bool:
        return self._set_status(job_id, SweepJobStatus.PROCESSING)

    def set_job_completed(self, job_id: str) -> bool:
        return self._set_status(job_id, SweepJobStatus.COMPLETED)

    def set_job_failed(self, job_id: str, message: Optional[str] = None) -> bool:
        return self._set_status(job_id, SweepJobStatus.FAILED, message)

    def append_result(
        self,
        job_id: str,
        index: int,
        success: bool,
        result: Optional[EstimateResult] = None,
        error: Optional[str] = None,
    ) -> bool:
        """Record one grid point and update counts."""
        with self._lock:
            if job_id not in self._jobs:
                return False
            job = self._jobs[job_id]
            job["results"].append(
                SweepPointResult(index=index, success=success, result=result, error=error)
            )
            if success:
                job["completed_count"] += 1
            else:
                job["failed_count"] += 1
            job["updated_at"] = datetime.now(timezone.utc)
        self._persist(job_id)
        return True

    def get_status_response(self, job_id: str) -> Optional[Dict[str, Any]]:
        """SweepStatusResponse-compatible dict, results ordered by grid index."""
        job = self.get_job(job_id)
        if not job:
            return None
        total = job["total_points"]
        done = job["completed_count"] + job["failed_count"]
        progress = (done / total * 100.0) if total else 0.0
        results = sorted(job["results"], key=lambda r: r.index)
        return {
            "job_id": job_id,
            "status": job["status"],
            "total_points": total,
            "completed_count": job["completed_count"],
            "failed_count": job["failed_count"],
            "progress_percent": round(progress, 2),
            "results": results or None,
            "created_at": _serialize_datetime(job["created_at"]),
            "updated_at": _serialize_datetime(job["updated_at"]),
        }

    def list_jobs(self, limit: int = 50) -> List[Dict[str, Any]]:
        """Jobs for table display, most recent first."""
        if self._backend == "file":
            self._storage_path.mkdir(parents=True, exist_ok=True)
            jobs = []
            for path in sorted(self._storage_path.glob("*.json"), key=lambda p: p.stat().st_mtime, reverse=True):
                try:
                    with open(path) as f:
                        data = json.load(f)
                except (json.JSONDecodeError, OSError):
                    continue
                jobs.append({
                    "job_id": path.stem,
                    "status": data.get("status", "completed"),
                    "total_points": data.get("total_points", 0),
                    "completed_count": data.get("completed_count", 0),
                    "failed_count": data.get("failed_count", 0),
                    "created_at": data.get("created_at"),
                    "updated_at": data.get("updated_at"),
                })
                if len(jobs) >= limit:
                    break
            return jobs
        with self._lock:
            all_jobs = list(self._jobs.values())
        _min_dt = datetime(1970, 1, 1, tzinfo=timezone.utc)
        all_jobs.sort(key=lambda j: (j["created_at"] or _min_dt), reverse=True)
        return [
            {
                "job_id": j["job_id"],
                "status": _status_value(j["status"]),
                "total_points": j["total_points"],
                "completed_count": j["completed_count"],
                "failed_count": j["failed_count"],
                "created_at": _serialize_datetime(j["created_at"]),
                "updated_at": _serialize_datetime(j["updated_at"]),
            }
            for j in all_jobs[:limit]
        ]


# Global store instance (uses settings for persistence backend)
sweep_job_store = SweepJobStore()
