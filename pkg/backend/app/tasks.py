"""
Celery tasks for experiment sweeps
- One task per (column, repeat) cell
- Synchronous fallback when Redis/Celery is unavailable
"""
import logging
from typing import Iterable, List, Tuple

from celery import group
from kombu.exceptions import OperationalError

from app.core.celery_config import celery_app
from app.core.pipeline import CellRun, ExperimentSpec, run_cell

logger = logging.getLogger(__name__)


@celery_app.task(bind=True, max_retries=2)
def run_selection_cell(self, spec_json: str, column: int, repeat: int) -> dict:
    """
    Background task: run one selection and evaluate its checkpoints

    Args:
        spec_json: ExperimentSpec serialized with model_dump_json
        column: Index of the threshold column
        repeat: Repeat number (offsets the split seed)

    Returns:
        CellRun as a JSON-safe dict
    """
    spec = ExperimentSpec.model_validate_json(spec_json)
    try:
        run = run_cell(spec, column, repeat)
    except OSError as exc:
        # dataset on a network share may be briefly unavailable
        logger.error(f"Cell ({column}, {repeat}) could not read its dataset: {exc}")
        raise self.retry(exc=exc, countdown=30 * (2 ** self.request.retries))
    logger.info(f"Cell ({column}, {repeat}) done: {len(run.retained)} bands retained")
    return run.to_dict()


def run_selection_cell_sync(spec: ExperimentSpec, column: int, repeat: int) -> CellRun:
    """
    Synchronous cell execution (fallback when Celery is unavailable).
    """
    return run_cell(spec, column, repeat)


def dispatch_cells(spec: ExperimentSpec, jobs: Iterable[Tuple[int, int]]) -> List[CellRun]:
    """
    Run cells on Celery workers, falling back to in-process execution
    if the broker can't be reached.
    """
    jobs = list(jobs)
    if not jobs:
        return []

    spec_json = spec.model_dump_json()
    try:
        result = group(run_selection_cell.s(spec_json, column, repeat) for column, repeat in jobs).apply_async()
    except (OperationalError, ConnectionError) as celery_error:
        logger.warning(f"Celery unavailable ({celery_error}); running {len(jobs)} cells synchronously")
        return [run_selection_cell_sync(spec, column, repeat) for column, repeat in jobs]

    # errors raised inside a worker propagate
    payloads = result.get(disable_sync_subtasks=False)
    return [CellRun.from_dict(p) for p in payloads]
