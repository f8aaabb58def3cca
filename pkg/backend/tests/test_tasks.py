"""
Celery dispatch of experiment cells and its synchronous fallback
"""
import pytest
from kombu.exceptions import OperationalError

from app import tasks
from app.core.errors import DomainError
from app.core.pipeline import CellRun, ExperimentSpec, run_cell, run_experiment


@pytest.fixture
def spec(dataset_files) -> ExperimentSpec:
    return ExperimentSpec(
        method="mi-filter",
        thresholds=(-0.02, 0.0),
        band_counts=(1, 2),
        repeats=1,
        cube_path=dataset_files["cube"],
        gt_path=dataset_files["gt"],
        header_path=dataset_files["header"],
        levels=16,
    )


@pytest.fixture
def broker_down(monkeypatch):
    def unreachable(*args, **kwargs):
        raise ConnectionError("redis is down")

    monkeypatch.setattr(tasks, "group", unreachable)


def test_cell_dict_round_trip(spec):
    payload = run_cell(spec, 1, 0).to_dict()
    assert CellRun.from_dict(payload).to_dict() == payload


def test_fallback_when_broker_unreachable(spec, broker_down, caplog):
    runs = tasks.dispatch_cells(spec, [(0, 0), (1, 0)])
    assert [r.column for r in runs] == ["-0.02", "0"]
    assert "running 2 cells synchronously" in caplog.text


def test_celery_executor_matches_sync(spec, broker_down):
    sync = run_experiment(spec, executor="sync")
    dispatched = run_experiment(spec, executor="celery")
    for column in sync.columns:
        for n in spec.band_counts:
            assert sync.cell(column, n).accuracies == dispatched.cell(column, n).accuracies


def test_nothing_to_dispatch(spec):
    assert tasks.dispatch_cells(spec, []) == []


def test_task_runs_in_process(spec):
    payload = tasks.run_selection_cell.apply(args=(spec.model_dump_json(), 0, 0)).get()
    assert payload["column"] == "-0.02"
    assert payload["retained"] == list(run_cell(spec, 0, 0).retained)


class _FailingGroup:
    """Stands in for a dispatched group whose worker raised"""

    def __init__(self, signatures):
        list(signatures)

    def apply_async(self):
        return self

    def get(self, **kwargs):
        raise DomainError("band index out of range on worker")


def test_worker_errors_propagate(spec, monkeypatch, caplog):
    monkeypatch.setattr(tasks, "group", _FailingGroup)
    with pytest.raises(DomainError, match="on worker"):
        tasks.dispatch_cells(spec, [(0, 0)])
    assert "synchronously" not in caplog.text


def test_fallback_on_kombu_operational_error(spec, monkeypatch, caplog):
    def refused(*args, **kwargs):
        raise OperationalError("Error 111 connecting to localhost:6379")

    monkeypatch.setattr(tasks, "group", refused)
    runs = tasks.dispatch_cells(spec, [(0, 0)])
    assert [r.column for r in runs] == ["-0.02"]
    assert "running 1 cells synchronously" in caplog.text
