# app/main.py
"""
Command-line front end: rank, select, table, evaluate.

Run from the backend directory:
    python -m app.main rank --cube data/indian_pines.bsq --gt data/indian_pines_gt.csv
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError

from app.core.classifier import SvmParams, grid_search, save_model, score_subset
from app.core.config import (
    DEFAULT_BAND_COUNTS,
    DEFAULT_LEVELS,
    DEFAULT_N_JOBS,
    DEFAULT_REPEATS,
    DEFAULT_SEED,
    DEFAULT_STAGE1_KEEP,
    DEFAULT_SVM_C,
    DEFAULT_SVM_GAMMA,
    DEFAULT_SVM_MAX_ITER,
    DEFAULT_SVM_MAX_PASSES,
    DEFAULT_SVM_TOL,
    DEFAULT_TARGET_BANDS,
    DEFAULT_THRESHOLDS,
    DEFAULT_TRAIN_FRACTION,
    LOG_LEVEL,
    OUT_DIR,
)
from app.core.database import create_session_factory
from app.core.errors import BandSelectionError, ParameterError, SelectionAborted
from app.core.ingest import load_dataset, save_split_csv, split_labeled
from app.core.pipeline import (
    ExperimentSpec,
    RunStore,
    emit_report,
    report_from_retained,
    run_experiment,
    write_run_log,
)
from app.core.selection import (
    Method,
    SelectionConfig,
    SelectionResult,
    baseline_mi_filter,
    rank_by_ig,
    read_retained,
    read_trace,
    run_hybrid,
    select_top_ig,
    write_retained,
    write_trace,
)

logger = logging.getLogger(__name__)

COMMANDS = ("rank", "select", "table", "evaluate")


class CliConfig(BaseModel):
    """Every knob of every subcommand, with its documented default"""
    model_config = ConfigDict(extra="forbid")

    command: Literal["rank", "select", "table", "evaluate"]
    cube: str
    gt: str
    header: Optional[str] = None
    out: str = OUT_DIR
    verbose: int = 0
    levels: int = DEFAULT_LEVELS
    seed: int = DEFAULT_SEED
    fraction: float = DEFAULT_TRAIN_FRACTION
    svm_c: float = DEFAULT_SVM_C
    svm_gamma: float = DEFAULT_SVM_GAMMA
    svm_tol: float = DEFAULT_SVM_TOL
    svm_max_passes: int = DEFAULT_SVM_MAX_PASSES
    svm_max_iter: int = DEFAULT_SVM_MAX_ITER
    n_jobs: int = DEFAULT_N_JOBS
    method: Method = "hybrid"
    th: float = 0.0
    max_bands: Optional[int] = None
    stage1_keep: int = DEFAULT_STAGE1_KEEP
    init_mode: Literal["svm", "raw"] = "svm"
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    band_counts: Tuple[int, ...] = DEFAULT_BAND_COUNTS
    repeats: int = DEFAULT_REPEATS
    base_seed: int = DEFAULT_SEED
    from_trace: Optional[str] = None
    executor: Literal["sync", "celery"] = "sync"
    run_db: Optional[str] = None
    bands: Optional[Tuple[int, ...]] = None
    bands_file: Optional[str] = None
    save_model: Optional[str] = None
    export_split: Optional[str] = None
    grid_search: bool = False

    def svm_params(self) -> SvmParams:
        return SvmParams(C=self.svm_c, gamma=self.svm_gamma, tolerance=self.svm_tol,
                         max_passes=self.svm_max_passes, max_iter=self.svm_max_iter, n_jobs=self.n_jobs)

    def out_path(self, name: str) -> Path:
        out = Path(self.out)
        out.mkdir(parents=True, exist_ok=True)
        return out / name


# --- Argument parsing ---

def _float_list(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _flag(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    """
    Option defaults are None on purpose: a value left None is filled from the
    --config file, then from CliConfig's defaults.
    """
    common = argparse.ArgumentParser(add_help=False)
    data = common.add_argument_group("dataset")
    data.add_argument("--cube", help="band-sequential int16 cube file")
    data.add_argument("--header", help="cube descriptor (default: cube path with .hdr)")
    data.add_argument("--gt", help="ground truth CSV or 8-bit PGM")
    data.add_argument("--levels", type=int, help=f"quantization levels (default {DEFAULT_LEVELS})")
    run = common.add_argument_group("run")
    run.add_argument("--config", help="key=value file merged under the command-line flags")
    run.add_argument("--out", help=f"output directory (default {OUT_DIR})")
    run.add_argument("--seed", type=int, help=f"split and SVM seed (default {DEFAULT_SEED})")
    run.add_argument("--fraction", type=float, help=f"train fraction (default {DEFAULT_TRAIN_FRACTION})")
    run.add_argument("-v", "--verbose", action="count", help="more logging (repeatable)")
    svm = common.add_argument_group("svm")
    svm.add_argument("--svm-c", type=float, help=f"penalty C (default {DEFAULT_SVM_C:g})")
    svm.add_argument("--svm-gamma", type=float, help=f"RBF gamma (default {DEFAULT_SVM_GAMMA:g})")
    svm.add_argument("--svm-tol", type=float, help=f"KKT tolerance (default {DEFAULT_SVM_TOL:g})")
    svm.add_argument("--svm-max-passes", type=int, help=f"quiet sweeps to converge (default {DEFAULT_SVM_MAX_PASSES})")
    svm.add_argument("--svm-max-iter", type=int, help=f"sweep cap (default {DEFAULT_SVM_MAX_ITER})")
    svm.add_argument("--n-jobs", type=int, help=f"parallel pair machines (default {DEFAULT_N_JOBS})")

    selection = argparse.ArgumentParser(add_help=False)
    selection.add_argument("--method", choices=["hybrid", "ig", "mi-filter"], help="selection method (default hybrid)")
    selection.add_argument("--max-bands", type=int, help=f"bands to retain at most (default {DEFAULT_TARGET_BANDS})")
    selection.add_argument("--stage1-keep", type=int, help=f"bands kept by the IG cut (default {DEFAULT_STAGE1_KEEP})")
    selection.add_argument("--init-mode", choices=["svm", "raw"], help="GT_est of the first band (default svm)")

    parser = argparse.ArgumentParser(prog="bandsel", description="Hybrid IG / mRMR / Fano band selection")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("rank", parents=[common], help="rank bands by I(band; C)")

    select = sub.add_parser("select", parents=[common, selection], help="run one selection")
    select.add_argument("--th", type=float, help="acceptance threshold Th (default 0)")

    table = sub.add_parser("table", parents=[common, selection], help="threshold x band-count accuracy table")
    table.add_argument("--thresholds", type=_float_list, help="comma-separated Th columns")
    table.add_argument("--band-counts", type=_int_list, help="comma-separated ascending checkpoints")
    table.add_argument("--repeats", type=int, help=f"split repeats (default {DEFAULT_REPEATS})")
    table.add_argument("--base-seed", type=int, help=f"seed of repeat 0 (default {DEFAULT_SEED})")
    table.add_argument("--from-trace", help="evaluate a retained-bands or trace file instead of selecting")
    table.add_argument("--executor", choices=["sync", "celery"], help="where cells run (default sync)")
    table.add_argument("--run-db", help="SQLAlchemy URL of the run store for resumable sweeps")

    evaluate = sub.add_parser("evaluate", parents=[common], help="accuracy of an explicit band list")
    evaluate.add_argument("--bands", type=_int_list, help="comma-separated band indices")
    evaluate.add_argument("--bands-file", help="retained-bands file")
    evaluate.add_argument("--save-model", help="write the trained model to this file")
    evaluate.add_argument("--export-split", help="write the train/test masks as CSV")
    evaluate.add_argument("--grid-search", action="store_true", default=None, help="pick C and gamma by 5-fold CV")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_config(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """Parse flags, merge the --config file under them, validate"""
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    given = {k: v for k, v in vars(args).items() if v is not None and k != "config"}

    if args.config:
        types = {a.dest: a.type for a in sub._actions if a.dest not in ("help", "config")}
        try:
            entries = dotenv_values(args.config)
        except OSError as exc:
            sub.error(f"cannot read --config {args.config}: {exc}")
        if not entries and not Path(args.config).exists():
            sub.error(f"--config file not found: {args.config}")
        for raw_key, raw_value in entries.items():
            key = _flag(raw_key.strip().lower())
            if key not in types:
                sub.error(f"unknown key {raw_key!r} in {args.config}")
            if key in given or raw_value is None:
                continue
            convert = types[key]
            try:
                if key == "grid_search":
                    given[key] = raw_value.strip().lower() in {"1", "true", "yes", "on"}
                else:
                    given[key] = convert(raw_value) if convert else raw_value
            except (ValueError, argparse.ArgumentTypeError) as exc:
                sub.error(f"bad value for {raw_key} in {args.config}: {exc}")

    for required in ("cube", "gt"):
        if required not in given:
            sub.error(f"the following arguments are required: --{required}")
    return CliConfig(**given)


# --- Commands ---

def _dataset(cfg: CliConfig):
    return load_dataset(cfg.cube, cfg.gt, cfg.header, cfg.levels)


def cmd_rank(cfg: CliConfig) -> Path:
    """Write every band's I(band; C), sorted descending"""
    import pandas as pd

    cube, gt = _dataset(cfg)
    ranked = rank_by_ig(cube, gt)
    path = cfg.out_path("band_ranking.csv")
    pd.DataFrame([(s.band, s.score) for s in ranked], columns=["band", "mi"]).to_csv(
        path, index=False, lineterminator="\n", float_format="%.12g"
    )
    print(f"Ranked {len(ranked)} bands -> {path}")
    return path


def _write_selection(cfg: CliConfig, result: SelectionResult) -> Tuple[Path, Path]:
    retained_path = cfg.out_path(f"{result.method}_retained.txt")
    trace_path = cfg.out_path(f"{result.method}_trace.csv")
    write_retained(result, retained_path)
    write_trace(result, trace_path)
    return retained_path, trace_path


def cmd_select(cfg: CliConfig) -> Tuple[Path, Path]:
    """Run one selection and write its retained-bands and trace files"""
    cube, gt = _dataset(cfg)
    max_bands = cfg.max_bands or DEFAULT_TARGET_BANDS
    if cfg.method == "hybrid":
        selection_cfg = SelectionConfig(
            threshold=cfg.th,
            stage1_keep=max(cfg.stage1_keep, max_bands),
            target_bands=max_bands,
            levels=cfg.levels,
            svm=cfg.svm_params(),
            seed=cfg.seed,
            fraction=cfg.fraction,
            init_mode=cfg.init_mode,
        )
        split = split_labeled(gt, cfg.fraction, cfg.seed)
        try:
            result = run_hybrid(cube, gt, selection_cfg, split)
        except SelectionAborted as exc:
            if exc.partial is not None:
                paths = _write_selection(cfg, exc.partial)
                logger.error(f"Selection aborted after {len(exc.partial.retained)} bands; partial result in {paths[0]}")
            raise
    elif cfg.method == "ig":
        result = select_top_ig(cube, gt, min(max_bands, cube.bands))
    else:
        result = baseline_mi_filter(cube, gt, cfg.th, max_bands)

    paths = _write_selection(cfg, result)
    print(f"Retained {len(result.retained)} bands -> {paths[0]}")
    return paths


def _spec(cfg: CliConfig) -> ExperimentSpec:
    return ExperimentSpec(
        method=cfg.method,
        thresholds=cfg.thresholds,
        band_counts=cfg.band_counts,
        repeats=cfg.repeats,
        base_seed=cfg.base_seed,
        cube_path=cfg.cube,
        gt_path=cfg.gt,
        header_path=cfg.header,
        stage1_keep=cfg.stage1_keep,
        target_bands=cfg.max_bands,
        levels=cfg.levels,
        fraction=cfg.fraction,
        svm=cfg.svm_params(),
        init_mode=cfg.init_mode,
    )


def _read_bands(path: str) -> List[int]:
    if path.endswith(".csv"):
        return list(read_trace(path).retained)
    return read_retained(path)


def cmd_table(cfg: CliConfig) -> List[Path]:
    """Run (or replay) a sweep and write CSV, Markdown and the JSON-lines run log"""
    spec = _spec(cfg)
    if cfg.from_trace:
        report = report_from_retained(spec, _read_bands(cfg.from_trace), seed=cfg.base_seed)
    else:
        store = RunStore(create_session_factory(cfg.run_db)) if cfg.run_db else None
        report = run_experiment(spec, store=store, executor=cfg.executor)

    stem = f"{report.method}_table"
    paths = [
        emit_report(report, "csv", cfg.out_path(f"{stem}.csv")),
        emit_report(report, "markdown", cfg.out_path(f"{stem}.md")),
        write_run_log(report, cfg.out_path(f"{stem}_runs.jsonl")),
    ]
    print(f"Wrote {', '.join(str(p) for p in paths)}")
    return paths


def cmd_evaluate(cfg: CliConfig) -> Path:
    """Accuracy of an explicit band list on the test half"""
    if cfg.bands:
        bands = list(cfg.bands)
    elif cfg.bands_file:
        bands = _read_bands(cfg.bands_file)
    else:
        raise ParameterError("evaluate needs --bands or --bands-file")

    cube, gt = _dataset(cfg)
    split = split_labeled(gt, cfg.fraction, cfg.seed)
    params = cfg.svm_params()
    if cfg.grid_search:
        params, _ = grid_search(cube, gt, split, bands, base=params, seed=cfg.seed)

    accuracy, model = score_subset(cube, gt, split, bands, params, cfg.seed)
    if cfg.save_model:
        save_model(model, cfg.save_model)
    if cfg.export_split:
        save_split_csv(split, gt, cfg.export_split)

    path = cfg.out_path("evaluate.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump({
            "bands": bands,
            "overall": accuracy.overall,
            "average": accuracy.average,
            "n_test": accuracy.n_test,
            "per_class": {str(k): v for k, v in accuracy.per_class.items()},
            "svm_C": params.C,
            "svm_gamma": params.gamma,
            "seed": cfg.seed,
        }, f, indent=2, sort_keys=True)
    print(f"{len(bands)} bands: overall {accuracy.overall:.2f}%, average {accuracy.average:.2f}%")
    return path


COMMAND_HANDLERS = {
    "rank": cmd_rank,
    "select": cmd_select,
    "table": cmd_table,
    "evaluate": cmd_evaluate,
}


def _one_line(exc: BaseException) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
    return " ".join(str(exc).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exit 0 when every artifact was written, 1 on errors, 2 on usage errors"""
    try:
        cfg = parse_config(argv)
    except ValidationError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2

    level = logging.DEBUG if cfg.verbose >= 2 else logging.INFO if cfg.verbose == 1 else LOG_LEVEL
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        COMMAND_HANDLERS[cfg.command](cfg)
    except (BandSelectionError, ValidationError, OSError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
