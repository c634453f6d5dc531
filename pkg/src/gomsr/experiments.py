"""Experiment orchestration: single runs, sweeps, similarity exports, stats.

Run records are line-delimited structured text: one event object per line
(improvements first, then population lifecycle events) closed by a summary
object. Records are deterministic for a given (config, seed); wall-clock
timings are only included on request so that records stay byte-reproducible.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from .dataio import Dataset, SplitIndices, SplitPlan, load_csv, make_splits, synth_problem
from .engine import (
    ImprovementTracker,
    RunContext,
    RunRecord,
    run_fixed,
    run_ims,
)
from .evaluator import EvaluationBudget, r2 as r2_score
from .linkage import BinningRule, MeasureKind, similarity_to_csv
from .template import (
    Alphabet,
    OperatorSet,
    ProtectionPolicy,
    build_template,
    evaluate,
    to_infix,
)

DEFAULT_SYNTH_ROWS = {"sin_plus_sqrt": 200, "airfoil_like": 1503}
EXPORT_MEAN_GENERATIONS = (0, 5, 10, 20)
WORKER_ENV = "GOMEA_SR_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    measure: str = "node"
    height: int = 5
    linear_scaling: bool = False
    operators: str = "base"
    budget: int | None = None
    population: int | None = None
    generations: int | None = None
    dataset: str | None = None
    target: str | int | None = None
    date_columns: tuple[str, ...] = ()
    synth: str | None = None
    synth_rows: int | None = None
    synth_noise: float = 0.0
    seed: int = 1
    fold: int = 0
    repeat: int = 0
    division: str = "protected"
    binning: str = "equal_width"

    def validate(self) -> "ExperimentConfig":
        try:
            MeasureKind(self.measure)
        except ValueError:
            raise ConfigError(f"unknown measure {self.measure!r}") from None
        fixed = self.population is not None or self.generations is not None
        if self.budget is not None and fixed:
            raise ConfigError("choose either an evaluation budget or a fixed "
                              "population/generations mode, not both")
        if self.budget is None and not (self.population and self.generations is not None):
            raise ConfigError("need --budget, or both --population and --generations")
        if (self.dataset is None) == (self.synth is None):
            raise ConfigError("choose exactly one of --dataset or --synth")
        if self.dataset is not None and self.target is None:
            raise ConfigError("--dataset requires --target")
        plan = SplitPlan(master_seed=self.seed)
        if not 0 <= self.fold < plan.folds:
            raise ConfigError(f"fold must be in [0, {plan.folds})")
        if not 0 <= self.repeat < plan.repeats:
            raise ConfigError(f"repeat must be in [0, {plan.repeats})")
        return self

    @property
    def dataset_tag(self) -> str:
        if self.synth is not None:
            return self.synth
        return Path(self.dataset).stem

    @property
    def fixed_mode(self) -> bool:
        return self.budget is None


def resolve_measure(name: str, adjusted: bool) -> str:
    """Fold the bias-adjustment flag into the measure name.

    Masking and the generation-0 adjustment cannot be combined: positions
    inactive in the whole initial population would divide by zero.
    """
    if not adjusted:
        return name
    if name == "mi":
        return "mi_adjusted"
    if name == "mi_adjusted":
        return name
    raise ConfigError(f"--adjusted cannot be combined with measure {name!r}")


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.synth is not None:
        rows = config.synth_rows or DEFAULT_SYNTH_ROWS.get(config.synth, 200)
        return synth_problem(config.synth, rows, config.synth_noise, seed=config.seed)
    return load_csv(config.dataset, config.target, tuple(config.date_columns))


def _split_for(config: ExperimentConfig, data: Dataset) -> SplitIndices:
    splits = make_splits(data, SplitPlan(master_seed=config.seed))
    for s in splits:
        if s.fold == config.fold and s.repeat == config.repeat:
            return s
    raise ConfigError(f"no split for fold={config.fold} repeat={config.repeat}")


def execute(config: ExperimentConfig) -> tuple[dict, RunRecord]:
    """Run one configuration end to end and compute final split metrics."""
    config = config.validate()
    data = load_dataset(config)
    split = _split_for(config, data)
    train = data.subset(split.train, "train")
    ops = OperatorSet.extended() if config.operators == "extended" else OperatorSet.base()
    template = build_template(config.height, ops.max_arity)
    alphabet = Alphabet(ops, data.n_features)
    ctx = RunContext(
        template=template,
        alphabet=alphabet,
        train=train,
        measure=MeasureKind(config.measure),
        binning=BinningRule(strategy=config.binning),
        linear_scaling=config.linear_scaling,
        policy=ProtectionPolicy(division=config.division),
        tracker=ImprovementTracker(),
    )
    if config.fixed_mode:
        record = run_fixed(ctx, config.population, config.generations, split.run_seed)
    else:
        record = run_ims(ctx, EvaluationBudget(limit=config.budget), split.run_seed)
    final = {}
    expression = None
    if record.best_genotype is not None:
        fit = record.best_fitness
        final["train_r2"] = fit.r2
        for name, rows in (("validation", split.validation), ("test", split.test)):
            pred = evaluate(record.best_genotype, template, data.X[rows], alphabet,
                            policy=ctx.policy)
            scaled = fit.intercept + fit.slope * pred
            score = r2_score(scaled, data.y[rows])
            final[f"{name}_r2"] = score if math.isfinite(score) else float("-inf")
        expression = to_infix(record.best_genotype, template, alphabet, data.feature_names)
    summary = {
        "event": "summary",
        "config": _config_dict(config),
        "run_seed": split.run_seed,
        "evaluations": record.evaluations_used,
        "generations": record.generations,
        "best_expression": expression,
        "final": final,
        "snapshots": len(record.snapshots) if record.snapshots is not None else 0,
    }
    return summary, record


def _config_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["date_columns"] = list(config.date_columns)
    return d


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _dumps(obj: dict) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, allow_nan=False)


def record_lines(summary: dict, record: RunRecord, include_timing: bool = False) -> list[str]:
    lines = []
    for ev in record.trace:
        obj = {"event": "improvement", "evaluations": ev.evaluations, "best_r2": ev.best_r2}
        if include_timing:
            obj["ms"] = ev.ms
        lines.append(_dumps(obj))
    for ev in record.events:
        lines.append(_dumps(ev))
    lines.append(_dumps(summary))
    return lines


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def record_filename(config: ExperimentConfig) -> str:
    return (
        f"{config.dataset_tag}__{config.measure}__h{config.height}"
        f"__ls{int(config.linear_scaling)}__fold{config.fold}"
        f"__rep{config.repeat}__seed{config.seed}.jsonl"
    )


def run_and_write(
    config: ExperimentConfig, out_dir: str | Path, include_timing: bool = False
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / record_filename(config)
    summary, record = execute(config)
    write_atomic(path, "\n".join(record_lines(summary, record, include_timing)) + "\n")
    return path


def read_record(path: str | Path) -> dict:
    """Events plus the closing summary of one run-record file."""
    events = []
    summary = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("event") == "summary":
            summary = obj
        else:
            events.append(obj)
    if summary is None:
        raise ValueError(f"{path}: no summary line")
    return {"events": events, "summary": summary}


@dataclass(frozen=True)
class SweepConfig:
    """Cartesian product of measures/heights/LS over the split protocol."""

    base: ExperimentConfig
    measures: tuple[str, ...] = ("node",)
    heights: tuple[int, ...] = (5,)
    linear_scaling: tuple[bool, ...] = (False,)
    folds: int = 5
    repeats: int = 6

    def tasks(self) -> list[ExperimentConfig]:
        out = []
        for m in self.measures:
            for h in self.heights:
                for ls in self.linear_scaling:
                    for f in range(self.folds):
                        for r in range(self.repeats):
                            out.append(
                                replace(
                                    self.base, measure=m, height=h,
                                    linear_scaling=ls, fold=f, repeat=r,
                                ).validate()
                            )
        return out


def worker_count(requested: int | None = None) -> int:
    if requested is not None and requested > 0:
        return requested
    env = os.environ.get(WORKER_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _sweep_worker(config: ExperimentConfig, out_dir: str) -> str:
    return str(run_and_write(config, out_dir))


def run_sweep(
    sweep: SweepConfig, out_dir: str | Path, workers: int | None = None
) -> dict:
    """Run all missing records of the sweep; completed files are skipped.

    Failures do not abort the sweep: each failed task leaves a
    `<record>.failed.txt` note and is retried on the next invocation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = []
    skipped = 0
    for cfg in sweep.tasks():
        path = out / record_filename(cfg)
        if path.exists():
            skipped += 1
        else:
            todo.append((cfg, path))
    done, failed = [], []
    n_workers = min(worker_count(workers), max(1, len(todo)))
    if n_workers <= 1:
        for cfg, path in todo:
            try:
                done.append(_sweep_worker(cfg, str(out)))
            except Exception as exc:  # noqa: BLE001 - record and continue
                failed.append(str(path))
                write_atomic(path.with_suffix(".failed.txt"), f"{exc}\n")
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = {
                pool.submit(_sweep_worker, cfg, str(out)): path for cfg, path in todo
            }
            for fut in as_completed(futures):
                path = futures[fut]
                exc = fut.exception()
                if exc is None:
                    done.append(fut.result())
                else:
                    failed.append(str(path))
                    write_atomic(path.with_suffix(".failed.txt"), f"{exc}\n")
    return {"completed": len(done), "skipped": skipped, "failed": len(failed)}


def export_similarity(
    config: ExperimentConfig,
    out_dir: str | Path,
    runs: int = 30,
    workers: int | None = None,
    mean_generations: tuple[int, ...] = EXPORT_MEAN_GENERATIONS,
) -> dict:
    """Per-run per-generation similarity CSVs plus across-run means.

    Requires fixed-generation mode. Runs that converged early simply have no
    snapshots beyond their last generation and drop out of later means.
    """
    config = config.validate()
    if not config.fixed_mode:
        raise ConfigError("similarity export requires --population/--generations mode")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = SplitPlan(master_seed=config.seed)
    pairs = [(f, r) for r in range(plan.repeats) for f in range(plan.folds)][:runs]
    configs = [replace(config, fold=f, repeat=r).validate() for f, r in pairs]
    n_workers = min(worker_count(workers), max(1, len(configs)))
    if n_workers <= 1:
        results = [_export_worker(cfg) for cfg in configs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_export_worker, configs))
    per_gen: dict[int, list[np.ndarray]] = {}
    files = 0
    for cfg, snapshots in zip(configs, results):
        for gen, matrix in snapshots:
            name = (
                f"{cfg.dataset_tag}__{cfg.measure}__h{cfg.height}"
                f"__fold{cfg.fold}__rep{cfg.repeat}__gen{gen}.csv"
            )
            write_atomic(out / name, similarity_to_csv(matrix))
            per_gen.setdefault(gen, []).append(matrix)
            files += 1
    for gen in mean_generations:
        if gen in per_gen:
            mean = np.mean(per_gen[gen], axis=0)
            name = f"{config.dataset_tag}__{config.measure}__h{config.height}__mean_gen{gen}.csv"
            write_atomic(out / name, similarity_to_csv(mean))
            files += 1
    return {"runs": len(configs), "files": files,
            "snapshot_counts": {g: len(v) for g, v in sorted(per_gen.items())}}


def _export_worker(config: ExperimentConfig) -> list[tuple[int, np.ndarray]]:
    _, record = execute(config)
    return record.snapshots or []


def stats_iqm(values) -> float:
    """Interquartile mean: the mean after discarding the bottom and top 25%."""
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size < 4:
        raise ValueError("IQM needs at least 4 values")
    return float(scipy_stats.trim_mean(arr, 0.25))


def stats_median(values) -> float:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("median of empty sequence")
    return float(np.median(arr))


def stats_bootstrap_ci(
    values,
    level: float = 0.95,
    resamples: int = 2000,
    rng: np.random.Generator | None = None,
    statistic=stats_iqm,
) -> tuple[float, float]:
    """Percentile bootstrap CI of the statistic.

    A flat sequence is resampled as one group; a sequence of sequences is
    treated as per-problem strata resampled independently and pooled before
    the statistic is applied.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    first = next(iter(values))
    groups = [np.asarray(g, dtype=float) for g in values] if np.ndim(first) > 0 else [
        np.asarray(values, dtype=float)
    ]
    draws = np.empty(resamples)
    for i in range(resamples):
        pooled = np.concatenate([rng.choice(g, size=g.size, replace=True) for g in groups])
        draws[i] = statistic(pooled)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def summarize_records(paths, metric: str = "train_r2", group_by: str = "measure") -> dict:
    """Group run-record summaries and aggregate the chosen final metric."""
    groups: dict[str, list[float]] = {}
    for p in paths:
        rec = read_record(p)["summary"]
        key = str(rec["config"].get(group_by))
        value = rec["final"].get(metric)
        if isinstance(value, str):  # serialized non-finite ("inf"/"-inf"/"nan")
            value = float(value)
        if value is not None:
            groups.setdefault(key, []).append(float(value))
    out = {}
    for key, vals in sorted(groups.items()):
        entry = {"n": len(vals), "median": stats_median(vals)}
        if len(vals) >= 4:
            entry["iqm"] = stats_iqm(vals)
            lo, hi = stats_bootstrap_ci(vals)
            entry["ci95"] = [lo, hi]
        out[key] = entry
    return out
