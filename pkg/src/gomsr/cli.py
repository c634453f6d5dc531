"""Command-line interface: run, sweep, export-similarity, stats.

Options can also come from a flat key=value config file (--config); explicit
command-line flags win over file values, which win over defaults.
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    ExperimentConfig,
    SweepConfig,
    export_similarity,
    resolve_measure,
    run_and_write,
    run_sweep,
    summarize_records,
)

MEASURE_CHOICES = [
    "random", "univariate", "mi", "mi_adjusted", "mi_masked",
    "node", "node_static", "subfunction_count",
]


def _load_config_file(path: str) -> dict[str, str]:
    values = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {ln}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _as_bool(text: str) -> bool:
    low = text.lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


class Option:
    """One merged option: CLI flag beats config file beats default."""

    def __init__(self, name, cast, default=None):
        self.name = name
        self.cast = cast
        self.default = default

    def resolve(self, args, file_cfg):
        cli_value = getattr(args, self.name.replace("-", "_"), None)
        if cli_value is not None:
            return cli_value
        if self.name in file_cfg:
            return self.cast(file_cfg[self.name])
        return self.default


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool_list(text: str) -> tuple[bool, ...]:
    return tuple(_as_bool(v) for v in text.split(",") if v)


COMMON_OPTIONS = [
    Option("measure", str, "node"),
    Option("adjusted", _as_bool, False),
    Option("height", int, 5),
    Option("ls", _as_bool, False),
    Option("operators", str, "base"),
    Option("budget", int, None),
    Option("population", int, None),
    Option("generations", int, None),
    Option("dataset", str, None),
    Option("target", str, None),
    Option("date-columns", _str_list, ()),
    Option("synth", str, None),
    Option("synth-rows", int, None),
    Option("synth-noise", float, 0.0),
    Option("seed", int, 1),
    Option("fold", int, 0),
    Option("repeat", int, 0),
    Option("division", str, "protected"),
    Option("binning", str, "equal_width"),
    Option("out", str, "runs"),
]


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--measure", choices=MEASURE_CHOICES)
    p.add_argument("--adjusted", action="store_const", const=True,
                   help="use the generation-0 bias adjustment (MI only)")
    p.add_argument("--height", type=int,
                   help="template height in edges (4 -> 31 nodes, 6 -> 127)")
    p.add_argument("--ls", action="store_const", const=True, help="enable linear scaling")
    p.add_argument("--no-ls", dest="ls", action="store_const", const=False)
    p.add_argument("--operators", choices=["base", "extended"])
    p.add_argument("--budget", type=int, help="evaluation budget (multistart mode)")
    p.add_argument("--population", type=int, help="fixed population size")
    p.add_argument("--generations", type=int, help="fixed generation count")
    p.add_argument("--dataset", help="CSV file with a header row")
    p.add_argument("--target", help="target column name or index")
    p.add_argument("--date-columns", type=_str_list,
                   help="comma-separated date columns mapped to day-of-year")
    p.add_argument("--synth", help="synthetic problem name")
    p.add_argument("--synth-rows", type=int)
    p.add_argument("--synth-noise", type=float)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--fold", type=int)
    p.add_argument("--repeat", type=int)
    p.add_argument("--division", choices=["protected", "analytic_quotient"])
    p.add_argument("--binning", choices=["equal_width", "equal_frequency"])
    p.add_argument("--out", help="output directory")


def _resolve_config(args) -> tuple[ExperimentConfig, dict]:
    file_cfg = _load_config_file(args.config) if args.config else {}
    opts = {o.name.replace("-", "_"): o.resolve(args, file_cfg) for o in COMMON_OPTIONS}
    target = opts["target"]
    if target is not None and isinstance(target, str) and target.lstrip("-").isdigit():
        target = int(target)
    measure = resolve_measure(opts["measure"], opts["adjusted"])
    config = ExperimentConfig(
        measure=measure,
        height=opts["height"],
        linear_scaling=opts["ls"],
        operators=opts["operators"],
        budget=opts["budget"],
        population=opts["population"],
        generations=opts["generations"],
        dataset=opts["dataset"],
        target=target,
        date_columns=tuple(opts["date_columns"]),
        synth=opts["synth"],
        synth_rows=opts["synth_rows"],
        synth_noise=opts["synth_noise"],
        seed=opts["seed"],
        fold=opts["fold"],
        repeat=opts["repeat"],
        division=opts["division"],
        binning=opts["binning"],
    ).validate()
    return config, opts


def _cmd_run(args) -> int:
    config, opts = _resolve_config(args)
    path = run_and_write(config, opts["out"], include_timing=args.timing)
    summary = json.loads(path.read_text(encoding="utf-8").splitlines()[-1])
    print(path)
    print(json.dumps({"final": summary["final"],
                      "evaluations": summary["evaluations"],
                      "best_expression": summary["best_expression"]}))
    return 0


def _cmd_sweep(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    base, opts = _resolve_config(args)
    measures = args.measures or (
        _str_list(file_cfg["measures"]) if "measures" in file_cfg else (base.measure,)
    )
    heights = args.heights or (
        _int_list(file_cfg["heights"]) if "heights" in file_cfg else (base.height,)
    )
    ls_values = args.ls_values or (
        _bool_list(file_cfg["ls_values"]) if "ls_values" in file_cfg
        else (base.linear_scaling,)
    )
    sweep = SweepConfig(
        base=base,
        measures=tuple(resolve_measure(m, False) for m in measures),
        heights=tuple(heights),
        linear_scaling=tuple(ls_values),
        folds=args.folds if args.folds is not None else int(file_cfg.get("folds", 5)),
        repeats=args.repeats if args.repeats is not None else int(file_cfg.get("repeats", 6)),
    )
    result = run_sweep(sweep, opts["out"], workers=args.workers)
    print(json.dumps(result))
    return 0 if result["failed"] == 0 else 1


def _cmd_export(args) -> int:
    config, opts = _resolve_config(args)
    result = export_similarity(config, opts["out"], runs=args.runs, workers=args.workers)
    print(json.dumps(result))
    return 0


def _cmd_stats(args) -> int:
    paths = []
    for pattern in args.records:
        matches = sorted(glob.glob(pattern))
        paths.extend(matches if matches else [pattern])
    if not paths:
        raise ConfigError("no record files given")
    result = summarize_records(paths, metric=args.metric, group_by=args.group_by)
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gomsr",
        description="Symbolic regression with gene-pool optimal mixing and "
                    "pluggable linkage measures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration and write its record")
    _add_common_flags(p_run)
    p_run.add_argument("--timing", action="store_true",
                       help="include wall-clock ms in the record (breaks byte "
                            "reproducibility across machines)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a measure/height/LS matrix over all splits")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--measures", type=_str_list, help="comma-separated measures")
    p_sweep.add_argument("--heights", type=_int_list, help="comma-separated heights")
    p_sweep.add_argument("--ls-values", type=_bool_list, help="e.g. 'on,off'")
    p_sweep.add_argument("--folds", type=int)
    p_sweep.add_argument("--repeats", type=int)
    p_sweep.add_argument("--workers", type=int)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_exp = sub.add_parser("export-similarity",
                           help="write per-generation similarity matrices as CSV")
    _add_common_flags(p_exp)
    p_exp.add_argument("--runs", type=int, default=30)
    p_exp.add_argument("--workers", type=int)
    p_exp.set_defaults(func=_cmd_export)

    p_stats = sub.add_parser("stats", help="aggregate final metrics from run records")
    p_stats.add_argument("records", nargs="+", help="record files or globs")
    p_stats.add_argument("--metric", default="train_r2")
    p_stats.add_argument("--group-by", default="measure")
    p_stats.set_defaults(func=_cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
