"""Command-line front end: ``train``, ``evaluate``, ``synth`` and ``curve``.

Every command reads an optional JSON config whose fields may be overridden by
flags.  Exit status is 0 on success, 1 on a runtime failure and 2 on a
configuration error; failures print a single diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .boosting import VARIANTS, BoostConfig, BoostingEnsemble, BoostingError, UsageError, fit_ensemble
from .dataset import (
    DatasetError,
    SyntheticSpec,
    UpliftDataset,
    generate_synthetic,
    load_csv,
    survival_to_binary,
    write_csv,
)
from .evaluation import DEFAULT_CHECKPOINTS, EvaluationError, ExperimentError, run_experiment, uplift_curve

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or missing configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    data: Path | None = None
    synthetic: Path | None = None
    survival: bool = False
    threshold: float | None = None
    algorithms: list[BoostConfig] = field(default_factory=list)
    repetitions: int = 256
    train_fraction: float = 0.8
    seed: int | None = None
    out: Path = Path(".")
    jobs: int = 1
    checkpoints: tuple[int, ...] = DEFAULT_CHECKPOINTS


_ALGO_KEYS = {"variant", "iterations", "depth", "penalty", "min_leaf_weight", "name", "restart_rule"}
_TOP_KEYS = {"data", "synthetic", "survival", "threshold", "algorithms", "repetitions",
             "train_fraction", "seed", "out", "jobs", "checkpoints"}


def _int(value, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(name, f"must be at least {minimum}")
    return value


def _algorithm(entry, idx: int, depth=None, iterations=None) -> BoostConfig:
    where = f"algorithms[{idx}]"
    if isinstance(entry, str):
        entry = {"variant": entry}
    if not isinstance(entry, dict):
        raise ConfigError(where, "expected an object or a variant name")
    unknown = set(entry) - _ALGO_KEYS
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    if "variant" not in entry:
        raise ConfigError(f"{where}.variant", "missing")
    if entry["variant"] not in VARIANTS:
        raise ConfigError(f"{where}.variant", f"unknown variant {entry['variant']!r}")
    m = iterations if iterations is not None else entry.get("iterations", 50)
    dep = depth if depth is not None else entry.get("depth", 1)
    kw = {
        "variant": entry["variant"],
        "n_iterations": _int(m, f"{where}.iterations", 1),
        "max_depth": _int(dep, f"{where}.depth", 1),
        "name": entry.get("name"),
    }
    for key, target in (("penalty", "penalty"), ("min_leaf_weight", "min_leaf_weight")):
        if entry.get(key) is not None:
            if not isinstance(entry[key], (int, float)) or isinstance(entry[key], bool):
                raise ConfigError(f"{where}.{key}", "expected a number")
            kw[target] = float(entry[key])
    if "restart_rule" in entry:
        kw["restart_rule"] = entry["restart_rule"]
    try:
        return BoostConfig(**kw)
    except UsageError as exc:
        raise ConfigError(where, str(exc)) from None


def _read_json(path: Path, name: str) -> dict:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(name, f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(name, f"invalid JSON in {path}: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(name, "expected a JSON object")
    return doc


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge the JSON config with command-line overrides (flags win)."""
    doc = _read_json(Path(args.config), "config") if args.config else {}
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config field")
    for key in ("data", "synthetic", "seed", "repetitions", "jobs", "out", "threshold"):
        flag = getattr(args, key, None)
        if flag is not None:
            doc[key] = flag
    if getattr(args, "survival", False):
        doc["survival"] = True

    cfg = RunConfig()
    if doc.get("data") is not None and doc.get("synthetic") is not None:
        raise ConfigError("data", "give either data or synthetic, not both")
    if doc.get("data") is not None:
        cfg.data = Path(doc["data"])
        if not cfg.data.is_file():
            raise ConfigError("data", f"file not found: {cfg.data}")
    elif doc.get("synthetic") is not None:
        cfg.synthetic = Path(doc["synthetic"])
        if not cfg.synthetic.is_file():
            raise ConfigError("synthetic", f"file not found: {cfg.synthetic}")
    else:
        raise ConfigError("data", "no dataset given (use --data or --synthetic)")

    if doc.get("seed") is None:
        raise ConfigError("seed", "a master seed is required")
    cfg.seed = _int(doc["seed"], "seed", 0)
    cfg.survival = bool(doc.get("survival", False))
    if doc.get("threshold") is not None:
        if not cfg.survival:
            raise ConfigError("threshold", "only meaningful with survival data")
        cfg.threshold = float(doc["threshold"])
    cfg.repetitions = _int(doc.get("repetitions", 256), "repetitions", 1)
    cfg.jobs = _int(doc.get("jobs", 1), "jobs", 1)
    tf = doc.get("train_fraction", 0.8)
    if not isinstance(tf, (int, float)) or isinstance(tf, bool) or not 0 < tf < 1:
        raise ConfigError("train_fraction", "must be a number in (0, 1)")
    cfg.train_fraction = float(tf)
    if "checkpoints" in doc:
        cps = doc["checkpoints"]
        if not isinstance(cps, list) or not cps:
            raise ConfigError("checkpoints", "expected a non-empty list of integers")
        cfg.checkpoints = tuple(_int(k, "checkpoints", 1) for k in cps)
    cfg.out = Path(doc.get("out", "."))

    depth, iterations = getattr(args, "depth", None), getattr(args, "iterations", None)
    if getattr(args, "variant", None):
        entries = list(args.variant)
    else:
        entries = doc.get("algorithms", [])
        if not isinstance(entries, list):
            raise ConfigError("algorithms", "expected a list")
    if not entries:
        raise ConfigError("algorithms", "no algorithm given (use --variant)")
    cfg.algorithms = [_algorithm(e, i, depth, iterations) for i, e in enumerate(entries)]
    return cfg


def load_data(cfg: RunConfig) -> UpliftDataset:
    if cfg.data is not None:
        d = load_csv(cfg.data, survival=cfg.survival)
    else:
        try:
            spec = SyntheticSpec.from_dict(_read_json(cfg.synthetic, "synthetic"))
        except (DatasetError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("synthetic", str(exc)) from None
        d = generate_synthetic(spec)
    if d.is_survival:
        d = survival_to_binary(d, cfg.threshold)
    return d


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if len(cfg.algorithms) != 1:
        raise ConfigError("algorithms", f"train needs exactly one algorithm, got {len(cfg.algorithms)}")
    d = load_data(cfg)
    algo = cfg.algorithms[0]
    algo = replace(algo, seed=cfg.seed)
    ens = fit_ensemble(d, algo)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "ensemble.json"
    ens.save(path)
    print(f"{algo.label}: {len(ens)} members, {len(ens.history)} iterations -> {path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    d = load_data(cfg)
    report = run_experiment(d, cfg.algorithms, repetitions=cfg.repetitions,
                            train_fraction=cfg.train_fraction, master_seed=cfg.seed,
                            checkpoints=cfg.checkpoints, jobs=cfg.jobs)
    cfg.out.mkdir(parents=True, exist_ok=True)
    report.save(cfg.out / "report.json")
    for name, curve in report.last_curves.items():
        curve.to_csv(cfg.out / f"curve_{name}.csv")
    print(f"N_T={report.n_treatment} N_C={report.n_control} repetitions={report.repetitions}")
    print(report.summary_table())
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    doc = _read_json(Path(args.spec), "spec")
    if args.seed is not None:
        doc["seed"] = args.seed
    if doc.get("seed") is None:
        raise ConfigError("seed", "a seed is required in the spec or via --seed")
    try:
        spec = SyntheticSpec.from_dict(doc)
    except (DatasetError, ValueError) as exc:
        raise ConfigError("spec", str(exc)) from None
    if args.out is None:
        raise ConfigError("out", "an output CSV path is required")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(generate_synthetic(spec), out)
    print(f"wrote {spec.n_treatment + spec.n_control} records to {out}")
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    if not Path(args.ensemble).is_file():
        raise ConfigError("ensemble", f"file not found: {args.ensemble}")
    if args.data is None:
        raise ConfigError("data", "a test CSV is required")
    if not Path(args.data).is_file():
        raise ConfigError("data", f"file not found: {args.data}")
    if args.out is None:
        raise ConfigError("out", "an output CSV path is required")
    ens = BoostingEnsemble.load(args.ensemble)
    d = load_csv(args.data, survival=args.survival, schema=ens.schema or None)
    if d.is_survival:
        d = survival_to_binary(d, args.threshold)
    if d.n_features != len(ens.schema):
        raise ConfigError("data", f"expected {len(ens.schema)} features, found {d.n_features}")
    curve = uplift_curve(ens.score(d.treatment.X), d.treatment.y, ens.score(d.control.X), d.control.y)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out)
    print(f"AUUC {curve.auuc:.6f} -> {out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("arguments", message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uplift-boost", description="Boosted uplift trees.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--data", help="treatment/control CSV file")
        sp.add_argument("--synthetic", help="synthetic dataset spec (JSON)")
        sp.add_argument("--survival", action="store_true", help="outcome column is a survival time")
        sp.add_argument("--threshold", type=float, help="survival threshold (default: pooled median)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--variant", action="append", choices=VARIANTS,
                        help="algorithm variant, repeatable; replaces the config's list")
        sp.add_argument("--depth", type=int, help="tree depth for every algorithm")
        sp.add_argument("--iterations", type=int, help="ensemble size M for every algorithm")
        sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train", help="fit one ensemble on the full dataset")
    run_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="repeated train/test evaluation")
    run_flags(e)
    e.add_argument("--repetitions", type=int, help="number of splits (default 256)")
    e.add_argument("--jobs", type=int, help="worker processes")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("spec", help="synthetic spec (JSON)")
    s.add_argument("--seed", type=int, help="overrides the spec's seed")
    s.add_argument("--out", help="output CSV path")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("curve", help="uplift curve of a saved ensemble on a test CSV")
    c.add_argument("ensemble", help="ensemble JSON written by train")
    c.add_argument("--data", help="test CSV")
    c.add_argument("--survival", action="store_true")
    c.add_argument("--threshold", type=float)
    c.add_argument("--out", help="output CSV path")
    c.set_defaults(func=cmd_curve)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, BoostingError, EvaluationError, ExperimentError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
