"""Uplift curves, AUUC and the repeated train/test protocol."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .boosting import BAGGING, BoostConfig, EmptyEnsembleError, balance_diagnostic, fit_ensemble
from .dataset import UpliftDataset, split_train_test
from .tree import fit_tree

DEFAULT_CHECKPOINTS = (1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 101)


class EvaluationError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class UpliftCurve:
    """Points ``(fraction targeted, net gain in percentage points)``."""

    fractions: np.ndarray
    gains: np.ndarray

    @property
    def overall_gain(self) -> float:
        return float(self.gains[-1])

    @property
    def auuc(self) -> float:
        return auuc(self)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "net_gain_pct"])
            for f, g in zip(self.fractions, self.gains):
                w.writerow([repr(float(f)), repr(float(g))])


def uplift_curve(scores_t, y_t, scores_c, y_c) -> UpliftCurve:
    """Treatment lift curve minus control lift curve.

    Cases are targeted in order of decreasing score and tied scores enter
    together.  Successes in each group are divided by that group's test size,
    so the last point is the overall uplift; the fraction axis counts the
    pooled population.
    """
    s_t = np.asarray(scores_t, dtype=np.float64)
    s_c = np.asarray(scores_c, dtype=np.float64)
    y_t = np.asarray(y_t)
    y_c = np.asarray(y_c)
    n_t, n_c = s_t.size, s_c.size
    if n_t == 0 or n_c == 0:
        raise EvaluationError("both groups must contain at least one scored case")
    if y_t.shape != s_t.shape or y_c.shape != s_c.shape:
        raise EvaluationError("scores and outcomes differ in length")

    levels, inv = np.unique(np.concatenate([s_t, s_c]), return_inverse=True)
    k = levels.size
    inv_t, inv_c = inv[:n_t], inv[n_t:]
    # per score level, highest level first
    cnt = np.bincount(inv, minlength=k)[::-1]
    succ_t = np.bincount(inv_t, weights=(y_t == 1), minlength=k)[::-1]
    succ_c = np.bincount(inv_c, weights=(y_c == 1), minlength=k)[::-1]
    fractions = np.concatenate([[0.0], np.cumsum(cnt) / (n_t + n_c)])
    gains = np.concatenate([[0.0], 100.0 * (np.cumsum(succ_t) / n_t - np.cumsum(succ_c) / n_c)])
    return UpliftCurve(fractions, gains)


def auuc(curve: UpliftCurve) -> float:
    """Trapezoidal area under the curve minus the area under its diagonal."""
    f, g = curve.fractions, curve.gains
    area = math.fsum((f[1:] - f[:-1]) * (g[:-1] + g[1:]) / 2.0)
    return area - 0.5 * float(g[-1])


def auuc_of_scores(scores_t, y_t, scores_c, y_c) -> float:
    return auuc(uplift_curve(scores_t, y_t, scores_c, y_c))


@dataclass
class Summary:
    values: list[float]

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def sd(self) -> float:
        return float(np.std(self.values, ddof=1)) if self.n > 1 else 0.0

    @property
    def se(self) -> float:
        return self.sd / math.sqrt(self.n)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "se": self.se, "n": self.n,
                "values": list(self.values)}


@dataclass
class AlgorithmResult:
    name: str
    variant: str
    auuc: Summary
    checkpoints: dict[int, Summary] = field(default_factory=dict)
    balance: list[float] = field(default_factory=list)
    empty_runs: int = 0

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "auuc": self.auuc.to_dict(),
             "checkpoints": {str(k): s.to_dict() for k, s in self.checkpoints.items()},
             "empty_runs": self.empty_runs}
        if self.balance:
            d["balance_diagnostic"] = {"max": max(self.balance), "mean": float(np.mean(self.balance)),
                                       "values": list(self.balance)}
        return d


@dataclass
class ExperimentReport:
    n_treatment: int
    n_control: int
    repetitions: int
    train_fraction: float
    master_seed: int
    results: dict[str, AlgorithmResult]
    last_curves: dict[str, UpliftCurve] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_treatment": self.n_treatment,
            "n_control": self.n_control,
            "repetitions": self.repetitions,
            "train_fraction": self.train_fraction,
            "master_seed": self.master_seed,
            "results": {k: r.to_dict() for k, r in self.results.items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    def summary_table(self) -> str:
        width = max(len(k) for k in self.results)
        lines = [f"{'algorithm':<{width}}  {'mean AUUC':>10}  {'se':>8}  {'balance':>8}  empty"]
        for name, r in self.results.items():
            bal = f"{max(r.balance):.4f}" if r.balance else "-"
            lines.append(f"{name:<{width}}  {r.auuc.mean:>10.4f}  {r.auuc.se:>8.4f}  {bal:>8}"
                         f"  {r.empty_runs}")
        return "\n".join(lines)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Independent 63-bit seed for ``(master_seed, *keys)``."""
    state = np.random.SeedSequence([master_seed, *keys]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _base_configs(algorithms: Sequence[BoostConfig]) -> list[BoostConfig]:
    seen, out = set(), []
    for c in algorithms:
        key = (c.max_depth, c.min_leaf_weight, c.penalty)
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out


def _curve_from_scores(e_votes_t, e_votes_c, weights, k, test):
    s_t = e_votes_t[:, :k] @ weights[:k]
    s_c = e_votes_c[:, :k] @ weights[:k]
    return uplift_curve(s_t, test.treatment.y, s_c, test.control.y)


def _one_repetition(args) -> dict:
    d, algorithms, names, r, train_fraction, master_seed, checkpoints = args
    try:
        train, test = split_train_test(d, train_fraction, derive_seed(master_seed, r))
        out: dict[str, dict] = {}
        for base in _base_configs(algorithms):
            tree = fit_tree(train, **base.tree_params())
            tag = f"base_d{base.max_depth}" + (f"_p{base.penalty:g}" if base.penalty != 1 else "")
            for mode, fn in (("01", tree.predict), ("score", tree.predict_score)):
                curve = uplift_curve(fn(test.treatment.X), test.treatment.y,
                                     fn(test.control.X), test.control.y)
                out[f"{tag}_{mode}"] = {"auuc": auuc(curve), "curve": curve, "variant": "base"}
        for k_alg, (name, cfg) in enumerate(zip(names, algorithms)):
            cfg = replace(cfg, seed=derive_seed(master_seed, r, k_alg + 1))
            try:
                ens = fit_ensemble(train, cfg)
            except EmptyEnsembleError as exc:
                # no member survived: the run carries no information and
                # scores every case alike
                flat = uplift_curve(np.zeros(test.n_treatment), test.treatment.y,
                                    np.zeros(test.n_control), test.control.y)
                out[name] = {"auuc": auuc(flat), "curve": flat, "variant": cfg.variant,
                             "checkpoints": {k: auuc(flat) for k in checkpoints
                                             if k <= cfg.n_iterations},
                             "balance": balance_diagnostic(exc.history), "empty": True}
                continue
            v_t, v_c = ens.member_votes(test.treatment.X), ens.member_votes(test.control.X)
            wts = ens.vote_weights()
            n = len(ens)
            full = _curve_from_scores(v_t, v_c, wts, n, test)
            entry = {"auuc": auuc(full), "curve": full, "variant": cfg.variant, "checkpoints": {}}
            for k in checkpoints:
                if k <= cfg.n_iterations:
                    entry["checkpoints"][k] = auuc(_curve_from_scores(v_t, v_c, wts, min(k, n), test))
            if cfg.variant != BAGGING:
                entry["balance"] = balance_diagnostic(ens.history)
            out[name] = entry
        return out
    except Exception as exc:
        raise ExperimentError(f"repetition {r}: {type(exc).__name__}: {exc}") from exc


def run_experiment(
    d: UpliftDataset,
    algorithms: Sequence[BoostConfig],
    repetitions: int = 256,
    train_fraction: float = 0.8,
    master_seed: int = 0,
    checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS,
    jobs: int = 1,
) -> ExperimentReport:
    """Repeated stratified train/test evaluation.

    Each repetition splits with a seed derived from ``(master_seed, r)`` and
    fits every algorithm with a seed derived from ``(master_seed, r, k)``.
    Besides each ensemble, an unweighted base tree per distinct tree
    configuration is scored in its 0/1 and its score form.  Ensemble-size
    checkpoints count members; runs with fewer members than a checkpoint
    report their full ensemble there.
    """
    if repetitions < 1:
        raise ExperimentError("repetitions must be at least 1")
    d.require_outcomes()
    names = [c.label for c in algorithms]
    if len(set(names)) != len(names):
        raise ExperimentError(f"algorithm names must be unique: {names}")
    checkpoints = sorted(set(checkpoints))
    tasks = [(d, list(algorithms), names, r, train_fraction, master_seed, checkpoints)
             for r in range(repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(_one_repetition, tasks))
    else:
        per_rep = [_one_repetition(t) for t in tasks]

    results: dict[str, AlgorithmResult] = {}
    for name in per_rep[0]:
        entries = [rep[name] for rep in per_rep]
        res = AlgorithmResult(name, entries[0]["variant"], Summary([e["auuc"] for e in entries]))
        for k in entries[0].get("checkpoints", {}):
            res.checkpoints[k] = Summary([e["checkpoints"][k] for e in entries])
        if "balance" in entries[0]:
            res.balance = [e["balance"] for e in entries]
        res.empty_runs = sum(bool(e.get("empty")) for e in entries)
        results[name] = res
    curves = {name: e["curve"] for name, e in per_rep[-1].items()}
    return ExperimentReport(d.n_treatment, d.n_control, repetitions, train_fraction,
                            master_seed, results, curves)
