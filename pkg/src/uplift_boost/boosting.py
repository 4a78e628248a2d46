"""Uplift boosting over E-divergence trees.

The general loop fits a tree on weighted treatment and control records,
measures its uplift errors, derives weight-rescaling factors ``beta_t`` and
``beta_c`` from a coefficient scheme, and multiplies the weights of records
the member got right (treatment: ``h(x) == y``; control: ``h(x) == 1 - y``).
Three schemes are provided:

* ``adaboost``: ``beta_t = beta_c = eps / (1 - eps)`` with the pooled error
  ``eps``; equivalent to discrete AdaBoost on control-flipped labels.
* ``balanced``: keeps the treatment and control weight totals equal and
  picks ``beta_c`` to minimise the per-iteration training error bound.
* ``balanced_forgetting``: keeps the totals equal and makes the pooled error
  of the newest member exactly 1/2 under the next weights.

A bagging baseline with the same ensemble representation is included.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .dataset import Feature, UpliftDataset, bootstrap
from .tree import PenaltyFn, UpliftTree, fit_tree

ADABOOST = "adaboost"
BALANCED = "balanced"
BALANCED_FORGETTING = "balanced_forgetting"
BAGGING = "bagging"
VARIANTS = (ADABOOST, BALANCED, BALANCED_FORGETTING, BAGGING)
BALANCED_VARIANTS = (BALANCED, BALANCED_FORGETTING)

EPS_TOL = 1e-12
BALANCE_TOL = 1e-9
# every bagging member gets log(1/beta) == 1, so scores count votes
BAGGING_BETA = math.exp(-1.0)

# "coefficient": restart when the scheme's member weight leaves (0, 1).
# "group": additionally restart when either group error leaves (0, 1/2).
RESTART_RULES = ("coefficient", "group")


class BoostingError(RuntimeError):
    pass


class EmptyEnsembleError(BoostingError):
    """Every iteration restarted, so no member was kept."""

    def __init__(self, message: str, history: list | None = None):
        super().__init__(message)
        self.history = history or []


class BalanceError(BoostingError):
    """A balanced coefficient scheme was called on unbalanced weights."""


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class BoostConfig:
    variant: str = ADABOOST
    n_iterations: int = 50
    max_depth: int = 1
    min_leaf_weight: float | None = None
    penalty: float = 1.0
    seed: int = 0
    tolerance: float = EPS_TOL
    restart_rule: str = "coefficient"
    name: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.n_iterations < 1:
            raise UsageError("n_iterations must be at least 1")
        if self.max_depth < 1:
            raise UsageError("max_depth must be at least 1")
        if not self.penalty > 0:
            raise UsageError("penalty must be positive")
        if self.restart_rule not in RESTART_RULES:
            raise UsageError(f"restart_rule must be one of {RESTART_RULES}")

    @property
    def label(self) -> str:
        return self.name or f"{self.variant}_d{self.max_depth}_m{self.n_iterations}"

    def tree_params(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf_weight": self.min_leaf_weight,
                "penalty": self.penalty}


@dataclass(frozen=True, eq=False)
class WeightState:
    w_t: np.ndarray
    w_c: np.ndarray

    @property
    def total_t(self) -> float:
        return float(self.w_t.sum())

    @property
    def total_c(self) -> float:
        return float(self.w_c.sum())

    @property
    def p_t(self) -> float:
        t, c = self.total_t, self.total_c
        return t / (t + c)

    @property
    def p_c(self) -> float:
        t, c = self.total_t, self.total_c
        return c / (t + c)

    def normalized(self) -> "WeightState":
        z = self.total_t + self.total_c
        return WeightState(self.w_t / z, self.w_c / z)


class Errors(NamedTuple):
    eps_t: float
    eps_c: float
    eps: float


class Coefficients(NamedTuple):
    beta_t: float
    beta_c: float
    beta: float
    restart: bool = False


@dataclass(frozen=True)
class IterationRecord:
    eps_t: float
    eps_c: float
    eps: float
    beta_t: float | None
    beta_c: float | None
    beta: float | None
    restarted: bool
    p_t: float
    p_c: float
    # the member had zero uplift error in both groups and ended the run
    perfect: bool = False

    def bound_factor(self) -> float:
        return (
            1.0
            - self.p_t * (1.0 - self.eps_t) * (1.0 - self.beta_t)
            - self.p_c * (1.0 - self.eps_c) * (1.0 - self.beta_c)
        ) / math.sqrt(self.beta)


def init_weights(variant: str, n_t: int, n_c: int) -> WeightState:
    """Unit weights for ``adaboost``; ``1/N`` per group for the balanced schemes."""
    if n_t < 1 or n_c < 1:
        raise UsageError("both groups need at least one record")
    if variant in BALANCED_VARIANTS:
        return WeightState(np.full(n_t, 1.0 / n_t), np.full(n_c, 1.0 / n_c))
    return WeightState(np.ones(n_t), np.ones(n_c))


def uplift_mistakes(pred_t, y_t, pred_c, y_c) -> tuple[np.ndarray, np.ndarray]:
    """Per-record uplift error indicators for treatment and control."""
    return np.asarray(pred_t) != np.asarray(y_t), np.asarray(pred_c) == np.asarray(y_c)


def errors_from_mistakes(wrong_t, wrong_c, state: WeightState) -> Errors:
    eps_t = float(state.w_t[wrong_t].sum() / state.total_t)
    eps_c = float(state.w_c[wrong_c].sum() / state.total_c)
    return Errors(eps_t, eps_c, state.p_t * eps_t + state.p_c * eps_c)


def compute_errors(h, state: WeightState, data: UpliftDataset) -> Errors:
    """Weighted uplift errors of model ``h`` (anything with ``predict``)."""
    wrong_t, wrong_c = uplift_mistakes(
        h.predict(data.treatment.X), data.treatment.y, h.predict(data.control.X), data.control.y
    )
    return errors_from_mistakes(wrong_t, wrong_c, state)


def _inside(eps: float, lo: float, hi: float, tol: float) -> bool:
    return lo + tol < eps < hi - tol


def coefficients_adaboost(eps_t, eps_c, p_t, p_c, tol=EPS_TOL) -> Coefficients:
    eps = p_t * eps_t + p_c * eps_c
    beta = eps / (1.0 - eps) if eps < 1.0 else math.inf
    return Coefficients(beta, beta, beta, restart=not _inside(eps, 0.0, 0.5, tol))


def _check_balance(p_t: float) -> None:
    if abs(p_t - 0.5) > BALANCE_TOL:
        raise BalanceError(f"treatment weight share is {p_t!r}, expected 1/2")


def balanced_beta_c(eps_t: float, eps_c: float, tol: float = EPS_TOL) -> float:
    """Control rescaling factor minimising the bound under the balance constraint.

    Equal errors follow the same formula as ``eps_c < eps_t`` (both branches
    agree there).  Errors on opposite sides of 1/2, or at 1/2, give 1.
    """
    lo = eps_t < 0.5 - tol and eps_c < 0.5 - tol
    hi = eps_t > 0.5 + tol and eps_c > 0.5 + tol
    if (lo and eps_c <= eps_t) or (hi and eps_t <= eps_c):
        return (2.0 * eps_t - eps_c) / (1.0 - eps_c)
    if lo or hi:
        return eps_c / (1.0 - eps_c)
    return 1.0


def balanced_bound_factor(eps_t: float, eps_c: float, tol: float = EPS_TOL) -> float:
    """Minimum of the per-iteration bound under balance: the worse group's AdaBoost rate."""
    lo = eps_t < 0.5 - tol and eps_c < 0.5 - tol
    hi = eps_t > 0.5 + tol and eps_c > 0.5 + tol
    if (lo and eps_c <= eps_t) or (hi and eps_t <= eps_c):
        return 2.0 * math.sqrt(eps_t * (1.0 - eps_t))
    if lo or hi:
        return 2.0 * math.sqrt(eps_c * (1.0 - eps_c))
    return 1.0


def balance_partner(beta_c: float, eps_t: float, eps_c: float) -> float:
    """``beta_t`` that keeps treatment and control totals equal after the update."""
    a = (1.0 - eps_c) / (1.0 - eps_t)
    b = (eps_c - eps_t) / (1.0 - eps_t)
    return a * beta_c + b


def coefficients_balanced(eps_t, eps_c, p_t=0.5, tol=EPS_TOL) -> Coefficients:
    _check_balance(p_t)
    if not (_inside(eps_t, 0.0, 1.0, tol) and _inside(eps_c, 0.0, 1.0, tol)):
        return Coefficients(1.0, 1.0, 1.0, restart=True)
    beta_c = balanced_beta_c(eps_t, eps_c, tol)
    beta_t = balance_partner(beta_c, eps_t, eps_c)
    beta = min(beta_t, beta_c)
    unit = abs(beta_t - 1.0) <= tol and abs(beta_c - 1.0) <= tol
    return Coefficients(beta_t, beta_c, beta, restart=unit)


def coefficients_balanced_forgetting(eps_t, eps_c, p_t=0.5, tol=EPS_TOL) -> Coefficients:
    _check_balance(p_t)
    if not (_inside(eps_t, 0.0, 1.0, tol) and _inside(eps_c, 0.0, 1.0, tol)):
        return Coefficients(1.0, 1.0, 1.0, restart=True)
    beta_t = eps_c / (1.0 - eps_t)
    beta_c = eps_t / (1.0 - eps_c)
    beta = min(beta_t, beta_c)
    unit = abs(beta_t - 1.0) <= tol and abs(beta_c - 1.0) <= tol
    return Coefficients(beta_t, beta_c, beta, restart=unit)


def forgetting_bound_factor(eps_t: float, eps_c: float) -> float:
    """Per-iteration bound factor of the balanced forgetting scheme (``p_t = p_c = 1/2``)."""
    c = coefficients_balanced_forgetting(eps_t, eps_c, tol=0.0)
    return IterationRecord(eps_t, eps_c, 0.5 * (eps_t + eps_c), c.beta_t, c.beta_c, c.beta,
                           False, 0.5, 0.5).bound_factor()


def coefficients(variant: str, errors: Errors, state: WeightState, tol=EPS_TOL) -> Coefficients:
    if variant == ADABOOST:
        return coefficients_adaboost(errors.eps_t, errors.eps_c, state.p_t, state.p_c, tol)
    if variant == BALANCED:
        return coefficients_balanced(errors.eps_t, errors.eps_c, state.p_t, tol)
    if variant == BALANCED_FORGETTING:
        return coefficients_balanced_forgetting(errors.eps_t, errors.eps_c, state.p_t, tol)
    raise UsageError(f"variant {variant!r} has no boosting coefficients")


def needs_restart(errors: Errors, coef: Coefficients, tol=EPS_TOL, rule="coefficient") -> bool:
    """Whether the iteration must discard its member and draw fresh weights.

    Under the ``coefficient`` rule a member is kept iff its weight ``beta``
    lies in (0, 1), so that it casts a positive vote.  For ``adaboost`` and
    ``balanced_forgetting`` this means a pooled error in (0, 1/2); for
    ``balanced`` it means both group errors below 1/2.
    """
    if coef.restart or not _inside(coef.beta, 0.0, 1.0, tol):
        return True
    if rule == "group":
        return not (_inside(errors.eps_t, 0.0, 0.5, tol) and _inside(errors.eps_c, 0.0, 0.5, tol))
    return False


def is_perfect(errors: Errors, tol=EPS_TOL) -> bool:
    return errors.eps_t <= tol and errors.eps_c <= tol


def update_weights(state: WeightState, wrong_t, wrong_c, beta_t, beta_c) -> WeightState:
    """Shrink the weights of correctly handled records, then renormalise to total 1."""
    w_t = np.where(wrong_t, state.w_t, state.w_t * beta_t)
    w_c = np.where(wrong_c, state.w_c, state.w_c * beta_c)
    return WeightState(w_t, w_c).normalized()


def restart_weights(n_t: int, n_c: int, rng: np.random.Generator, balanced=False) -> WeightState:
    """Fresh Exponential(1) weights, treatment records drawn first.

    With ``balanced`` each group is rescaled to total 1/2, otherwise the
    pooled total is 1.
    """
    w = rng.exponential(1.0, n_t + n_c)
    w_t, w_c = w[:n_t], w[n_t:]
    if balanced:
        return WeightState(0.5 * w_t / w_t.sum(), 0.5 * w_c / w_c.sum())
    return WeightState(w_t, w_c).normalized()


@dataclass(frozen=True)
class IterationTrace:
    """Snapshot handed to ``fit_boosting`` callbacks after every iteration."""

    m: int
    record: IterationRecord
    state: WeightState
    next_state: WeightState
    wrong_t: np.ndarray
    wrong_c: np.ndarray
    tree: UpliftTree


@dataclass(eq=False)
class BoostingEnsemble:
    members: list[tuple[UpliftTree, float]]
    variant: str
    history: list[IterationRecord] = field(default_factory=list)
    schema: tuple[Feature, ...] = ()

    def __len__(self) -> int:
        return len(self.members)

    def truncated(self, k: int) -> "BoostingEnsemble":
        return BoostingEnsemble(self.members[:k], self.variant, self.history, self.schema)

    def vote_weights(self) -> np.ndarray:
        return np.array([math.log(1.0 / b) for _, b in self.members])

    def member_votes(self, X) -> np.ndarray:
        """Matrix of member decisions, one column per member."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([t.predict(X) for t, _ in self.members])

    def score(self, X):
        """``sum_m log(1/beta_m) h_m(x)``."""
        if not self.members:
            raise UsageError("ensemble has no members")
        single = np.ndim(X) == 1
        s = self.member_votes(X) @ self.vote_weights()
        return float(s[0]) if single else s

    def decide(self, X):
        if not self.members:
            raise UsageError("ensemble has no members")
        single = np.ndim(X) == 1
        s = np.atleast_1d(self.score(X))
        d = (s >= 0.5 * self.vote_weights().sum()).astype(np.int8)
        return int(d[0]) if single else d

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "schema": [f.to_dict() for f in self.schema],
            "members": [{"beta": b, "tree": t.to_dict()} for t, b in self.members],
            "history": [asdict(r) for r in self.history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostingEnsemble":
        return cls(
            members=[(UpliftTree.from_dict(m["tree"]), float(m["beta"])) for m in d["members"]],
            variant=d["variant"],
            history=[IterationRecord(**r) for r in d.get("history", ())],
            schema=tuple(Feature.from_dict(f) for f in d.get("schema", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BoostingEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def ensemble_score(e: BoostingEnsemble, X):
    return e.score(X)


def ensemble_decide(e: BoostingEnsemble, X):
    return e.decide(X)


def fit_boosting(
    train: UpliftDataset,
    config: BoostConfig,
    callback: Callable[[IterationTrace], None] | None = None,
) -> BoostingEnsemble:
    """Run ``config.n_iterations`` passes of the general uplift boosting loop.

    An iteration that needs a restart (see :func:`needs_restart`) draws
    fresh random weights and contributes no member; it still counts as one
    of the passes.  A member with zero
    uplift error in both groups is kept (its error is floored at the
    tolerance) and ends the run, since further passes would only refit it.
    """
    if config.variant == BAGGING:
        return fit_bagging(train, config)
    train.require_outcomes()
    tol = config.tolerance
    rng = np.random.default_rng(config.seed)
    y_t, y_c = train.treatment.y, train.control.y
    state = init_weights(config.variant, train.n_treatment, train.n_control)
    members: list[tuple[UpliftTree, float]] = []
    history: list[IterationRecord] = []
    balanced = config.variant in BALANCED_VARIANTS

    for m in range(config.n_iterations):
        state = state.normalized()
        tree = fit_tree(train, state.w_t, state.w_c, **config.tree_params())
        wrong_t, wrong_c = uplift_mistakes(
            tree.predict(train.treatment.X), y_t, tree.predict(train.control.X), y_c
        )
        errs = errors_from_mistakes(wrong_t, wrong_c, state)
        if is_perfect(errs, tol):
            beta = tol / (1.0 - tol)
            rec = IterationRecord(errs.eps_t, errs.eps_c, errs.eps, beta, beta, beta,
                                  False, state.p_t, state.p_c, perfect=True)
            history.append(rec)
            members.append((tree, beta))
            if callback:
                callback(IterationTrace(m, rec, state, state, wrong_t, wrong_c, tree))
            break
        coef = coefficients(config.variant, errs, state, tol)
        restart = needs_restart(errs, coef, tol, config.restart_rule)
        rec = IterationRecord(
            errs.eps_t, errs.eps_c, errs.eps,
            _finite(coef.beta_t), _finite(coef.beta_c), _finite(coef.beta),
            restart, state.p_t, state.p_c,
        )
        history.append(rec)
        if restart:
            next_state = restart_weights(train.n_treatment, train.n_control, rng, balanced)
        else:
            next_state = update_weights(state, wrong_t, wrong_c, coef.beta_t, coef.beta_c)
            members.append((tree, coef.beta))
        if callback:
            callback(IterationTrace(m, rec, state, next_state, wrong_t, wrong_c, tree))
        state = next_state

    if not members:
        raise EmptyEnsembleError(
            f"all {config.n_iterations} iterations restarted; the ensemble is empty", history
        )
    return BoostingEnsemble(members, config.variant, history, train.schema)


def _finite(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def adaboost_cvt_oracle(train: UpliftDataset, config: BoostConfig) -> BoostingEnsemble:
    """Discrete AdaBoost on the pooled data with control labels flipped.

    Written independently of :func:`fit_boosting` as a cross-check of the
    ``adaboost`` variant: one weight vector, one label vector and the
    textbook error and update.  Group membership is used only to hand the
    weights to the uplift tree, to report per-group errors, and for the
    optional per-group restart rule.
    """
    train.require_outcomes()
    tol = config.tolerance
    rng = np.random.default_rng(config.seed)
    n_t = train.n_treatment
    X = np.vstack([train.treatment.X, train.control.X])
    z = np.concatenate([train.treatment.y, 1 - train.control.y])
    is_t = np.arange(len(z)) < n_t
    w = np.ones(len(z))
    members: list[tuple[UpliftTree, float]] = []
    history: list[IterationRecord] = []

    for _ in range(config.n_iterations):
        w = w / w.sum()
        tree = fit_tree(train, w[:n_t], w[n_t:], **config.tree_params())
        miss = tree.predict(X) != z
        eps = w[miss].sum() / w.sum()
        eps_t = w[miss & is_t].sum() / w[is_t].sum()
        eps_c = w[miss & ~is_t].sum() / w[~is_t].sum()
        p_t = w[is_t].sum() / w.sum()
        if eps <= tol:
            beta = tol / (1.0 - tol)
            history.append(IterationRecord(eps_t, eps_c, eps, beta, beta, beta, False,
                                           p_t, 1 - p_t, perfect=True))
            members.append((tree, beta))
            break
        beta = eps / (1.0 - eps)
        restart = not tol < eps < 0.5 - tol
        if config.restart_rule == "group":
            restart |= not (tol < eps_t < 0.5 - tol and tol < eps_c < 0.5 - tol)
        history.append(IterationRecord(eps_t, eps_c, eps, beta, beta, beta, restart,
                                       p_t, 1 - p_t))
        if restart:
            w = rng.exponential(1.0, len(z))
            continue
        w = np.where(miss, w, w * beta)
        members.append((tree, beta))

    if not members:
        raise EmptyEnsembleError("all iterations restarted; the ensemble is empty", history)
    return BoostingEnsemble(members, ADABOOST, history, train.schema)


def fit_bagging(train: UpliftDataset, config: BoostConfig) -> BoostingEnsemble:
    """Trees fit on independent per-group bootstrap resamples, equal votes."""
    train.require_outcomes()
    rng = np.random.default_rng(config.seed)
    members = []
    for _ in range(config.n_iterations):
        sample = bootstrap(train, rng)
        members.append((fit_tree(sample, **config.tree_params()), BAGGING_BETA))
    return BoostingEnsemble(members, BAGGING, [], train.schema)


def fit_ensemble(train: UpliftDataset, config: BoostConfig, callback=None) -> BoostingEnsemble:
    if config.variant == BAGGING:
        return fit_bagging(train, config)
    return fit_boosting(train, config, callback)


def retained(history: list[IterationRecord]) -> list[IterationRecord]:
    return [r for r in history if not r.restarted]


def bound_factors(history: list[IterationRecord]) -> list[float]:
    return [r.bound_factor() for r in retained(history)]


def error_bound(history: list[IterationRecord]) -> float:
    """Running product of per-iteration bound factors over retained iterations."""
    return math.prod(bound_factors(history))


def balance_diagnostic(history: list[IterationRecord]) -> float:
    """Largest ratio between treatment and control weight shares over all iterations."""
    if not history:
        raise UsageError("empty history")
    return max(max(r.p_t / r.p_c, r.p_c / r.p_t) for r in history)


def training_error(e: BoostingEnsemble, train: UpliftDataset, init: WeightState) -> Errors:
    """Uplift error of the ensemble decision under the initial weights."""
    wrong_t, wrong_c = uplift_mistakes(
        e.decide(train.treatment.X), train.treatment.y, e.decide(train.control.X), train.control.y
    )
    return errors_from_mistakes(wrong_t, wrong_c, init)


def with_seed(config: BoostConfig, seed: int) -> BoostConfig:
    return replace(config, seed=seed)
