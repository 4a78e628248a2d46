"""Weighted uplift decision trees grown with the E-divergence gain.

Every split is binary.  A numeric test sends ``x <= threshold`` to the left
child, a categorical test sends ``x == label`` to the left child.  Records
whose tested value is missing follow the child that received more training
weight (left on ties), both while growing and while predicting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .dataset import CATEGORICAL, Feature, UpliftDataset

# Gains closer than this (relative to the best one) count as ties; the
# deterministic tie-break order then decides.
GAIN_TIE_TOL = 1e-12
# Gains at or below this are treated as "no improvement".
GAIN_EPS = 1e-12
MIN_LEAF_FRACTION = 1e-6

PenaltyFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class TreeError(ValueError):
    pass


class UndefinedDistributionError(TreeError):
    pass


class SplitValidityError(TreeError):
    pass


class PredictionError(TreeError):
    pass


@dataclass(frozen=True)
class ClassDist:
    """Weighted outcome distribution ``(P(y=0), P(y=1))``."""

    p: tuple[float, float]
    total_weight: float

    @classmethod
    def from_weights(cls, w0: float, w1: float) -> "ClassDist":
        total = w0 + w1
        if total <= 0:
            return cls((0.0, 0.0), 0.0)
        return cls((w0 / total, w1 / total), total)


def e_divergence(P: ClassDist, Q: ClassDist) -> float:
    """Squared Euclidean distance between two outcome distributions."""
    if P.total_weight <= 0 or Q.total_weight <= 0:
        raise UndefinedDistributionError("distribution with zero total weight")
    return sum((p - q) ** 2 for p, q in zip(P.p, Q.p))


def _edist(t1, t, c1, c):
    """Binary E-divergence from weighted success/total sums (vectorised)."""
    d = t1 / t - c1 / c
    return 2.0 * d * d


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float | None = None
    label: str | None = None
    code: float | None = None
    missing_left: bool = True

    @property
    def is_categorical(self) -> bool:
        return self.label is not None

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        """Boolean routing mask for a column of feature values."""
        if self.is_categorical:
            left = x == self.code
        else:
            left = x <= self.threshold
        miss = np.isnan(x)
        if miss.any():
            left = np.where(miss, self.missing_left, left)
        return left

    def describe(self, schema: tuple[Feature, ...] | None = None) -> str:
        name = schema[self.feature].name if schema else f"x[{self.feature}]"
        if self.is_categorical:
            return f"{name} == {self.label!r}"
        return f"{name} <= {self.threshold!r}"


@dataclass(frozen=True)
class Leaf:
    uplift: float
    weight: float = 0.0

    @property
    def decision(self) -> int:
        return int(self.uplift > 0)


@dataclass(frozen=True)
class Node:
    split: Split
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Node, Leaf]


@dataclass(frozen=True)
class _NodeData:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    treat: np.ndarray


def _gains(
    lt1, lt, lc1, lc, rt1, rt, rc1, rc, parent_e, min_w, penalty
) -> np.ndarray:
    total = lt + lc + rt + rc
    valid = (lt > 0) & (lc > 0) & (rt > 0) & (rc > 0)
    valid &= (lt >= min_w) & (lc >= min_w) & (rt >= min_w) & (rc >= min_w)
    gain = np.full(lt.shape, -np.inf)
    if not valid.any():
        return gain
    v = valid
    e_left = _edist(lt1[v], lt[v], lc1[v], lc[v])
    e_right = _edist(rt1[v], rt[v], rc1[v], rc[v])
    g = ((lt[v] + lc[v]) * e_left + (rt[v] + rc[v]) * e_right) / total[v] - parent_e
    if callable(penalty):
        g = g / penalty(lt[v], rt[v], lc[v], rc[v])
    elif penalty != 1:
        g = g / penalty
    gain[v] = g
    return gain


def _group_sums(mask_w, treat, y, w):
    """(treatment successes, treatment total, control successes, control total)."""
    wt = np.where(treat & mask_w, w, 0.0)
    wc = np.where(~treat & mask_w, w, 0.0)
    return (wt * y).sum(), wt.sum(), (wc * y).sum(), wc.sum()


def _candidates_numeric(x, y, w, treat, parent_e, min_w, penalty):
    """All threshold candidates of one numeric feature, ascending."""
    miss = np.isnan(x)
    present = ~miss
    order = np.argsort(x[present], kind="stable")
    xs = x[present][order]
    if xs.size < 2:
        return None
    ys, ws, ts = y[present][order], w[present][order], treat[present][order]
    wt = np.where(ts, ws, 0.0)
    wc = np.where(ts, 0.0, ws)
    cum = np.cumsum(np.stack([wt * ys, wt, wc * ys, wc]), axis=1)
    boundary = np.flatnonzero(xs[:-1] < xs[1:])
    if boundary.size == 0:
        return None
    left = cum[:, boundary]
    right = cum[:, -1:] - left
    mt1, mt, mc1, mc = _group_sums(miss, treat, y, w)
    miss_sums = np.array([[mt1], [mt], [mc1], [mc]])
    missing_left = (left[1] + left[3]) >= (right[1] + right[3])
    if mt + mc > 0:
        left = left + np.where(missing_left, miss_sums, 0.0)
        right = right + np.where(missing_left, 0.0, miss_sums)
    gains = _gains(*left, *right, parent_e, min_w, penalty)
    lo, hi = xs[boundary], xs[boundary + 1]
    thresholds = lo + (hi - lo) / 2.0
    # the midpoint of two adjacent floats can round up onto the upper value
    thresholds = np.where(thresholds >= hi, lo, thresholds)
    return gains, thresholds, missing_left


def _candidates_categorical(x, y, w, treat, parent_e, min_w, penalty, categories):
    """One-vs-rest candidates of one categorical feature, in label order."""
    miss = np.isnan(x)
    codes = np.unique(x[~miss])
    if codes.size < 2:
        return None
    labels = [categories[int(c)] for c in codes]
    order = sorted(range(len(codes)), key=lambda k: labels[k])
    codes = codes[order]
    labels = [labels[k] for k in order]
    sums = np.array([_group_sums(x == c, treat, y, w) for c in codes]).T
    all_present = np.array(_group_sums(~miss, treat, y, w))[:, None]
    left = sums
    right = all_present - left
    mt1, mt, mc1, mc = _group_sums(miss, treat, y, w)
    miss_sums = np.array([[mt1], [mt], [mc1], [mc]])
    missing_left = (left[1] + left[3]) >= (right[1] + right[3])
    if mt + mc > 0:
        left = left + np.where(missing_left, miss_sums, 0.0)
        right = right + np.where(missing_left, 0.0, miss_sums)
    gains = _gains(*left, *right, parent_e, min_w, penalty)
    return gains, codes, labels, missing_left


def _node_stats(data: _NodeData):
    t = data.treat
    wt, wc = data.w[t], data.w[~t]
    return (wt * data.y[t]).sum(), wt.sum(), (wc * data.y[~t]).sum(), wc.sum()


def _best_split(data: _NodeData, schema, min_leaf_weight, penalty) -> tuple[Split, float] | None:
    t1, t, c1, c = _node_stats(data)
    if t <= 0 or c <= 0:
        return None
    parent_e = _edist(t1, t, c1, c)
    min_w = min_leaf_weight if min_leaf_weight is not None else MIN_LEAF_FRACTION * (t + c)
    best: tuple[Split, float] | None = None
    per_feature = []
    for j, feat in enumerate(schema):
        x = data.X[:, j]
        if feat.kind == CATEGORICAL:
            res = _candidates_categorical(
                x, data.y, data.w, data.treat, parent_e, min_w, penalty, feat.categories
            )
        else:
            res = _candidates_numeric(x, data.y, data.w, data.treat, parent_e, min_w, penalty)
        if res is None:
            continue
        gains = res[0]
        g_max = gains.max()
        if not np.isfinite(g_max):
            continue
        k = int(np.flatnonzero(gains >= g_max - GAIN_TIE_TOL * max(1.0, abs(g_max)))[0])
        if feat.kind == CATEGORICAL:
            _, codes, labels, miss_left = res
            split = Split(j, label=labels[k], code=float(codes[k]), missing_left=bool(miss_left[k]))
        else:
            _, thresholds, miss_left = res
            split = Split(j, threshold=float(thresholds[k]), missing_left=bool(miss_left[k]))
        per_feature.append((split, float(gains[k])))
    if not per_feature:
        return None
    g_max = max(g for _, g in per_feature)
    for split, g in per_feature:
        if g >= g_max - GAIN_TIE_TOL * max(1.0, abs(g_max)):
            best = (split, g)
            break
    if best is None or best[1] <= GAIN_EPS:
        return None
    return best


def _as_node_data(d: UpliftDataset, w_t, w_c) -> _NodeData:
    d.require_outcomes()
    w_t = np.ones(d.n_treatment) if w_t is None else np.asarray(w_t, dtype=np.float64)
    w_c = np.ones(d.n_control) if w_c is None else np.asarray(w_c, dtype=np.float64)
    if w_t.shape != (d.n_treatment,) or w_c.shape != (d.n_control,):
        raise TreeError("weight vectors do not match the groups")
    if (w_t < 0).any() or (w_c < 0).any():
        raise TreeError("weights must be non-negative")
    return _NodeData(
        X=np.vstack([d.treatment.X, d.control.X]),
        y=np.concatenate([d.treatment.y, d.control.y]).astype(np.float64),
        w=np.concatenate([w_t, w_c]),
        treat=np.concatenate([np.ones(d.n_treatment, bool), np.zeros(d.n_control, bool)]),
    )


def e_gain(
    split: Split,
    d: UpliftDataset,
    w_t=None,
    w_c=None,
    penalty: float | PenaltyFn = 1.0,
) -> float:
    """E-divergence gain of ``split`` on the weighted records of ``d``.

    The child probabilities ``P(a)`` are the shares of the pooled
    (treatment + control) weight, so that each group counts with its relative
    total weight.
    """
    data = _as_node_data(d, w_t, w_c)
    left = split.goes_left(data.X[:, split.feature])
    sums = []
    for mask in (left, ~left):
        sums.append(_group_sums(mask, data.treat, data.y, data.w))
    (lt1, lt, lc1, lc), (rt1, rt, rc1, rc) = sums
    if min(lt, lc, rt, rc) <= 0:
        raise SplitValidityError("both children need positive treatment and control weight")
    t1, t, c1, c = _node_stats(data)
    parent = _edist(t1, t, c1, c)
    g = ((lt + lc) * _edist(lt1, lt, lc1, lc) + (rt + rc) * _edist(rt1, rt, rc1, rc)) / (
        t + c
    ) - parent
    if callable(penalty):
        g = g / float(penalty(np.array(lt), np.array(rt), np.array(lc), np.array(rc)))
    else:
        g = g / penalty
    return float(g)


def best_split(
    d: UpliftDataset,
    w_t=None,
    w_c=None,
    *,
    min_leaf_weight: float | None = None,
    penalty: float | PenaltyFn = 1.0,
) -> Split | None:
    """Highest-gain valid split, or ``None`` when no split has positive gain.

    Ties go to the lowest feature index, then the smallest threshold or the
    lexicographically smallest label.
    """
    res = _best_split(_as_node_data(d, w_t, w_c), d.schema, min_leaf_weight, penalty)
    return None if res is None else res[0]


@dataclass(frozen=True)
class UpliftTree:
    root: TreeNode
    n_features: int
    max_depth: int

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise PredictionError(
                f"expected {self.n_features} features, got shape {np.shape(X)}"
            )
        return X, single

    def _route(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.uplift
                continue
            left = node.split.goes_left(X[idx, node.split.feature])
            stack.append((node.left, idx[left]))
            stack.append((node.right, idx[~left]))
        return out

    def predict_score(self, X):
        """Leaf uplift estimates ``P^T(y=1) - P^C(y=1)``."""
        X, single = self._check(X)
        s = self._route(X)
        return float(s[0]) if single else s

    def predict(self, X):
        """0/1 decisions; 1 iff the leaf uplift estimate is positive."""
        X, single = self._check(X)
        d = (self._route(X) > 0).astype(np.int8)
        return int(d[0]) if single else d

    def leaves(self) -> list[Leaf]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out

    def depth(self) -> int:
        def rec(node):
            return 0 if isinstance(node, Leaf) else 1 + max(rec(node.left), rec(node.right))

        return rec(self.root)

    def to_dict(self) -> dict:
        def enc(node):
            if isinstance(node, Leaf):
                return {"kind": "leaf", "uplift": node.uplift, "decision": node.decision,
                        "weight": node.weight}
            s = node.split
            d = {"kind": "split", "feature": s.feature, "missing_left": s.missing_left}
            if s.is_categorical:
                d.update(test="eq", label=s.label, code=s.code)
            else:
                d.update(test="le", threshold=s.threshold)
            d.update(left=enc(node.left), right=enc(node.right))
            return d

        return {"n_features": self.n_features, "max_depth": self.max_depth, "root": enc(self.root)}

    @classmethod
    def from_dict(cls, d: dict) -> "UpliftTree":
        def dec(n):
            if n["kind"] == "leaf":
                return Leaf(float(n["uplift"]), float(n.get("weight", 0.0)))
            if n["test"] == "eq":
                s = Split(n["feature"], label=n["label"], code=float(n["code"]),
                          missing_left=n["missing_left"])
            else:
                s = Split(n["feature"], threshold=float(n["threshold"]),
                          missing_left=n["missing_left"])
            return Node(s, dec(n["left"]), dec(n["right"]))

        return cls(dec(d["root"]), int(d["n_features"]), int(d["max_depth"]))


def fit_tree(
    d: UpliftDataset,
    w_t=None,
    w_c=None,
    *,
    max_depth: int = 1,
    min_leaf_weight: float | None = None,
    penalty: float | PenaltyFn = 1.0,
) -> UpliftTree:
    """Grow an unpruned uplift tree on weighted treatment/control records.

    ``min_leaf_weight`` bounds the treatment and the control weight of every
    child; by default it is a millionth of the weight of the node being split.
    Missing weights mean unit weights.
    """
    if max_depth < 1:
        raise TreeError("max_depth must be at least 1")
    data = _as_node_data(d, w_t, w_c)
    t_w, c_w = data.w[data.treat].sum(), data.w[~data.treat].sum()
    if not (t_w > 0 and c_w > 0):
        raise TreeError("both groups need positive total weight")

    def grow(data: _NodeData, depth: int) -> TreeNode:
        t1, t, c1, c = _node_stats(data)
        leaf = Leaf(float(t1 / t - c1 / c), float(t + c))
        if depth >= max_depth:
            return leaf
        found = _best_split(data, d.schema, min_leaf_weight, penalty)
        if found is None:
            return leaf
        split = found[0]
        left = split.goes_left(data.X[:, split.feature])
        children = []
        for mask in (left, ~left):
            children.append(grow(_NodeData(data.X[mask], data.y[mask], data.w[mask],
                                           data.treat[mask]), depth + 1))
        return Node(split, *children)

    return UpliftTree(grow(data, 0), d.n_features, max_depth)
