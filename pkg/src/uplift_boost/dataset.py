"""Treatment/control datasets: CSV ingestion, survival conversion, splitting
and synthetic generation.

Features of both groups live in one float64 matrix per group.  Categorical
features are stored as integer codes into ``Feature.categories`` (shared by
both groups), and a missing value of either kind is ``NaN``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

TREATMENT_LABEL = "T"
CONTROL_LABEL = "C"


class DatasetError(ValueError):
    """Base class for dataset problems."""


class SchemaError(DatasetError):
    """A required column is missing or the schema does not fit the data."""


class ParseError(DatasetError):
    """A cell could not be interpreted."""


class DataValidationError(DatasetError):
    """The data violates a structural rule (empty group, bad sizes, ...)."""


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")

    def encode(self, raw: str) -> float:
        if raw == "":
            return math.nan
        if self.kind == NUMERIC:
            try:
                return float(raw)
            except ValueError:
                raise ParseError(f"feature {self.name!r}: {raw!r} is not a number") from None
        try:
            return float(self.categories.index(raw))
        except ValueError:
            raise ParseError(f"feature {self.name!r}: unknown label {raw!r}") from None

    def decode(self, value: float) -> str:
        if math.isnan(value):
            return ""
        if self.kind == NUMERIC:
            return repr(float(value))
        return self.categories[int(value)]

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Feature":
        return cls(d["name"], d.get("kind", NUMERIC), tuple(d.get("categories", ())))


@dataclass(frozen=True, eq=False)
class Group:
    """Records of one experimental group.

    ``y`` is ``None`` only for survival data that has not been thresholded yet.
    """

    X: np.ndarray
    y: np.ndarray | None
    time: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataValidationError("feature matrix must be two-dimensional")
        object.__setattr__(self, "X", X)
        n = X.shape[0]
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (n,):
                raise DataValidationError("outcome vector does not match feature rows")
            if not np.isin(y, (0, 1)).all():
                raise DataValidationError("outcomes must be 0 or 1")
            object.__setattr__(self, "y", y.astype(np.int8))
        if self.time is not None:
            t = np.asarray(self.time, dtype=np.float64)
            if t.shape != (n,):
                raise DataValidationError("survival times do not match feature rows")
            if np.isnan(t).any() or (t < 0).any():
                raise DataValidationError("survival times must be non-negative numbers")
            object.__setattr__(self, "time", t)
        if self.y is None and self.time is None:
            raise DataValidationError("a group needs outcomes or survival times")
        X.flags.writeable = False

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx: np.ndarray) -> "Group":
        return Group(
            self.X[idx],
            None if self.y is None else self.y[idx],
            None if self.time is None else self.time[idx],
        )


@dataclass(frozen=True, eq=False)
class UpliftDataset:
    schema: tuple[Feature, ...]
    treatment: Group
    control: Group

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        d = len(self.schema)
        for name, g in (("treatment", self.treatment), ("control", self.control)):
            if g.X.shape[1] != d:
                raise SchemaError(f"{name} has {g.X.shape[1]} feature columns, schema has {d}")
            if len(g) == 0:
                raise DataValidationError(f"{name} group is empty")
        if (self.treatment.y is None) != (self.control.y is None):
            raise DataValidationError("groups disagree on outcome presence")

    @property
    def n_treatment(self) -> int:
        return len(self.treatment)

    @property
    def n_control(self) -> int:
        return len(self.control)

    @property
    def n_features(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    @property
    def is_survival(self) -> bool:
        return self.treatment.y is None

    def require_outcomes(self) -> None:
        if self.is_survival:
            raise DataValidationError(
                "dataset holds survival times; convert with survival_to_binary first"
            )

    def overall_uplift(self) -> float:
        self.require_outcomes()
        return float(self.treatment.y.mean() - self.control.y.mean())


def _is_number(raw: str) -> bool:
    try:
        float(raw)
    except ValueError:
        return False
    return True


def _infer_feature(name: str, values: Iterable[str]) -> Feature:
    present = [v for v in values if v != ""]
    if all(_is_number(v) for v in present):
        return Feature(name, NUMERIC)
    return Feature(name, CATEGORICAL, tuple(sorted(set(present))))


def load_csv(
    path: str | Path,
    *,
    survival: bool = False,
    schema: Sequence[Feature] | None = None,
    group_column: str = "group",
    outcome_column: str = "outcome",
    time_column: str = "time",
    treatment_label: str = TREATMENT_LABEL,
    control_label: str = CONTROL_LABEL,
) -> UpliftDataset:
    """Read a treatment/control CSV file.

    All columns other than the group and outcome (or survival time) columns
    are features.  Their kinds are inferred unless ``schema`` is given; with a
    schema, labels unseen in it are appended to the category lists so that
    existing codes stay stable.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    target = time_column if survival else outcome_column
    for col in (group_column, target):
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names")
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, got {len(r)}")

    g_idx = header.index(group_column)
    t_idx = header.index(target)
    skip = {group_column, outcome_column, time_column}
    feat_cols = [i for i, name in enumerate(header) if name not in skip]

    if schema is None:
        schema = [_infer_feature(header[i], (r[i] for r in rows)) for i in feat_cols]
    else:
        by_name = {header[i]: i for i in feat_cols}
        missing = [f.name for f in schema if f.name not in by_name]
        if missing:
            raise SchemaError(f"{path}: missing feature columns {missing}")
        feat_cols = [by_name[f.name] for f in schema]
        extended = []
        for f, i in zip(schema, feat_cols):
            if f.kind == CATEGORICAL:
                seen = sorted({r[i] for r in rows if r[i] != ""} - set(f.categories))
                f = Feature(f.name, CATEGORICAL, f.categories + tuple(seen))
            extended.append(f)
        schema = extended

    X = np.empty((len(rows), len(schema)))
    target_vals = np.empty(len(rows))
    is_t = np.empty(len(rows), dtype=bool)
    for k, r in enumerate(rows):
        lineno = k + 2
        label = r[g_idx].strip()
        if label == treatment_label:
            is_t[k] = True
        elif label == control_label:
            is_t[k] = False
        else:
            raise ParseError(f"{path}:{lineno}: group must be {treatment_label!r} or {control_label!r}, got {label!r}")
        raw = r[t_idx].strip()
        if survival:
            try:
                target_vals[k] = float(raw)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: survival time {raw!r} is not a number") from None
            if not target_vals[k] >= 0:
                raise ParseError(f"{path}:{lineno}: survival time must be non-negative")
        else:
            if raw not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: outcome must be 0 or 1, got {raw!r}")
            target_vals[k] = int(raw)
        try:
            X[k] = [f.encode(r[i]) for f, i in zip(schema, feat_cols)]
        except ParseError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None

    for mask, name in ((is_t, "treatment"), (~is_t, "control")):
        if not mask.any():
            raise DataValidationError(f"{path}: {name} group is empty")

    def group(mask):
        if survival:
            return Group(X[mask], None, target_vals[mask])
        return Group(X[mask], target_vals[mask].astype(np.int8))

    return UpliftDataset(tuple(schema), group(is_t), group(~is_t))


def write_csv(d: UpliftDataset, path: str | Path) -> None:
    """Write ``d`` in the format read by :func:`load_csv` (treatment rows first)."""
    target = "time" if d.is_survival else "outcome"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", target, *d.feature_names])
        for label, g in ((TREATMENT_LABEL, d.treatment), (CONTROL_LABEL, d.control)):
            vals = g.time if d.is_survival else g.y
            for k in range(len(g)):
                v = repr(float(vals[k])) if d.is_survival else str(int(vals[k]))
                w.writerow([label, v, *(f.decode(x) for f, x in zip(d.schema, g.X[k]))])


def lower_median(values: np.ndarray) -> float:
    s = np.sort(np.asarray(values, dtype=np.float64))
    return float(s[(len(s) - 1) // 2])


def survival_to_binary(d: UpliftDataset, threshold: float | None = None) -> UpliftDataset:
    """Mark a record successful iff its observed survival time is >= ``threshold``.

    Without a threshold the lower median of the survival times pooled over
    both groups is used.
    """
    if not d.is_survival:
        raise DataValidationError("dataset has no survival times")
    if threshold is None:
        threshold = lower_median(np.concatenate([d.treatment.time, d.control.time]))
    elif not threshold > 0:
        raise DataValidationError("threshold must be positive")

    def conv(g: Group) -> Group:
        return Group(g.X, (g.time >= threshold).astype(np.int8))

    return UpliftDataset(d.schema, conv(d.treatment), conv(d.control))


def subset(d: UpliftDataset, idx_t: np.ndarray, idx_c: np.ndarray) -> UpliftDataset:
    return UpliftDataset(d.schema, d.treatment.take(idx_t), d.control.take(idx_c))


def split_train_test(
    d: UpliftDataset, train_fraction: float, seed
) -> tuple[UpliftDataset, UpliftDataset]:
    """Split each group independently, without replacement.

    Each group contributes ``round(train_fraction * N)`` records to the
    training part (halves round up).
    """
    if not 0 < train_fraction < 1:
        raise DataValidationError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    parts = []
    for name, g in (("treatment", d.treatment), ("control", d.control)):
        n = len(g)
        n_train = int(math.floor(train_fraction * n + 0.5))
        if n_train == 0 or n_train == n:
            raise DataValidationError(
                f"{name} group of {n} records cannot be split with fraction {train_fraction}"
            )
        perm = rng.permutation(n)
        parts.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    (tr_t, te_t), (tr_c, te_c) = parts
    return subset(d, tr_t, tr_c), subset(d, te_t, te_c)


def bootstrap(d: UpliftDataset, rng: np.random.Generator) -> UpliftDataset:
    """Resample each group with replacement to its own size."""
    idx_t = rng.integers(0, d.n_treatment, d.n_treatment)
    idx_c = rng.integers(0, d.n_control, d.n_control)
    return subset(d, idx_t, idx_c)


@dataclass(frozen=True)
class UpliftRule:
    """Adds ``above`` to the uplift where ``x[feature] > threshold``, else ``below``."""

    feature: int
    threshold: float = 0.0
    above: float = 0.0
    below: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_treatment: int
    n_control: int
    n_features: int
    p0: float
    rules: tuple[UpliftRule, ...] = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.n_treatment < 1 or self.n_control < 1:
            raise DataValidationError("both groups need at least one record")
        if self.n_features < 1:
            raise DataValidationError("need at least one feature")
        if not 0 < self.p0 < 1:
            raise DataValidationError("p0 must lie in (0, 1)")
        for r in self.rules:
            if not 0 <= r.feature < self.n_features:
                raise DataValidationError(f"rule refers to feature {r.feature} out of range")

    def uplift(self, X: np.ndarray) -> np.ndarray:
        u = np.zeros(X.shape[0])
        for r in self.rules:
            u += np.where(X[:, r.feature] > r.threshold, r.above, r.below)
        return u

    def treatment_probability(self, X: np.ndarray) -> np.ndarray:
        return np.clip(self.p0 + self.uplift(X), 0.0, 1.0)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            rules = tuple(UpliftRule(**r) for r in d.get("rules", ()))
            return cls(
                n_treatment=int(d["n_treatment"]),
                n_control=int(d["n_control"]),
                n_features=int(d["n_features"]),
                p0=float(d["p0"]),
                rules=rules,
                seed=int(d["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise DataValidationError(f"invalid synthetic spec: {exc}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "n_treatment": self.n_treatment,
            "n_control": self.n_control,
            "n_features": self.n_features,
            "p0": self.p0,
            "rules": [vars(r) for r in self.rules],
            "seed": self.seed,
        }


def generate_synthetic(spec: SyntheticSpec) -> UpliftDataset:
    """Draw a dataset with known uplift.

    Features are i.i.d. standard normal.  Control successes are Bernoulli(p0),
    treatment successes Bernoulli(clip(p0 + u(x), 0, 1)).
    """
    rng = np.random.default_rng(spec.seed)
    X_t = rng.standard_normal((spec.n_treatment, spec.n_features))
    X_c = rng.standard_normal((spec.n_control, spec.n_features))
    y_t = rng.random(spec.n_treatment) < spec.treatment_probability(X_t)
    y_c = rng.random(spec.n_control) < spec.p0
    schema = tuple(Feature(f"x{j + 1}") for j in range(spec.n_features))
    return UpliftDataset(schema, Group(X_t, y_t.astype(np.int8)), Group(X_c, y_c.astype(np.int8)))
