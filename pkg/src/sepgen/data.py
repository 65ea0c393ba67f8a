"""Typed tabular model for stacked experiment/population samples.

The central type is :class:`StackedDataset`: experiment rows (sampling
indicator ``s == 1``) carry treatment, outcome and optional cluster/strata
labels; population rows (``s == 0``) carry only the covariates declared
measurable in the population. Covariate typing lives in
:class:`VariableSpec`; categorical variables are stored as integer codes
``0 .. level_count - 1`` and are dummy-expanded only inside fitting code,
never in storage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DataError, DegenerateVariableError, SchemaError

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class VariableSpec:
    """Declaration of one covariate: name, type, and population availability."""

    name: str
    kind: str = CONTINUOUS
    level_count: int = 1
    measured_in_population: bool = True

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise DataError(f"unknown variable kind {self.kind!r} for {self.name!r}")
        if self.kind == CONTINUOUS and self.level_count != 1:
            raise DataError(f"continuous variable {self.name!r} must have level_count 1")
        if self.kind == CATEGORICAL and self.level_count < 2:
            raise DataError(f"categorical variable {self.name!r} needs at least 2 levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of the experiment CSV (population columns are derived)."""

    variables: tuple[VariableSpec, ...]
    outcome: str
    treatment: str
    cluster: str | None = None
    strata: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        reserved = {self.outcome, self.treatment} | ({self.cluster} if self.cluster else set()) | (
            {self.strata} if self.strata else set()
        )
        if len(set(names)) != len(names):
            raise SchemaError("covariate names must be unique")
        clash = sorted(set(names) & reserved)
        if clash:
            raise SchemaError(f"covariate names clash with outcome/treatment/cluster columns: {clash}")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)


@dataclass(frozen=True)
class StackedDataset:
    """Stacked experiment and population rows with observability bookkeeping.

    Arrays are row-aligned: covariates ``x`` has one row per unit, ``s`` is 1
    for experiment rows and 0 for population rows, ``t``/``y`` are NaN on
    population rows. Instances are treated as immutable; share freely across
    concurrent readers.
    """

    specs: tuple[VariableSpec, ...]
    x: np.ndarray
    s: np.ndarray
    t: np.ndarray
    y: np.ndarray
    cluster: np.ndarray | None = None
    strata: np.ndarray | None = None
    population_size_n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        x = np.asarray(self.x, dtype=np.float64)
        s = np.asarray(self.s, dtype=np.int8)
        t = np.asarray(self.t, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        if x.ndim != 2 or x.shape[1] != len(self.specs):
            raise DataError("covariate matrix shape does not match the variable specs")
        n_rows = x.shape[0]
        for arr, label in ((s, "s"), (t, "t"), (y, "y")):
            if arr.shape != (n_rows,):
                raise DataError(f"column {label!r} must have one entry per row")
        if not np.isin(s, (0, 1)).all():
            raise DataError("sampling indicator must be 0 or 1")
        exp = s == 1
        pop = ~exp
        if exp.sum() == 0 or pop.sum() == 0:
            raise DataError("need at least one experiment row and one population row")
        if not np.isin(t[exp], (0.0, 1.0)).all():
            raise DataError("treatment must be 0/1 and present on every experiment row")
        if not np.isfinite(y[exp]).all():
            raise DataError("outcome must be present on every experiment row")
        if np.isfinite(t[pop]).any() or np.isfinite(y[pop]).any():
            raise DataError("treatment/outcome must be absent on population rows")
        for j, spec in enumerate(self.specs):
            col = x[:, j]
            if not np.isfinite(col[exp]).all():
                raise DataError(f"covariate {spec.name!r} has missing values on experiment rows")
            if spec.measured_in_population:
                if not np.isfinite(col[pop]).all():
                    raise DataError(
                        f"covariate {spec.name!r} is declared measured in the population "
                        "but has missing population values"
                    )
            else:
                if np.isfinite(col[pop]).any():
                    raise DataError(
                        f"covariate {spec.name!r} is declared unmeasured in the population "
                        "but has population values"
                    )
            if spec.is_categorical:
                vals = col[np.isfinite(col)]
                if not (vals == np.round(vals)).all():
                    raise DataError(f"categorical covariate {spec.name!r} has non-integer codes")
                if vals.size and (vals.min() < 0 or vals.max() > spec.level_count - 1):
                    raise DataError(
                        f"categorical covariate {spec.name!r} has codes outside "
                        f"0..{spec.level_count - 1}"
                    )
        for arr, label in ((self.cluster, "cluster"), (self.strata, "strata")):
            if arr is not None and np.asarray(arr).shape != (n_rows,):
                raise DataError(f"{label} column must have one entry per row")
        n = int(exp.sum())
        m = int(pop.sum())
        if self.population_size_n is None:
            object.__setattr__(self, "population_size_n", n + m)
        elif self.population_size_n < n + m:
            raise DataError(
                "declared population size must be at least n_experiment + m_population "
                f"(got {self.population_size_n} < {n + m})"
            )

    @property
    def n_experiment(self) -> int:
        return int((self.s == 1).sum())

    @property
    def m_population(self) -> int:
        return int((self.s == 0).sum())

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.specs)

    @property
    def experiment_rows(self) -> np.ndarray:
        return np.flatnonzero(self.s == 1)

    @property
    def population_rows(self) -> np.ndarray:
        return np.flatnonzero(self.s == 0)

    def spec_of(self, name: str) -> VariableSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise DataError(f"unknown covariate {name!r}")

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.covariate_names.index(name)]

    def take(self, experiment_positions: np.ndarray, population_positions: np.ndarray) -> "StackedDataset":
        """New dataset from positions within the experiment/population blocks."""
        exp_idx = self.experiment_rows[np.asarray(experiment_positions, dtype=np.intp)]
        pop_idx = self.population_rows[np.asarray(population_positions, dtype=np.intp)]
        idx = np.concatenate([exp_idx, pop_idx])
        return StackedDataset(
            specs=self.specs,
            x=self.x[idx],
            s=self.s[idx],
            t=self.t[idx],
            y=self.y[idx],
            cluster=None if self.cluster is None else np.asarray(self.cluster)[idx],
            strata=None if self.strata is None else np.asarray(self.strata)[idx],
            population_size_n=self.population_size_n,
        )


def _parse_numeric(raw: pd.Series, column: str, file_label: str) -> np.ndarray:
    """Parse strings to floats; empty cells become NaN, garbage raises."""
    stripped = raw.str.strip()
    out = np.full(len(stripped), np.nan)
    nonempty = stripped != ""
    try:
        out[nonempty.to_numpy()] = stripped[nonempty].astype(np.float64)
    except ValueError:
        for i, val in enumerate(stripped):
            if val == "":
                continue
            try:
                float(val)
            except ValueError:
                raise DataError(
                    f"non-numeric value {val!r} in column {column!r} of the {file_label} file "
                    f"(row {i + 2} counting the header)"
                ) from None
        raise
    return out


def _read_table(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from exc
    if frame.columns.duplicated().any():
        raise SchemaError(f"duplicate column names in {path}")
    return frame


def load_csv(
    path_experiment,
    path_population,
    schema: DatasetSchema,
    population_size_n: int | None = None,
) -> StackedDataset:
    """Load and validate an experiment CSV plus a population CSV.

    The experiment file must contain every schema column (extra columns are
    ignored). The population file must contain exactly the covariates
    declared ``measured_in_population`` and must not contain the outcome or
    treatment columns. Rows with missing entries in required columns are
    dropped, mirroring complete-case handling; drop counts are logged.
    """
    exp = _read_table(path_experiment)
    pop = _read_table(path_population)

    required_exp = [schema.outcome, schema.treatment] + list(schema.covariate_names)
    if schema.cluster:
        required_exp.append(schema.cluster)
    if schema.strata:
        required_exp.append(schema.strata)
    missing = [c for c in required_exp if c not in exp.columns]
    if missing:
        raise SchemaError(f"experiment file lacks required columns: {missing}")

    pop_expected = [v.name for v in schema.variables if v.measured_in_population]
    for forbidden in (schema.outcome, schema.treatment):
        if forbidden in pop.columns:
            raise SchemaError(f"population file must not contain column {forbidden!r}")
    missing_pop = [c for c in pop_expected if c not in pop.columns]
    extra_pop = [c for c in pop.columns if c not in pop_expected]
    if missing_pop or extra_pop:
        raise SchemaError(
            "population file must contain exactly the population-measured covariates; "
            f"missing {missing_pop}, unexpected {extra_pop}"
        )

    exp_numeric = {c: _parse_numeric(exp[c], c, "experiment") for c in [schema.outcome, schema.treatment, *schema.covariate_names]}
    keep_exp = np.ones(len(exp), dtype=bool)
    for c, col in exp_numeric.items():
        keep_exp &= np.isfinite(col)
    if schema.cluster:
        keep_exp &= (exp[schema.cluster].str.strip() != "").to_numpy()
    if schema.strata:
        keep_exp &= (exp[schema.strata].str.strip() != "").to_numpy()
    dropped_exp = int((~keep_exp).sum())
    if dropped_exp:
        logger.info("dropped %d experiment rows with missing required values", dropped_exp)

    pop_numeric = {c: _parse_numeric(pop[c], c, "population") for c in pop_expected}
    keep_pop = np.ones(len(pop), dtype=bool)
    for c, col in pop_numeric.items():
        keep_pop &= np.isfinite(col)
    dropped_pop = int((~keep_pop).sum())
    if dropped_pop:
        logger.info("dropped %d population rows with missing required values", dropped_pop)

    n = int(keep_exp.sum())
    m = int(keep_pop.sum())
    if n == 0 or m == 0:
        raise DataError("no complete rows left after dropping missing values")

    p = len(schema.variables)
    x = np.full((n + m, p), np.nan)
    for j, spec in enumerate(schema.variables):
        x[:n, j] = exp_numeric[spec.name][keep_exp]
        if spec.measured_in_population:
            x[n:, j] = pop_numeric[spec.name][keep_pop]

    t = np.concatenate([exp_numeric[schema.treatment][keep_exp], np.full(m, np.nan)])
    y = np.concatenate([exp_numeric[schema.outcome][keep_exp], np.full(m, np.nan)])
    s = np.concatenate([np.ones(n, dtype=np.int8), np.zeros(m, dtype=np.int8)])
    cluster = None
    if schema.cluster:
        cl = exp[schema.cluster].str.strip().to_numpy(dtype=object)[keep_exp]
        cluster = np.concatenate([cl, np.full(m, None, dtype=object)])
    strata = None
    if schema.strata:
        st = exp[schema.strata].str.strip().to_numpy(dtype=object)[keep_exp]
        strata = np.concatenate([st, np.full(m, None, dtype=object)])

    if not np.isin(t[:n], (0.0, 1.0)).all():
        raise DataError(f"treatment column {schema.treatment!r} must contain only 0/1 values")

    return StackedDataset(
        specs=schema.variables,
        x=x,
        s=s,
        t=t,
        y=y,
        cluster=cluster,
        strata=strata,
        population_size_n=population_size_n,
    )


@dataclass(frozen=True)
class StandardizationRecord:
    """Per-variable location/scale used by :func:`standardize`; invertible."""

    transforms: dict[str, tuple[float, float]] = field(default_factory=dict)

    def location(self, name: str) -> float:
        return self.transforms[name][0]

    def scale(self, name: str) -> float:
        return self.transforms[name][1]


def standardize(dataset: StackedDataset) -> tuple[StackedDataset, StandardizationRecord]:
    """Center and scale continuous covariates and the outcome.

    Location and scale are computed on experiment rows (mean, sample SD with
    ddof=1) and applied to every row, so population values land on the same
    scale. Categorical covariates are untouched.
    """
    exp = dataset.s == 1
    x = dataset.x.copy()
    y = dataset.y.copy()
    transforms: dict[str, tuple[float, float]] = {}
    for j, spec in enumerate(dataset.specs):
        if spec.is_categorical:
            continue
        col = x[exp, j]
        loc = float(col.mean())
        scale = float(col.std(ddof=1)) if col.size > 1 else 0.0
        if not np.isfinite(scale) or scale <= 1e-12 * max(1.0, abs(loc)):
            raise DegenerateVariableError(
                f"continuous covariate {spec.name!r} has zero variance on experiment rows"
            )
        x[:, j] = (x[:, j] - loc) / scale
        transforms[spec.name] = (loc, scale)
    y_exp = y[exp]
    loc = float(y_exp.mean())
    scale = float(y_exp.std(ddof=1)) if y_exp.size > 1 else 0.0
    if not np.isfinite(scale) or scale <= 1e-12 * max(1.0, abs(loc)):
        raise DegenerateVariableError("outcome has zero variance on experiment rows")
    y[exp] = (y_exp - loc) / scale
    transforms["__outcome__"] = (loc, scale)
    return replace(dataset, x=x, y=y), StandardizationRecord(transforms)


def unstandardize(dataset: StackedDataset, record: StandardizationRecord) -> StackedDataset:
    """Invert :func:`standardize`."""
    x = dataset.x.copy()
    y = dataset.y.copy()
    names = dataset.covariate_names
    for name, (loc, scale) in record.transforms.items():
        if name == "__outcome__":
            exp = dataset.s == 1
            y[exp] = y[exp] * scale + loc
        else:
            j = names.index(name)
            x[:, j] = x[:, j] * scale + loc
    return replace(dataset, x=x, y=y)


def expand_design(dataset: StackedDataset, names, rows) -> tuple[np.ndarray, list[str]]:
    """Dummy-expanded design matrix (no intercept) for the named covariates.

    Categorical variables contribute ``level_count - 1`` indicators against
    level 0. Column labels are returned for error reporting.
    """
    rows = np.asarray(rows)
    cols: list[np.ndarray] = []
    labels: list[str] = []
    for name in names:
        spec = dataset.spec_of(name)
        col = dataset.column(name)[rows]
        if spec.is_categorical:
            for level in range(1, spec.level_count):
                cols.append((col == level).astype(np.float64))
                labels.append(f"{name}=={level}")
        else:
            cols.append(col.astype(np.float64))
            labels.append(name)
    if not cols:
        return np.empty((len(rows), 0)), labels
    return np.column_stack(cols), labels
