"""Per-unit feature tables, imputation, z-score scaling and OD design matrices."""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geo import ODFlowTable

# (category, variable) in the fixed catalog order.
CATALOG: tuple[tuple[str, str], ...] = (
    ("population", "total_population"),
    ("population", "total_commuters"),
    ("age", "pct_age_18_or_younger"),
    ("age", "pct_age_60_or_older"),
    ("gender", "pct_male"),
    ("race_ethnicity", "pct_white"),
    ("race_ethnicity", "pct_black"),
    ("race_ethnicity", "pct_asian"),
    ("race_ethnicity", "pct_hispanic"),
    ("education", "pct_college_degree"),
    ("economic", "pct_below_poverty"),
    ("economic", "pct_unemployed"),
    ("economic", "median_household_income"),
    ("housing", "pct_housing_vacant"),
    ("housing", "pct_renter_occupied"),
    ("stability", "pct_same_house_1yr"),
    ("stability", "pct_foreign_born"),
    ("mobility", "pct_no_vehicle"),
    ("commuting_methods", "pct_drive_alone"),
    ("commuting_methods", "pct_carpool"),
    ("commuting_methods", "pct_bicycle"),
    ("commuting_methods", "pct_motorcycle"),
    ("commuting_methods", "pct_public_transit"),
    ("commuting_methods", "pct_walk"),
    ("commuting_methods", "pct_taxi"),
    ("commuting_methods", "pct_work_from_home"),
    ("commuting_time", "pct_commute_under_30"),
    ("commuting_time", "pct_commute_30_to_60"),
    ("commuting_time", "pct_commute_60_to_90"),
    ("commuting_time", "pct_commute_over_90"),
)
VARIABLES: tuple[str, ...] = tuple(name for _, name in CATALOG)
N_VARIABLES = len(VARIABLES)
DESIGN_COLUMNS: tuple[str, ...] = tuple(f"o_{v}" for v in VARIABLES) + tuple(f"d_{v}" for v in VARIABLES)
TARGET = "trip_count"

assert N_VARIABLES == 30 and len(set(VARIABLES)) == 30


class FeatureError(ValueError):
    pass


class DegenerateVariableError(FeatureError):
    """A variable has zero spread and cannot be standardized."""

    def __init__(self, name: str):
        super().__init__(f"variable {name!r} has zero standard deviation")
        self.name = name


@dataclass
class FeatureTable:
    """Unit ids, a ``(units, 30)`` value matrix and residential flags."""

    unit_ids: list[str]
    values: np.ndarray
    residential: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.residential = np.asarray(self.residential, dtype=bool)
        if self.values.shape != (len(self.unit_ids), N_VARIABLES):
            raise FeatureError(
                f"expected values of shape ({len(self.unit_ids)}, {N_VARIABLES}), got {self.values.shape}"
            )
        if self.residential.shape != (len(self.unit_ids),):
            raise FeatureError("residential flags must align with unit ids")
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise FeatureError("duplicate unit ids in feature table")
        self._pos = {u: k for k, u in enumerate(self.unit_ids)}

    def position(self, unit_id: str) -> int:
        try:
            return self._pos[unit_id]
        except KeyError:
            raise FeatureError(f"unit {unit_id!r} missing from feature table") from None

    def row(self, unit_id: str) -> np.ndarray:
        return self.values[self.position(unit_id)]

    def copy(self) -> "FeatureTable":
        return FeatureTable(list(self.unit_ids), self.values.copy(), self.residential.copy())

    @classmethod
    def from_csv(cls, path: str | Path, delimiter: str = ",") -> "FeatureTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            header = [h.strip() for h in next(reader)]
            names = header[1:]
            has_res = "residential" in names
            var_cols = [n for n in names if n != "residential"]
            if sorted(var_cols) != sorted(VARIABLES):
                missing = sorted(set(VARIABLES) - set(var_cols))
                extra = sorted(set(var_cols) - set(VARIABLES))
                raise FeatureError(f"{path}: feature columns mismatch; missing={missing} extra={extra}")
            order = [header.index(v) for v in VARIABLES]
            res_col = header.index("residential") if has_res else None
            ids, rows, res = [], [], []
            for line, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) < len(header):
                    raise FeatureError(f"{path}:{line}: expected {len(header)} fields, got {len(rec)}")
                ids.append(rec[0].strip())
                try:
                    rows.append([_parse_cell(rec[k]) for k in order])
                except ValueError as exc:
                    raise FeatureError(f"{path}:{line}: {exc}") from None
                res.append(rec[res_col].strip() not in ("0", "false", "False") if has_res else True)
        table = cls(ids, np.array(rows, dtype=np.float64).reshape(len(ids), N_VARIABLES), np.array(res))
        bad = ~np.all(np.isfinite(table.values), axis=1) & table.residential
        if bad.any():
            first = table.unit_ids[int(np.flatnonzero(bad)[0])]
            raise FeatureError(f"{path}: residential unit {first!r} has missing or non-finite values")
        return table

    def to_csv(self, path: str | Path, delimiter: str = ",") -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter)
            writer.writerow(["unit_id", *VARIABLES, "residential"])
            for uid, vals, res in zip(self.unit_ids, self.values, self.residential):
                cells = ["" if not math.isfinite(v) else repr(float(v)) for v in vals]
                writer.writerow([uid, *cells, int(res)])


def _parse_cell(text: str) -> float:
    text = text.strip()
    return float(text) if text else math.nan


def mean_impute(table: FeatureTable) -> FeatureTable:
    """Fill every non-residential unit with the residential means."""
    res = table.residential
    if not res.any():
        raise FeatureError("mean imputation needs at least one residential unit")
    out = table.copy()
    if res.all():
        return out
    means = table.values[res].mean(axis=0)
    out.values[~res] = means
    return out


@dataclass(frozen=True)
class ZScore:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if not self.std > 0 or not math.isfinite(self.std):
            raise FeatureError(f"standard deviation must be positive, got {self.std}")


def zscore_fit(values, name: str = "value", ddof: int = 0) -> ZScore:
    """Mean and standard deviation (population by default, ``ddof=0``)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise FeatureError(f"{name}: need at least two values to fit a z-score")
    mu = float(v.mean())
    sigma = float(np.sqrt(np.mean((v - mu) ** 2) * v.size / (v.size - ddof)))
    if not sigma > 0:
        raise DegenerateVariableError(name)
    return ZScore(mu, sigma)


def zscore_apply(values, params: ZScore) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - params.mean) / params.std


def zscore_invert(standardized, params: ZScore) -> np.ndarray:
    return np.asarray(standardized, dtype=np.float64) * params.std + params.mean


@dataclass
class NormalizationParams:
    variables: dict[str, ZScore]
    target: ZScore

    @property
    def means(self) -> np.ndarray:
        return np.array([self.variables[v].mean for v in VARIABLES])

    @property
    def stds(self) -> np.ndarray:
        return np.array([self.variables[v].std for v in VARIABLES])

    def apply_units(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.means) / self.stds

    def apply_design(self, x: np.ndarray) -> np.ndarray:
        mu = np.concatenate([self.means, self.means])
        sd = np.concatenate([self.stds, self.stds])
        return (np.asarray(x, dtype=np.float64) - mu) / sd

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variable", "mean", "std"])
            for v in VARIABLES:
                z = self.variables[v]
                writer.writerow([v, repr(z.mean), repr(z.std)])
            writer.writerow([TARGET, repr(self.target.mean), repr(self.target.std)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "NormalizationParams":
        entries = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                entries[row["variable"]] = ZScore(float(row["mean"]), float(row["std"]))
        missing = [v for v in (*VARIABLES, TARGET) if v not in entries]
        if missing:
            raise FeatureError(f"{path}: normalization sidecar lacks {missing}")
        return cls({v: entries[v] for v in VARIABLES}, entries[TARGET])


def fit_variable_params(table: FeatureTable, ddof: int = 0) -> dict[str, ZScore]:
    """Fit one z-score per catalog variable over the table's units."""
    return {v: zscore_fit(table.values[:, k], name=v, ddof=ddof) for k, v in enumerate(VARIABLES)}


@dataclass
class ODDesignMatrix:
    """One row per OD pair: origin features then destination features."""

    origins: list[str]
    destinations: list[str]
    x: np.ndarray
    y: np.ndarray | None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64).reshape(len(self.origins), -1)
        if self.x.shape[1] != 2 * N_VARIABLES:
            raise FeatureError(f"design rows must have {2 * N_VARIABLES} features, got {self.x.shape[1]}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.shape != (len(self.origins),):
                raise FeatureError("target length does not match row count")

    def __len__(self) -> int:
        return len(self.origins)

    def subset(self, idx) -> "ODDesignMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return ODDesignMatrix(
            [self.origins[i] for i in idx],
            [self.destinations[i] for i in idx],
            self.x[idx],
            None if self.y is None else self.y[idx],
        )


def assemble(
    flows: ODFlowTable | None,
    features: FeatureTable,
    include_zero_pairs: bool = False,
) -> ODDesignMatrix:
    """Build the raw (unstandardized) design matrix.

    With ``include_zero_pairs`` every ordered pair of feature-table units
    gets a row, in unit order, with count 0 where no flow was observed.
    Without flows (pure prediction) every ordered pair is emitted and the
    target is left empty.
    """
    if flows is None:
        pairs = [(o, d) for o in features.unit_ids for d in features.unit_ids]
        y = None
    else:
        for o, d in flows.counts:
            features.position(o)
            features.position(d)
        if include_zero_pairs:
            pairs = [(o, d) for o in features.unit_ids for d in features.unit_ids]
        else:
            pairs = sorted(flows.counts, key=lambda p: (features.position(p[0]), features.position(p[1])))
        y = np.array([flows.counts.get(p, 0) for p in pairs], dtype=np.float64)
    o_pos = np.array([features.position(o) for o, _ in pairs], dtype=np.int64)
    d_pos = np.array([features.position(d) for _, d in pairs], dtype=np.int64)
    x = np.hstack([features.values[o_pos], features.values[d_pos]]) if pairs else np.empty((0, 60))
    return ODDesignMatrix([o for o, _ in pairs], [d for _, d in pairs], x, y)


@dataclass
class SplitDataset:
    train: np.ndarray
    test: np.ndarray
    seed: int


def split(n_rows: int | ODDesignMatrix, ratio: float = 0.8, seed: int = 0) -> SplitDataset:
    """Seeded uniform permutation; the first ``round(ratio * N)`` rows train."""
    n = len(n_rows) if isinstance(n_rows, ODDesignMatrix) else int(n_rows)
    if not 0.0 < ratio < 1.0:
        raise FeatureError(f"split ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise FeatureError("need at least two rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n + 0.5))
    return SplitDataset(np.sort(perm[:n_train]), np.sort(perm[n_train:]), seed)


@dataclass
class PreparedData:
    """A standardized design matrix plus the parameters that produced it."""

    raw: ODDesignMatrix
    x: np.ndarray
    y: np.ndarray | None
    params: NormalizationParams
    split: SplitDataset | None = None
    features: FeatureTable | None = field(default=None, repr=False)

    # without a split every row is a training row and the test set is empty
    def _rows(self, part: str) -> np.ndarray:
        if self.split is None:
            return np.arange(self.x.shape[0]) if part == "train" else np.arange(0)
        return getattr(self.split, part)

    @property
    def x_train(self) -> np.ndarray:
        return self.x[self._rows("train")]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self._rows("train")]

    @property
    def x_test(self) -> np.ndarray:
        return self.x[self._rows("test")]

    @property
    def y_test(self) -> np.ndarray:
        return self.y[self._rows("test")]


def prepare_training(
    flows: ODFlowTable,
    features: FeatureTable,
    include_zero_pairs: bool = False,
    ratio: float | None = 0.8,
    seed: int = 0,
    ddof: int = 0,
) -> PreparedData:
    """Impute, assemble, split and standardize a training-level dataset.

    Variable parameters are fitted on the imputed unit table; the target's
    parameters on the training rows only (all rows when ``ratio`` is None).
    """
    table = mean_impute(features)
    var_params = fit_variable_params(table, ddof=ddof)
    raw = assemble(flows, table, include_zero_pairs)
    parts = split(len(raw), ratio, seed) if ratio is not None else None
    fit_rows = raw.y[parts.train] if parts is not None else raw.y
    target = zscore_fit(fit_rows, name=TARGET, ddof=ddof)
    params = NormalizationParams(var_params, target)
    return PreparedData(raw, params.apply_design(raw.x), zscore_apply(raw.y, target), params, parts, table)


def prepare_downscale(
    features: FeatureTable,
    flows: ODFlowTable | None = None,
    mode: str = "refit",
    reference: NormalizationParams | None = None,
    include_zero_pairs: bool = False,
    ddof: int = 0,
) -> PreparedData:
    """Standardize a fine-level dataset for prediction.

    ``refit`` fits fresh parameters on the fine data (target over all
    observed fine rows); ``reuse`` applies ``reference`` unchanged. Without
    observed flows a refit run keeps the reference target parameters.
    """
    if mode not in ("refit", "reuse"):
        raise FeatureError(f"unknown normalization mode {mode!r}")
    table = mean_impute(features)
    raw = assemble(flows, table, include_zero_pairs)
    if mode == "reuse":
        if reference is None:
            raise FeatureError("reuse mode needs reference normalization params")
        params = reference
    else:
        var_params = fit_variable_params(table, ddof=ddof)
        if raw.y is not None:
            target = zscore_fit(raw.y, name=TARGET, ddof=ddof)
        elif reference is not None:
            target = reference.target
        else:
            raise FeatureError("refit without observed flows needs reference target params")
        params = NormalizationParams(var_params, target)
    y = None if raw.y is None else zscore_apply(raw.y, params.target)
    return PreparedData(raw, params.apply_design(raw.x), y, params, None, table)


def design_names(sides: Sequence[str] = ("origin", "destination")) -> list[tuple[str, str]]:
    """(side, variable) for each of the 60 design columns."""
    return [(side, v) for side in sides for v in VARIABLES]


def feature_table_from_mapping(values: Mapping[str, Sequence[float]], residential: Mapping[str, bool] | None = None) -> FeatureTable:
    ids = list(values)
    res = [True if residential is None else residential.get(u, True) for u in ids]
    return FeatureTable(ids, np.array([values[u] for u in ids], dtype=np.float64), np.array(res))
