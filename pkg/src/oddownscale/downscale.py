"""Apply a coarse-level model to fine-level OD pairs and map its errors."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import N_VARIABLES, PreparedData, zscore_invert
from .geo import Zoning
from .models import Model, ModelError
from .tuning import EvalReport, metric_pair

ROLES = ("origin", "destination")


@dataclass
class DownscaleRun:
    model: Model
    data: PreparedData
    pred_z: np.ndarray
    pred_trips: np.ndarray
    report: EvalReport | None

    @property
    def origins(self) -> list[str]:
        return self.data.raw.origins

    @property
    def destinations(self) -> list[str]:
        return self.data.raw.destinations

    @property
    def actual_trips(self) -> np.ndarray | None:
        return self.data.raw.y

    @property
    def error_trips(self) -> np.ndarray | None:
        """Actual minus predicted; positive means the model underestimates."""
        if self.data.raw.y is None:
            return None
        return self.data.raw.y - self.pred_trips

    def write_predictions(self, path: str | Path) -> None:
        actual = self.actual_trips
        err = self.error_trips
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["origin_id", "destination_id", "predicted_trips"]
            if actual is not None:
                header += ["actual_trips", "error_trips"]
            writer.writerow(header)
            for k, (o, d) in enumerate(zip(self.origins, self.destinations)):
                row = [o, d, repr(float(self.pred_trips[k]))]
                if actual is not None:
                    row += [repr(float(actual[k])), repr(float(err[k]))]
                writer.writerow(row)


def downscale_predict(model: Model, data: PreparedData) -> DownscaleRun:
    """Predict standardized and trip-unit flows for every fine pair."""
    if data.x.shape[1] != 2 * N_VARIABLES or model.n_features != 2 * N_VARIABLES:
        raise ModelError(
            f"downscaling needs {2 * N_VARIABLES}-wide rows; data has {data.x.shape[1]}, "
            f"model expects {model.n_features}"
        )
    pred_z = np.asarray(model.predict(data.x), dtype=np.float64)
    pred_trips = zscore_invert(pred_z, data.params.target)
    report = None
    if data.y is not None and data.y.size:
        report = metric_pair(pred_z, data.y, data.params.target.std)
    return DownscaleRun(model, data, pred_z, pred_trips, report)


@dataclass(frozen=True)
class UnitErrorRecord:
    unit_id: str
    role: str
    error_trips: float
    pair_count: int


def unit_errors(run: DownscaleRun, role: str = "origin", statistic: str = "mean") -> list[UnitErrorRecord]:
    """Signed per-unit error (actual - predicted) with the unit in ``role``.

    ``statistic`` is ``"mean"`` over the unit's pairs or their ``"sum"``.
    Records follow first appearance order of the units in the run.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}")
    if statistic not in ("mean", "sum"):
        raise ValueError("statistic must be 'mean' or 'sum'")
    err = run.error_trips
    if err is None:
        raise ValueError("unit errors need observed fine-level flows")
    keys = run.origins if role == "origin" else run.destinations
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for k, e in zip(keys, err.tolist()):
        sums[k] = sums.get(k, 0.0) + e
        counts[k] = counts.get(k, 0) + 1
    return [
        UnitErrorRecord(u, role, s / counts[u] if statistic == "mean" else s, counts[u])
        for u, s in sums.items()
    ]


def error_geojson(records: list[UnitErrorRecord], zoning: Zoning) -> dict:
    props = {
        r.unit_id: {"role": r.role, "error_trips": r.error_trips, "pair_count": r.pair_count}
        for r in records
    }
    doc = zoning.to_geojson(props)
    for feat in doc["features"]:
        feat["properties"].pop("residential", None)
        feat["properties"].setdefault("error_trips", None)
        feat["properties"].setdefault("pair_count", 0)
        feat["properties"].setdefault("role", records[0].role if records else None)
    return doc


def write_error_geojson(records: list[UnitErrorRecord], zoning: Zoning, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(error_geojson(records, zoning), fh)
