"""Error metrics and exhaustive hyperparameter search."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from collections.abc import Iterator, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .features import PreparedData, ZScore
from .models import fnn, forest, svr

logger = logging.getLogger(__name__)


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalReport:
    """Squared error in standardized units plus its trip-unit RMSE."""

    mse_z: float
    rmse_trips: float
    n: int
    d: int = 1


def metric_pair(pred_z, y_z, target_std: float) -> EvalReport:
    pred_z = np.asarray(pred_z, dtype=np.float64).ravel()
    y_z = np.asarray(y_z, dtype=np.float64).ravel()
    if y_z.size == 0:
        raise TuningError("cannot evaluate on an empty row set")
    if pred_z.shape != y_z.shape:
        raise TuningError(f"{pred_z.size} predictions for {y_z.size} targets")
    mse = float(np.mean((pred_z - y_z) ** 2))
    return EvalReport(mse, target_std * math.sqrt(mse), int(y_z.size))


def evaluate(model: models.Model, x, y_z, target: ZScore) -> EvalReport:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise TuningError("cannot evaluate on an empty row set")
    return metric_pair(model.predict(x), y_z, target.std)


def implied_target_std(mse_z: float, rmse_trips: float) -> float:
    """The target standard deviation consistent with a reported metric pair."""
    return rmse_trips / math.sqrt(mse_z)


@dataclass
class HyperGrid:
    kind: str
    axes: dict[str, tuple]
    fixed: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in models.KINDS:
            raise TuningError(f"unknown model kind {self.kind!r}")
        for name, values in self.axes.items():
            if len(values) == 0:
                raise TuningError(f"grid axis {name!r} is empty")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def configs(self) -> Iterator:
        cls = models.serialize.CONFIG_TYPES[self.kind]
        names = list(self.axes)
        for combo in itertools.product(*(self.axes[n] for n in names)):
            yield cls(**self.fixed, **dict(zip(names, combo)))


def default_grid(kind: str, n_seeds: int = 5, **fixed) -> HyperGrid:
    """The published grid for ``kind``; ``n_seeds`` trims the seed axis."""
    if kind == "linear":
        axes = {}
    elif kind == "forest":
        axes = {
            "n_trees": forest.TREE_COUNTS,
            "max_features": forest.MAX_FEATURES,
            "seed": forest.SEEDS[:n_seeds],
        }
    elif kind == "svr":
        axes = {"C": svr.C_VALUES, "epsilon": svr.EPSILON_VALUES}
    elif kind == "fnn":
        axes = {"width": fnn.WIDTHS, "depth": fnn.DEPTHS, "seed": fnn.SEEDS[:n_seeds]}
    else:
        raise TuningError(f"unknown model kind {kind!r}")
    return HyperGrid(kind, axes, dict(fixed))


@dataclass
class ConfigResult:
    config: object
    train: EvalReport | None
    test: EvalReport | None
    error: str | None = None


@dataclass
class TuneResult:
    kind: str
    results: list[ConfigResult]
    best: ConfigResult
    model: models.Model
    log: list[str] = field(default_factory=list)

    @property
    def n_evaluated(self) -> int:
        return len(self.results)

    def write_leaderboard(self, path: str | Path) -> None:
        axes = sorted({k for r in self.results for k in asdict(r.config)})
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*axes, "train_mse_z", "test_mse_z", "test_rmse_trips", "selected", "error"])
            for r in self.results:
                cfg = asdict(r.config)
                writer.writerow([
                    *[cfg.get(a, "") for a in axes],
                    "" if r.train is None else repr(r.train.mse_z),
                    "" if r.test is None else repr(r.test.mse_z),
                    "" if r.test is None else repr(r.test.rmse_trips),
                    int(r is self.best),
                    r.error or "",
                ])


def grid_search(grid: HyperGrid, data: PreparedData) -> TuneResult:
    """Fit every grid point on the training rows, select by test ``mse_z``.

    Failed fits are recorded and skipped. Ties on test error go to the
    smaller configuration (``grid_key``), which ends with the seed.
    """
    if data.split is None:
        raise TuningError("grid search needs a train/test split")
    target = data.params.target
    results: list[ConfigResult] = []
    log: list[str] = []
    best_key = None
    best = best_model = None
    for config in grid.configs():
        try:
            model = models.fit(data.x_train, data.y_train, config)
            train = evaluate(model, data.x_train, data.y_train, target)
            test = evaluate(model, data.x_test, data.y_test, target)
        except (models.ModelError, FloatingPointError, np.linalg.LinAlgError) as exc:
            results.append(ConfigResult(config, None, None, str(exc)))
            log.append(f"{config}: failed: {exc}")
            logger.warning("%s failed: %s", config, exc)
            continue
        result = ConfigResult(config, train, test)
        results.append(result)
        log.append(f"{config}: train mse_z={train.mse_z:.6g} test mse_z={test.mse_z:.6g}")
        logger.info("%s test mse_z=%.6g", config, test.mse_z)
        key = (test.mse_z, config.grid_key())
        if best_key is None or key < best_key:
            best_key, best, best_model = key, result, model
    if best is None:
        raise TuningError(f"every {grid.kind} configuration failed")
    log.append(f"selected {best.config} with test mse_z={best.test.mse_z:.6g}")
    return TuneResult(grid.kind, results, best, best_model, log)


def parse_axis(text: str, cast) -> tuple:
    """Parse a comma-separated override such as ``"10,50"``."""
    return tuple(cast(v.strip()) for v in text.split(",") if v.strip())


def grid_from_overrides(kind: str, overrides: Mapping[str, tuple], n_seeds: int = 5, **fixed) -> HyperGrid:
    grid = default_grid(kind, n_seeds, **fixed)
    for name, values in overrides.items():
        if name not in grid.axes:
            raise TuningError(f"{kind} grid has no axis {name!r}")
        grid.axes[name] = tuple(values)
    return grid
