"""Perturbation pseudo-coefficients for any fitted model.

Each input column is nudged by ``delta`` (in standardized units) with all
other columns held fixed; the averaged output change per unit step is the
column's pseudo-coefficient. Forest outputs are piecewise constant, so
their default step is wide enough to cross split thresholds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import design_names

DEFAULT_DELTA = {"linear": 0.01, "svr": 0.01, "fnn": 0.01, "forest": 0.5}
MODES = ("central", "forward")


class SensitivityError(ValueError):
    pass


def _rows(rows) -> np.ndarray:
    x = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if x.shape[0] == 0:
        raise SensitivityError("no evaluation rows")
    return x


def perturb_one(model, rows, i: int, delta: float, mode: str = "central") -> float:
    """Mean finite-difference slope of ``model`` along column ``i``."""
    if not delta > 0:
        raise SensitivityError(f"delta must be positive, got {delta}")
    if mode not in MODES:
        raise SensitivityError(f"mode must be one of {MODES}")
    x = _rows(rows)
    if not 0 <= i < x.shape[1]:
        raise SensitivityError(f"column {i} out of range for {x.shape[1]} features")
    up = x.copy()
    up[:, i] += delta
    if mode == "central":
        down = x.copy()
        down[:, i] -= delta
        diff = (model.predict(up) - model.predict(down)) / (2.0 * delta)
    else:
        diff = (model.predict(up) - model.predict(x)) / delta
    return float(np.mean(diff))


@dataclass
class SensitivityReport:
    names: list[tuple[str, str]]
    coefficients: np.ndarray
    ranks: np.ndarray
    delta: float
    n_rows: int
    mode: str = "central"
    note: str = ""

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.coefficients).astype(int)

    def ranked(self) -> list[tuple[int, str, str, float]]:
        order = np.argsort(self.ranks)
        return [(int(self.ranks[k]), *self.names[k], float(self.coefficients[k])) for k in order]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            if self.note:
                fh.write(f"# {self.note}\n")
            fh.write(f"# delta={self.delta!r} mode={self.mode} rows={self.n_rows}\n")
            writer = csv.writer(fh)
            writer.writerow(["rank", "side", "variable", "pseudo_coefficient", "sign"])
            for rank, side, var, coef in self.ranked():
                sign = "+" if coef > 0 else "-" if coef < 0 else "0"
                writer.writerow([rank, side, var, repr(coef), sign])


def rank_by_magnitude(coefficients) -> np.ndarray:
    """1-based ranks by decreasing ``|coefficient|``; ties keep column order."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    order = np.argsort(-np.abs(coefficients), kind="stable")
    ranks = np.empty(coefficients.size, dtype=np.int64)
    ranks[order] = np.arange(1, coefficients.size + 1)
    return ranks


def pseudo_coefficients(model, rows, delta: float | None = None, mode: str = "central",
                        names: list[tuple[str, str]] | None = None) -> SensitivityReport:
    x = _rows(rows)
    if delta is None:
        delta = DEFAULT_DELTA.get(getattr(model, "kind", ""), 0.01)
    coefs = np.array([perturb_one(model, x, i, delta, mode) for i in range(x.shape[1])])
    if names is None:
        names = design_names() if x.shape[1] == 60 else [("", f"x{i}") for i in range(x.shape[1])]
    note = ""
    if getattr(model, "kind", "") == "forest":
        note = "forest output is piecewise constant; coefficients depend on the step size"
    return SensitivityReport(list(names), coefs, rank_by_magnitude(coefs), float(delta), x.shape[0], mode, note)
