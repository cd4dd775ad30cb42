"""Ordinary least squares with a free intercept."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Model, check_xy


@dataclass(frozen=True)
class LinearConfig:
    kind = "linear"

    def grid_key(self) -> tuple:
        return ()


class LinearModel(Model):
    kind = "linear"

    def __init__(self, coef, intercept: float, config: LinearConfig | None = None):
        self.coef = np.asarray(coef, dtype=np.float64).ravel()
        self.intercept = float(intercept)
        self.n_features = self.coef.size
        self.config = config or LinearConfig()

    def _predict(self, x: np.ndarray) -> np.ndarray:
        return x @ self.coef + self.intercept

    def __repr__(self) -> str:
        return f"LinearModel(n_features={self.n_features}, intercept={self.intercept:.6g})"


def fit_linear(x, y, config: LinearConfig | None = None) -> LinearModel:
    """Least-squares fit; rank-deficient designs get the minimum-norm slope.

    The intercept is left unpenalised by solving on centred columns.
    """
    x, y = check_xy(x, y)
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    coef, *_ = np.linalg.lstsq(x - x_mean, y - y_mean, rcond=None)
    return LinearModel(coef, y_mean - x_mean @ coef, config)
