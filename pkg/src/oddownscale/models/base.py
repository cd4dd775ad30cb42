from __future__ import annotations

import numpy as np


class ModelError(ValueError):
    pass


class ConvergenceError(ModelError):
    pass


def as_matrix(x, n_features: int | None = None) -> tuple[np.ndarray, bool]:
    """Coerce input to a 2-D float array; report whether it was a single row."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ModelError(f"expected a 1-D or 2-D feature array, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ModelError(f"expected {n_features} features, got {arr.shape[1]}")
    return arr, single


class Model:
    """Common predict contract shared by every model kind."""

    kind: str = ""
    n_features: int

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x):
        """Predict standardized targets for a row (float) or rows (array)."""
        arr, single = as_matrix(x, self.n_features)
        out = self._predict(arr)
        return float(out[0]) if single else out

    def __call__(self, x):
        return self.predict(x)


def check_xy(x, y, min_rows: int = 2) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != y.shape[0]:
        raise ModelError(f"{x.shape[0]} rows of features but {y.shape[0]} targets")
    if x.shape[0] < min_rows:
        raise ModelError(f"need at least {min_rows} training rows, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ModelError("training data contains non-finite values")
    return x, y
