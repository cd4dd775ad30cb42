"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved by sequential minimal optimisation over the usual 2N
box-constrained variables (one pair per training row), using second-order
working-set selection and a maximal-violation stopping rule.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .base import ConvergenceError, Model, ModelError, check_xy

C_VALUES = (0.1, 1.0, 10.0)
EPSILON_VALUES = (0.01, 0.1, 1.0)

_TAU = 1e-12


@dataclass(frozen=True)
class SvrConfig:
    C: float = 10.0
    epsilon: float = 0.1
    gamma: float | None = None  # None: 1 / (n_features * var(X))
    tol: float = 1e-3
    max_iter: int = 1_000_000
    cache_columns: int = 2048
    allow_off_grid: bool = False

    kind = "svr"

    def __post_init__(self) -> None:
        if self.C <= 0 or self.epsilon < 0 or self.tol <= 0:
            raise ModelError("C and tol must be positive and epsilon non-negative")
        if self.gamma is not None and self.gamma <= 0:
            raise ModelError("gamma must be positive")
        if not self.allow_off_grid:
            if self.C not in C_VALUES:
                raise ModelError(f"C={self.C} is off the grid {C_VALUES}")
            if self.epsilon not in EPSILON_VALUES:
                raise ModelError(f"epsilon={self.epsilon} is off the grid {EPSILON_VALUES}")

    def grid_key(self) -> tuple:
        # smaller C first; a wider tube is the simpler model
        return (self.C, -self.epsilon)


def rbf_kernel(a, b, gamma: float) -> np.ndarray:
    """``exp(-gamma * |a_i - b_j|^2)`` for every row pair."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


class SvrModel(Model):
    """``g(x) = sum_i coef_i * K(x, support_i) + intercept``."""

    kind = "svr"

    def __init__(self, support, coef, intercept: float, gamma: float, config: SvrConfig,
                 support_index=None, n_features: int | None = None, iterations: int = 0):
        self.support = np.atleast_2d(np.asarray(support, dtype=np.float64))
        self.coef = np.asarray(coef, dtype=np.float64).ravel()
        self.intercept = float(intercept)
        self.gamma = float(gamma)
        self.config = config
        self.support_index = None if support_index is None else np.asarray(support_index, dtype=np.int64)
        self.n_features = n_features if n_features is not None else self.support.shape[1]
        self.iterations = iterations

    def _predict(self, x: np.ndarray) -> np.ndarray:
        if self.coef.size == 0:
            return np.full(x.shape[0], self.intercept)
        out = np.empty(x.shape[0])
        step = 4096
        for s in range(0, x.shape[0], step):
            out[s:s + step] = rbf_kernel(x[s:s + step], self.support, self.gamma) @ self.coef
        return out + self.intercept

    def __repr__(self) -> str:
        return f"SvrModel(n_support={self.coef.size}, C={self.config.C}, epsilon={self.config.epsilon})"


class _KernelColumns:
    """On-demand kernel columns with a bounded LRU cache."""

    def __init__(self, x: np.ndarray, gamma: float, capacity: int):
        self.x = x
        self.gamma = gamma
        self.sq = (x * x).sum(1)
        self.capacity = max(2, capacity)
        self.full = None
        if x.shape[0] <= self.capacity:
            self.full = rbf_kernel(x, x, gamma)
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self.diag = np.ones(x.shape[0])

    def column(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        col = self.cache.get(i)
        if col is not None:
            self.cache.move_to_end(i)
            return col
        sq = self.sq + self.sq[i] - 2.0 * (self.x @ self.x[i])
        np.maximum(sq, 0.0, out=sq)
        col = np.exp(-self.gamma * sq)
        self.cache[i] = col
        if len(self.cache) > self.capacity:
            self.cache.popitem(last=False)
        return col


def default_gamma(x: np.ndarray) -> float:
    var = float(x.var())
    return 1.0 / (x.shape[1] * var) if var > 0 else 1.0


def duality_gap(beta: np.ndarray, kbeta: np.ndarray, y: np.ndarray, b: float, C: float, eps: float) -> float:
    """Primal minus dual objective for coefficients ``beta`` (``kbeta = K @ beta``)."""
    wnorm = float(beta @ kbeta)
    loss = np.maximum(0.0, np.abs(y - kbeta - b) - eps).sum()
    primal = 0.5 * wnorm + C * loss
    dual = -0.5 * wnorm - eps * np.abs(beta).sum() + float(y @ beta)
    return float(primal - dual)


def fit_svr(x, y, config: SvrConfig | None = None) -> SvrModel:
    config = config or SvrConfig()
    x, y = check_xy(x, y)
    n, p = x.shape
    gamma = config.gamma if config.gamma is not None else default_gamma(x)
    C, eps, tol = config.C, config.epsilon, config.tol
    kern = _KernelColumns(x, gamma, config.cache_columns)

    # variables 0..n-1 carry sign +1, n..2n-1 carry sign -1
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    alpha = np.zeros(2 * n)
    grad = np.concatenate([eps - y, eps + y])
    real = np.concatenate([np.arange(n), np.arange(n)])

    def q_column(t: int) -> np.ndarray:
        col = kern.column(real[t])
        return sign[t] * sign * np.concatenate([col, col])

    it = 0
    gap = np.inf
    while True:
        up = ((sign > 0) & (alpha < C)) | ((sign < 0) & (alpha > 0))
        low = ((sign > 0) & (alpha > 0)) | ((sign < 0) & (alpha < C))
        score = -sign * grad
        up_idx = np.flatnonzero(up)
        low_idx = np.flatnonzero(low)
        if up_idx.size == 0 or low_idx.size == 0:
            gap = 0.0
            break
        i = int(up_idx[np.argmax(score[up_idx])])
        g_max = score[i]
        g_min = score[low_idx].min()
        gap = g_max - g_min
        if gap < tol:
            break
        if it >= config.max_iter:
            beta = alpha[:n] - alpha[n:]
            kb = _kernel_times(kern, beta)
            raise ConvergenceError(
                f"SVR did not converge in {config.max_iter} updates; "
                f"KKT violation {gap:.3g}, duality gap "
                f"{duality_gap(beta, kb, y, -_rho(sign, alpha, grad, C), C, eps):.3g}"
            )
        qi = q_column(i)
        # second-order choice of j among violators in the low set
        cand = low_idx[score[low_idx] < g_max]
        b_ij = g_max - score[cand]
        a_ij = 1.0 + 1.0 - 2.0 * sign[i] * sign[cand] * qi[cand]
        a_ij = np.where(a_ij > 0, a_ij, _TAU)
        j = int(cand[np.argmin(-(b_ij * b_ij) / a_ij)])
        qj = q_column(j)

        old_i, old_j = alpha[i], alpha[j]
        if sign[i] != sign[j]:
            quad = max(2.0 + 2.0 * qi[j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = max(2.0 - 2.0 * qi[j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        grad += qi * (alpha[i] - old_i) + qj * (alpha[j] - old_j)
        it += 1

    rho = _rho(sign, alpha, grad, C)
    beta = alpha[:n] - alpha[n:]
    # the pair updates keep each variable inside [0, C]; clip rounding residue
    np.clip(beta, -C, C, out=beta)
    keep = np.flatnonzero(beta != 0.0)
    return SvrModel(x[keep], beta[keep], -rho, gamma, config, support_index=keep,
                    n_features=p, iterations=it)


def _rho(sign: np.ndarray, alpha: np.ndarray, grad: np.ndarray, C: float) -> float:
    yg = sign * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    at_upper = alpha >= C
    # bounds on rho from variables pinned at 0 or C
    ub_mask = (at_upper & (sign < 0)) | (~at_upper & (sign > 0))
    lb_mask = (at_upper & (sign > 0)) | (~at_upper & (sign < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float(0.5 * (ub + lb))
    return float(ub if np.isfinite(ub) else lb)


def _kernel_times(kern: _KernelColumns, beta: np.ndarray) -> np.ndarray:
    if kern.full is not None:
        return kern.full @ beta
    out = np.zeros(beta.size)
    for k in np.flatnonzero(beta):
        out += beta[k] * kern.column(int(k))
    return out
