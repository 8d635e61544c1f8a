"""Kernel-based nonparametric estimation of scores and log-density Hessians.

Given samples X (n x d) and an RBF kernel K_ab = exp(-||x_a - x_b||^2 / 2h^2),
the score estimate solves the ridge-regularized system

    G = -(K + eta I)^-1 B,      B_aj = sum_b K_ab (x_aj - x_bj) / h^2,

and the Hessian estimate applies the second-order identity

    H_a = -G_a G_a^T + [(K + eta I)^-1 C]_a,
    C^(jk)_a = sum_b K_ab [ (x_aj - x_bj)(x_ak - x_bk)/h^4 - delta_jk/h^2 ].

All samples act as kernel anchors; a single Cholesky factorization is shared
between the score solve and any number of Hessian rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

CONDITION_WARN_THRESHOLD = 1e12


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class SteinConfig:
    """Estimator hyperparameters.

    `bandwidth=None` selects the median heuristic (median pairwise distance
    times `bandwidth_factor`); a positive value fixes h directly.
    """

    bandwidth: float | None = None
    bandwidth_factor: float = 1.0
    ridge: float = 1e-3

    def __post_init__(self):
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")
        if self.bandwidth_factor <= 0:
            raise ValueError("bandwidth factor must be positive")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("fixed bandwidth must be positive")


@dataclass
class ScoreHessianField:
    """Per-sample score vectors and symmetric Hessian matrices."""

    scores: np.ndarray  # (n, d)
    hessians: np.ndarray  # (n, d, d)
    bandwidth: float
    condition_estimate: float


class _KernelSystem:
    """Shared state: squared distances, kernel, and its Cholesky factor."""

    def __init__(self, X: np.ndarray, cfg: SteinConfig):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need at least two samples in an (n, d) array")
        if not np.all(np.isfinite(X)):
            raise ValueError("samples must be finite")
        if np.all(X == X[0]):
            raise DegenerateDataError("all samples identical; the kernel system is degenerate")
        self.X = X
        n = X.shape[0]
        sq = np.sum(X * X, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
        np.maximum(d2, 0.0, out=d2)
        if cfg.bandwidth is not None:
            self.h = float(cfg.bandwidth)
        else:
            med = float(np.median(np.sqrt(d2[np.triu_indices(n, k=1)])))
            if med == 0.0:
                raise DegenerateDataError("median pairwise distance is zero")
            self.h = med * cfg.bandwidth_factor
        self.K = np.exp(-d2 / (2.0 * self.h * self.h))
        self.cho = cho_factor(self.K + cfg.ridge * np.eye(n), lower=True)
        # upper bound: lambda_max <= max row sum, lambda_min >= ridge
        self.condition_estimate = float((self.K.sum(axis=1).max() + cfg.ridge) / cfg.ridge)
        if self.condition_estimate > CONDITION_WARN_THRESHOLD:
            warnings.warn(
                f"kernel system may be ill-conditioned (bound {self.condition_estimate:.2e})",
                RuntimeWarning,
                stacklevel=3,
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.cho, rhs)

    def scores(self) -> np.ndarray:
        X, K, h = self.X, self.K, self.h
        b = (K.sum(axis=1)[:, None] * X - K @ X) / (h * h)
        return -self.solve(b)

    def hessian_rows(self, scores: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Hessians at the requested sample indices only (one solve per row)."""
        X, K, h = self.X, self.K, self.h
        d = X.shape[1]
        out = np.empty((len(rows), d, d))
        for pos, a in enumerate(rows):
            diff = X[a] - X  # (n, d)
            c = K[a][:, None, None] * (
                diff[:, :, None] * diff[:, None, :] / h**4 - np.eye(d) / h**2
            )
            basis = np.zeros(K.shape[0])
            basis[a] = 1.0
            weights = self.solve(basis)  # (K + eta I)^-1 e_a
            second = np.tensordot(weights, c, axes=(0, 0))
            mat = -np.outer(scores[a], scores[a]) + second
            out[pos] = 0.5 * (mat + mat.T)
        return out

    def hessians(self, scores: np.ndarray) -> np.ndarray:
        X, K, h = self.X, self.K, self.h
        n, d = X.shape
        hess = np.empty((n, d, d))
        diffs = [X[:, j][:, None] - X[:, j][None, :] for j in range(d)]
        for j in range(d):
            for k in range(j, d):
                c = K * diffs[j] * diffs[k] / h**4
                if j == k:
                    c -= K / (h * h)
                col = self.solve(c.sum(axis=1))
                hess[:, j, k] = col
                hess[:, k, j] = col
        hess -= scores[:, :, None] * scores[:, None, :]
        return 0.5 * (hess + np.transpose(hess, (0, 2, 1)))


def stein_score(X: np.ndarray, cfg: SteinConfig | None = None) -> np.ndarray:
    """Estimated score vectors, one row per sample."""
    cfg = cfg or SteinConfig()
    return _KernelSystem(X, cfg).scores()


def stein_hessian(X: np.ndarray, cfg: SteinConfig | None, scores: np.ndarray) -> np.ndarray:
    """Estimated log-density Hessians (n, d, d); `scores` must come from
    `stein_score` on the same data and configuration."""
    cfg = cfg or SteinConfig()
    return _KernelSystem(X, cfg).hessians(np.asarray(scores, dtype=float))


def estimate_field(X: np.ndarray, cfg: SteinConfig | None = None) -> ScoreHessianField:
    """Scores and full Hessians with the factorization shared between them."""
    cfg = cfg or SteinConfig()
    system = _KernelSystem(X, cfg)
    scores = system.scores()
    return ScoreHessianField(
        scores=scores,
        hessians=system.hessians(scores),
        bandwidth=system.h,
        condition_estimate=system.condition_estimate,
    )
