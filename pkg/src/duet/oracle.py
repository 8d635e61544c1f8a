"""Estimation-free ground truth: log-densities, scores, Hessians, Omega matrices.

The observed log-density follows from the change of variables
log p^i(x) = log p^i_src(f^-1(x)) + log|det J_{f^-1}(x)|, with f inverted by
per-node scalar solves along the triangular system. Scores and Hessians are
central finite differences of that quantity; for Gaussian sources the summed
Hessian differences between base and rescaled environments have an exact
diagonal closed form (the Omega matrices), which is what the numerical
verification below checks against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scm import (
    EnvironmentSet,
    ScmModel,
    SourceSpec,
    analytic_inverse_jacobian,
    env_log_density,
    invert_mixing,
    log_abs_det_inverse_jacobian,
    make_rng,
    mix,
)

SCORE_STEP = 1e-4
SINGULAR_OMEGA_TOL = 1e-12


class SingularOmegaError(ValueError):
    pass


def log_density_x(model: ScmModel, env: EnvironmentSet, env_index: int, x: np.ndarray) -> float | np.ndarray:
    """log-density of the observations of one environment at x (batched row-wise)."""
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    s2 = invert_mixing(model, x2)
    out = env_log_density(model.sources, env, env_index, s2)
    out = out + log_abs_det_inverse_jacobian(model, x2, s2)
    return float(out[0]) if single else out


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return SCORE_STEP * (1.0 + np.abs(x))


def oracle_score(model: ScmModel, env: EnvironmentSet, env_index: int, x: np.ndarray) -> np.ndarray:
    """Central finite-difference gradient of `log_density_x` (batched row-wise)."""
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    m, d = x2.shape
    h = _fd_steps(x2)
    stencil = np.empty((2 * d, m, d))
    for j in range(d):
        hi = x2.copy()
        lo = x2.copy()
        hi[:, j] += h[:, j]
        lo[:, j] -= h[:, j]
        stencil[2 * j] = hi
        stencil[2 * j + 1] = lo
    vals = log_density_x(model, env, env_index, stencil.reshape(-1, d)).reshape(2 * d, m)
    score = np.empty((m, d))
    for j in range(d):
        score[:, j] = (vals[2 * j] - vals[2 * j + 1]) / (2.0 * h[:, j])
    return score[0] if single else score


def oracle_hessian(model: ScmModel, env: EnvironmentSet, env_index: int, x: np.ndarray) -> np.ndarray:
    """Hessian of the log-density via differences of the score, symmetrized.

    The step vector is frozen at the query point and reused for the inner
    score evaluations so the stencil stays symmetric.
    """
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    m, d = x2.shape
    h = _fd_steps(x2)
    # all (j, k, +-, +-) corner points in one batched density call
    corners = np.empty((2 * d, m, d))
    for j in range(d):
        hi = x2.copy()
        lo = x2.copy()
        hi[:, j] += h[:, j]
        lo[:, j] -= h[:, j]
        corners[2 * j] = hi
        corners[2 * j + 1] = lo
    scores = _score_with_fixed_steps(model, env, env_index, corners.reshape(-1, d), np.tile(h, (2 * d, 1)))
    scores = scores.reshape(2 * d, m, d)
    hess = np.empty((m, d, d))
    for j in range(d):
        hess[:, j, :] = (scores[2 * j] - scores[2 * j + 1]) / (2.0 * h[:, j])[:, None]
    hess = 0.5 * (hess + np.transpose(hess, (0, 2, 1)))
    return hess[0] if single else hess


def _score_with_fixed_steps(model, env, env_index, x2, h) -> np.ndarray:
    m, d = x2.shape
    stencil = np.empty((2 * d, m, d))
    for j in range(d):
        hi = x2.copy()
        lo = x2.copy()
        hi[:, j] += h[:, j]
        lo[:, j] -= h[:, j]
        stencil[2 * j] = hi
        stencil[2 * j + 1] = lo
    vals = log_density_x(model, env, env_index, stencil.reshape(-1, d)).reshape(2 * d, m)
    score = np.empty((m, d))
    for j in range(d):
        score[:, j] = (vals[2 * j] - vals[2 * j + 1]) / (2.0 * h[:, j])
    return score


def score_difference_sum(model: ScmModel, env: EnvironmentSet, x: np.ndarray) -> np.ndarray:
    """Sum over auxiliary environments of (base score - environment score) at x.

    Vanishes exactly when the preimage of x is the source mean, which is what
    the mean-location step of the discovery pipeline exploits.
    """
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    base = oracle_score(model, env, 0, x2)
    total = np.zeros_like(base)
    for i in range(1, env.k + 1):
        total += base - oracle_score(model, env, i, x2)
    return total[0] if single else total


# ---------------------------------------------------------------------------
# Omega matrices and assumption checkers


@dataclass(frozen=True)
class OmegaPair:
    """Diagonals of the two summed Hessian-difference matrices (one per group)."""

    omega1: np.ndarray
    omega2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega1", np.asarray(self.omega1, dtype=float))
        object.__setattr__(self, "omega2", np.asarray(self.omega2, dtype=float))

    @property
    def full_rank(self) -> tuple[bool, bool]:
        return (
            bool(np.all(np.abs(self.omega1) > SINGULAR_OMEGA_TOL)),
            bool(np.all(np.abs(self.omega2) > SINGULAR_OMEGA_TOL)),
        )

    def ratios(self) -> np.ndarray:
        if np.any(np.abs(self.omega1) < SINGULAR_OMEGA_TOL):
            raise SingularOmegaError("first Omega matrix is numerically singular")
        return self.omega2 / self.omega1

    @staticmethod
    def from_lambda_sums(env: EnvironmentSet) -> "OmegaPair":
        """Family-independent variant with unit source variances.

        Diagonal ratios only depend on the rescaling factors, so this is
        enough for the distinct-ratio check with non-Gaussian sources.
        """
        s1, s2 = _group_sums(env)
        return OmegaPair(s1 - len(env.part_one), s2 - len(env.part_two))


def _group_sums(env: EnvironmentSet) -> tuple[np.ndarray, np.ndarray]:
    inv_sq = 1.0 / env.lambdas**2
    s1 = sum(inv_sq[i - 1] for i in env.part_one)
    s2 = sum(inv_sq[i - 1] for i in env.part_two)
    return np.asarray(s1, float), np.asarray(s2, float)


def omega_matrices(spec: SourceSpec, env: EnvironmentSet) -> OmegaPair:
    """Closed-form Omega diagonals for Gaussian sources:
    (Omega_l)_jj = (sum_{i in I_l} 1/lambda_ij^2 - |I_l|) / sigma_j^2.
    """
    if spec.family != "gaussian":
        raise ValueError("closed-form Omega matrices exist for Gaussian sources only")
    s1, s2 = _group_sums(env)
    return OmegaPair(
        (s1 - len(env.part_one)) / spec.variance,
        (s2 - len(env.part_two)) / spec.variance,
    )


@dataclass(frozen=True)
class VariabilityReport:
    """Violations of the sufficient-variability requirement, per (coordinate, group)."""

    violations: tuple[tuple[int, int], ...]
    margins: np.ndarray  # (2, d): |group sum - group size|
    tol: float

    @property
    def passed(self) -> bool:
        return not self.violations


def check_sufficient_variability(
    spec: SourceSpec | None, env: EnvironmentSet, tol: float = 1e-9
) -> VariabilityReport:
    """Flag coordinates whose rescaling factors fail to move the group variance.

    Coordinate j of group l violates the requirement when
    sum_{i in I_l} 1/lambda_ij^2 is within tol of |I_l| (the value attained
    when nothing is rescaled), which makes the corresponding Omega singular.
    """
    s1, s2 = _group_sums(env)
    margins = np.stack([np.abs(s1 - len(env.part_one)), np.abs(s2 - len(env.part_two))])
    violations = [
        (int(j), l + 1) for l in range(2) for j in range(env.d) if margins[l, j] <= tol
    ]
    return VariabilityReport(tuple(violations), margins, tol)


@dataclass(frozen=True)
class RatioReport:
    """Near-collisions among the diagonal ratios of the two Omega matrices."""

    violations: tuple[tuple[int, int], ...]
    ratios: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return not self.violations


def check_distinct_ratios(pair: OmegaPair, tol: float = 1e-9) -> RatioReport:
    """Flag index pairs whose Omega ratio gap falls below tol * max |ratio|."""
    ratios = pair.ratios()
    scale = np.max(np.abs(ratios))
    violations = []
    d = ratios.shape[0]
    for i in range(d):
        for j in range(i + 1, d):
            if abs(ratios[i] - ratios[j]) <= tol * scale:
                violations.append((i, j))
    return RatioReport(tuple(violations), ratios, tol)


# ---------------------------------------------------------------------------
# Numerical verification of the Hessian-difference identity


@dataclass(frozen=True)
class HessianIdentityResult:
    """Residuals of the summed-Hessian-difference identity at the mean image."""

    residual: float  # max over the two groups, relative Frobenius
    residuals: tuple[float, float]
    lhs: tuple[np.ndarray, np.ndarray]
    rhs: tuple[np.ndarray, np.ndarray]
    off_mean_residuals: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __float__(self) -> float:
        return self.residual


def _identity_residuals(model, env, x_point) -> tuple[tuple[float, float], tuple, tuple]:
    hess = [oracle_hessian(model, env, i, x_point) for i in range(env.k + 1)]
    jac = analytic_inverse_jacobian(model, x_point)
    pair = omega_matrices(model.sources, env)
    lhs, rhs, residuals = [], [], []
    for omega, group in ((pair.omega1, env.part_one), (pair.omega2, env.part_two)):
        left = sum(hess[0] - hess[i] for i in group)
        right = jac.T @ np.diag(omega) @ jac
        lhs.append(left)
        rhs.append(right)
        residuals.append(
            float(np.linalg.norm(left - right) / max(np.linalg.norm(right), 1e-300))
        )
    return (residuals[0], residuals[1]), tuple(lhs), tuple(rhs)


def verify_lemma_hessian_identity(
    model: ScmModel,
    env: EnvironmentSet,
    n_check: int = 0,
    seed: int = 0,
) -> HessianIdentityResult:
    """Compare both sides of the Hessian-difference identity at x* = f(mu_S).

    Requires Gaussian sources. When n_check > 0, also evaluates the residual
    at n_check random points bounded away from the mean (where the identity
    is not expected to hold) for diagnostic comparison.
    """
    if model.sources.family != "gaussian":
        raise ValueError("the identity check assumes Gaussian sources")
    x_star = mix(model, model.sources.mean)
    residuals, lhs, rhs = _identity_residuals(model, env, x_star)
    off = np.empty(0)
    if n_check > 0:
        rng = make_rng(seed, 7)
        samples = []
        while len(samples) < n_check:
            s = model.sources.sample_base(1, rng)[0]
            if np.linalg.norm(s - model.sources.mean) >= 0.5:
                samples.append(s)
        off = np.array(
            [max(_identity_residuals(model, env, mix(model, s))[0]) for s in samples]
        )
    return HessianIdentityResult(
        residual=max(residuals),
        residuals=residuals,
        lhs=lhs,
        rhs=rhs,
        off_mean_residuals=off,
    )
