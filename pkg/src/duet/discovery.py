"""Support recovery pipeline: pair samples across environments, locate the
observation whose preimage is the source mean, difference the Hessians there,
and read the inverse-Jacobian support off the eigenvectors of the resulting
similarity matrix.

Stages, in order: per-environment score/Hessian estimation, nearest-neighbour
pairing against the base environment, mean location by minimal score
difference, grouped Hessian differences, the linear solve H1 M = H2,
eigendecomposition of M, permutation resolution by acyclicity, and support
thresholding with an acyclicity repair.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import MultiEnvDataset
from .graphs import Dag, edges_from_support, topological_order
from .oracle import oracle_hessian, oracle_score
from .scm import EnvironmentSet, ScmModel
from .stein import SteinConfig, _KernelSystem

CONDITION_LIMIT = 1e12
COMPLEX_TOL = 1e-8
DIAGONAL_FLOOR = 1e-10


class DiscoveryError(RuntimeError):
    """Pipeline failure, annotated with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class SingularDifferenceError(np.linalg.LinAlgError):
    pass


class SpectrumError(np.linalg.LinAlgError):
    pass


class NoAdmissibleDiagonalError(ValueError):
    pass


@dataclass(frozen=True)
class OracleEstimator:
    """Replaces kernel estimation with finite-difference oracle quantities."""

    model: ScmModel
    env: EnvironmentSet


@dataclass(frozen=True)
class DiscoveryConfig:
    estimator: SteinConfig | OracleEstimator = field(default_factory=SteinConfig)
    tau: float = 0.25
    gap_tol: float = 1e-3


@dataclass(frozen=True)
class MeanPairing:
    """Per auxiliary environment: the (base, environment) sample index pair
    with minimal estimated score difference, and that minimal value."""

    pairs: dict[int, tuple[int, int]]
    score_gaps: dict[int, float]
    aggregate_index: int | None = None
    aggregate_value: float | None = None

    def __post_init__(self):
        for env_index, (m_base, m_env) in self.pairs.items():
            if m_base < 0 or m_env < 0:
                raise ValueError(f"negative sample index for environment {env_index}")
            if self.score_gaps[env_index] < 0:
                raise ValueError("score differences are norms and cannot be negative")


@dataclass
class SupportEstimate:
    """Thresholded support with the row-normalized Jacobian estimate behind it."""

    jacobian: np.ndarray
    support: np.ndarray
    dag: Dag
    diagnostics: dict

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return self.dag.edges


def pair_observations(x_base: np.ndarray, x_env: np.ndarray) -> np.ndarray:
    """Index of the nearest environment sample for every base sample.

    Ties resolve to the smallest index.
    """
    if x_base.shape != x_env.shape:
        raise ValueError("environment sample matrices must share a shape")
    sq_b = np.sum(x_base * x_base, axis=1)
    sq_e = np.sum(x_env * x_env, axis=1)
    d2 = sq_b[:, None] + sq_e[None, :] - 2.0 * (x_base @ x_env.T)
    return np.argmin(d2, axis=1)


def locate_mean(scores: list[np.ndarray], pairings: dict[int, np.ndarray]) -> MeanPairing:
    """Pick, per auxiliary environment, the paired samples with the smallest
    score difference; those are the observations generated at the source mean.

    Also reports the aggregate criterion (base sample minimizing the norm of
    the summed per-environment differences) for diagnostics.
    """
    base = scores[0]
    n = base.shape[0]
    pairs: dict[int, tuple[int, int]] = {}
    gaps: dict[int, float] = {}
    total = np.zeros_like(base)
    for env_index, paired in sorted(pairings.items()):
        diff = base - scores[env_index][paired]
        norms = np.linalg.norm(diff, axis=1)
        m = int(np.argmin(norms))
        pairs[env_index] = (m, int(paired[m]))
        gaps[env_index] = float(norms[m])
        total += diff
    agg_norms = np.linalg.norm(total, axis=1)
    agg = int(np.argmin(agg_norms))
    return MeanPairing(
        pairs=pairs,
        score_gaps=gaps,
        aggregate_index=agg,
        aggregate_value=float(agg_norms[agg]),
    )


def hessian_differences(
    hessians: list[np.ndarray],
    pairing: MeanPairing,
    partition: tuple[tuple[int, ...], tuple[int, ...]],
) -> tuple[np.ndarray, np.ndarray]:
    """Summed (base - environment) Hessians at the mean pairs, per group."""
    one, two = partition
    if not one or not two:
        raise ValueError("both partition halves must be non-empty")
    out = []
    for group in (one, two):
        total = None
        for env_index in group:
            m_base, m_env = pairing.pairs[env_index]
            delta = hessians[0][m_base] - hessians[env_index][m_env]
            total = delta if total is None else total + delta
        out.append(0.5 * (total + total.T))
    return out[0], out[1]


def similarity_matrix(h1: np.ndarray, h2: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve h1 @ M = h2; M is similar to the diagonal ratio matrix in the
    exact case, with the inverse mixing Jacobian providing the eigenvectors."""
    cond = float(np.linalg.cond(h1))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularDifferenceError(
            f"summed Hessian difference is numerically singular (condition {cond:.2e}); "
            "the environment rescalings likely do not vary the source variances enough"
        )
    return np.linalg.solve(h1, h2), cond


@dataclass(frozen=True)
class SpectrumDiagnostics:
    eigenvalues: np.ndarray
    min_relative_gap: float
    near_degenerate: bool


def extract_scaled_permutation(m: np.ndarray, gap_tol: float = 1e-3) -> tuple[np.ndarray, SpectrumDiagnostics]:
    """Rows of inv(eigenvectors) recover the inverse Jacobian up to row scale
    and row permutation, provided the spectrum is real and simple.

    Eigenvalues are sorted descending. Imaginary parts below COMPLEX_TOL
    (relative) are discarded; anything larger means the diagonal ratios were
    not distinct enough and is an error.
    """
    vals, vecs = np.linalg.eig(m)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if np.max(np.abs(vals.imag)) > COMPLEX_TOL * scale:
        raise SpectrumError(
            "similarity matrix has a genuinely complex spectrum; the diagonal "
            "variance-change ratios of the two environment groups may coincide"
        )
    vals = vals.real
    vecs = vecs.real if np.max(np.abs(vecs.imag)) <= COMPLEX_TOL else vecs
    if np.iscomplexobj(vecs):
        raise SpectrumError("eigenvectors carry non-negligible imaginary parts")
    order = np.argsort(-vals)
    vals = vals[order]
    vecs = vecs[:, order]
    gaps = np.abs(np.diff(vals)) / scale
    min_gap = float(gaps.min()) if gaps.size else np.inf
    if min_gap < 1e-12:
        raise SpectrumError(
            "similarity matrix has (numerically) repeated eigenvalues; the "
            "diagonal variance-change ratios must be pairwise distinct"
        )
    cond_v = float(np.linalg.cond(vecs))
    if not np.isfinite(cond_v) or cond_v > CONDITION_LIMIT:
        raise SpectrumError("eigenvector basis is numerically defective")
    near = min_gap < gap_tol
    if near:
        warnings.warn(
            f"near-degenerate variance-change ratios (relative gap {min_gap:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    w = np.linalg.inv(vecs)
    return w, SpectrumDiagnostics(vals, min_gap, near)


def resolve_permutation(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reorder rows to maximize the product of |diagonal| entries, then scale
    each row to unit diagonal.

    Acyclic ground truth guarantees the maximizing assignment is the one that
    undoes the eigenvector permutation. Brute force for d <= 6, Hungarian
    assignment beyond.
    """
    d = w.shape[0]
    logabs = np.log(np.maximum(np.abs(w), 1e-300))
    if d <= 6:
        best, best_perm = -np.inf, None
        for perm in itertools.permutations(range(d)):
            val = sum(logabs[perm[j], j] for j in range(d))
            if val > best:
                best, best_perm = val, perm
        perm = np.asarray(best_perm)
    else:
        row_ind, col_ind = linear_sum_assignment(-logabs)
        perm = np.empty(d, dtype=int)
        perm[col_ind] = row_ind
    reordered = w[perm]
    diag = np.diag(reordered).copy()
    if np.any(np.abs(diag) < DIAGONAL_FLOOR):
        raise NoAdmissibleDiagonalError(
            "no admissible diagonal: the best row assignment still contains a "
            "near-zero diagonal entry, so the estimate is not invertible"
        )
    return perm, reordered / diag[:, None]


def support_threshold(jacobian: np.ndarray, tau: float) -> SupportEstimate:
    """Threshold off-diagonals of the unit-diagonal Jacobian estimate and
    assemble the graph; cyclic outcomes are repaired by dropping the weakest
    cycle edges until acyclic (each drop recorded)."""
    d = jacobian.shape[0]
    support = np.abs(jacobian) > tau
    np.fill_diagonal(support, True)
    edges = set(edges_from_support(support))
    repairs: list[tuple[int, int]] = []
    while topological_order(d, edges) is None:
        candidates = sorted(
            (e for e in edges if _on_cycle(d, edges, e)),
            key=lambda e: abs(jacobian[e[1], e[0]]),
        )
        drop = candidates[0]
        edges.remove(drop)
        repairs.append(drop)
        support[drop[1], drop[0]] = False
    dag = Dag.from_edges(d, edges)
    return SupportEstimate(
        jacobian=jacobian,
        support=support,
        dag=dag,
        diagnostics={"threshold": tau, "repaired_edges": repairs},
    )


def _on_cycle(d: int, edges: set[tuple[int, int]], edge: tuple[int, int]) -> bool:
    """True when the edge's head reaches back to its tail."""
    start, target = edge[1], edge[0]
    seen = {start}
    stack = [start]
    while stack:
        node = stack.pop()
        for p, c in edges:
            if p == node and c not in seen:
                if c == target:
                    return True
                seen.add(c)
                stack.append(c)
    return False


# ---------------------------------------------------------------------------
# End-to-end pipeline


def discover(
    dataset: MultiEnvDataset,
    partition: tuple[tuple[int, ...], tuple[int, ...]] | None = None,
    config: DiscoveryConfig | None = None,
) -> SupportEstimate:
    """Run the full pipeline on a multi-environment dataset.

    With a `SteinConfig` estimator the scores and Hessians are kernel
    estimates; with an `OracleEstimator` they are finite-difference values of
    the exact log-densities. Errors are re-raised tagged with the stage name.
    """
    config = config or DiscoveryConfig()
    if partition is None:
        partition = (dataset.env.part_one, dataset.env.part_two)
    one, two = partition
    k = dataset.n_envs - 1
    if k < 2 or not one or not two:
        raise DiscoveryError(
            "input", "need at least two auxiliary environments with both groups non-empty"
        )

    oracle_mode = isinstance(config.estimator, OracleEstimator)
    try:
        if oracle_mode:
            scores, hessian_at = _oracle_quantities(dataset, config.estimator)
        else:
            scores, hessian_at = _stein_quantities(dataset, config.estimator)
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("estimation", str(err)) from err

    try:
        pairings = {
            e: pair_observations(dataset.data[0], dataset.data[e]) for e in range(1, k + 1)
        }
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("pairing", str(err)) from err

    try:
        pairing = locate_mean(scores, pairings)
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("mean-location", str(err)) from err

    try:
        hessians = hessian_at(pairing)
        h1, h2 = hessian_differences(hessians, pairing, partition)
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("hessian-differences", str(err)) from err

    try:
        m, cond = similarity_matrix(h1, h2)
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("similarity", str(err)) from err

    try:
        w, spectrum = extract_scaled_permutation(m, config.gap_tol)
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("diagonalization", str(err)) from err

    try:
        perm, jac = resolve_permutation(w)
    except Exception as err:  # noqa: BLE001
        raise DiscoveryError("permutation", str(err)) from err

    estimate = support_threshold(jac, config.tau)
    estimate.diagnostics.update(
        {
            "mean_pair_indices": dict(pairing.pairs),
            "score_gaps": dict(pairing.score_gaps),
            "score_gap_dispersion": float(np.std(list(pairing.score_gaps.values()))),
            "aggregate_mean_index": pairing.aggregate_index,
            "eigenvalues": spectrum.eigenvalues.tolist(),
            "eig_gap": spectrum.min_relative_gap,
            "near_degenerate": spectrum.near_degenerate,
            "condition_numbers": {"hessian_difference": cond},
            "permutation": perm.tolist(),
        }
    )
    return estimate


def _stein_quantities(dataset: MultiEnvDataset, cfg: SteinConfig):
    systems = [_KernelSystem(dataset.data[e], cfg) for e in range(dataset.n_envs)]
    scores = [sys_.scores() for sys_ in systems]

    def hessian_at(pairing: MeanPairing) -> list[dict[int, np.ndarray] | np.ndarray]:
        needed: dict[int, set[int]] = {e: set() for e in range(dataset.n_envs)}
        for e, (m_base, m_env) in pairing.pairs.items():
            needed[0].add(m_base)
            needed[e].add(m_env)
        out = []
        for e in range(dataset.n_envs):
            rows = sorted(needed[e])
            if rows:
                mats = systems[e].hessian_rows(scores[e], np.asarray(rows))
                out.append({r: mats[i] for i, r in enumerate(rows)})
            else:
                out.append({})
        return out

    return scores, hessian_at


def _oracle_quantities(dataset: MultiEnvDataset, est: OracleEstimator):
    scores = [
        oracle_score(est.model, est.env, e, dataset.data[e]) for e in range(dataset.n_envs)
    ]

    def hessian_at(pairing: MeanPairing) -> list[dict[int, np.ndarray]]:
        needed: dict[int, set[int]] = {e: set() for e in range(dataset.n_envs)}
        for e, (m_base, m_env) in pairing.pairs.items():
            needed[0].add(m_base)
            needed[e].add(m_env)
        out = []
        for e in range(dataset.n_envs):
            rows = sorted(needed[e])
            if rows:
                mats = oracle_hessian(est.model, est.env, e, dataset.data[e][rows])
                out.append({r: mats[i] for i, r in enumerate(rows)})
            else:
                out.append({})
        return out

    return scores, hessian_at
