"""Structural causal models, rescaled environments, and the induced mixing map.

An SCM assigns x_i := F_i(x_parents, s_i) along a topological order of its
DAG, which induces a triangular diffeomorphism f with x = f(s). Environments
share f and rescale the variance of each source about its mean:
s^i = mu + L_i (s - mu) with L_i = diag(lambda^i) and lambda^i_j != 0, so
every environment keeps the source mean mu and the i-th source variances
scale by (lambda^i_j)^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.special import gammaln

from .graphs import Dag

NEWTON_BRACKET = 50.0


class MechanismDomainError(ValueError):
    """A mechanism produced a non-finite value."""

    def __init__(self, msg: str, env_index: int | None = None, row: int | None = None, node: int | None = None):
        coords = []
        if env_index is not None:
            coords.append(f"environment {env_index}")
        if row is not None:
            coords.append(f"sample {row}")
        if node is not None:
            coords.append(f"node {node}")
        if coords:
            msg = f"{msg} ({', '.join(coords)})"
        super().__init__(msg)
        self.env_index = env_index
        self.row = row
        self.node = node


class SingularJacobianError(ValueError):
    pass


class InversionError(RuntimeError):
    pass


def make_rng(*entropy) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a tuple of integers.

    All randomness in the package flows through here so that seed streams are
    reproducible from the documented (key-tuple) convention alone.
    """
    flat: list[int] = []
    for item in entropy:
        if isinstance(item, (tuple, list)):
            flat.extend(int(v) for v in item)
        else:
            flat.append(int(item))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(flat)))


# ---------------------------------------------------------------------------
# Sources


@dataclass(frozen=True)
class SourceSpec:
    """Factorized source distribution: independent Gaussian or Gamma coordinates."""

    family: Literal["gaussian", "gamma"]
    mean: np.ndarray
    variance: np.ndarray | None = None  # gaussian only
    shape: np.ndarray | None = None  # gamma only
    scale: np.ndarray | None = None  # gamma only

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        if self.family == "gaussian":
            if self.variance is None:
                raise ValueError("gaussian sources need variances")
            var = np.asarray(self.variance, dtype=float)
            object.__setattr__(self, "variance", var)
            if var.shape != self.mean.shape:
                raise ValueError("variance and mean shapes differ")
            if np.any(var <= 0):
                raise ValueError("variances must be positive")
        elif self.family == "gamma":
            if self.shape is None or self.scale is None:
                raise ValueError("gamma sources need shape and scale vectors")
            a = np.asarray(self.shape, dtype=float)
            t = np.asarray(self.scale, dtype=float)
            object.__setattr__(self, "shape", a)
            object.__setattr__(self, "scale", t)
            if np.any(a <= 0) or np.any(t <= 0):
                raise ValueError("gamma shape and scale must be positive")
            if not np.allclose(self.mean, a * t):
                raise ValueError("gamma mean must equal shape * scale")
        else:
            raise ValueError(f"unknown source family {self.family!r}")

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def gaussian(mean, variance) -> "SourceSpec":
        return SourceSpec(family="gaussian", mean=np.asarray(mean, float), variance=np.asarray(variance, float))

    @staticmethod
    def gamma(shape, scale) -> "SourceSpec":
        shape = np.asarray(shape, float)
        scale = np.asarray(scale, float)
        return SourceSpec(family="gamma", mean=shape * scale, shape=shape, scale=scale)

    def sample_base(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "gaussian":
            return self.mean + np.sqrt(self.variance) * rng.standard_normal((n, self.d))
        return rng.gamma(self.shape, self.scale, size=(n, self.d))

    def log_density_base(self, s: np.ndarray) -> np.ndarray:
        """Sum over coordinates of the base log-density, row-wise."""
        s = np.atleast_2d(s)
        if self.family == "gaussian":
            z = (s - self.mean) ** 2 / self.variance
            return -0.5 * np.sum(z + np.log(2.0 * np.pi * self.variance), axis=1)
        out = np.full(s.shape[0], -np.inf)
        ok = np.all(s > 0, axis=1)
        if np.any(ok):
            sp = s[ok]
            term = (
                (self.shape - 1) * np.log(sp)
                - sp / self.scale
                - self.shape * np.log(self.scale)
                - gammaln(self.shape)
            )
            out[ok] = np.sum(term, axis=1)
        return out


# ---------------------------------------------------------------------------
# Environments


@dataclass(frozen=True)
class EnvironmentSet:
    """k auxiliary rescaling environments and their two-group partition.

    `lambdas[i-1]` holds the diagonal of L_i for auxiliary environment i
    (environments are numbered 1..k to match dataset slices; slice 0 is the
    base environment with lambda = 1).
    """

    lambdas: np.ndarray
    part_one: tuple[int, ...]
    part_two: tuple[int, ...]

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "part_one", tuple(int(i) for i in self.part_one))
        object.__setattr__(self, "part_two", tuple(int(i) for i in self.part_two))
        if lam.ndim != 2:
            raise ValueError("lambdas must be a k x d matrix")
        if np.any(lam == 0):
            raise ValueError("rescaling factors must be nonzero")
        k = lam.shape[0]
        one, two = set(self.part_one), set(self.part_two)
        if not one or not two:
            raise ValueError("both partition halves must be non-empty")
        if one & two:
            raise ValueError("partition halves overlap")
        if one | two != set(range(1, k + 1)):
            raise ValueError("partition must cover environments 1..k")

    @property
    def k(self) -> int:
        return self.lambdas.shape[0]

    @property
    def d(self) -> int:
        return self.lambdas.shape[1]

    def lambda_for(self, env_index: int) -> np.ndarray:
        if not 0 <= env_index <= self.k:
            raise ValueError(f"environment index {env_index} out of range 0..{self.k}")
        if env_index == 0:
            return np.ones(self.d)
        return self.lambdas[env_index - 1]

    def flip_sign(self, env_index: int) -> "EnvironmentSet":
        """Copy with one auxiliary environment's lambda row negated."""
        lam = self.lambdas.copy()
        lam[env_index - 1] *= -1.0
        return EnvironmentSet(lam, self.part_one, self.part_two)

    @staticmethod
    def even_partition(k: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """First ceil(k/2) auxiliaries in group one, the rest in group two."""
        split = (k + 1) // 2
        return tuple(range(1, split + 1)), tuple(range(split + 1, k + 1))

    @staticmethod
    def sample(
        k: int,
        d: int,
        rng: np.random.Generator,
        low: float = 1.5,
        high: float = 2.5,
        signed: bool = True,
    ) -> "EnvironmentSet":
        """Draw lambda entries uniformly from [low, high], random sign if `signed`."""
        lam = rng.uniform(low, high, size=(k, d))
        if signed:
            lam *= np.where(rng.random((k, d)) < 0.5, -1.0, 1.0)
        one, two = EnvironmentSet.even_partition(k)
        return EnvironmentSet(lam, one, two)


def env_log_density(spec: SourceSpec, env: EnvironmentSet, env_index: int, s: np.ndarray) -> np.ndarray:
    """Row-wise log-density of the sources in one environment.

    With s^i = mu + L_i (s - mu), the density is
    p^i(s) = p_base(mu + (s - mu)/lambda) / prod_j |lambda_j|.
    """
    lam = env.lambda_for(env_index)
    s = np.atleast_2d(s)
    pulled = spec.mean + (s - spec.mean) / lam
    return spec.log_density_base(pulled) - np.sum(np.log(np.abs(lam)))


# ---------------------------------------------------------------------------
# Mechanisms

MechanismKind = Literal[
    "linear", "anm", "pnl", "lsnm", "arbitrary-i", "arbitrary-ii", "arbitrary-iii", "custom"
]

BUILTIN_KINDS: tuple[str, ...] = (
    "linear",
    "anm",
    "pnl",
    "lsnm",
    "arbitrary-i",
    "arbitrary-ii",
    "arbitrary-iii",
)


class Mechanism:
    """Per-node structural assignments x_i = F_i(x_parents, s_i).

    Nodes without parents always evaluate to their own source. Subclasses
    define the parented case through the parent aggregate or, for the linear
    kind, per-edge coefficients. All array arguments are batched row-wise.
    """

    kind: str = "custom"

    def value(self, node: int, parents: np.ndarray, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def d_parents(self, node: int, parents: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Partials w.r.t. each parent column, shape like `parents`."""
        raise NotImplementedError

    def d_source(self, node: int, parents: np.ndarray, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def solve_source(self, node: int, parents: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Invert x = F(parents, s) for s; default is damped Newton."""
        return _newton_solve_source(self, node, parents, x)


class _AggregateMechanism(Mechanism):
    """Mechanisms of the form x = phi(a, s) with a the sum of parent values."""

    def _phi(self, a, s):
        raise NotImplementedError

    def _dphi_da(self, a, s):
        raise NotImplementedError

    def _dphi_ds(self, a, s):
        raise NotImplementedError

    def _solve(self, a, x):
        return None  # no closed form; Newton fallback

    def value(self, node, parents, s):
        a = parents.sum(axis=1)
        return self._phi(a, s)

    def d_parents(self, node, parents, s):
        a = parents.sum(axis=1)
        da = self._dphi_da(a, s)
        return np.repeat(da[:, None], parents.shape[1], axis=1)

    def d_source(self, node, parents, s):
        a = parents.sum(axis=1)
        return self._dphi_ds(a, s)

    def solve_source(self, node, parents, x):
        a = parents.sum(axis=1)
        closed = self._solve(a, x)
        if closed is not None:
            return closed
        return _newton_solve_source(self, node, parents, x)


class ArbitraryI(_AggregateMechanism):
    """x = a^2 arctan(s) + s^3."""

    kind = "arbitrary-i"

    def _phi(self, a, s):
        return a**2 * np.arctan(s) + s**3

    def _dphi_da(self, a, s):
        return 2.0 * a * np.arctan(s)

    def _dphi_ds(self, a, s):
        return a**2 / (1.0 + s**2) + 3.0 * s**2


class ArbitraryII(_AggregateMechanism):
    """x = a^2 s + arctan(s)."""

    kind = "arbitrary-ii"

    def _phi(self, a, s):
        return a**2 * s + np.arctan(s)

    def _dphi_da(self, a, s):
        return 2.0 * a * s

    def _dphi_ds(self, a, s):
        return a**2 + 1.0 / (1.0 + s**2)


class ArbitraryIII(_AggregateMechanism):
    """x = a^2 + arctan(a) s + a s^3."""

    kind = "arbitrary-iii"

    def _phi(self, a, s):
        return a**2 + np.arctan(a) * s + a * s**3

    def _dphi_da(self, a, s):
        return 2.0 * a + s / (1.0 + a**2) + s**3

    def _dphi_ds(self, a, s):
        return np.arctan(a) + 3.0 * a * s**2


def _sech2(x):
    """sech(x)^2 without overflow at large |x|."""
    e = np.exp(-np.abs(x))
    return (2.0 * e / (1.0 + e * e)) ** 2


class Anm(_AggregateMechanism):
    """Additive noise: x = a^3/3 + tanh(2a) + s."""

    kind = "anm"

    def _phi(self, a, s):
        return a**3 / 3.0 + np.tanh(2.0 * a) + s

    def _dphi_da(self, a, s):
        return a**2 + 2.0 * _sech2(2.0 * a)

    def _dphi_ds(self, a, s):
        return np.ones_like(s)

    def _solve(self, a, x):
        return x - a**3 / 3.0 - np.tanh(2.0 * a)


class Pnl(_AggregateMechanism):
    """Post-nonlinear: x = (a^2 + s)^3; the outer cube is strictly monotone."""

    kind = "pnl"

    def _phi(self, a, s):
        return (a**2 + s) ** 3

    def _dphi_da(self, a, s):
        return 3.0 * (a**2 + s) ** 2 * 2.0 * a

    def _dphi_ds(self, a, s):
        return 3.0 * (a**2 + s) ** 2

    def _solve(self, a, x):
        return np.cbrt(x) - a**2


class Lsnm(_AggregateMechanism):
    """Location-scale: x = tanh(a) + (0.5 + a^2) s; the scale stays >= 0.5."""

    kind = "lsnm"

    def _phi(self, a, s):
        return np.tanh(a) + (0.5 + a**2) * s

    def _dphi_da(self, a, s):
        return _sech2(a) + 2.0 * a * s

    def _dphi_ds(self, a, s):
        return 0.5 + a**2

    def _solve(self, a, x):
        return (x - np.tanh(a)) / (0.5 + a**2)


class Linear(Mechanism):
    """x = B x + s with per-edge coefficients.

    `weights[node]` maps each node to its coefficient vector over the sorted
    parent tuple.
    """

    kind = "linear"

    def __init__(self, weights: dict[int, np.ndarray]):
        self.weights = {int(n): np.asarray(w, dtype=float) for n, w in weights.items()}

    def value(self, node, parents, s):
        return parents @ self.weights[node] + s

    def d_parents(self, node, parents, s):
        return np.broadcast_to(self.weights[node], parents.shape).copy()

    def d_source(self, node, parents, s):
        return np.ones_like(s)

    def solve_source(self, node, parents, x):
        return x - parents @ self.weights[node]

    @staticmethod
    def sample(dag: Dag, rng: np.random.Generator, low: float = 0.5, high: float = 1.5) -> "Linear":
        """Coefficients uniform on +-[low, high], keeping every edge away from zero."""
        weights = {}
        for node in range(dag.d):
            pa = dag.parents(node)
            if pa:
                w = rng.uniform(low, high, size=len(pa))
                w *= np.where(rng.random(len(pa)) < 0.5, -1.0, 1.0)
                weights[node] = w
        return Linear(weights)

    def matrix(self, dag: Dag) -> np.ndarray:
        """The d x d coefficient matrix B with B[i, p] the weight of p -> i."""
        b = np.zeros((dag.d, dag.d))
        for node, w in self.weights.items():
            for col, p in enumerate(dag.parents(node)):
                b[node, p] = w[col]
        return b


class Custom(Mechanism):
    """User-supplied mechanism; derivatives fall back to finite differences."""

    kind = "custom"

    def __init__(
        self,
        value: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
        d_parents: Callable | None = None,
        d_source: Callable | None = None,
    ):
        self._value = value
        self._d_parents = d_parents
        self._d_source = d_source

    def value(self, node, parents, s):
        return self._value(node, parents, s)

    def d_parents(self, node, parents, s):
        if self._d_parents is not None:
            return self._d_parents(node, parents, s)
        out = np.empty_like(parents)
        for col in range(parents.shape[1]):
            h = 1e-6 * (1.0 + np.abs(parents[:, col]))
            hi = parents.copy()
            lo = parents.copy()
            hi[:, col] += h
            lo[:, col] -= h
            out[:, col] = (self._value(node, hi, s) - self._value(node, lo, s)) / (2 * h)
        return out

    def d_source(self, node, parents, s):
        if self._d_source is not None:
            return self._d_source(node, parents, s)
        h = 1e-6 * (1.0 + np.abs(s))
        return (self._value(node, parents, s + h) - self._value(node, parents, s - h)) / (2 * h)


def _newton_solve_source(mech: Mechanism, node: int, parents: np.ndarray, x: np.ndarray,
                         tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Damped per-sample Newton for s in x = F(parents, s), monotone in s.

    Falls back to bisection on [-NEWTON_BRACKET, NEWTON_BRACKET] (expanded
    geometrically if the root lies outside) for rows Newton fails to settle.
    """
    s = x.astype(float).copy()
    scale = 1.0 + np.abs(x)
    for _ in range(max_iter):
        r = mech.value(node, parents, s) - x
        if np.all(np.abs(r) <= tol * scale):
            return s
        g = mech.d_source(node, parents, s)
        g = np.where(np.abs(g) < 1e-300, 1e-300, g)
        step = r / g
        # damping: halve the step while it worsens the residual
        new = s - step
        worse = np.abs(mech.value(node, parents, new) - x) > np.abs(r)
        for _halving in range(30):
            if not np.any(worse):
                break
            step = np.where(worse, step * 0.5, step)
            new = s - step
            worse = np.abs(mech.value(node, parents, new) - x) > np.abs(r)
        s = new
    r = mech.value(node, parents, s) - x
    bad = ~(np.abs(r) <= 1e-10 * scale)
    if np.any(bad):
        s[bad] = _bisect_source(mech, node, parents[bad], x[bad])
        r = mech.value(node, parents, s) - x
        if not np.all(np.abs(r) <= 1e-10 * scale):
            raise InversionError(
                f"source inversion did not converge at node {node} after {max_iter} iterations"
            )
    return s


def _bisect_source(mech: Mechanism, node: int, parents: np.ndarray, x: np.ndarray) -> np.ndarray:
    lo = np.full(x.shape, -NEWTON_BRACKET)
    hi = np.full(x.shape, NEWTON_BRACKET)
    f_lo = mech.value(node, parents, lo) - x
    f_hi = mech.value(node, parents, hi) - x
    for _ in range(40):  # widen until the bracket straddles the root
        out = f_lo * f_hi > 0
        if not np.any(out):
            break
        lo = np.where(out, lo * 2, lo)
        hi = np.where(out, hi * 2, hi)
        f_lo = mech.value(node, parents, lo) - x
        f_hi = mech.value(node, parents, hi) - x
    if np.any(f_lo * f_hi > 0):
        raise InversionError(f"no sign change found for node {node} inversion")
    increasing = f_hi >= f_lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = mech.value(node, parents, mid) - x
        go_right = np.where(increasing, f_mid < 0, f_mid > 0)
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    return 0.5 * (lo + hi)


_MECHANISM_FACTORIES: dict[str, Callable[[Dag, np.random.Generator], Mechanism]] = {
    "linear": lambda dag, rng: Linear.sample(dag, rng),
    "anm": lambda dag, rng: Anm(),
    "pnl": lambda dag, rng: Pnl(),
    "lsnm": lambda dag, rng: Lsnm(),
    "arbitrary-i": lambda dag, rng: ArbitraryI(),
    "arbitrary-ii": lambda dag, rng: ArbitraryII(),
    "arbitrary-iii": lambda dag, rng: ArbitraryIII(),
}


def make_mechanism(kind: str, dag: Dag, rng: np.random.Generator | None = None) -> Mechanism:
    if kind not in _MECHANISM_FACTORIES:
        raise ValueError(f"unknown mechanism kind {kind!r}; builtin kinds: {BUILTIN_KINDS}")
    if rng is None:
        rng = make_rng(0)
    return _MECHANISM_FACTORIES[kind](dag, rng)


# ---------------------------------------------------------------------------
# The model and its operations


@dataclass(frozen=True)
class ScmModel:
    dag: Dag
    mechanism: Mechanism
    sources: SourceSpec

    def __post_init__(self):
        if self.sources.d != self.dag.d:
            raise ValueError("source dimension does not match the graph")

    @property
    def d(self) -> int:
        return self.dag.d


def sample_sources(
    spec: SourceSpec,
    env: EnvironmentSet,
    env_index: int,
    n: int,
    seed,
) -> np.ndarray:
    """Draw n rows of environment `env_index` sources (0 is the base).

    Deterministic given the seed; auxiliary environments rescale the same
    base draw about the mean, so identical seeds share the underlying base
    sample across environments.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if env.d != spec.d:
        raise ValueError("environment and source dimensions differ")
    rng = make_rng(seed)
    s = spec.sample_base(n, rng)
    if env_index == 0:
        return s
    lam = env.lambda_for(env_index)
    return spec.mean + lam * (s - spec.mean)


def mix(model: ScmModel, sources: np.ndarray, env_index: int | None = None) -> np.ndarray:
    """Evaluate the mixing map row-wise by topological substitution."""
    single = np.asarray(sources).ndim == 1
    s = np.atleast_2d(np.asarray(sources, dtype=float))
    if not np.all(np.isfinite(s)):
        raise MechanismDomainError("sources contain non-finite values", env_index=env_index)
    x = np.empty_like(s)
    for node in model.dag.order:
        pa = model.dag.parents(node)
        if not pa:
            x[:, node] = s[:, node]
        else:
            x[:, node] = model.mechanism.value(node, x[:, list(pa)], s[:, node])
        col = x[:, node]
        if not np.all(np.isfinite(col)):
            row = int(np.flatnonzero(~np.isfinite(col))[0])
            raise MechanismDomainError(
                "mechanism produced a non-finite value", env_index=env_index, row=row, node=node
            )
    return x[0] if single else x


def invert_mixing(model: ScmModel, x: np.ndarray) -> np.ndarray:
    """Recover sources from observations via per-node scalar solves."""
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    s = np.empty_like(x2)
    for node in model.dag.order:
        pa = model.dag.parents(node)
        if not pa:
            s[:, node] = x2[:, node]
        else:
            s[:, node] = model.mechanism.solve_source(node, x2[:, list(pa)], x2[:, node])
    return s if np.asarray(x).ndim == 2 else s[0]


def _node_partials(model: ScmModel, x2: np.ndarray, s2: np.ndarray, node: int):
    """(dF/dparents, dF/ds) for one node at batched (x, s)."""
    pa = model.dag.parents(node)
    if not pa:
        n = x2.shape[0]
        return np.zeros((n, 0)), np.ones(n)
    parents = x2[:, list(pa)]
    return (
        model.mechanism.d_parents(node, parents, s2[:, node]),
        model.mechanism.d_source(node, parents, s2[:, node]),
    )


def analytic_inverse_jacobian(model: ScmModel, x: np.ndarray, sources: np.ndarray | None = None) -> np.ndarray:
    """Jacobian of the inverse mixing at x.

    Row i comes from implicit differentiation of x_i = F_i(x_parents, s_i):
    the diagonal entry is 1/(dF_i/ds_i) and the parent columns are
    -(dF_i/dx_p)/(dF_i/ds_i). The forward determinant is the product of the
    source partials (triangular order), so near-zero products are rejected.
    """
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    s2 = np.atleast_2d(sources) if sources is not None else invert_mixing(model, x2)
    n, d = x2.shape
    jac = np.zeros((n, d, d))
    log_det_fwd = np.zeros(n)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for node in range(d):
            dpa, ds = _node_partials(model, x2, s2, node)
            log_det_fwd += np.log(np.abs(ds))
            jac[:, node, node] = 1.0 / ds
            for col, p in enumerate(model.dag.parents(node)):
                jac[:, node, p] = -dpa[:, col] / ds
    if np.any(log_det_fwd < np.log(1e-12)):
        raise SingularJacobianError("forward Jacobian is numerically singular at the query point")
    return jac[0] if single else jac


def forward_jacobian(model: ScmModel, s: np.ndarray) -> np.ndarray:
    """Jacobian of the mixing map at a single source point, by forward accumulation."""
    s1 = np.asarray(s, dtype=float).reshape(1, -1)
    x1 = mix(model, s1)
    d = model.d
    jac = np.zeros((d, d))
    for node in model.dag.order:
        pa = model.dag.parents(node)
        dpa, ds = _node_partials(model, x1, s1, node)
        for col, p in enumerate(pa):
            jac[node, :] += dpa[0, col] * jac[p, :]
        jac[node, node] += ds[0]
    return jac


def log_abs_det_inverse_jacobian(model: ScmModel, x2: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """log |det J_{f^-1}| batched; the triangular structure makes it a sum of logs."""
    total = np.zeros(x2.shape[0])
    for node in range(model.d):
        _, ds = _node_partials(model, x2, s2, node)
        total -= np.log(np.abs(ds))
    return total
