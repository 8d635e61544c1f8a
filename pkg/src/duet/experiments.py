"""Scenario configuration, seed sweeps, CSV persistence, and validation runs.

A scenario JSON file describes a grid of (mechanism, environment count, seed,
threshold) runs. Every random draw flows through counter-based streams keyed
by (scenario digest, mechanism digest, environment count, seed, purpose), so
re-running a scenario reproduces every row byte-for-byte (runtimes aside).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MultiEnvDataset, generate_dataset, truth_dag
from .discovery import (
    DiscoveryConfig,
    DiscoveryError,
    OracleEstimator,
    discover,
    support_threshold,
)
from .graphs import Dag, random_dag, shd, single_edge_dag
from .oracle import (
    OmegaPair,
    check_distinct_ratios,
    check_sufficient_variability,
    omega_matrices,
    verify_lemma_hessian_identity,
)
from .scm import (
    BUILTIN_KINDS,
    EnvironmentSet,
    ScmModel,
    SourceSpec,
    make_mechanism,
    make_rng,
    mix,
)
from .stein import SteinConfig

SCHEMA_VERSION = 1
CSV_HEADER = ["scenario", "mechanism", "n_envs", "seed", "tau", "shd", "runtime_ms", "error"]
SUMMARY_HEADER = ["scenario", "mechanism", "n_envs", "tau", "runs", "errors", "mean_shd", "std_shd"]


def _digest(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str = "stein"  # "stein" | "oracle"
    ridge: float = 1e-3
    bandwidth_factor: float = 1.0
    bandwidth: float | None = None

    def stein_config(self) -> SteinConfig:
        return SteinConfig(
            bandwidth=self.bandwidth,
            bandwidth_factor=self.bandwidth_factor,
            ridge=self.ridge,
        )


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    mechanisms: tuple[str, ...]
    d: int = 2
    n: int = 2000
    env_counts: tuple[int, ...] = (3,)
    seeds: int = 50
    source_family: str = "gaussian"
    variance_range: tuple[float, float] = (1.0, 1.5)
    alpha_range: tuple[float, float] | None = None
    theta_range: tuple[float, float] | None = None
    lambda_low: float = 1.5
    lambda_high: float = 2.5
    lambda_signed: bool = True
    taus: tuple[float, ...] = (0.1, 0.25, 0.4)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("need at least one seed")
        if any(k < 2 for k in self.env_counts):
            raise ValueError("environment counts must be at least 2")
        if self.source_family not in ("gaussian", "gamma"):
            raise ValueError(f"unknown source family {self.source_family!r}")
        if self.source_family == "gamma" and (self.alpha_range is None or self.theta_range is None):
            raise ValueError("gamma scenarios need alpha_range and theta_range")
        for kind in self.mechanisms:
            if kind not in BUILTIN_KINDS:
                raise ValueError(f"unknown mechanism kind {kind!r}")


_SCENARIO_KEYS = {
    "schema_version",
    "id",
    "mechanisms",
    "d",
    "n",
    "env_counts",
    "seeds",
    "source",
    "lambda",
    "taus",
    "estimator",
}
_SOURCE_KEYS = {"family", "variance_range", "alpha_range", "theta_range"}
_LAMBDA_KEYS = {"low", "high", "signed"}
_ESTIMATOR_KEYS = {"kind", "ridge", "bandwidth_factor", "bandwidth"}


def scenario_from_dict(raw: dict) -> Scenario:
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {raw.get('schema_version')!r}")
    source = raw.get("source", {"family": "gaussian"})
    unknown = set(source) - _SOURCE_KEYS
    if unknown:
        raise ValueError(f"unknown source keys: {sorted(unknown)}")
    lam = raw.get("lambda", {})
    unknown = set(lam) - _LAMBDA_KEYS
    if unknown:
        raise ValueError(f"unknown lambda keys: {sorted(unknown)}")
    est = raw.get("estimator", {})
    unknown = set(est) - _ESTIMATOR_KEYS
    if unknown:
        raise ValueError(f"unknown estimator keys: {sorted(unknown)}")
    return Scenario(
        scenario_id=str(raw["id"]),
        mechanisms=tuple(raw["mechanisms"]),
        d=int(raw.get("d", 2)),
        n=int(raw.get("n", 2000)),
        env_counts=tuple(int(k) for k in raw.get("env_counts", [3])),
        seeds=int(raw.get("seeds", 50)),
        source_family=source.get("family", "gaussian"),
        variance_range=tuple(source.get("variance_range", (1.0, 1.5))),
        alpha_range=tuple(source["alpha_range"]) if "alpha_range" in source else None,
        theta_range=tuple(source["theta_range"]) if "theta_range" in source else None,
        lambda_low=float(lam.get("low", 1.5)),
        lambda_high=float(lam.get("high", 2.5)),
        lambda_signed=bool(lam.get("signed", True)),
        taus=tuple(float(t) for t in raw.get("taus", (0.1, 0.25, 0.4))),
        estimator=EstimatorSpec(
            kind=est.get("kind", "stein"),
            ridge=float(est.get("ridge", 1e-3)),
            bandwidth_factor=float(est.get("bandwidth_factor", 1.0)),
            bandwidth=float(est["bandwidth"]) if est.get("bandwidth") is not None else None,
        ),
    )


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Model construction shared by scenario runs and the generate CLI


def build_model_and_env(
    scenario: Scenario, mechanism: str, n_envs: int, seed: int
) -> tuple[ScmModel, EnvironmentSet]:
    """Draw graph, mechanism parameters, source parameters, and rescalings
    from the documented stream key (scenario, mechanism, n_envs, seed, 0)."""
    rng = make_rng(_digest(scenario.scenario_id), _digest(mechanism), n_envs, seed, 0)
    dag = single_edge_dag() if scenario.d == 2 else random_dag(scenario.d, rng)
    if scenario.source_family == "gaussian":
        variance = rng.uniform(*scenario.variance_range, size=scenario.d)
        sources = SourceSpec.gaussian(np.ones(scenario.d), variance)
    else:
        alpha = rng.uniform(*scenario.alpha_range, size=scenario.d)
        theta = rng.uniform(*scenario.theta_range, size=scenario.d)
        sources = SourceSpec.gamma(alpha, theta)
    mech = make_mechanism(mechanism, dag, rng)
    env = EnvironmentSet.sample(
        n_envs,
        scenario.d,
        rng,
        low=scenario.lambda_low,
        high=scenario.lambda_high,
        signed=scenario.lambda_signed,
    )
    model = ScmModel(dag=dag, mechanism=mech, sources=sources)
    return model, env


def dataset_seed(scenario: Scenario, mechanism: str, n_envs: int, seed: int) -> tuple:
    return (_digest(scenario.scenario_id), _digest(mechanism), n_envs, seed, 1)


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    mechanism: str
    n_envs: int
    seed: int
    tau: float
    shd: int
    runtime_ms: int
    error: str = ""

    def __post_init__(self):
        if self.shd < 0:
            raise ValueError("shd is a count and cannot be negative")


def _run_one(scenario: Scenario, mechanism: str, n_envs: int, seed: int) -> list[ResultRow]:
    sentinel = scenario.d * (scenario.d - 1) // 2
    start = time.perf_counter()
    try:
        model, env = build_model_and_env(scenario, mechanism, n_envs, seed)
        dataset = generate_dataset(
            model, env, scenario.n, seed=dataset_seed(scenario, mechanism, n_envs, seed)
        )
        if scenario.estimator.kind == "oracle":
            estimator = OracleEstimator(model=model, env=env)
        else:
            estimator = scenario.estimator.stein_config()
        config = DiscoveryConfig(estimator=estimator, tau=scenario.taus[0])
        estimate = discover(dataset, config=config)
        truth = model.dag
        elapsed = int(1000 * (time.perf_counter() - start))
        rows = []
        for tau in scenario.taus:
            est_tau = support_threshold(estimate.jacobian, tau)
            rows.append(
                ResultRow(
                    scenario.scenario_id,
                    mechanism,
                    n_envs,
                    seed,
                    tau,
                    shd(est_tau.dag, truth),
                    elapsed,
                )
            )
        return rows
    except (DiscoveryError, ValueError, np.linalg.LinAlgError, RuntimeError) as err:
        elapsed = int(1000 * (time.perf_counter() - start))
        msg = str(err).replace("\n", " ")
        return [
            ResultRow(scenario.scenario_id, mechanism, n_envs, seed, tau, sentinel, elapsed, msg)
            for tau in scenario.taus
        ]


def _worker_count(max_workers: int | None) -> int:
    if max_workers is not None:
        return max(1, max_workers)
    env_cap = os.environ.get("DUET_THREADS")
    if env_cap:
        return max(1, int(env_cap))
    return os.cpu_count() or 1


def run_scenario(
    scenario: Scenario,
    out_path: str | Path,
    seed_offset: int = 0,
    max_workers: int | None = None,
) -> tuple[list[ResultRow], list[dict]]:
    """Run the full grid and write the row CSV plus a *_summary.csv sidecar.

    Rows are written in (mechanism, n_envs, seed, tau) order regardless of
    worker completion order. Failed runs become sentinel rows (worst-case
    shd for the dimension) with the error message attached; in oracle mode
    more than 5% such rows is treated as a bug and raises.
    """
    jobs = [
        (mech, k, seed_offset + s)
        for mech in scenario.mechanisms
        for k in scenario.env_counts
        for s in range(scenario.seeds)
    ]
    workers = _worker_count(max_workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _run_one(scenario, *job), jobs))
    else:
        results = [_run_one(scenario, *job) for job in jobs]
    rows = [row for batch in results for row in batch]
    mech_order = {m: i for i, m in enumerate(scenario.mechanisms)}
    rows.sort(key=lambda r: (mech_order[r.mechanism], r.n_envs, r.seed, r.tau))

    error_rows = sum(1 for r in rows if r.error)
    if scenario.estimator.kind == "oracle" and error_rows > 0.05 * len(rows):
        raise RuntimeError(
            f"oracle-mode sweep produced {error_rows}/{len(rows)} error rows (>5%)"
        )

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow(
                [r.scenario, r.mechanism, r.n_envs, r.seed, format(r.tau, "g"), r.shd, r.runtime_ms, r.error]
            )

    summary = summarize_rows(rows)
    summary_path = out_path.with_name(out_path.stem + "_summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for entry in summary:
            writer.writerow(
                [
                    entry["scenario"],
                    entry["mechanism"],
                    entry["n_envs"],
                    format(entry["tau"], "g"),
                    entry["runs"],
                    entry["errors"],
                    format(entry["mean_shd"], ".10g"),
                    format(entry["std_shd"], ".10g"),
                ]
            )
    return rows, summary


def summarize_rows(rows: list[ResultRow]) -> list[dict]:
    """Group mean and standard deviation per (scenario, mechanism, n_envs, tau)."""
    groups: dict[tuple, list[ResultRow]] = {}
    order: list[tuple] = []
    for r in rows:
        key = (r.scenario, r.mechanism, r.n_envs, r.tau)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    summary = []
    for key in order:
        batch = groups[key]
        shds = np.array([r.shd for r in batch], dtype=float)
        summary.append(
            {
                "scenario": key[0],
                "mechanism": key[1],
                "n_envs": key[2],
                "tau": key[3],
                "runs": len(batch),
                "errors": sum(1 for r in batch if r.error),
                "mean_shd": float(shds.mean()),
                "std_shd": float(shds.std()),
            }
        )
    return summary


# ---------------------------------------------------------------------------
# Assumption report


def assumption_report(scenario: Scenario, tol: float = 1e-9) -> dict:
    """Run both assumption checkers over every (mechanism, n_envs, seed) draw."""
    variability = []
    ratios = []
    for mech in scenario.mechanisms:
        for n_envs in scenario.env_counts:
            for seed in range(scenario.seeds):
                model, env = build_model_and_env(scenario, mech, n_envs, seed)
                rep = check_sufficient_variability(model.sources, env, tol=tol)
                for j, group in rep.violations:
                    variability.append(
                        {"mechanism": mech, "n_envs": n_envs, "seed": seed, "coordinate": j, "group": group}
                    )
                if model.sources.family == "gaussian":
                    pair = omega_matrices(model.sources, env)
                else:
                    pair = OmegaPair.from_lambda_sums(env)
                ratio_rep = check_distinct_ratios(pair, tol=tol)
                for i, j in ratio_rep.violations:
                    ratios.append(
                        {"mechanism": mech, "n_envs": n_envs, "seed": seed, "pair": [i, j]}
                    )
    return {
        "sufficient_variability": variability,
        "distinct_ratios": ratios,
        "pass": not variability and not ratios,
    }


# ---------------------------------------------------------------------------
# Oracle validation suite


@dataclass(frozen=True)
class OracleValidation:
    max_residual: float
    shd_failures: int
    total: int
    residuals: tuple[float, ...]
    shds: tuple[int, ...]

    @property
    def all_zero_shd(self) -> bool:
        return self.shd_failures == 0


DEFAULT_VALIDATE_MECHANISMS = ("arbitrary-i", "arbitrary-ii", "arbitrary-iii", "linear")


def inject_point(dataset: MultiEnvDataset, x: np.ndarray) -> MultiEnvDataset:
    """Overwrite the last row of every environment slice with x (in place)."""
    dataset.data[:, -1, :] = x
    return dataset


def oracle_validate(
    d: int = 2,
    seeds: int = 20,
    mechanisms: tuple[str, ...] = DEFAULT_VALIDATE_MECHANISMS,
    n: int = 24,
    tau: float = 0.25,
    base_seed: int = 0,
) -> OracleValidation:
    """Random configurations checked against exact quantities.

    Per configuration: verify the Hessian-difference identity at the mean
    image, then run oracle-mode discovery (two auxiliary environments, exact
    mean point injected) and compare the recovered graph with the truth.
    """
    residuals = []
    shds = []
    for s in range(seeds):
        rng = make_rng(_digest("oracle-validate"), d, base_seed, s)
        mech_kind = mechanisms[int(rng.integers(len(mechanisms)))]
        dag = single_edge_dag() if d == 2 else random_dag(d, rng)
        sources = SourceSpec.gaussian(np.ones(d), rng.uniform(1.0, 1.5, size=d))
        model = ScmModel(dag=dag, mechanism=make_mechanism(mech_kind, dag, rng), sources=sources)
        env = EnvironmentSet.sample(2, d, rng, signed=True)
        residuals.append(verify_lemma_hessian_identity(model, env).residual)
        dataset = generate_dataset(model, env, n, seed=(_digest("oracle-validate"), d, base_seed, s))
        inject_point(dataset, mix(model, sources.mean))
        config = DiscoveryConfig(estimator=OracleEstimator(model=model, env=env), tau=tau)
        estimate = discover(dataset, config=config)
        shds.append(shd(estimate.dag, dag))
    return OracleValidation(
        max_residual=float(max(residuals)),
        shd_failures=sum(1 for v in shds if v != 0),
        total=seeds,
        residuals=tuple(float(r) for r in residuals),
        shds=tuple(int(v) for v in shds),
    )
