"""Multi-environment dataset container, generation, and the on-disk format.

A dataset directory holds `meta.json` plus one `env_<i>.csv` per environment
(n rows, d float columns, header `x1,...,xd`, '.' decimal separator).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import Dag
from .scm import EnvironmentSet, ScmModel, SourceSpec, mix, sample_sources


@dataclass
class MultiEnvDataset:
    """(k+1) x n x d observation tensor; slice 0 is the base environment."""

    data: np.ndarray
    seed: int | tuple
    model_kind: str
    env: EnvironmentSet
    source_params: dict
    edges: tuple[tuple[int, int], ...] = ()
    sources: np.ndarray | None = None  # retained only in debug mode

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("data must be (k+1, n, d)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("dataset contains non-finite values")

    @property
    def n_envs(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]


def generate_dataset(
    model: ScmModel,
    env: EnvironmentSet,
    n: int,
    seed,
    keep_sources: bool = False,
) -> MultiEnvDataset:
    """Sample all environments and push them through the shared mixing map.

    Environment i uses the independent stream keyed by (seed, i), so the
    whole tensor is reproducible from the seed alone.
    """
    k, d = env.k, env.d
    data = np.empty((k + 1, n, d))
    sources = np.empty((k + 1, n, d)) if keep_sources else None
    base_key = seed if isinstance(seed, (tuple, list)) else (seed,)
    for i in range(k + 1):
        s = sample_sources(model.sources, env, i, n, seed=(*base_key, i))
        data[i] = mix(model, s, env_index=i)  # domain errors carry (env, row, node)
        if keep_sources:
            sources[i] = s
    return MultiEnvDataset(
        data=data,
        seed=seed,
        model_kind=model.mechanism.kind,
        env=env,
        source_params=_source_params(model.sources),
        edges=tuple(sorted(model.dag.edges)),
        sources=sources,
    )


def _source_params(spec: SourceSpec) -> dict:
    params: dict = {"family": spec.family, "mean": spec.mean.tolist()}
    if spec.family == "gaussian":
        params["variance"] = spec.variance.tolist()
    else:
        params["shape"] = spec.shape.tolist()
        params["scale"] = spec.scale.tolist()
    return params


def source_spec_from_params(params: dict) -> SourceSpec:
    if params["family"] == "gaussian":
        return SourceSpec.gaussian(params["mean"], params["variance"])
    return SourceSpec.gamma(params["shape"], params["scale"])


def save_dataset(dataset: MultiEnvDataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "model_kind": dataset.model_kind,
        "d": dataset.d,
        "k": dataset.env.k,
        "n": dataset.n,
        "seed": list(dataset.seed) if isinstance(dataset.seed, (tuple, list)) else dataset.seed,
        "lambdas": dataset.env.lambdas.tolist(),
        "partition": [list(dataset.env.part_one), list(dataset.env.part_two)],
        "source_params": dataset.source_params,
        "edges": [list(e) for e in dataset.edges],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    header = [f"x{j + 1}" for j in range(dataset.d)]
    for i in range(dataset.n_envs):
        with open(out / f"env_{i}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in dataset.data[i]:
                writer.writerow([format(v, ".17g") for v in row])
    return out


def load_dataset(in_dir: str | Path) -> MultiEnvDataset:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    env = EnvironmentSet(
        np.asarray(meta["lambdas"], dtype=float),
        tuple(meta["partition"][0]),
        tuple(meta["partition"][1]),
    )
    slices = []
    for i in range(meta["k"] + 1):
        path = src / f"env_{i}.csv"
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != [f"x{j + 1}" for j in range(meta["d"])]:
                raise ValueError(f"{path}: unexpected header {header}")
            slices.append(np.array([[float(v) for v in row] for row in reader]))
    data = np.stack(slices)
    seed = meta["seed"]
    return MultiEnvDataset(
        data=data,
        seed=tuple(seed) if isinstance(seed, list) else seed,
        model_kind=meta["model_kind"],
        env=env,
        source_params=meta["source_params"],
        edges=tuple((int(p), int(c)) for p, c in meta.get("edges", [])),
    )


def truth_dag(dataset: MultiEnvDataset) -> Dag:
    return Dag.from_edges(dataset.d, dataset.edges)
