import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duet import (
    Dag,
    EnvironmentSet,
    MechanismDomainError,
    ScmModel,
    SingularJacobianError,
    SourceSpec,
    analytic_inverse_jacobian,
    forward_jacobian,
    generate_dataset,
    ground_truth_support,
    invert_mixing,
    make_mechanism,
    make_rng,
    mix,
    random_dag,
    sample_sources,
    single_edge_dag,
)
from duet.data import load_dataset, save_dataset
from duet.scm import BUILTIN_KINDS, Custom

GAUSS2 = SourceSpec.gaussian([1.0, 1.0], [1.2, 1.3])


def two_env(lambdas=((2.0, -1.7), (1.6, 2.2))):
    return EnvironmentSet(np.array(lambdas), (1,), (2,))


def model_for(kind: str, dag=None, seed=0) -> ScmModel:
    dag = dag or single_edge_dag()
    rng = make_rng(seed, 11)
    spec = SourceSpec.gaussian(np.ones(dag.d), rng.uniform(1.0, 1.5, dag.d))
    return ScmModel(dag, make_mechanism(kind, dag, rng), spec)


# ---------------------------------------------------------------------------
# sources


def test_sample_sources_base_mean():
    s = sample_sources(GAUSS2, two_env(), 0, 2000, seed=7)
    assert np.all(np.abs(s.mean(axis=0) - 1.0) < 0.1)


def test_identity_rescaling_is_identity():
    env = EnvironmentSet(np.array([[1.0, 1.0], [2.0, 2.0]]), (1,), (2,))
    s0 = sample_sources(GAUSS2, env, 0, 500, seed=3)
    s1 = sample_sources(GAUSS2, env, 1, 500, seed=3)
    assert np.array_equal(s0, s1)


def test_variance_scales_with_lambda_squared():
    spec = SourceSpec.gaussian([1.0, 1.0], [1.0, 1.0])
    env = EnvironmentSet(np.array([[2.0, 3.0], [1.5, 1.5]]), (1,), (2,))
    s1 = sample_sources(spec, env, 1, 20_000, seed=5)
    assert np.allclose(s1.var(axis=0), [4.0, 9.0], rtol=0.05)


def test_rescaling_preserves_the_mean():
    env = EnvironmentSet(np.array([[2.0, -2.0], [-1.5, 1.5]]), (1,), (2,))
    for idx in (1, 2):
        s = sample_sources(GAUSS2, env, idx, 20_000, seed=9)
        assert np.all(np.abs(s.mean(axis=0) - 1.0) < 0.06)


def test_sources_pairwise_independent():
    n = 10_000
    s = sample_sources(GAUSS2, two_env(), 0, n, seed=21)
    rho = np.corrcoef(s.T)[0, 1]
    assert abs(rho) < 4.0 / np.sqrt(n)


def test_zero_lambda_rejected():
    with pytest.raises(ValueError, match="nonzero"):
        EnvironmentSet(np.array([[0.0, 2.0], [2.0, 2.0]]), (1,), (2,))


def test_nonpositive_params_rejected():
    with pytest.raises(ValueError):
        SourceSpec.gaussian([0.0], [-1.0])
    with pytest.raises(ValueError):
        SourceSpec.gamma([0.0], [1.0])
    with pytest.raises(ValueError):
        SourceSpec.gamma([1.0], [-2.0])


def test_partition_validation():
    with pytest.raises(ValueError, match="non-empty"):
        EnvironmentSet(np.ones((2, 2)) * 2, (1, 2), ())
    with pytest.raises(ValueError, match="overlap"):
        EnvironmentSet(np.ones((2, 2)) * 2, (1, 2), (2,))
    with pytest.raises(ValueError, match="cover"):
        EnvironmentSet(np.ones((3, 2)) * 2, (1,), (2,))


def test_gamma_sampling_matches_moments():
    spec = SourceSpec.gamma([2.0, 2.5], [2.0, 1.8])
    s = sample_sources(spec, two_env(), 0, 40_000, seed=13)
    assert np.allclose(s.mean(axis=0), spec.mean, rtol=0.05)
    assert np.allclose(s.var(axis=0), spec.shape * spec.scale**2, rtol=0.1)


# ---------------------------------------------------------------------------
# mixing


def test_mix_arbitrary_i_at_zero():
    model = ScmModel(single_edge_dag(), make_mechanism("arbitrary-i", single_edge_dag()), GAUSS2)
    assert np.allclose(mix(model, np.zeros(2)), np.zeros(2))


def test_mix_arbitrary_i_hand_value():
    model = ScmModel(single_edge_dag(), make_mechanism("arbitrary-i", single_edge_dag()), GAUSS2)
    x = mix(model, np.array([1.0, 1.0]))
    assert np.allclose(x, [1.0, np.pi / 4 + 1.0])


@pytest.mark.parametrize("kind", BUILTIN_KINDS)
def test_root_only_graph_is_identity_mixing(kind):
    dag = Dag.from_edges(3, set())
    model = ScmModel(dag, make_mechanism(kind, dag), SourceSpec.gaussian(np.ones(3), np.ones(3)))
    s = make_rng(2).normal(size=(50, 3))
    assert np.array_equal(mix(model, s), s)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.permutations(list(range(4))))
def test_mix_label_equivariance(seed, perm):
    dag = random_dag(4, make_rng(seed))
    spec = SourceSpec.gaussian(np.ones(4), np.ones(4))
    model = ScmModel(dag, make_mechanism("arbitrary-ii", dag), spec)
    relabeled = ScmModel(dag.relabel(perm), make_mechanism("arbitrary-ii", dag), spec)
    s = make_rng(seed, 1).normal(size=(20, 4))
    s_perm = np.empty_like(s)
    s_perm[:, perm] = s
    x = mix(model, s)
    x_perm = mix(relabeled, s_perm)
    assert np.allclose(x_perm[:, perm], x, atol=1e-12)


def test_mix_rejects_nonfinite_sources():
    model = model_for("anm")
    with pytest.raises(MechanismDomainError, match="non-finite"):
        mix(model, np.array([[np.nan, 1.0]]), env_index=2)


def test_mechanism_domain_error_carries_coordinates():
    dag = single_edge_dag()
    overflow = Custom(value=lambda node, pa, s: np.where(s > 1.0, np.inf, s))
    model = ScmModel(dag, overflow, GAUSS2)
    with pytest.raises(MechanismDomainError, match="environment 3.*sample 1.*node 1"):
        mix(model, np.array([[0.0, 0.5], [0.0, 2.0]]), env_index=3)


@pytest.mark.parametrize("kind", BUILTIN_KINDS)
def test_invert_mixing_roundtrip(kind):
    dag = Dag.from_edges(3, {(0, 2), (1, 2)})
    model = model_for(kind, dag, seed=4)
    s = model.sources.sample_base(40, make_rng(8))
    x = mix(model, s)
    assert np.allclose(invert_mixing(model, x), s, atol=1e-8)


# ---------------------------------------------------------------------------
# Jacobians


def test_inverse_jacobian_identity_mixing():
    dag = Dag.from_edges(2, set())
    model = ScmModel(dag, make_mechanism("anm", dag), GAUSS2)
    assert np.allclose(analytic_inverse_jacobian(model, np.array([0.3, -1.2])), np.eye(2))


def test_inverse_jacobian_arbitrary_i_hand_computed():
    model = ScmModel(single_edge_dag(), make_mechanism("arbitrary-i", single_edge_dag()), GAUSS2)
    x = mix(model, np.array([1.0, 1.0]))
    fwd = forward_jacobian(model, np.array([1.0, 1.0]))
    assert np.allclose(fwd, [[1.0, 0.0], [2.0 * np.arctan(1.0), 0.5 + 3.0]])
    inv = analytic_inverse_jacobian(model, x)
    assert np.allclose(inv, [[1.0, 0.0], [-np.pi / 7.0, 2.0 / 7.0]])


def test_linear_inverse_jacobian_is_i_minus_b():
    dag = Dag.from_edges(3, {(0, 1), (0, 2), (1, 2)})
    model = model_for("linear", dag, seed=6)
    b = model.mechanism.matrix(dag)
    for point in make_rng(14).normal(size=(5, 3)):
        assert np.allclose(analytic_inverse_jacobian(model, point), np.eye(3) - b, atol=1e-12)


@pytest.mark.parametrize("kind", BUILTIN_KINDS)
def test_inverse_agrees_with_forward_inverse(kind):
    dag = Dag.from_edges(3, {(0, 1), (1, 2)})
    model = model_for(kind, dag, seed=3)
    s = model.sources.sample_base(10, make_rng(31))
    for row in s:
        fwd = forward_jacobian(model, row)
        inv = analytic_inverse_jacobian(model, mix(model, row))
        assert np.allclose(inv, np.linalg.inv(fwd), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("kind", BUILTIN_KINDS)
def test_faithful_support_at_random_points(kind):
    # support is scale-free, so threshold rows normalized to unit diagonal
    # (the cube mechanism legitimately pushes raw diagonals below 1e-8)
    dag = Dag.from_edges(3, {(0, 1), (0, 2), (1, 2)})
    model = model_for(kind, dag, seed=9)
    truth = ground_truth_support(dag)
    s = model.sources.sample_base(100, make_rng(77))
    jac = analytic_inverse_jacobian(model, mix(model, s))
    normalized = jac / np.diagonal(jac, axis1=1, axis2=2)[:, :, None]
    observed = np.abs(normalized) > 1e-8
    assert np.all(observed == truth[None, :, :])


@pytest.mark.parametrize("kind", BUILTIN_KINDS)
def test_inverse_jacobian_lower_triangular_in_causal_order(kind):
    dag = Dag.from_edges(4, {(0, 1), (1, 2), (0, 3), (2, 3)})
    model = model_for(kind, dag, seed=12)
    s = model.sources.sample_base(20, make_rng(5))
    jac = analytic_inverse_jacobian(model, mix(model, s))
    upper = np.triu_indices(4, k=1)
    assert np.max(np.abs(jac[:, upper[0], upper[1]])) < 1e-10


def test_singular_jacobian_detected():
    # arbitrary-iii degenerates when the parent aggregate is zero
    model = ScmModel(single_edge_dag(), make_mechanism("arbitrary-iii", single_edge_dag()), GAUSS2)
    s = np.array([0.0, 0.7])
    with pytest.raises(SingularJacobianError):
        analytic_inverse_jacobian(model, np.array([0.0, 0.0]), sources=s)


def test_custom_mechanism_fd_jacobian():
    dag = single_edge_dag()
    custom = Custom(value=lambda node, pa, s: pa.sum(axis=1) ** 2 * np.arctan(s) + s**3)
    reference = ScmModel(dag, make_mechanism("arbitrary-i", dag), GAUSS2)
    model = ScmModel(dag, custom, GAUSS2)
    x = mix(reference, np.array([0.9, 1.4]))
    assert np.allclose(
        analytic_inverse_jacobian(model, x),
        analytic_inverse_jacobian(reference, x),
        rtol=1e-5,
        atol=1e-7,
    )


# ---------------------------------------------------------------------------
# dataset generation and IO


def test_generate_dataset_shapes():
    model = model_for("arbitrary-i")
    env = EnvironmentSet.sample(3, 2, make_rng(1))
    ds = generate_dataset(model, env, 2000, seed=0)
    assert ds.data.shape == (4, 2000, 2)


def test_generate_dataset_minimal_n():
    model = model_for("linear")
    env = two_env()
    assert generate_dataset(model, env, 1, seed=0).data.shape == (3, 1, 2)


def test_generate_dataset_deterministic():
    model = model_for("lsnm")
    env = two_env()
    a = generate_dataset(model, env, 50, seed=123)
    b = generate_dataset(model, env, 50, seed=123)
    assert np.array_equal(a.data, b.data)


def test_generate_dataset_keeps_sources_in_debug_mode():
    model = model_for("anm")
    env = two_env()
    ds = generate_dataset(model, env, 30, seed=3, keep_sources=True)
    assert ds.sources is not None
    assert np.allclose(mix(model, ds.sources[1]), ds.data[1])


def test_dataset_roundtrip(tmp_path):
    model = model_for("pnl")
    env = two_env()
    ds = generate_dataset(model, env, 25, seed=11)
    save_dataset(ds, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert np.array_equal(loaded.data, ds.data)
    assert loaded.env.part_one == env.part_one
    assert loaded.env.part_two == env.part_two
    assert np.array_equal(loaded.env.lambdas, env.lambdas)
    assert loaded.model_kind == "pnl"
    assert loaded.edges == tuple(sorted(model.dag.edges))
    header = (tmp_path / "ds" / "env_0.csv").read_text().splitlines()[0]
    assert header == "x1,x2"
