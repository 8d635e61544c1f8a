import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duet import Dag, chain_dag, ground_truth_support, random_dag, shd, single_edge_dag
from duet.graphs import edges_from_support, topological_order
from duet.scm import make_rng


def test_cycle_rejected():
    with pytest.raises(ValueError, match="cycle"):
        Dag.from_edges(2, {(0, 1), (1, 0)})


def test_self_loop_rejected():
    with pytest.raises(ValueError, match="self-loop"):
        Dag(d=2, edges=frozenset({(0, 0)}), order=(0, 1))


def test_order_must_respect_edges():
    with pytest.raises(ValueError, match="order violates"):
        Dag(d=2, edges=frozenset({(0, 1)}), order=(1, 0))


def test_support_single_edge():
    supp = ground_truth_support(single_edge_dag())
    assert supp.tolist() == [[True, False], [True, True]]


def test_support_empty_graph_is_identity():
    dag = Dag.from_edges(3, set())
    assert np.array_equal(ground_truth_support(dag), np.eye(3, dtype=bool))


def test_support_chain():
    supp = ground_truth_support(chain_dag(3))
    expected = np.array(
        [[True, False, False], [True, True, False], [False, True, True]]
    )
    assert np.array_equal(supp, expected)


def test_edges_from_support_roundtrip():
    dag = chain_dag(4)
    assert edges_from_support(ground_truth_support(dag)) == dag.edges


def test_shd_identical():
    dag = chain_dag(3)
    assert shd(dag, dag) == 0


def test_shd_flip_counts_one():
    assert shd(Dag.from_edges(2, {(0, 1)}), Dag.from_edges(2, {(1, 0)})) == 1


def test_shd_removal_counts_one():
    assert shd(Dag.from_edges(2, {(0, 1)}), Dag.from_edges(2, set())) == 1


def test_shd_node_count_mismatch():
    with pytest.raises(ValueError):
        shd(Dag.from_edges(2, set()), Dag.from_edges(3, set()))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(2, 5))
def test_shd_symmetric_and_bounded(seed_a, seed_b, d):
    a = random_dag(d, make_rng(seed_a))
    b = random_dag(d, make_rng(seed_b))
    assert shd(a, b) == shd(b, a)
    assert 0 <= shd(a, b) <= d * (d - 1) // 2
    assert shd(a, a) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.permutations(list(range(4))))
def test_relabel_permutes_support(seed, perm):
    dag = random_dag(4, make_rng(seed))
    supp = ground_truth_support(dag)
    relabeled = ground_truth_support(dag.relabel(perm))
    for i in range(4):
        for j in range(4):
            assert relabeled[perm[i], perm[j]] == supp[i, j]


def test_topological_order_detects_cycles():
    assert topological_order(3, {(0, 1), (1, 2), (2, 0)}) is None
    assert topological_order(3, {(0, 1), (1, 2)}) == (0, 1, 2)
