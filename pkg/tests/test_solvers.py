import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import all_deterministic, random_mdp
from taskreduce import solvers
from taskreduce.mdp import Mdp, PositionalPolicy, Simulator
from taskreduce.refute import fig1_mdp, fig3_mdp
from taskreduce.solvers import (
    discounted_policy_iteration,
    discounted_value,
    limit_avg_value,
    max_buchi_prob,
    max_reach_prob,
    max_safe_prob,
    mec_decomposition,
    policy_matrix,
    value_iteration_discounted,
)


def _chain_reach(M, target):
    """Exact reach probability of one Markov chain: graph pruning, then a linear solve."""
    hits = target.copy()
    while True:
        grown = hits | ((M > 0) & hits[None, :]).any(axis=1)
        if np.array_equal(grown, hits):
            break
        hits = grown
    x = np.where(target, 1.0, 0.0)
    live = hits & ~target
    if live.any():
        A = np.eye(live.sum()) - M[np.ix_(live, live)]
        x[live] = np.linalg.solve(A, M[np.ix_(live, target)].sum(axis=1))
    return x


def _enumerated_reach(P, target, pick):
    """Best reach probability over every deterministic positional policy; shares no code with the solvers."""
    n, m, _ = P.shape
    vals = [_chain_reach(P[np.arange(n), acts], target) for acts in itertools.product(range(m), repeat=n)]
    return pick(np.array(vals), axis=0)


def test_geometric_self_loop():
    mdp = Mdp(np.ones((1, 1, 1)), 0)
    v = discounted_value(mdp, np.ones((1, 1, 1)), 0.5, PositionalPolicy.deterministic([0], 1))
    assert v[0] == pytest.approx(2.0, abs=1e-12)


def test_first_step_reward_only():
    mdp = fig1_mdp(1, 1, 1)
    R = np.zeros((4, 2, 4))
    R[0, 0, 1] = 1
    v = discounted_value(mdp, R, 0.5, PositionalPolicy.deterministic([0] * 4, 2))
    assert v[0] == pytest.approx(1.0, abs=1e-12)


def test_linear_solve_matches_value_iteration_on_single_action():
    rng = np.random.default_rng(8)
    for _ in range(10):
        mdp = random_mdp(rng, 4, 1)
        R = rng.random((4, 1, 4))
        exact = discounted_value(mdp, R, 0.8, PositionalPolicy.deterministic([0] * 4, 1))
        vi, _ = value_iteration_discounted(mdp, R, 0.8, tol=1e-6)
        assert np.max(np.abs(exact - vi)) <= 1e-5


def test_two_actions_one_state():
    mdp = Mdp(np.ones((1, 2, 1)), 0)
    R = np.array([[[0.0], [1.0]]])
    v, pol = value_iteration_discounted(mdp, R, 0.9, tol=1e-10)
    assert v[0] == pytest.approx(10.0, abs=1e-8)
    assert pol.actions().tolist() == [1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_policy_attains_value_iteration_optimum(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3)
    R = rng.random((5, 3, 5))
    g = rng.uniform(0.3, 0.95, 5)
    v, pol = value_iteration_discounted(mdp, R, g, tol=1e-9)
    assert np.max(np.abs(discounted_value(mdp, R, g, pol) - v)) <= 1e-8
    v2, _ = discounted_policy_iteration(mdp, R, g)
    assert np.max(np.abs(v2 - v)) <= 1e-8


def test_four_state_reach_values():
    v, pol = max_reach_prob(fig1_mdp(1, 1, 1), [1])
    assert v[0] == 1.0 and pol.actions()[0] == 0
    v, pol = max_reach_prob(fig1_mdp(0.7, 1, 1), [1])
    assert v[0] == pytest.approx(0.7, abs=1e-12) and pol.actions()[0] == 0


def test_initial_state_in_target():
    v, _ = max_reach_prob(fig3_mdp(0.5, 0.5), [0])
    assert v[0] == 1.0


def test_safety_family_values():
    assert max_safe_prob(fig3_mdp(1, 1), [0, 2])[0][0] == 1.0
    v, pol = max_safe_prob(fig3_mdp(0.9, 0.9), [0, 2])
    assert v[0] == pytest.approx(0.1, abs=1e-12)
    assert pol.actions()[0] == 1
    v, _ = max_safe_prob(fig3_mdp(0.9, 0.9), [0, 1, 2])
    assert np.all(v == 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 3))
def test_reach_and_safe_against_policy_enumeration(seed, n, m):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n, m)
    target = rng.random(n) < 0.3
    v, pol = max_reach_prob(mdp, target)
    assert np.max(np.abs(v - _enumerated_reach(mdp.transitions, target, np.max))) <= 1e-6
    assert np.all((v >= 0) & (v <= 1))
    # the witness attains the value
    chain = solvers.chain_reach_prob(policy_matrix(mdp, pol), target)
    assert np.max(np.abs(chain - v)) <= 1e-9
    safe = ~target
    s, _ = max_safe_prob(mdp, safe)
    assert np.max(np.abs(s - (1 - _enumerated_reach(mdp.transitions, target, np.min)))) <= 1e-6


def test_qualitative_extremes_are_exact():
    rng = np.random.default_rng(21)
    for _ in range(30):
        mdp = random_mdp(rng, 5, 2, sparsity=0.3)
        target = rng.random(5) < 0.3
        v, _ = max_reach_prob(mdp, target)
        oracle = _enumerated_reach(mdp.transitions, target, np.max)
        assert np.all(v[oracle > 1 - 1e-12] == 1.0)
        assert np.all(v[oracle == 0] == 0.0)


def test_two_cycle_gain():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1
    R = np.zeros((2, 1, 2))
    R[0, 0, 1] = 1
    assert limit_avg_value(Mdp(P, 0), R, PositionalPolicy.deterministic([0, 0], 1)) == pytest.approx(0.5, abs=1e-12)


def test_gain_matches_long_simulation():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, 5, 1, sparsity=1.0)
    R = rng.random((5, 1, 5))
    assert len(solvers.bottom_sccs(mdp.transitions[:, 0, :])) == 1
    exact = limit_avg_value(mdp, R, PositionalPolicy.deterministic([0] * 5, 1))
    sim = Simulator(mdp, 13)
    Rl = R.tolist()
    s, total, N = 0, 0.0, 1_000_000
    for _ in range(N):
        s2 = sim.step(0)
        total += Rl[s][0][s2]
        s = s2
    assert abs(total / N - exact) <= 0.01


def test_mec_examples():
    assert [ec.states for ec in mec_decomposition(Mdp(np.ones((1, 1, 1)), 0))] == [frozenset({0})]
    assert [set(ec.states) for ec in mec_decomposition(fig1_mdp(1, 1, 1))] == [{1}, {2}, {3}]
    P = np.zeros((5, 2, 5))
    P[0, 0, 1] = P[0, 1, 3] = 1
    P[1, :, 2] = P[2, :, 1] = 1
    P[3, :, 4] = P[4, :, 3] = 1
    assert [set(ec.states) for ec in mec_decomposition(Mdp(P, 0))] == [{1, 2}, {3, 4}]


def test_mec_actions_stay_inside():
    rng = np.random.default_rng(2)
    for _ in range(30):
        mdp = random_mdp(rng, 5, 2, sparsity=0.3)
        for ec in mec_decomposition(mdp):
            for s, acts in ec.actions.items():
                assert acts
                for a in acts:
                    assert set(np.flatnonzero(mdp.transitions[s, a])) <= set(ec.states)


def test_absorbing_accepting_state():
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1
    v, _ = max_buchi_prob(Mdp(P, 0), [1])
    assert v[0] == 1.0


def test_buchi_matches_positional_enumeration():
    rng = np.random.default_rng(12)
    for _ in range(30):
        mdp = random_mdp(rng, 4, 2, sparsity=0.4)
        acc = rng.random(4) < 0.4
        v, _ = max_buchi_prob(mdp, acc)
        best = max(solvers.chain_buchi_prob(policy_matrix(mdp, p), acc)[0] for p in all_deterministic(4, 2))
        assert abs(v[0] - best) <= 1e-9


def test_dense_recurrent_classes_match_sparse_components():
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    rng = np.random.default_rng(30)
    for _ in range(500):
        n = int(rng.integers(1, 30))
        P = rng.random((n, n)) * (rng.random((n, n)) < rng.uniform(0.02, 0.4))
        P[np.arange(n), rng.integers(0, n, n)] += 0.1
        adj = P > 0
        _, lab = connected_components(csr_matrix(adj.astype(np.int8)), directed=True, connection="strong")
        ref = [np.flatnonzero(lab == c) for c in np.unique(lab) if not adj[lab == c][:, lab != c].any()]
        got = solvers.bottom_sccs(P)
        assert sorted(map(tuple, ref)) == list(map(tuple, got))
        same = solvers.sccs(adj)
        assert np.array_equal(same[:, None] == same[None, :], lab[:, None] == lab[None, :])
