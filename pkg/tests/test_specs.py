import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import all_deterministic, random_arm, random_mdp, random_positional, random_rm
from taskreduce.machines import (
    AbstractRewardMachine,
    RewardMachine,
    build_reach_arm,
    build_safe_arm,
    machine_from_json,
    machine_to_json,
    rm_return,
    validate_machine,
)
from taskreduce.mdp import FiniteMemoryPolicy, LassoRun, Mdp, PositionalPolicy, Run, Simulator
from taskreduce.refute import fig1_mdp, fig3_mdp
from taskreduce.specs import (
    BudgetExceeded,
    DiscountedRM,
    LimitAvgRM,
    Ltl,
    Reach,
    Safe,
    UnsupportedSpecError,
    is_eps_optimal,
    optimal_value,
    spec_value,
)


def _pol(*acts):
    return PositionalPolicy.deterministic(acts, 2)


def test_reach_arm_tables():
    arm = build_reach_arm(["b"], ("b",))
    assert arm.update[0, 1] == 1 and arm.rewards[0, 1] == 1.0
    assert arm.update[0, 0] == 0 and arm.rewards[0, 0] == 0.0
    assert np.all(arm.update[1] == 1) and np.all(arm.rewards[1] == 1.0)


def test_safe_arm_swaps_rewards():
    reach = build_reach_arm(["b"], ("b",))
    safe = build_safe_arm(["b"], ("b",))
    # reading a label outside X moves to the trap; rewards are 1 - r of the mirrored reach machine
    assert safe.update[0, 0] == 1 and safe.update[0, 1] == 0
    assert safe.rewards[0, 1] == 1 - reach.rewards[0, 0]
    assert np.all(safe.rewards[1] == 1 - reach.rewards[1])


def test_initial_label_is_read_first():
    assert build_reach_arm(["b"], ("b",), initial_label=1).initial == 1
    assert build_reach_arm(["b"], ("b",), initial_label=0).initial == 0
    assert build_safe_arm(["b"], ("b",), initial_label=0).initial == 1


def test_constant_machine_returns():
    mdp = Mdp(np.ones((1, 1, 1)), 0)
    rm = RewardMachine.single_state(np.ones((1, 1, 1)))
    lasso = LassoRun(Run(0), Run(0, ((0, 0),)))
    assert rm_return(rm, lasso, 0.5) == pytest.approx(2.0, abs=1e-12)


def test_alternating_average():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1
    R = np.zeros((2, 1, 2))
    R[0, 0, 1] = 1
    rm = RewardMachine.single_state(R)
    lasso = LassoRun(Run(0), Run(0, ((0, 1), (0, 0))))
    assert rm_return(rm, lasso, average_over=4) == 0.5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lasso_closed_form_matches_long_unrolling(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    rm = random_rm(rng, n, m, 3)
    steps = []
    s = 0
    for _ in range(int(rng.integers(0, 3))):
        a, s = int(rng.integers(m)), int(rng.integers(n))
        steps.append((a, s))
    start = s
    cyc = []
    for _ in range(int(rng.integers(1, 4)) - 1):
        a, s = int(rng.integers(m)), int(rng.integers(n))
        cyc.append((a, s))
    cyc.append((int(rng.integers(m)), start))
    lasso = LassoRun(Run(0, tuple(steps)), Run(start, tuple(cyc)))
    g = rng.uniform(0.2, 0.8, n)
    closed = rm_return(rm, lasso, g)
    long = rm_return(rm, lasso.unroll(400), g)
    assert closed == pytest.approx(long, abs=1e-9)


def test_reach_and_safe_policy_values():
    assert spec_value(fig1_mdp(1, 1, 1), Reach({"b"}), _pol(0, 0, 0, 0)) == 1.0
    assert spec_value(fig3_mdp(0.9, 0.9), Safe({"b"}), _pol(1, 0, 0)) == pytest.approx(0.1, abs=1e-12)


def test_optimal_safety_on_safety_family():
    v, pol = optimal_value(fig3_mdp(1, 1), Safe({"b"}))
    assert v == 1.0 and pol.act[0, 0].argmax() == 0
    v, pol = optimal_value(fig3_mdp(0.9, 0.9), Safe({"b"}))
    assert v == pytest.approx(0.1, abs=1e-12) and pol.act[0, 0].argmax() == 1


def test_single_policy_mdp():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 4, 1)
    only = PositionalPolicy.deterministic([0] * 4, 1)
    arm = random_arm(rng, 2)
    for spec in (Reach({"b"}), Safe({"b"}), Ltl.parse("G F b", ("b",)), DiscountedRM(arm, 0.7), LimitAvgRM(arm)):
        assert optimal_value(mdp, spec)[0] == pytest.approx(spec_value(mdp, spec, only), abs=1e-9)


def test_eps_optimality_examples():
    m = fig3_mdp(0.9, 0.9)
    v, pol = optimal_value(m, Safe({"b"}))
    assert is_eps_optimal(m, Safe({"b"}), pol, 0.0)
    assert not is_eps_optimal(m, Safe({"b"}), _pol(0, 0, 0), 0.05)
    assert is_eps_optimal(m, Safe({"b"}), _pol(0, 0, 0), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_temporal_formulas_agree_with_reach_and_safe(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 4, 2)
    pol = random_positional(rng, 4, 2)
    props = mdp.propositions
    assert spec_value(mdp, Ltl.parse("F b", props), pol) == pytest.approx(spec_value(mdp, Reach({"b"}), pol), abs=1e-9)
    assert spec_value(mdp, Ltl.parse("G b", props), pol) == pytest.approx(spec_value(mdp, Safe({"b"}), pol), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_no_policy_beats_the_optimum(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2)
    arm = random_arm(rng, 2)
    rm = random_rm(rng, 3, 2, 2)
    specs = [Reach({"b"}), Safe({"b"}), Ltl.parse("G F b", ("b",)), DiscountedRM(rm, 0.8), LimitAvgRM(arm)]
    for spec in specs:
        best, witness = optimal_value(mdp, spec)
        assert spec_value(mdp, spec, witness) == pytest.approx(best, abs=1e-9)
        for _ in range(5):
            assert spec_value(mdp, spec, random_positional(rng, 3, 2)) <= best + 1e-9


def test_finite_memory_policy_value():
    # remember whether s2 was visited; a1 first, then a2 forever
    mdp = fig1_mdp(1, 1, 1)
    update = np.array([[0, 0, 1, 0], [1, 1, 1, 1]])
    act = np.zeros((2, 4, 2))
    act[0, :, 1] = 1
    act[1, :, 0] = 1
    pol = FiniteMemoryPolicy(0, update, act)
    assert spec_value(mdp, Reach({"b"}), pol) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reach_arm_average_equals_reach_probability(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    mdp = random_mdp(rng, n, 2)
    lab0 = mdp.labels[mdp.initial]
    reach, safe = build_reach_arm(["b"], ("b",), lab0), build_safe_arm(["b"], ("b",), lab0)
    for pol in all_deterministic(n, 2):
        assert spec_value(mdp, LimitAvgRM(reach), pol) == pytest.approx(spec_value(mdp, Reach({"b"}), pol), abs=1e-9)
        assert spec_value(mdp, LimitAvgRM(safe), pol) == pytest.approx(spec_value(mdp, Safe({"b"}), pol), abs=1e-9)


def test_discounted_value_against_monte_carlo():
    rng = np.random.default_rng(31)
    mdp = random_mdp(rng, 3, 2)
    rm = random_rm(rng, 3, 2, 2)
    pol = PositionalPolicy.deterministic([0, 1, 0], 2)
    gamma = 0.5
    exact = spec_value(mdp, DiscountedRM(rm, gamma), pol)
    horizon = 20  # 0.5**20 < 1e-6
    sim = Simulator(mdp, 77)
    upd, rew = rm.update.tolist(), rm.rewards.tolist()
    acts = [0, 1, 0]
    N = 100_000
    returns = np.empty(N)
    for e in range(N):
        s, u, total, disc = sim.reset(), rm.initial, 0.0, 1.0
        for _ in range(horizon):
            a = acts[s]
            s2 = sim.step(a)
            total += disc * rew[u][s][a][s2]
            disc *= gamma
            u = upd[u][s2]
            s = s2
        returns[e] = total
    se = returns.std() / np.sqrt(N)
    assert abs(returns.mean() - exact) <= 3 * se + 2e-6


def test_enumeration_budget_is_enforced():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, 12, 4)
    rm = random_rm(rng, 12, 4, 1)
    with pytest.raises(UnsupportedSpecError):
        optimal_value(mdp, LimitAvgRM(rm), budget=100)
    assert issubclass(BudgetExceeded, UnsupportedSpecError)


def test_unsupported_formula_without_automaton():
    with pytest.raises(UnsupportedSpecError):
        optimal_value(fig1_mdp(1, 1, 1), Ltl.parse("b U !b", ("b",)))


def test_machine_json_round_trip_and_validation():
    rng = np.random.default_rng(5)
    mdp = random_mdp(rng, 3, 2)
    for machine in (random_rm(rng, 3, 2, 2), random_arm(rng, 3), build_reach_arm(["b"], ("b",))):
        back = machine_from_json(machine_to_json(machine), mdp, mdp.propositions)
        assert np.array_equal(back.update, machine.update)
        assert np.allclose(back.rewards, machine.rewards, atol=0, rtol=0)
        assert validate_machine(back) == []
    broken = AbstractRewardMachine(0, np.array([[0, 3]]), np.zeros((1, 2)), ("b",))
    assert validate_machine(broken)
