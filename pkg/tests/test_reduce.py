import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_arm, random_descriptor, random_mdp, random_positional, random_rm
from taskreduce.machines import BuchiAutomaton, RewardMachine, build_reach_arm, builtin_automaton
from taskreduce.mdp import Mdp, MdpShape, PositionalPolicy, Simulator, derive_seed
from taskreduce.reduce import (
    DescriptorCorruption,
    NonDeterministicTracking,
    ReductionDescriptor,
    ReductionError,
    buchi_product,
    check_optimality_preservation,
    derive_tracking,
    descriptor_from_json,
    descriptor_to_json,
    identity_reduction,
    induced_transitions,
    lambda_sink_reduction,
    map_policy,
    mark_accepting,
    multidiscount_reduction,
    preservation_sweep,
    product_rm_reduction,
    reduced_mdp,
    threshold,
    two_discount_reduction,
    two_discount_spec,
    validate_reduction,
    wrap_simulator,
)
from taskreduce.refute import alias_rewards, entering_b_rm, fig1_mdp, synthesize_thm1_counterexample
from taskreduce.specs import DiscountedRM, LimitAvgRM, Ltl, Reach, optimal_value, spec_value


def _replace(rd, **changes):
    fields = {k: getattr(rd, k) for k in ("name", "n_inner", "initial", "propositions", "labels", "beta", "alpha", "q1", "q2", "spec", "tracking", "params")}
    fields.update(changes)
    return ReductionDescriptor(**fields)


def test_product_descriptor_is_valid_and_has_no_q1():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = product_rm_reduction(mdp.shape, DiscountedRM(build_reach_arm(["b"], ("b",)), 0.9))
    assert validate_reduction(rd, mdp.shape) == []
    assert not rd.q1.any()
    assert rd.n_states == 8


def test_q1_across_fibres_is_named():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = identity_reduction(mdp.shape)
    q1 = rd.q1.copy()
    q2 = rd.q2.copy()
    q1[0, 0, 1] = 0.5
    q2[0, 0] *= 0.5
    out = validate_reduction(_replace(rd, q1=q1, q2=q2), mdp.shape)
    assert [(v.check, v.where) for v in out] == [("q1-beta", (0, 0, 1))]


def test_normalization_defect_is_reported_once():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = identity_reduction(mdp.shape)
    q2 = rd.q2.copy()
    q2[1, 0, 1, 2] -= 1e-3
    out = validate_reduction(_replace(rd, q2=q2), mdp.shape)
    assert [(v.check, v.where) for v in out] == [("normalization", (1, 0, 1, 2))]


def test_initial_must_sit_over_the_original_initial():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = identity_reduction(mdp.shape)
    assert [v.check for v in validate_reduction(_replace(rd, initial=2), mdp.shape)] == ["initial"]


def test_product_induced_transitions_by_hand():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 3, 2)
    rm = random_rm(rng, 3, 2, 2)
    rd = product_rm_reduction(mdp.shape, DiscountedRM(rm, 0.9))
    Pbar = induced_transitions(rd, mdp.transitions)
    k = rm.n_states
    for s in range(3):
        for u in range(k):
            for a in range(2):
                for s2 in range(3):
                    for u2 in range(k):
                        want = mdp.transitions[s, a, s2] * (u2 == rm.update[u, s2])
                        assert Pbar[s * k + u, a, s2 * k + u2] == pytest.approx(want, abs=1e-15)


def test_q1_only_descriptor_ignores_inner_dynamics():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, 2, 2)
    n, m = 2, 2
    beta = np.array([0, 1, 0])
    q1 = np.zeros((3, 1, 3))
    q1[0, 0, [0, 2]] = [0.25, 0.75]
    q1[2, 0, 0] = q1[1, 0, 1] = 1
    rd = ReductionDescriptor("q1-only", n, 0, (), (0, 0, 0), beta, np.full((3, 1, m), 0.5), q1, np.zeros((3, 1, m, 3)), None)
    assert validate_reduction(rd, mdp.shape) == []
    assert np.array_equal(induced_transitions(rd, mdp.transitions), q1)
    assert np.array_equal(induced_transitions(rd, random_mdp(rng, 2, 2).transitions), q1)
    sim = wrap_simulator(rd, Simulator(mdp, 1), 2)
    for _ in range(10_000):
        sim.step(0)
    assert sim.inner_calls == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_induced_rows_are_distributions(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
    rd = random_descriptor(rng, mdp.shape)
    assert validate_reduction(rd, mdp.shape) == []
    Pbar = induced_transitions(rd, mdp.transitions)
    assert np.all(Pbar >= 0)
    assert np.max(np.abs(Pbar.sum(axis=2) - 1)) <= 1e-9


def test_invalid_descriptor_is_refused_everywhere():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = identity_reduction(mdp.shape)
    bad = _replace(rd, alpha=rd.alpha * 0.5)
    with pytest.raises(ReductionError):
        induced_transitions(bad, mdp.transitions)
    with pytest.raises(ReductionError):
        wrap_simulator(bad, Simulator(mdp))


def test_wrapper_tracks_the_inner_state():
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, 4, 2)
    rd = product_rm_reduction(mdp.shape, DiscountedRM(random_rm(rng, 4, 2, 3), 0.9))
    sim = wrap_simulator(rd, Simulator(mdp, 5), 6)
    for i in range(5000):
        sim.step(int(rng.integers(2)))
        assert rd.beta[sim.state] == sim.inner.state
        if i % 97 == 0:
            sim.reset()
            assert sim.state == rd.initial and sim.inner.state == mdp.initial


def test_wrapper_frequencies_match_induced_rows():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng, 3, 2)
    rd = random_descriptor(rng, mdp.shape, extra=1, n_actions=2)
    Pbar = induced_transitions(rd, mdp.transitions)
    N = 100_000
    counts = np.zeros_like(Pbar)
    sim = wrap_simulator(rd, Simulator(mdp, derive_seed(8, 0)), derive_seed(8, 1))
    local = np.random.default_rng(derive_seed(8, 2))
    picks = local.integers(0, 2, N)
    for b in picks.tolist():
        t = sim.state
        counts[t, b, sim.step(b)] += 1
        assert rd.beta[sim.state] == sim.inner.state
    visits = counts.sum(axis=2, keepdims=True)
    freq = counts / np.maximum(visits, 1)
    sigma = np.sqrt(Pbar * (1 - Pbar) / np.maximum(visits, 1))
    seen = visits[..., 0] > 100
    ok = np.abs(freq - Pbar) <= 3 * sigma + 1e-12
    assert ok[seen].mean() >= 0.95


def test_single_state_machine_product_is_the_original():
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng, 4, 2)
    rm = RewardMachine.single_state(rng.random((4, 2, 4)))
    rd = product_rm_reduction(mdp.shape, DiscountedRM(rm, 0.9))
    assert np.array_equal(reduced_mdp(rd, mdp).transitions, mdp.transitions)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["discounted", "average"]))
def test_product_preserves_every_policy_value(seed, kind):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    mdp = random_mdp(rng, n, 2)
    rm = random_rm(rng, n, 2, int(rng.integers(1, 4)))
    spec = DiscountedRM(rm, 0.8) if kind == "discounted" else LimitAvgRM(rm)
    rd = product_rm_reduction(mdp.shape, spec)
    bar = reduced_mdp(rd, mdp)
    for _ in range(5):
        pol = random_positional(rng, rd.n_states, 2)
        assert spec_value(bar, rd.spec, pol) == pytest.approx(spec_value(mdp, spec, map_policy(rd, pol)), abs=1e-9)


def test_product_policy_map_tracks_machine_state():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    arm = build_reach_arm(["b"], ("b",))
    rd = product_rm_reduction(mdp.shape, LimitAvgRM(arm))
    rm = arm.to_rm(mdp)
    acts = np.arange(8) % 2
    f = map_policy(rd, PositionalPolicy.deterministic(acts, 2))
    mem = f.initial
    s, u = 0, rm.initial
    for s2 in (1, 1, 1):
        assert f.act[mem, s].argmax() == acts[s * 2 + u]
        mem = f.update[mem, s2]
        u = rm.update[u, s2]
        s = s2


def test_identity_map_is_identity():
    rng = np.random.default_rng(10)
    mdp = random_mdp(rng, 3, 2)
    rd = identity_reduction(mdp.shape)
    pol = random_positional(rng, 3, 2)
    f = map_policy(rd, pol)
    # memory is the tracked state, which is always the current state
    assert f.initial == mdp.initial
    assert np.all(f.update == np.arange(3)[None, :])
    assert np.allclose(f.act[np.arange(3), np.arange(3)], pol.choice)


def test_multidiscount_uniform_gamma_is_the_identity():
    rng = np.random.default_rng(11)
    mdp = random_mdp(rng, 3, 2)
    R = rng.random((3, 2, 3))
    rd = multidiscount_reduction(mdp.shape, R, 0.9)
    assert not rd.q1[:3].any()
    bar = reduced_mdp(rd, mdp)
    assert np.array_equal(bar.transitions[:3, :, :3], mdp.transitions)
    assert np.allclose(rd.spec.machine.rewards[0][:3, :, :3], R)


def test_multidiscount_sink_mass():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = multidiscount_reduction(mdp.shape, np.zeros((4, 2, 4)), [0.5, 0.9, 0.9, 0.9])
    assert rd.q1[0, 0, 4] == pytest.approx(4 / 9, abs=1e-15)
    assert rd.spec.gamma == 0.9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_multidiscount_values_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    mdp = random_mdp(rng, n, 2)
    R = rng.random((n, 2, n))
    g = rng.uniform(0.1, 0.95, n)
    rd = multidiscount_reduction(mdp.shape, R, g)
    bar = reduced_mdp(rd, mdp)
    direct = DiscountedRM(RewardMachine.single_state(R), tuple(g) if n > 1 else float(g[0]))
    for _ in range(3):
        pol = random_positional(rng, rd.n_states, 2)
        assert spec_value(bar, rd.spec, pol) == pytest.approx(spec_value(mdp, direct, map_policy(rd, pol)), abs=1e-9)


def test_multidiscount_map_restricts_the_policy():
    rng = np.random.default_rng(12)
    mdp = random_mdp(rng, 3, 2)
    rd = multidiscount_reduction(mdp.shape, rng.random((3, 2, 3)), [0.5, 0.7, 0.9])
    pol = random_positional(rng, 6, 2)
    f = map_policy(rd, pol)
    for s in range(3):
        assert np.allclose(f.act[f.update[f.initial, s], s], pol.choice[s])


def _sink_setup(accepting):
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1
    mdp = Mdp(P, 0)
    return mdp, lambda_sink_reduction(mdp.shape, accepting, 0.9)


def test_lambda_sink_unreachable_gives_zero():
    mdp, rd = _sink_setup([1])
    # state 1 is visited once; the sink is hit with probability 0.1 only
    bar = reduced_mdp(rd, mdp)
    only = PositionalPolicy.deterministic([0] * rd.n_states, 1)
    assert spec_value(bar, rd.spec, only) == pytest.approx(0.1, abs=1e-12)
    P = mdp.transitions.copy()
    P[0, 0] = [1, 0, 0]
    mdp2 = mdp.with_transitions(P)
    assert spec_value(reduced_mdp(rd, mdp2), rd.spec, only) == 0.0


def test_lambda_sink_recurrent_acceptance_gives_one():
    mdp, rd = _sink_setup([2])
    bar = reduced_mdp(rd, mdp)
    only = PositionalPolicy.deterministic([0] * rd.n_states, 1)
    assert spec_value(bar, rd.spec, only) == pytest.approx(1.0, abs=1e-12)


def test_two_discount_absorbing_accepting_state():
    mdp = Mdp(np.ones((1, 1, 1)), 0)
    spec = two_discount_spec(mdp.shape, [0], 0.5, 0.9)
    assert spec_value(mdp, spec, PositionalPolicy.deterministic([0], 1)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_two_discount_composition(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 4, 2)
    acc = rng.random(4) < 0.5
    g1 = float(rng.uniform(0.1, 0.8))
    g2 = float(rng.uniform(g1 + 0.01, 0.99))
    rd = two_discount_reduction(mdp.shape, acc, g1, g2)
    direct = two_discount_spec(mdp.shape, acc, g1, g2)
    bar = reduced_mdp(rd, mdp)
    pol = random_positional(rng, rd.n_states, 2)
    assert spec_value(bar, rd.spec, pol) == pytest.approx(spec_value(mdp, direct, map_policy(rd, pol)), abs=1e-9)


def test_builders_never_read_transitions():
    # builders take only the shape; two MDPs with one shape get identical descriptors
    a = fig1_mdp(0.2, 0.3, 0.4)
    b = fig1_mdp(0.9, 0.1, 0.6)
    assert a.shape == b.shape
    for build in (
        lambda sh: lambda_sink_reduction(sh, [1], 0.9),
        lambda sh: two_discount_reduction(sh, [1], 0.5, 0.9),
        lambda sh: product_rm_reduction(sh, LimitAvgRM(build_reach_arm(["b"], ("b",)))),
    ):
        x, y = build(a.shape), build(b.shape)
        assert descriptor_to_json(x) == descriptor_to_json(y)


def test_nondeterministic_tracking_is_rejected():
    beta = np.array([0, 0])
    q2 = np.zeros((2, 1, 1, 2))
    q2[:, 0, 0, :] = 0.5
    rd = ReductionDescriptor("split", 1, 0, (), (0, 0), beta, np.ones((2, 1, 1)), np.zeros((2, 1, 2)), q2, None)
    assert validate_reduction(rd, MdpShape(1, 1, 0)) == []
    with pytest.raises(NonDeterministicTracking):
        derive_tracking(rd)
    with pytest.raises(NonDeterministicTracking):
        map_policy(rd, PositionalPolicy.deterministic([0, 0], 1))


def test_corrupted_descriptor_is_detected_at_runtime():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    rd = identity_reduction(mdp.shape)
    sim = wrap_simulator(rd, Simulator(mdp, 0), 0)
    object.__setattr__(rd, "q2", np.zeros_like(rd.q2))
    sim._q2.clear()
    with pytest.raises(DescriptorCorruption):
        sim.step(0)


def test_descriptor_json_round_trip():
    rng = np.random.default_rng(13)
    mdp = random_mdp(rng, 3, 2)
    for rd in (
        product_rm_reduction(mdp.shape, DiscountedRM(random_rm(rng, 3, 2, 2), 0.7)),
        multidiscount_reduction(mdp.shape, rng.random((3, 2, 3)), [0.5, 0.6, 0.9]),
        lambda_sink_reduction(mdp.shape, [0, 2], 0.95),
    ):
        back = descriptor_from_json(json.loads(json.dumps(descriptor_to_json(rd))))
        for name in ("beta", "alpha", "q1", "q2", "tracking"):
            assert np.array_equal(getattr(back, name), getattr(rd, name))
        assert validate_reduction(back, mdp.shape) == []
        pol = random_positional(rng, rd.n_states, 2)
        bar = reduced_mdp(rd, mdp)
        assert spec_value(bar, back.spec, pol) == pytest.approx(spec_value(bar, rd.spec, pol), abs=1e-12)


def test_identity_preserves_trivially():
    rng = np.random.default_rng(14)
    mdp = random_mdp(rng, 3, 2)
    spec = Reach({"b"})
    rep = check_optimality_preservation(mdp, spec, identity_reduction(mdp.shape, spec))
    assert rep.preserved is True and rep.mode == "exhaustive"


def test_product_preserves_optimality():
    rng = np.random.default_rng(15)
    for _ in range(20):
        mdp = random_mdp(rng, 3, 2)
        spec = DiscountedRM(random_rm(rng, 3, 2, 2), 0.9)
        assert check_optimality_preservation(mdp, spec, product_rm_reduction(mdp.shape, spec)).preserved is True


def test_aliased_discounted_translation_breaks_preservation():
    rep = synthesize_thm1_counterexample(entering_b_rm(), 0.5)
    p = rep.parameters
    mdp = fig1_mdp(p["p1"], p["p2"], p["p3"])
    translated = DiscountedRM(alias_rewards(entering_b_rm()), 0.5)
    res = check_optimality_preservation(mdp, Reach({"b"}), product_rm_reduction(mdp.shape, translated))
    assert res.preserved is False
    # the witness plays a1 at s0 in every machine state
    k = entering_b_rm().n_states
    assert all(a == 0 for a in res.witness[:k])
    assert res.witness_value == pytest.approx(p["p1"], abs=1e-9)


def test_buchi_product_and_sweep():
    mdp = fig1_mdp(0.8, 1, 1)
    aut_spec = Ltl.parse("G F b", ("b",))
    prod, acc = buchi_product(mdp, builtin_automaton(aut_spec.formula, ("b",)))
    marked, buchi = mark_accepting(prod, acc)
    assert optimal_value(marked, buchi)[0] == pytest.approx(optimal_value(mdp, aut_spec)[0], abs=1e-12)
    sweep = preservation_sweep(marked, buchi, lambda x: lambda_sink_reduction(marked.shape, acc, x), [0.5, 0.9, 0.99])
    assert all(r["preserved"] is not None for r in sweep)
    assert threshold([{"param": 0.5, "preserved": False}, {"param": 0.9, "preserved": True}, {"param": 0.99, "preserved": True}]) == 0.9
    assert threshold([{"param": 0.9, "preserved": False}]) is None


def test_nondeterministic_automaton_becomes_actions():
    mdp = fig1_mdp(0.5, 0.5, 0.5)
    # guess when b holds forever: state 1 requires b
    aut = BuchiAutomaton(0, [[{0}, {0, 1}], [{2}, {1}], [{2}, {2}]], {1}, ("b",))
    prod, acc = buchi_product(mdp, aut)
    assert prod.n_actions == mdp.n_actions * aut.branching()
    assert prod.n_states == mdp.n_states * aut.n_states
