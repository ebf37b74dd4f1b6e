"""Executable counterexamples.

Builders for three small MDP families and constructions that, given a
candidate translation (a reward machine, an abstract reward machine) or a
perturbation size, produce a concrete MDP on which optimality or
learnability breaks. Every construction is re-checked with the exact
solvers, which share no code with the arithmetic used to build it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from . import solvers
from .learn import LearnerConfig, model_based_learner, q_learning
from .machines import AbstractRewardMachine, RewardMachine, builtin_automaton, rm_return
from .mdp import LassoRun, Mdp, PositionalPolicy, Run, Simulator, UniformStream, derive_seed
from .reduce import buchi_product, check_optimality_preservation, lambda_sink_reduction, mark_accepting, threshold, two_discount_reduction
from .report import ExperimentReport, wilson
from .specs import DiscountedRM, LimitAvgRM, Ltl, Reach, Safe, is_eps_optimal, optimal_value, rm_product, spec_value

VERIFY_TOL = 1e-9
TIE_EPS = 1e-9
CYCLE_CAP = 100_000


def _check_probs(**params):
    for name, p in params.items():
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} = {p} is not a probability")


def _mdp(n, edges, labels, initial=0):
    """``edges[(s, a)] = {t: p}``; rows not listed stay put."""
    P = np.zeros((n, 2, n))
    for s in range(n):
        for a in range(2):
            row = edges.get((s, a), edges.get((s, 0), {s: 1.0}))
            for t, p in row.items():
                P[s, a, t] += p
    return Mdp(P, initial, ("b",), tuple(labels))


def fig1_mdp(p1: float, p2: float, p3: float) -> Mdp:
    """Reachability counterexample. ``a2`` outside ``s0`` is an alias of ``a1``."""
    _check_probs(p1=p1, p2=p2, p3=p3)
    edges = {
        (0, 0): {1: p1, 3: 1 - p1},
        (0, 1): {2: p2, 3: 1 - p2},
        (2, 0): {2: p3, 1: 1 - p3},
    }
    return _mdp(4, edges, (0, 1, 0, 0))


def fig3_mdp(p1: float, p2: float) -> Mdp:
    """Non-robustness of safety."""
    _check_probs(p1=p1, p2=p2)
    edges = {(0, 0): {0: p1, 1: 1 - p1}, (0, 1): {1: p2, 2: 1 - p2}}
    return _mdp(3, edges, (1, 0, 1))


def fig4_mdp(p1: float, p2: float) -> Mdp:
    """Family with no PAC learner for safety."""
    _check_probs(p1=p1, p2=p2)
    edges = {(0, 0): {0: p1, 1: 1 - p1}, (0, 1): {2: 1.0}, (2, 0): {2: p2, 1: 1 - p2}}
    return _mdp(3, edges, (1, 0, 1))


def _pi(first: int, n: int) -> PositionalPolicy:
    acts = np.zeros(n, dtype=int)
    acts[0] = first
    return PositionalPolicy.deterministic(acts, 2)


# ---------------------------------------------------------------- reachability vs discounted machines


def entering_b_rm() -> RewardMachine:
    """Reward 1 on every transition into a b-state of the four-state family."""
    R = np.zeros((4, 2, 4))
    R[:, :, 1] = 1.0
    return RewardMachine.single_state(R, normalized=True)


def constant_rm(value: float = 1.0) -> RewardMachine:
    return RewardMachine.single_state(np.full((4, 2, 4), value), normalized=True)


def alias_rewards(rm: RewardMachine) -> RewardMachine:
    """Copy ``a1``'s rewards onto ``a2`` wherever ``a2`` is only an alias (outside ``s0``)."""
    R = np.array(rm.rewards)
    R[:, 1:, 1, :] = R[:, 1:, 0, :]
    return RewardMachine(rm.initial, rm.update, R, rm.normalized)


def random_rm(rng: np.random.Generator, max_states: int = 3) -> RewardMachine:
    k = int(rng.integers(1, max_states + 1))
    update = rng.integers(0, k, size=(k, 4))
    rewards = rng.random((k, 4, 2, 4))
    return alias_rewards(RewardMachine(0, update, rewards, True))


def _run1():
    return LassoRun(Run(0, ((0, 1),)), Run(1, ((0, 1),)))


def _run2():
    return LassoRun(Run(0, ((1, 2),)), Run(2, ((0, 2),)))


def synthesize_thm1_counterexample(rm: RewardMachine, gamma: float, tol: float = VERIFY_TOL) -> ExperimentReport:
    """Parameters of the four-state family on which ``(rm, gamma)`` prefers a reach-suboptimal policy."""
    if not rm.normalized or rm.rewards.min() < 0 or rm.rewards.max() > 1:
        raise ValueError("rewards must be normalized to [0, 1]")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    rm = alias_rewards(rm)
    rep = ExperimentReport("thm1", {"gamma": gamma, "machine_states": rm.n_states})
    r1 = rm_return(rm, _run1(), gamma)
    r2 = rm_return(rm, _run2(), gamma)
    eps = r1 - r2
    rep.quantities.update({"return_a1": r1, "return_a2": r2, "epsilon": eps})
    spec = DiscountedRM(rm, gamma)
    if eps <= TIE_EPS:
        p1 = p2 = p3 = 1.0
        mdp = fig1_mdp(p1, p2, p3)
        bad, good = _pi(1, 4), _pi(0, 4)
        rep.quantities.update({"mode": "immediate", "t": None})
    else:
        t = 1
        while gamma**t / (1 - gamma) > eps / 2:
            t += 1
        target = (eps / 8) * (1 - gamma)
        p3 = (1 - target) ** (1 / t)
        while 1 - p3**t > target:
            p3 = math.nextafter(p3, 1.0)
        head = rm_return(rm, Run(0, ((1, 2),) + ((0, 2),) * t), gamma)
        need = head + gamma**t / (1 - gamma) + eps / 4
        p1 = None
        for k in range(1, 64):
            cand = 1 - 2.0**-k
            if cand * r1 >= need:
                p1 = cand
                break
        if p1 is None:
            raise AssertionError("no grid value of p1 satisfies the bound")
        p2 = 1.0
        mdp = fig1_mdp(p1, p2, p3)
        bad, good = _pi(0, 4), _pi(1, 4)
        rep.quantities.update({"mode": "construction", "t": t, "head_return": head, "bound": need})
    rep.parameters.update({"p1": p1, "p2": p2, "p3": p3})
    best, _ = optimal_value(mdp, spec)
    reach = Reach({"b"})
    j_bad, j_good = spec_value(mdp, spec, bad), spec_value(mdp, spec, good)
    reach_bad, reach_good = spec_value(mdp, reach, bad), spec_value(mdp, reach, good)
    reach_best, _ = optimal_value(mdp, reach)
    rep.quantities.update(
        {
            "optimum": best,
            "value_preferred": j_bad,
            "value_other": j_good,
            "reach_preferred": reach_bad,
            "reach_other": reach_good,
            "reach_optimum": reach_best,
        }
    )
    rep.check("preferred_policy_is_optimal", j_bad >= best - tol)
    rep.check("preferred_policy_reach_suboptimal", reach_bad < reach_best - tol)
    rep.check("reach_optimum_is_one", abs(reach_best - 1) <= tol)
    if rep.quantities["mode"] == "construction":
        rep.check("reach_of_preferred_is_p1", abs(reach_bad - p1) <= tol and p1 < 1)
    return rep


# ---------------------------------------------------------------- abstract machines vs GF b


class CycleCapExceeded(RuntimeError):
    pass


@dataclass
class Cycle:
    states: tuple
    labels: tuple
    average: float

    @property
    def positive(self) -> bool:
        return all(lab == 1 for lab in self.labels)

    @property
    def negative(self) -> bool:
        return all(lab == 0 for lab in self.labels)


@dataclass
class CycleAnalysis:
    reachable: list
    pruned: list
    cycles: list
    positives: list
    negatives: list
    bottom_sccs: list
    gap: float
    plan: dict = field(default_factory=dict)


def _arm_checks(arm: AbstractRewardMachine):
    if tuple(arm.propositions) != ("b",):
        raise ValueError("the machine must read the single proposition b")
    if arm.rewards.min() < 0 or arm.rewards.max() > 1:
        raise ValueError("rewards must be normalized to [0, 1]")


def _reachable(arm):
    seen = {arm.initial}
    queue = deque([arm.initial])
    while queue:
        u = queue.popleft()
        for lab in (0, 1):
            v = int(arm.update[u, lab])
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return sorted(seen)


def enumerate_cycles(arm: AbstractRewardMachine, keep, cap: int = CYCLE_CAP) -> list[Cycle]:
    """Simple cycles of the machine graph, one per choice of label on parallel edges."""
    g = nx.DiGraph()
    g.add_nodes_from(keep)
    for u in keep:
        for lab in (0, 1):
            g.add_edge(u, int(arm.update[u, lab]))
    out = []
    for nodes in nx.simple_cycles(g):
        k = nodes.index(min(nodes))
        nodes = nodes[k:] + nodes[:k]
        hops = [[lab for lab in (0, 1) if arm.update[u, lab] == nodes[(i + 1) % len(nodes)]] for i, u in enumerate(nodes)]
        for labels in _product(hops):
            if len(out) >= cap:
                raise CycleCapExceeded(f"more than {cap} cycles")
            avg = sum(arm.rewards[u, lab] for u, lab in zip(nodes, labels)) / len(nodes)
            out.append(Cycle(tuple(nodes), tuple(labels), float(avg)))
    out.sort(key=lambda c: (len(c.states), c.states, c.labels))
    return out


def _product(choices):
    if not choices:
        yield ()
        return
    for x in choices[0]:
        for rest in _product(choices[1:]):
            yield (x,) + rest


def _label_path(arm, start, goal, allowed=None):
    """Shortest label sequence driving the machine from ``start`` to ``goal``."""
    prev = {start: None}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            break
        for lab in (0, 1):
            v = int(arm.update[u, lab])
            if v not in prev and (allowed is None or v in allowed):
                prev[v] = (u, lab)
                queue.append(v)
    if goal not in prev:
        return None
    labels = []
    v = goal
    while prev[v] is not None:
        u, lab = prev[v]
        labels.append(lab)
        v = u
    return labels[::-1]


def _bottom_sccs(arm, keep):
    g = nx.DiGraph()
    g.add_nodes_from(keep)
    for u in keep:
        for lab in (0, 1):
            g.add_edge(u, int(arm.update[u, lab]))
    cond = nx.condensation(g)
    out = [sorted(cond.nodes[c]["members"]) for c in cond.nodes if cond.out_degree(c) == 0]
    return sorted(out)


def analyze_cycles(arm: AbstractRewardMachine) -> CycleAnalysis:
    _arm_checks(arm)
    keep = _reachable(arm)
    pruned = [u for u in range(arm.n_states) if u not in keep]
    cycles = enumerate_cycles(arm, keep)
    pos = [c for c in cycles if c.positive]
    neg = [c for c in cycles if c.negative]
    gap = min(cp.average - cn.average for cp in pos for cn in neg)
    return CycleAnalysis(keep, pruned, cycles, pos, neg, _bottom_sccs(arm, keep), gap)


def _branch(arm, labels_prefix, labels_loop, first_state):
    """Deterministic chain emitting ``labels_prefix`` then ``labels_loop`` forever."""
    labels = list(labels_prefix) + list(labels_loop)
    nxt = [first_state + i + 1 for i in range(len(labels))]
    nxt[-1] = first_state + len(labels_prefix)
    return labels, nxt


def two_branch_mdp(arm, loop1, loop2, p: float, prefix1=None, prefix2=None):
    """``a1`` enters branch 1 with probability ``p`` (else a dead state), ``a2`` enters branch 2."""
    prefix1 = _label_path(arm, arm.initial, loop1.states[0]) if prefix1 is None else prefix1
    prefix2 = _label_path(arm, arm.initial, loop2.states[0]) if prefix2 is None else prefix2
    lab1, nxt1 = _branch(arm, prefix1, loop1.labels, 1)
    start2 = 1 + len(lab1)
    lab2, nxt2 = _branch(arm, prefix2, loop2.labels, start2)
    dead = start2 + len(lab2)
    n = dead + 1
    P = np.zeros((n, 2, n))
    P[0, 0, 1] += p
    P[0, 0, dead] += 1 - p
    P[0, 1, start2] = 1.0
    for i, t in enumerate(nxt1 + nxt2):
        P[1 + i, :, t] = 1.0
    P[dead, :, dead] = 1.0
    labels = (0,) + tuple(lab1) + tuple(lab2) + (0,)
    return Mdp(P, 0, ("b",), labels)


def analyze_arm_for_buchi(arm: AbstractRewardMachine, tol: float = VERIFY_TOL):
    """Cycle analysis of ``arm`` plus a verified MDP on which it misranks ``G F b``."""
    ca = analyze_cycles(arm)
    rep = ExperimentReport("thm3", {"machine_states": arm.n_states})
    rep.quantities.update(
        {
            "reachable": ca.reachable,
            "pruned": ca.pruned,
            "cycles": len(ca.cycles),
            "positives": len(ca.positives),
            "negatives": len(ca.negatives),
            "bottom_sccs": ca.bottom_sccs,
            "gap": ca.gap,
        }
    )
    if ca.pruned:
        rep.notes.append(f"unreachable machine states ignored: {ca.pruned}")
    if ca.gap <= 0:
        cp, cn = min(((a, b) for a in ca.positives for b in ca.negatives), key=lambda ab: ab[0].average - ab[1].average)
        mdp = two_branch_mdp(arm, cp, cn, 1.0)
        ca.plan = {"mode": "direct", "positive": cp, "negative": cn}
        preferred = 1
        p = 1.0
    else:
        scc = ca.bottom_sccs[0]
        u = scc[0]
        seen = []
        while u not in seen:
            seen.append(u)
            u = int(arm.update[u, 0])
        start = seen.index(u)
        neg_states = seen[start:]
        neg = Cycle(tuple(neg_states), (0,) * len(neg_states), float(np.mean([arm.rewards[x, 0] for x in neg_states])))
        u2 = int(arm.update[u, 1])
        back = _label_path(arm, u2, u, allowed=set(scc)) if u2 != u else []
        comp_labels = [1] + back
        comp_states = [u]
        for lab in comp_labels[:-1]:
            comp_states.append(int(arm.update[comp_states[-1], lab]))
        comp = Cycle(tuple(comp_states), tuple(comp_labels), float(np.mean([arm.rewards[x, l] for x, l in zip(comp_states, comp_labels)])))
        k, k2 = len(neg.states), len(comp.states)
        m = 1
        while k2 / (m * k + k2) > ca.gap / 2:
            m += 1
        cm_states = neg.states * m + comp.states
        cm_labels = neg.labels * m + comp.labels
        cm_avg = (m * k * neg.average + k2 * comp.average) / (m * k + k2)
        cm = Cycle(cm_states, cm_labels, cm_avg)
        cp = max(ca.positives, key=lambda c: c.average)
        p = None
        for j in range(1, 64):
            cand = 1 - 2.0**-j
            if cand * cp.average >= cm_avg + ca.gap / 4:
                p = cand
                break
        if p is None:
            raise AssertionError("no grid value of p satisfies the bound")
        mdp = two_branch_mdp(arm, cp, cm, p)
        ca.plan = {"mode": "construction", "negative": neg, "companion": comp, "m": m, "p": p, "positive": cp, "mixed": cm}
        preferred = 0
        rep.quantities.update({"k": k, "k_companion": k2, "m": m, "p": p, "mixed_average": cm_avg, "positive_average": cp.average})
    rep.quantities["mode"] = ca.plan["mode"]
    _verify_thm3(rep, arm, mdp, preferred, p, tol)
    return ca, rep


def _verify_thm3(rep, arm, mdp, preferred, p, tol):
    """Exact check via the product chains, independent of the cycle arithmetic."""
    n = mdp.n_states
    prod = rm_product(mdp, arm)
    pols = [_pi(0, n), _pi(1, n)]
    avg = [solvers.limit_avg_value(prod.mdp, prod.reward, PositionalPolicy(pol.choice[prod.base])) for pol in pols]
    gf = Ltl.parse("G F b", ("b",))
    aut = builtin_automaton(gf.formula, ("b",))
    from .specs import automaton_product

    bp = automaton_product(mdp, aut)
    buchi_best, _ = solvers.max_buchi_prob(bp.mdp, bp.accepting)
    buchi = [spec_value(mdp, gf, pol) for pol in pols]
    best, _ = optimal_value(mdp, LimitAvgRM(arm))
    other = 1 - preferred
    rep.quantities.update(
        {
            "avg_a1": avg[0],
            "avg_a2": avg[1],
            "avg_optimum": best,
            "buchi_a1": buchi[0],
            "buchi_a2": buchi[1],
            "buchi_optimum": float(buchi_best[bp.mdp.initial]),
        }
    )
    rep.check("preferred_policy_is_optimal", avg[preferred] >= best - tol)
    if preferred == 0:
        rep.check("strict_preference", avg[0] > avg[1] + tol)
        rep.check("buchi_of_preferred_is_p", abs(buchi[0] - p) <= tol and p < 1)
    else:
        rep.check("buchi_of_preferred_is_zero", abs(buchi[1]) <= tol)
    rep.check("other_policy_buchi_one", abs(buchi[other] - 1) <= tol)
    rep.check("buchi_optimum_is_one", abs(float(buchi_best[bp.mdp.initial]) - 1) <= tol)


def random_arm(rng: np.random.Generator, max_states: int = 4) -> AbstractRewardMachine:
    k = int(rng.integers(1, max_states + 1))
    return AbstractRewardMachine(0, rng.integers(0, k, size=(k, 2)), rng.random((k, 2)), ("b",), True)


# ---------------------------------------------------------------- robustness


def robustness_experiment(delta: float, eps: float, tol: float = VERIFY_TOL) -> ExperimentReport:
    """Optimal safety policies of a delta-perturbed model against eps-optimality in the original."""
    if not 0 <= delta < 1 or not 0 <= eps < 1:
        raise ValueError("need delta in [0, 1) and eps in [0, 1)")
    M, Md = fig3_mdp(1, 1), fig3_mdp(1 - delta, 1 - delta)
    spec = Safe({"b"})
    rep = ExperimentReport("robustness", {"delta": delta, "eps": eps})
    close = float(np.abs(M.transitions - Md.transitions).max())
    values = []
    for acts in np.ndindex(2, 2, 2):
        pol = PositionalPolicy.deterministic(acts, 2)
        values.append((acts, spec_value(Md, spec, pol), spec_value(M, spec, pol)))
    opt_d = max(v for _, v, _ in values)
    opt = max(v for _, _, v in values)
    members = [(a, vd, v) for a, vd, v in values if vd >= opt_d - tol]
    for a, vd, v in values:
        rep.rows.append({"policy": "".join(f"a{x + 1}" for x in a), "value_perturbed": vd, "value_original": v, "optimal_perturbed": vd >= opt_d - tol, "eps_optimal_original": v >= opt - eps - tol})
    disjoint = all(v < opt - eps - tol for _, _, v in members)
    rep.quantities.update(
        {
            "max_entry_difference": close,
            "optimum_original": opt,
            "optimum_perturbed": opt_d,
            "optimal_perturbed_policies": len(members),
            "original_values_of_those": [v for _, _, v in members],
            "verdict": "disjoint" if disjoint else "overlap",
            "solver_optimum_original": optimal_value(M, spec)[0],
            "solver_optimum_perturbed": optimal_value(Md, spec)[0],
        }
    )
    rep.check("delta_close", close <= delta + 1e-12)
    rep.check("enumeration_matches_solver", abs(opt - rep.quantities["solver_optimum_original"]) <= tol and abs(opt_d - rep.quantities["solver_optimum_perturbed"]) <= tol)
    if delta > 0:
        rep.check("optimum_original_is_one", abs(opt - 1) <= tol)
        rep.check("optimum_perturbed_is_delta", abs(opt_d - delta) <= tol)
        rep.check("members_worthless_in_original", all(abs(v) <= tol for _, _, v in members))
        rep.check("disjoint", disjoint)
    return rep


# ---------------------------------------------------------------- PAC indistinguishability


def lemma2_closed_forms(x: float, delta: float) -> tuple[float, float]:
    """Safety values of the stationary policy playing ``a1`` with probability ``x`` at ``s0``."""
    j1 = 1.0 if x == 1 else 0.0
    j2 = (1 - x) / (1 - x * (1 - delta))
    return j1, j2


def lemma2_grid(delta: float = 0.5, eps: float = 0.25, points: int = 101, tol: float = VERIFY_TOL) -> ExperimentReport:
    """Grid evidence (not a proof) that no stationary policy is eps-optimal in both perturbed models."""
    M1, M2 = fig4_mdp(1, 1 - delta), fig4_mdp(1 - delta, 1)
    spec = Safe({"b"})
    o1, o2 = optimal_value(M1, spec)[0], optimal_value(M2, spec)[0]
    rep = ExperimentReport("lemma2", {"delta": delta, "eps": eps, "points": points})
    worst = 0.0
    joint = 0
    for i in range(points):
        x = i / (points - 1)
        choice = np.array([[x, 1 - x], [1.0, 0.0], [1.0, 0.0]])
        pol = PositionalPolicy(choice)
        s1, s2 = spec_value(M1, spec, pol), spec_value(M2, spec, pol)
        c1, c2 = lemma2_closed_forms(x, delta)
        worst = max(worst, abs(s1 - c1), abs(s2 - c2))
        both = s1 >= o1 - eps and s2 >= o2 - eps
        joint += both
        rep.rows.append({"x": x, "J1": s1, "J1_closed": c1, "J2": s2, "J2_closed": c2, "eps_optimal_both": both})
    rep.quantities.update({"optimum_1": o1, "optimum_2": o2, "max_closed_form_error": worst, "jointly_eps_optimal": joint})
    rep.notes.append("grid evidence over stationary policies, not a proof over all policies")
    rep.check("closed_forms_match_solver", worst <= tol)
    rep.check("no_jointly_eps_optimal_policy", joint == 0)
    return rep


def pac_family(delta: float):
    """The unperturbed model and its two perturbations."""
    return fig4_mdp(1, 1), fig4_mdp(1, 1 - delta), fig4_mdp(1 - delta, 1)


class _Recorder:
    """Simulator proxy that keeps the observed transitions."""

    def __init__(self, sim):
        self.sim = sim
        self.shape = sim.shape
        self.log = []

    def reset(self):
        return self.sim.reset()

    def step(self, a):
        s = self.sim.state
        s2 = self.sim.step(a)
        self.log.append((s, a, s2))
        return s2


def _run_learner(kind, mdp, seed, K, spec, cache):
    sim = Simulator(mdp, seed)
    if kind == "model":
        return model_based_learner(sim, spec, LearnerConfig(seed=seed, steps=K, eval_every=1), cache=cache)
    # reward 1 for staying on b-states
    R = np.zeros((3, 2, 3))
    R[:, :, [0, 2]] = 1.0
    rec = _Recorder(sim)
    trace, _ = q_learning(rec, R, 0.9, LearnerConfig(seed=seed, steps=K, eval_every=1))
    trace.observations = rec.log
    return trace


def _mistakes(trace, mdp, spec, eps, optimum, K, memo):
    count = 0
    for _, pol in trace.snapshots[1 : K + 1]:
        key = (id(mdp), pol.act.tobytes(), pol.update.tobytes(), pol.initial)
        if key not in memo:
            memo[key] = is_eps_optimal(mdp, spec, pol, eps, optimum)
        count += not memo[key]
    return count


def _matches(obs, mdp):
    P = mdp.transitions
    return all(P[s, a, t] > 0 for s, a, t in obs)


def pac_indistinguishability_experiment(
    learner: str = "model", eps: float = 0.25, K: int = 21, delta: float | None = None, trials: int = 1000, seed: int = 0, control_trials: int = 50,
    tol: float = VERIFY_TOL,
) -> ExperimentReport:
    """Coupled runs of a learner on the unperturbed model and its two perturbations."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if K < 1 or K % 2 == 0:
        raise ValueError("K must be a positive odd number (K = 2N + 1)")
    if learner not in ("model", "q"):
        raise ValueError("learner is 'model' or 'q'")
    if delta is None:
        delta = 1 - 0.9 ** (1 / K)
    N = (K - 1) // 2
    spec = Safe({"b"})
    M, M1, M2 = pac_family(delta)
    o1, o2 = optimal_value(M1, spec)[0], optimal_value(M2, spec)[0]
    rep = ExperimentReport(
        "pac", {"learner": learner, "eps": eps, "K": K, "N": N, "delta": delta, "trials": trials, "seed": seed, "control_trials": control_trials}
    )
    cache, memo = {}, {}
    tallies = dict.fromkeys(("G1", "G2", "E1", "E2", "F1", "F2", "E1_and_E2", "coupling_event"), 0)
    for j in range(trials):
        sub = derive_seed(seed, j)
        rep.seeds.append(sub)
        t0 = _run_learner(learner, M, sub, K, spec, cache)
        t1 = _run_learner(learner, M1, sub, K, spec, cache)
        t2 = _run_learner(learner, M2, sub, K, spec, cache)
        g1, g2 = _matches(t1.observations, M), _matches(t2.observations, M)
        e1 = _mistakes(t0, M1, spec, eps, o1, K, memo) <= N
        e2 = _mistakes(t0, M2, spec, eps, o2, K, memo) <= N
        f1 = _mistakes(t1, M1, spec, eps, o1, K, memo) <= N
        f2 = _mistakes(t2, M2, spec, eps, o2, K, memo) <= N
        u = UniformStream(sub)
        coupled = all(u.next() < 1 - delta for _ in range(K))
        row = {"trial": j, "seed": sub, "G1": g1, "G2": g2, "E1": e1, "E2": e2, "F1": f1, "F2": f2, "coupling_event": coupled}
        rep.rows.append(row)
        for key in ("G1", "G2", "E1", "E2", "F1", "F2", "coupling_event"):
            tallies[key] += row[key]
        tallies["E1_and_E2"] += e1 and e2
    q = rep.quantities
    for key, hits in tallies.items():
        lo, hi = wilson(hits, trials)
        q[f"rate_{key}"] = hits / trials
        q[f"ci_{key}"] = [lo, hi]
    q["coupling_bound"] = (1 - delta) ** K
    for jj in (1, 2):
        rate = q[f"rate_G{jj}"]
        rep.check(f"G{jj}_rate_in_[0.87,0.93]", 0.87 <= rate <= 0.93)
        rep.check(f"G{jj}_ci_reaches_bound", q[f"ci_G{jj}"][1] >= q["coupling_bound"] - 1e-12)
    rep.check("coupling_event_rate_in_[0.87,0.93]", 0.87 <= q["rate_coupling_event"] <= 0.93)
    rep.check("E1_E2_never_jointly", tallies["E1_and_E2"] == 0)
    rep.check("rate_E1_plus_rate_E2_at_most_1", q["rate_E1"] + q["rate_E2"] <= 1 + 1e-12)
    same = True
    zero = pac_family(0.0)
    for j in range(min(control_trials, trials)):
        sub = derive_seed(seed, j)
        runs = [_run_learner(learner, X, sub, K, spec, {}) for X in zero]
        docs = [r.to_json() for r in runs]
        same &= docs[0] == docs[1] == docs[2]
    rep.check("delta_zero_control_identical", same)
    grid = lemma2_grid(tol=tol)
    q["lemma2"] = grid.quantities
    rep.check("lemma2_grid_disjoint", grid.passed)
    rep.notes.append(
        "G_j is read literally: all K transitions of the run on the perturbed model match the unperturbed model. "
        "Its probability is (1 - delta)^n_j where n_j counts the learner's risky steps; n_1 + n_2 <= K, "
        "so Pr(G1) * Pr(G2) >= 0.9 and the two rates cannot both lie in [0.87, 0.93]. "
        "coupling_event (every uniform below 1 - delta) is the event whose probability is exactly (1 - delta)^K."
    )
    return rep


# ---------------------------------------------------------------- preservation sweeps


def fig1_buchi_product(p1=0.8, p2=1.0, p3=1.0):
    """Product of the four-state family with the automaton for ``G F b``, acceptance as a proposition."""
    mdp = fig1_mdp(p1, p2, p3)
    aut = builtin_automaton(Ltl.parse("G F b", ("b",)).formula, ("b",))
    prod, acc = buchi_product(mdp, aut)
    return mark_accepting(prod, acc), acc


def reduction_sweep(kind: str, params, p=(0.8, 1.0, 1.0), slack: float = 1e-7) -> ExperimentReport:
    """Optimality preservation of the lambda-sink or two-discount reduction across a parameter sweep."""
    (marked, spec), acc = fig1_buchi_product(*p)
    rep = ExperimentReport(f"sweep-{kind}", {"kind": kind, "p": list(p)})
    for x in params:
        if kind == "lambda":
            rd = lambda_sink_reduction(marked.shape, acc, x)
        elif kind == "twodiscount":
            g1, g2 = x
            rd = two_discount_reduction(marked.shape, acc, g1, g2)
        else:
            raise ValueError(f"unknown sweep kind {kind!r}")
        res = check_optimality_preservation(marked, spec, rd, slack=slack)
        rep.rows.append({"param": x if kind == "lambda" else f"{x[0]},{x[1]}", "preserved": res.preserved, "optimum": res.optimum, "reduced_optimum": res.bar_optimum})
    preserved = [r["param"] for r in rep.rows if r["preserved"]]
    found = threshold([{"param": x, "preserved": r["preserved"]} for x, r in zip(params, rep.rows)])
    rep.quantities.update({"preserved_at": preserved, "count": len(rep.rows), "threshold": found})
    rep.check("every_check_decided", all(r["preserved"] is not None for r in rep.rows))
    rep.check("threshold_exists", found is not None)
    return rep
