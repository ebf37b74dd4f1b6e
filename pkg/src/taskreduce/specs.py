"""Specifications and their exact values on known MDPs.

Every objective is evaluated on a Markov chain obtained by taking the
product of the MDP with whatever the objective needs to remember (reward
machine state, automaton state) and with the memory of the policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import solvers
from .ltl import Formula, parse_ltl, to_text
from .machines import AbstractRewardMachine, BuchiAutomaton, RewardMachine, _relabel, builtin_automaton, machine_for
from .mdp import FiniteMemoryPolicy, Mdp, PositionalPolicy, as_memory_policy, prop_mask

DEFAULT_BUDGET = 2**20


class UnsupportedSpecError(ValueError):
    pass


class BudgetExceeded(UnsupportedSpecError):
    pass


@dataclass(frozen=True, eq=False)
class DiscountedRM:
    machine: RewardMachine | AbstractRewardMachine
    gamma: float | tuple = 0.9

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if np.any(g <= 0) or np.any(g >= 1):
            raise ValueError("discount factors must lie strictly inside (0, 1)")
        if g.ndim:
            object.__setattr__(self, "gamma", tuple(float(x) for x in g))


@dataclass(frozen=True, eq=False)
class LimitAvgRM:
    machine: RewardMachine | AbstractRewardMachine


@dataclass(frozen=True)
class Reach:
    """Eventually visit a state whose label contains one of ``props``."""

    props: frozenset

    def __init__(self, props):
        object.__setattr__(self, "props", frozenset(props))


@dataclass(frozen=True)
class Safe:
    """Every visited state has a label containing one of ``props``."""

    props: frozenset

    def __init__(self, props):
        object.__setattr__(self, "props", frozenset(props))


@dataclass(frozen=True, eq=False)
class Ltl:
    formula: Formula
    automaton: BuchiAutomaton | None = None

    @classmethod
    def parse(cls, text: str, propositions: Sequence[str], automaton=None) -> "Ltl":
        return cls(parse_ltl(text, propositions), automaton)

    def __str__(self):
        return to_text(self.formula)


Specification = DiscountedRM | LimitAvgRM | Reach | Safe | Ltl


def region(mdp: Mdp, props) -> np.ndarray:
    """States whose label meets ``props``."""
    X = prop_mask(mdp.propositions, props)
    if X == 0:
        raise ValueError("proposition set must be nonempty")
    return np.array([lab & X != 0 for lab in mdp.labels])


# ---------------------------------------------------------------- products


@dataclass(frozen=True, eq=False)
class Product:
    """Product of an MDP with a deterministic monitor.

    Product state ``s * k + q`` pairs MDP state ``s`` with monitor state
    ``q``; ``step[q, s']`` is the monitor state after the MDP enters ``s'``.
    """

    mdp: Mdp
    base: np.ndarray
    aux: np.ndarray
    step: np.ndarray
    reward: np.ndarray | None = None
    accepting: np.ndarray | None = None

    @property
    def n_aux(self) -> int:
        return self.step.shape[0]

    def memory_policy(self, policy: PositionalPolicy) -> FiniteMemoryPolicy:
        """A policy on the product seen as a finite-memory policy on the MDP."""
        k = self.n_aux
        n = self.step.shape[1]
        act = policy.choice.reshape(n, k, -1).transpose(1, 0, 2)
        return FiniteMemoryPolicy(int(self.aux[self.mdp.initial]), self.step, act)


def _product(mdp: Mdp, step: np.ndarray, init_aux: int, reward_of=None) -> tuple:
    n, m = mdp.n_states, mdp.n_actions
    k = step.shape[0]
    P = mdp.transitions
    P5 = np.zeros((n, k, m, n, k))
    R5 = np.zeros((n, k, m, n, k)) if reward_of is not None else None
    for q in range(k):
        for t in range(n):
            P5[:, q, :, t, step[q, t]] = P[:, :, t]
            if reward_of is not None:
                R5[:, q, :, t, step[q, t]] = reward_of[q, :, :, t]
    N = n * k
    base = np.repeat(np.arange(n), k)
    aux = np.tile(np.arange(k), n)
    pm = Mdp(P5.reshape(N, m, N), mdp.initial * k + init_aux, mdp.propositions, tuple(mdp.labels[s] for s in base), mdp.action_names)
    return pm, base, aux, (R5.reshape(N, m, N) if R5 is not None else None)


def rm_product(mdp: Mdp, machine) -> Product:
    rm = machine_for(mdp, machine)
    pm, base, aux, R = _product(mdp, rm.update, rm.initial, rm.rewards)
    return Product(pm, base, aux, rm.update, reward=R)


def automaton_step(mdp: Mdp, aut: BuchiAutomaton) -> tuple[np.ndarray, int]:
    d = aut.delta()
    lab = _relabel(mdp.labels, mdp.propositions, aut.propositions)
    step = d[:, lab]
    return step, int(d[aut.initial, lab[mdp.initial]])


def automaton_product(mdp: Mdp, aut: BuchiAutomaton) -> Product:
    """Product whose monitor state is the automaton state after reading the current label."""
    step, q0 = automaton_step(mdp, aut)
    pm, base, aux, _ = _product(mdp, step, q0)
    acc = np.isin(aux, sorted(aut.accepting))
    return Product(pm, base, aux, step, accepting=acc)


def automaton_for(mdp: Mdp, spec: Ltl) -> BuchiAutomaton:
    aut = spec.automaton or builtin_automaton(spec.formula, mdp.propositions)
    if aut is None:
        raise UnsupportedSpecError(f"no automaton for {to_text(spec.formula)}; attach a deterministic one")
    if not aut.deterministic:
        raise UnsupportedSpecError("evaluation needs a deterministic automaton")
    return aut


# ---------------------------------------------------------------- chains of policies


def _lift(policy: FiniteMemoryPolicy, base: np.ndarray) -> FiniteMemoryPolicy:
    return FiniteMemoryPolicy(policy.initial, policy.update[:, base], policy.act[:, base])


def induced_chain(mdp: Mdp, policy: FiniteMemoryPolicy, reward=None):
    """Markov chain over (state, memory) pairs.

    Returns (P, r, base, init) where chain state ``s * K + k`` has MDP
    state ``base[.] = s`` and ``r`` is the expected one-step reward.
    """
    P = mdp.transitions
    n, m = mdp.n_states, mdp.n_actions
    K = policy.n_memory
    W = np.einsum("ksa,sat->skt", policy.act, P)
    if K == 1:
        Pc = W[:, 0, :]
    else:
        C = np.zeros((n, K, n, K))
        for k in range(K):
            for t in range(n):
                C[:, k, t, policy.update[k, t]] = W[:, k, t]
        Pc = C.reshape(n * K, n * K)
    r = None
    if reward is not None:
        q = np.einsum("sat,sat->sa", P, reward)
        r = np.einsum("ksa,sa->sk", policy.act, q).reshape(n * K)
    base = np.repeat(np.arange(n), K)
    return Pc, r, base, mdp.initial * K + policy.initial


def spec_value(mdp: Mdp, spec: Specification, policy) -> float:
    pol = as_memory_policy(policy)
    if isinstance(spec, (DiscountedRM, LimitAvgRM)):
        prod = rm_product(mdp, spec.machine)
        Pc, r, cb, init = induced_chain(prod.mdp, _lift(pol, prod.base), prod.reward)
        if isinstance(spec, DiscountedRM):
            g = solvers.gamma_vector(spec.gamma, mdp.n_states)[prod.base[cb]]
            return float(solvers.solve_discounted_chain(Pc, r, g)[init])
        return float(solvers.chain_gain(Pc, r)[init])
    if isinstance(spec, (Reach, Safe)):
        reg = region(mdp, spec.props)
        Pc, _, cb, init = induced_chain(mdp, pol)
        if isinstance(spec, Reach):
            return float(solvers.chain_reach_prob(Pc, reg[cb])[init])
        return float(1.0 - solvers.chain_reach_prob(Pc, ~reg[cb])[init])
    if isinstance(spec, Ltl):
        prod = automaton_product(mdp, automaton_for(mdp, spec))
        Pc, _, cb, init = induced_chain(prod.mdp, _lift(pol, prod.base))
        return float(solvers.chain_buchi_prob(Pc, prod.accepting[cb])[init])
    raise TypeError(f"not a specification: {spec!r}")


# ---------------------------------------------------------------- positional enumeration


class ChainObjective:
    """Value at the initial state of deterministic positional policies.

    ``kind`` is one of ``discounted``, ``average``, ``reach``, ``safe`` and
    ``buchi``. Policies are given as one action per state of ``P``.
    """

    def __init__(self, P, init, kind, reward=None, gamma=None, target=None):
        self.P = np.asarray(P)
        self.N = self.P.shape[0]
        self.init = init
        self.kind = kind
        self.q = None if reward is None else np.einsum("sat,sat->sa", self.P, reward)
        self.gamma = gamma
        self.target = target
        self._rows = np.arange(self.N)

    def __call__(self, acts) -> float:
        Pc = self.P[self._rows, acts]
        if self.kind == "discounted":
            r = self.q[self._rows, acts]
            return float(solvers.solve_discounted_chain(Pc, r, self.gamma)[self.init])
        if self.kind == "average":
            return float(solvers.chain_gain(Pc, self.q[self._rows, acts])[self.init])
        if self.kind == "reach":
            return float(solvers.chain_reach_prob(Pc, self.target)[self.init])
        if self.kind == "safe":
            return float(1.0 - solvers.chain_reach_prob(Pc, ~self.target)[self.init])
        return float(solvers.chain_buchi_prob(Pc, self.target)[self.init])


def objective_for(mdp: Mdp, spec: Specification) -> tuple[ChainObjective, np.ndarray]:
    """Objective on the monitor product plus the map product state → MDP state."""
    if isinstance(spec, (DiscountedRM, LimitAvgRM)):
        prod = rm_product(mdp, spec.machine)
        if isinstance(spec, DiscountedRM):
            g = solvers.gamma_vector(spec.gamma, mdp.n_states)[prod.base]
            return ChainObjective(prod.mdp.transitions, prod.mdp.initial, "discounted", prod.reward, g), prod.base
        return ChainObjective(prod.mdp.transitions, prod.mdp.initial, "average", prod.reward), prod.base
    if isinstance(spec, (Reach, Safe)):
        kind = "reach" if isinstance(spec, Reach) else "safe"
        return ChainObjective(mdp.transitions, mdp.initial, kind, target=region(mdp, spec.props)), np.arange(mdp.n_states)
    if isinstance(spec, Ltl):
        prod = automaton_product(mdp, automaton_for(mdp, spec))
        return ChainObjective(prod.mdp.transitions, prod.mdp.initial, "buchi", target=prod.accepting), prod.base
    raise TypeError(f"not a specification: {spec!r}")


def action_classes(rows: Sequence[np.ndarray]) -> list[list[int]]:
    """Per state, the lowest action of every group of interchangeable actions.

    ``rows`` holds arrays of shape (n, m, ...) that together determine what
    an action does; actions with identical slices in all of them are merged.
    """
    n, m = rows[0].shape[:2]
    out = []
    for s in range(n):
        reps, seen = [], []
        for a in range(m):
            key = [np.asarray(r[s, a]) for r in rows]
            if not any(all(np.array_equal(x, y) for x, y in zip(key, other)) for other in seen):
                seen.append(key)
                reps.append(a)
        out.append(reps)
    return out


def count_policies(classes) -> int:
    total = 1
    for reps in classes:
        total *= len(reps)
    return total


def enumerate_positional(P: np.ndarray, init: int, classes, budget: int = DEFAULT_BUDGET) -> Iterator[np.ndarray]:
    """Deterministic positional policies that differ on states they can reach.

    Choices are made only at states reachable from ``init`` under the
    choices already made; other states keep their first representative.
    """
    if count_policies(classes) > budget:
        raise BudgetExceeded(f"more than {budget} positional policies")
    n = P.shape[0]
    succ = [[tuple(np.flatnonzero(P[s, a] > 0)) for a in range(P.shape[1])] for s in range(n)]
    acts = np.array([c[0] for c in classes])
    assigned = np.zeros(n, dtype=bool)
    found = np.zeros(n, dtype=bool)
    order = [init]
    found[init] = True

    def rec(pos):
        while pos < len(order) and assigned[order[pos]]:
            pos += 1
        if pos == len(order):
            yield acts.copy()
            return
        s = order[pos]
        assigned[s] = True
        for a in classes[s]:
            acts[s] = a
            added = [t for t in succ[s][a] if not found[t]]
            for t in added:
                found[t] = True
                order.append(t)
            yield from rec(pos + 1)
            for t in added:
                found[t] = False
                order.pop()
        acts[s] = classes[s][0]
        assigned[s] = False

    yield from rec(0)


def best_positional(objective: ChainObjective, classes, budget=DEFAULT_BUDGET):
    best, arg = -np.inf, None
    for acts in enumerate_positional(objective.P, objective.init, classes, budget):
        v = objective(acts)
        if v > best + 1e-12:
            best, arg = v, acts
    return best, arg


# ---------------------------------------------------------------- optimal values


def optimal_value(mdp: Mdp, spec: Specification, budget: int = DEFAULT_BUDGET):
    """(optimal value at the initial state, deterministic witness policy)."""
    if isinstance(spec, DiscountedRM):
        prod = rm_product(mdp, spec.machine)
        g = solvers.gamma_vector(spec.gamma, mdp.n_states)[prod.base]
        _, pol = solvers.value_iteration_discounted(prod.mdp, prod.reward, g, tol=1e-10)
        v, pol = solvers.discounted_policy_iteration(prod.mdp, prod.reward, g, start=pol)
        return float(v[prod.mdp.initial]), prod.memory_policy(pol)
    if isinstance(spec, Reach):
        v, pol = solvers.max_reach_prob(mdp, region(mdp, spec.props))
        return float(v[mdp.initial]), FiniteMemoryPolicy.from_positional(pol)
    if isinstance(spec, Safe):
        v, pol = solvers.max_safe_prob(mdp, region(mdp, spec.props))
        return float(v[mdp.initial]), FiniteMemoryPolicy.from_positional(pol)
    if isinstance(spec, Ltl):
        prod = automaton_product(mdp, automaton_for(mdp, spec))
        v, w = solvers.max_buchi_prob(prod.mdp, prod.accepting)
        pol = PositionalPolicy(w.act[0])
        return float(v[prod.mdp.initial]), prod.memory_policy(pol)
    if isinstance(spec, LimitAvgRM):
        prod = rm_product(mdp, spec.machine)
        tag = getattr(spec.machine, "tag", None)
        if tag == "reach":
            v, pol = solvers.max_reach_prob(prod.mdp, prod.aux == 1)
        elif tag == "safe":
            v, pol = solvers.max_safe_prob(prod.mdp, prod.aux == 0)
        else:
            obj = ChainObjective(prod.mdp.transitions, prod.mdp.initial, "average", prod.reward)
            classes = action_classes([prod.mdp.transitions, prod.reward])
            try:
                best, acts = best_positional(obj, classes, budget)
            except BudgetExceeded as exc:
                raise UnsupportedSpecError(f"limit-average optimum beyond the enumeration budget: {exc}") from exc
            return float(best), prod.memory_policy(PositionalPolicy.deterministic(acts, mdp.n_actions))
        return float(v[prod.mdp.initial]), prod.memory_policy(pol)
    raise TypeError(f"not a specification: {spec!r}")


def is_eps_optimal(mdp: Mdp, spec: Specification, policy, eps: float, optimum: float | None = None) -> bool:
    if optimum is None:
        optimum = optimal_value(mdp, spec)[0]
    return spec_value(mdp, spec, policy) >= optimum - eps - 1e-9
