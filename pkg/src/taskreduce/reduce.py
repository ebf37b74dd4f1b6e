"""Sampling-based reductions between RL tasks.

A descriptor turns a task on an MDP with shape ``(S, A, s0, L)`` into a
task on a new MDP whose transitions mix two sources: ``q1`` moves without
touching the original system, ``q2`` reweights a real sampled step. The
builders in this module only ever see the shape, never the probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .ltl import parse_ltl, to_text
from .machines import AbstractRewardMachine, RewardMachine, machine_from_json, machine_to_json
from .mdp import (
    FiniteMemoryPolicy,
    Mdp,
    MdpShape,
    PositionalPolicy,
    UniformStream,
    Violation,
    as_memory_policy,
    mask_names,
    prop_mask,
    sample_index,
)
from .specs import (
    DEFAULT_BUDGET,
    DiscountedRM,
    LimitAvgRM,
    Ltl,
    Reach,
    Safe,
    action_classes,
    count_policies,
    enumerate_positional,
    objective_for,
    optimal_value,
    spec_value,
)

EQ_TOL = 1e-9
PRESERVE_SLACK = 1e-7


class ReductionError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations[:5]))


class DescriptorCorruption(RuntimeError):
    pass


def _ro(a, dtype=float):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ReductionDescriptor:
    """Tables of a reduction.

    Shapes: ``beta (N,)``, ``alpha (N, M, m)``, ``q1 (N, M, N)`` and
    ``q2 (N, M, m, N)`` where ``N, M`` count the new states and actions and
    ``m`` the original actions. ``tracking[t, s']`` is the new state that
    follows ``t`` when the original system moves to ``s'`` (-1 when that
    cannot happen); it defines the policy map.
    """

    name: str
    n_inner: int
    initial: int
    propositions: tuple
    labels: tuple
    beta: np.ndarray
    alpha: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    spec: object
    tracking: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, dtype in (("beta", int), ("alpha", float), ("q1", float), ("q2", float)):
            object.__setattr__(self, name, _ro(getattr(self, name), dtype))
        if self.tracking is not None:
            object.__setattr__(self, "tracking", _ro(self.tracking, int))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        object.__setattr__(self, "propositions", tuple(self.propositions))

    @property
    def n_states(self) -> int:
        return self.q1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q1.shape[1]

    @property
    def shape(self) -> MdpShape:
        return MdpShape(self.n_states, self.n_actions, self.initial, self.propositions, self.labels)

    def members(self) -> np.ndarray:
        """One-hot matrix: ``members()[t, s] = 1`` iff ``beta[t] == s``."""
        B = np.zeros((self.n_states, self.n_inner))
        B[np.arange(self.n_states), self.beta] = 1.0
        return B


def validate_reduction(rd: ReductionDescriptor, shape: MdpShape) -> list[Violation]:
    out = []
    N, M = rd.n_states, rd.n_actions
    n, m = shape.n_states, shape.n_actions
    dims = {"beta": (N,), "alpha": (N, M, m), "q1": (N, M, N), "q2": (N, M, m, N)}
    for name, want in dims.items():
        got = getattr(rd, name).shape
        if got != want:
            out.append(Violation("shape", (name,), f"{name} has shape {got}, expected {want}"))
    if rd.n_inner != n:
        out.append(Violation("shape", ("inner",), f"descriptor expects {rd.n_inner} states, MDP has {n}"))
    if len(rd.labels) != N:
        out.append(Violation("shape", ("labels",), "one label per new state required"))
    if out:
        return out
    if np.any(rd.beta < 0) or np.any(rd.beta >= n):
        return [Violation("beta", (), "beta maps outside the original states")]
    if not 0 <= rd.initial < N:
        return [Violation("initial", (rd.initial,), "initial state out of range")]
    if rd.beta[rd.initial] != shape.initial:
        out.append(Violation("initial", (rd.initial,), f"beta(initial) = {rd.beta[rd.initial]} but the MDP starts in {shape.initial}"))
    for name in ("alpha", "q1", "q2"):
        arr = getattr(rd, name)
        for idx in np.argwhere((arr < -EQ_TOL) | (arr > 1 + EQ_TOL) | ~np.isfinite(arr)):
            out.append(Violation("range", (name,) + tuple(int(i) for i in idx), f"{name}{tuple(int(i) for i in idx)} outside [0, 1]"))
    for t, b in np.argwhere(np.abs(rd.alpha.sum(axis=2) - 1) > EQ_TOL):
        out.append(Violation("alpha", (int(t), int(b)), f"alpha({t},{b}) is not a distribution"))
    cross = rd.beta[:, None] != rd.beta[None, :]
    for t, b, t2 in np.argwhere((rd.q1 > 0) & cross[:, None, :]):
        out.append(Violation("q1-beta", (int(t), int(b), int(t2)), f"q1({t},{b},{t2}) > 0 but beta differs ({rd.beta[t]} vs {rd.beta[t2]})"))
    mass = rd.q2 @ rd.members()
    rest = 1.0 - rd.q1.sum(axis=2)
    for t, b, a, s in np.argwhere(np.abs(mass - rest[:, :, None, None]) > EQ_TOL):
        out.append(
            Violation(
                "normalization",
                (int(t), int(b), int(a), int(s)),
                f"q2 mass over beta^-1({s}) at ({t},{b},{a}) is {mass[t, b, a, s]!r}, expected {rest[t, b]!r}",
            )
        )
    return out


def _require_valid(rd: ReductionDescriptor, shape: MdpShape):
    bad = validate_reduction(rd, shape)
    if bad:
        raise ReductionError(bad)


def induced_transitions(rd: ReductionDescriptor, P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    n, m, _ = P.shape
    _require_valid(rd, MdpShape(n, m, int(rd.beta[rd.initial])))
    Pb = P[rd.beta][:, :, rd.beta]
    return rd.q1 + np.einsum("tba,tbau,tau->tbu", rd.alpha, rd.q2, Pb)


def reduced_mdp(rd: ReductionDescriptor, mdp: Mdp) -> Mdp:
    _require_valid(rd, mdp.shape)
    return Mdp(induced_transitions(rd, mdp.transitions), rd.initial, rd.propositions, rd.labels)


# ---------------------------------------------------------------- simulator wrapper


class ReducedSimulator:
    """Simulator of the reduced MDP driven by a simulator of the original one."""

    def __init__(self, rd: ReductionDescriptor, inner, seed: int = 0):
        _require_valid(rd, inner.shape)
        self.rd = rd
        self.inner = inner
        self.shape = rd.shape
        self._u = UniformStream(seed)
        N, M = rd.n_states, rd.n_actions
        self._p = rd.q1.sum(axis=2).tolist()
        self._q1 = [[np.cumsum(rd.q1[t, b]).tolist() for b in range(M)] for t in range(N)]
        self._q1_last = [[int(np.flatnonzero(rd.q1[t, b] > 0)[-1]) if rd.q1[t, b].any() else t for b in range(M)] for t in range(N)]
        self._alpha = [[np.cumsum(rd.alpha[t, b]).tolist() for b in range(M)] for t in range(N)]
        self._alpha_last = [[int(np.flatnonzero(rd.alpha[t, b] > 0)[-1]) for b in range(M)] for t in range(N)]
        self._fibre = [np.flatnonzero(rd.beta == s) for s in range(rd.n_inner)]
        self._q2 = {}
        self.inner_calls = 0
        self.state = rd.initial

    def reset(self) -> int:
        self.inner.reset()
        self.state = self.rd.initial
        return self.state

    def _slice(self, t, b, a, s):
        key = (t, b, a, s)
        hit = self._q2.get(key)
        if hit is None:
            fibre = self._fibre[s]
            w = self.rd.q2[t, b, a, fibre]
            hit = (np.cumsum(w).tolist(), fibre.tolist(), float(w.sum()))
            self._q2[key] = hit
        return hit

    def step(self, bar_action: int) -> int:
        if not 0 <= bar_action < self.rd.n_actions:
            raise IndexError(f"action {bar_action} out of range")
        t = self.state
        p = self._p[t][bar_action]
        x = self._u.next()
        if x < p:
            y = self._u.next() * p
            nxt = sample_index(self._q1[t][bar_action], self._q1_last[t][bar_action], y)
        else:
            a = sample_index(self._alpha[t][bar_action], self._alpha_last[t][bar_action], self._u.next())
            s = self.inner.step(a)
            self.inner_calls += 1
            cum, fibre, total = self._slice(t, bar_action, a, s)
            if total <= 0:
                raise DescriptorCorruption(f"no q2 mass over beta^-1({s}) at ({t},{bar_action},{a})")
            nxt = fibre[sample_index(cum, len(cum) - 1, self._u.next() * total)]
        self.state = nxt
        return nxt


def wrap_simulator(rd: ReductionDescriptor, sim, seed: int = 0) -> ReducedSimulator:
    return ReducedSimulator(rd, sim, seed)


# ---------------------------------------------------------------- policy map


class NonDeterministicTracking(ValueError):
    pass


def derive_tracking(rd: ReductionDescriptor) -> np.ndarray:
    """Successor new-state for every (new state, observed original state).

    Raises when two different new states are possible after the same
    observation, because the policy map would then need a belief.
    """
    N, n = rd.n_states, rd.n_inner
    live = (rd.alpha[:, :, :, None] > 0) & (rd.q2 > 0)
    reach = live.any(axis=(1, 2))
    out = np.full((N, n), -1, dtype=int)
    for t in range(N):
        for s in range(n):
            cand = np.flatnonzero(reach[t] & (rd.beta == s))
            if cand.size > 1:
                raise NonDeterministicTracking(f"after ({t}, observe {s}) the new state could be any of {cand.tolist()}")
            if cand.size == 1:
                out[t, s] = cand[0]
    return out


def map_policy(rd: ReductionDescriptor, bar_policy) -> FiniteMemoryPolicy:
    """Policy on the original MDP that follows ``bar_policy`` on the tracked new state."""
    bar = as_memory_policy(bar_policy)
    track = rd.tracking if rd.tracking is not None else derive_tracking(rd)
    N, n, m = rd.n_states, rd.n_inner, rd.alpha.shape[2]
    K = bar.n_memory
    stay = np.arange(N)[:, None]
    nxt = np.where(track >= 0, track, stay)
    keep = 1.0 - rd.q1.sum(axis=2)
    update = np.zeros((N, K, n), dtype=int)
    act = np.zeros((N, K, n, m))
    for t in range(N):
        for k in range(K):
            w = bar.act[k, t] * keep[t]
            if w.sum() <= 0:
                w = bar.act[k, t]
            dist = (w / w.sum()) @ rd.alpha[t]
            act[t, k, :, :] = dist
            update[t, k] = nxt[t] * K + bar.update[k, nxt[t]]
    return FiniteMemoryPolicy(rd.initial * K + bar.initial, update.reshape(N * K, n), act.reshape(N * K, n, m))


# ---------------------------------------------------------------- builders


def _finish(rd: ReductionDescriptor, shape: MdpShape) -> ReductionDescriptor:
    _require_valid(rd, shape)
    if rd.tracking is None:
        object.__setattr__(rd, "tracking", _ro(derive_tracking(rd), int))
    return rd


def _tables(shape: MdpShape, machine):
    n, m = shape.n_states, shape.n_actions
    if isinstance(machine, AbstractRewardMachine):
        rm = machine.to_rm(shape)
    else:
        rm = machine
        if rm.update.shape[1] != n or rm.rewards.shape[1:] != (n, m, n):
            raise ValueError("reward machine does not match the MDP shape")
    return rm


def identity_reduction(shape: MdpShape, spec_out=None, name="identity") -> ReductionDescriptor:
    """Same MDP, possibly a different objective (a pure specification translation)."""
    n, m = shape.n_states, shape.n_actions
    alpha = np.broadcast_to(np.eye(m)[None], (n, m, m))
    q2 = np.zeros((n, m, m, n))
    q2[...] = 1.0
    rd = ReductionDescriptor(
        name, n, shape.initial, shape.propositions, shape.labels, np.arange(n), alpha, np.zeros((n, m, n)), q2, spec_out,
        np.tile(np.arange(n), (n, 1)),
    )
    return _finish(rd, shape)


def product_rm_reduction(shape: MdpShape, spec) -> ReductionDescriptor:
    """Product of the MDP with the reward machine of ``spec``.

    The new objective pays the machine's reward as a plain transition
    reward and keeps the aggregation (discounted or limit-average).
    """
    if not isinstance(spec, (DiscountedRM, LimitAvgRM)):
        raise TypeError("product reduction needs a reward-machine objective")
    rm = _tables(shape, spec.machine)
    n, m = shape.n_states, shape.n_actions
    k = rm.n_states
    N = n * k
    ind = np.zeros((k, n, k))
    ind[np.arange(k)[:, None], np.arange(n)[None, :], rm.update] = 1.0
    q2 = np.zeros((n, k, m, m, n, k))
    q2[...] = ind[None, :, None, None, :, :]
    R = rm.rewards.transpose(1, 0, 2, 3)[:, :, :, :, None] * ind[None, :, None, :, :]
    R = R.reshape(N, m, N)
    alpha = np.broadcast_to(np.eye(m)[None], (N, m, m))
    base = np.repeat(np.arange(n), k)
    labels = tuple(shape.labels[s] for s in base)
    out_rm = RewardMachine.single_state(R)
    if isinstance(spec, DiscountedRM):
        g = np.broadcast_to(np.asarray(spec.gamma, dtype=float), (n,))
        gamma = float(g[0]) if np.ndim(spec.gamma) == 0 else tuple(g[base])
        out = DiscountedRM(out_rm, gamma)
    else:
        out = LimitAvgRM(out_rm)
    tracking = (np.arange(n)[None, None, :] * k + rm.update[None, :, :]).repeat(n, axis=0).reshape(N, n)
    rd = ReductionDescriptor(
        "product", n, shape.initial * k + rm.initial, shape.propositions, labels, base, alpha, np.zeros((N, m, N)),
        q2.reshape(N, m, m, N), out, tracking, {"machine_states": k},
    )
    return _finish(rd, shape)


def multidiscount_reduction(shape: MdpShape, reward, gamma, name="multidiscount") -> ReductionDescriptor:
    """Replace per-state discounts by the largest one plus leaks into sinks.

    New states are the original ones followed by one zero-reward absorbing
    sink per original state (sink ``n + s`` sits over ``s``, so leaking
    from ``s`` keeps the descriptor's fibre condition).
    """
    n, m = shape.n_states, shape.n_actions
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (n,)).copy()
    if np.any(g <= 0) or np.any(g >= 1):
        raise ValueError("discount factors must lie strictly inside (0, 1)")
    gmax = float(g.max())
    keep = g / gmax
    N = 2 * n
    beta = np.concatenate([np.arange(n), np.arange(n)])
    alpha = np.broadcast_to(np.eye(m)[None], (N, m, m))
    q1 = np.zeros((N, m, N))
    q2 = np.zeros((N, m, m, N))
    for s in range(n):
        q1[s, :, n + s] = 1.0 - keep[s]
        q1[n + s, :, n + s] = 1.0
        q2[s, :, :, :n] = keep[s]
    R = np.zeros((N, m, N))
    R[:n, :, :n] = np.asarray(reward, dtype=float) / keep[:, None, None]
    tracking = np.full((N, n), -1, dtype=int)
    tracking[:n] = np.arange(n)[None, :]
    labels = tuple(shape.labels) + (0,) * n
    rd = ReductionDescriptor(
        name, n, shape.initial, shape.propositions, labels, beta, alpha, q1, q2,
        DiscountedRM(RewardMachine.single_state(R), gmax), tracking, {"gamma_max": gmax},
    )
    return _finish(rd, shape)


def _accepting_mask(shape: MdpShape, accepting) -> np.ndarray:
    given = np.asarray(list(accepting) if not isinstance(accepting, np.ndarray) else accepting)
    if given.dtype == bool:
        if given.shape != (shape.n_states,):
            raise ValueError("accepting mask has the wrong length")
        return given.copy()
    acc = np.zeros(shape.n_states, dtype=bool)
    acc[given.astype(int)] = True
    return acc


def lambda_sink_reduction(shape: MdpShape, accepting, lam: float) -> ReductionDescriptor:
    """Leak ``1 - lam`` into a rewarding sink on every step out of an accepting state."""
    if not 0 < lam < 1:
        raise ValueError("lambda must lie strictly inside (0, 1)")
    n, m = shape.n_states, shape.n_actions
    acc = _accepting_mask(shape, accepting)
    hosts = np.flatnonzero(acc)
    N = n + hosts.size
    sink = {int(s): n + i for i, s in enumerate(hosts)}
    beta = np.concatenate([np.arange(n), hosts]).astype(int)
    alpha = np.broadcast_to(np.eye(m)[None], (N, m, m))
    q1 = np.zeros((N, m, N))
    q2 = np.zeros((N, m, m, N))
    R = np.zeros((N, m, N))
    for s in range(n):
        if acc[s]:
            q1[s, :, sink[s]] = 1.0 - lam
            q2[s, :, :, :n] = lam
        else:
            q2[s, :, :, :n] = 1.0
    for x in sink.values():
        q1[x, :, x] = 1.0
        R[x, :, x] = 1.0
    tracking = np.full((N, n), -1, dtype=int)
    tracking[:n] = np.arange(n)[None, :]
    labels = tuple(shape.labels) + (0,) * hosts.size
    rd = ReductionDescriptor(
        "lambda-sink", n, shape.initial, shape.propositions, labels, beta, alpha, q1, q2,
        LimitAvgRM(RewardMachine.single_state(R)), tracking, {"lambda": lam},
    )
    return _finish(rd, shape)


def two_discount_spec(shape: MdpShape, accepting, gamma1: float, gamma2: float) -> DiscountedRM:
    """Reward ``1 - gamma1`` when leaving accepting states, which discount by ``gamma1``."""
    if not 0 < gamma1 < gamma2 < 1:
        raise ValueError("need 0 < gamma1 < gamma2 < 1")
    n, m = shape.n_states, shape.n_actions
    acc = _accepting_mask(shape, accepting)
    R = np.zeros((n, m, n))
    R[acc] = 1.0 - gamma1
    gamma = tuple(np.where(acc, gamma1, gamma2).tolist())
    return DiscountedRM(RewardMachine.single_state(R, normalized=True), gamma)


def two_discount_reduction(shape: MdpShape, accepting, gamma1: float, gamma2: float) -> ReductionDescriptor:
    inner = two_discount_spec(shape, accepting, gamma1, gamma2)
    rd = multidiscount_reduction(shape, inner.machine.rewards[0], inner.gamma, name="two-discount")
    rd.params.update({"gamma1": gamma1, "gamma2": gamma2})
    return rd


def mark_accepting(mdp: Mdp, accepting, name: str = "acc") -> tuple[Mdp, Ltl]:
    """Label accepting states with a fresh proposition; return the MDP and ``G F name``."""
    if name in mdp.propositions:
        raise ValueError(f"proposition {name!r} already exists")
    props = mdp.propositions + (name,)
    bit = 1 << len(mdp.propositions)
    acc = _accepting_mask(mdp.shape, accepting)
    labels = tuple(lab | (bit if acc[s] else 0) for s, lab in enumerate(mdp.labels))
    marked = Mdp(mdp.transitions, mdp.initial, props, labels, mdp.action_names)
    return marked, Ltl(parse_ltl(f"G F {name}", props))


def buchi_product(mdp: Mdp, aut) -> tuple[Mdp, np.ndarray]:
    """Product with a Büchi automaton; nondeterministic choices become extra actions.

    Action ``a * B + j`` plays ``a`` and then moves the automaton to the
    ``j``-th successor (in increasing order, capped at the last one).
    """
    from .machines import _relabel
    from .specs import automaton_product

    if aut.deterministic:
        prod = automaton_product(mdp, aut)
        return prod.mdp, prod.accepting
    n, m = mdp.n_states, mdp.n_actions
    k, B = aut.n_states, aut.branching()
    lab = _relabel(mdp.labels, mdp.propositions, aut.propositions)
    succ = [[sorted(aut.edges[q][lab[t]]) for t in range(n)] for q in range(k)]
    q0 = sorted(aut.edges[aut.initial][lab[mdp.initial]])[0]
    P = np.zeros((n, k, m, B, n, k))
    for q in range(k):
        for t in range(n):
            for j in range(B):
                q2 = succ[q][t][min(j, len(succ[q][t]) - 1)]
                P[:, q, :, j, t, q2] += mdp.transitions[:, :, t]
    N = n * k
    base = np.repeat(np.arange(n), k)
    aux = np.tile(np.arange(k), n)
    pm = Mdp(P.reshape(N, m * B, N), mdp.initial * k + q0, mdp.propositions, tuple(mdp.labels[s] for s in base))
    return pm, np.isin(aux, sorted(aut.accepting))


# ---------------------------------------------------------------- preservation


@dataclass
class PreservationReport:
    preserved: bool | None
    mode: str
    optimum: float
    bar_optimum: float
    n_bar_optimal: int = 0
    witness: list | None = None
    witness_value: float | None = None

    def to_json(self):
        return {
            "preserved": self.preserved,
            "mode": self.mode,
            "optimum": self.optimum,
            "bar_optimum": self.bar_optimum,
            "n_bar_optimal": self.n_bar_optimal,
            "witness": self.witness,
            "witness_value": self.witness_value,
        }


def _bar_classes(rd: ReductionDescriptor, bar: Mdp):
    keys = [bar.transitions, rd.alpha, rd.q1, rd.q2]
    machine = getattr(rd.spec, "machine", None)
    if isinstance(machine, RewardMachine) and machine.rewards.shape[1] == rd.n_states:
        keys.append(machine.rewards.transpose(1, 2, 0, 3))
    return action_classes(keys)


def check_optimality_preservation(
    mdp: Mdp, spec, rd: ReductionDescriptor, budget: int = DEFAULT_BUDGET, slack: float = PRESERVE_SLACK
) -> PreservationReport:
    """Do optimal policies of the reduced task map to optimal policies of the original?"""
    bar = reduced_mdp(rd, mdp)
    optimum, _ = optimal_value(mdp, spec)
    classes = _bar_classes(rd, bar)

    def verdict(bar_policy):
        value = spec_value(mdp, spec, map_policy(rd, bar_policy))
        return value >= optimum - slack, value

    obj, base = objective_for(bar, rd.spec)
    flat = base.size == rd.n_states
    if flat and count_policies(classes) <= budget:
        scored = [(acts, obj(acts[base])) for acts in enumerate_positional(bar.transitions, bar.initial, classes, budget)]
        best = max(v for _, v in scored)
        optimal = [acts for acts, v in scored if v >= best - slack]
        for acts in optimal:
            ok, value = verdict(PositionalPolicy.deterministic(acts, rd.n_actions))
            if not ok:
                return PreservationReport(False, "exhaustive", optimum, best, len(optimal), acts.tolist(), value)
        return PreservationReport(True, "exhaustive", optimum, best, len(optimal))
    best, witness = optimal_value(bar, rd.spec, budget)
    ok, value = verdict(witness)
    if not ok:
        return PreservationReport(False, "witness", optimum, best, 1, witness.act.argmax(axis=2).tolist(), value)
    return PreservationReport(None, "witness", optimum, best, 1)


def preservation_sweep(mdp: Mdp, spec, build: Callable[[float], ReductionDescriptor], params: Iterable, budget=DEFAULT_BUDGET, slack=PRESERVE_SLACK):
    out = []
    for x in params:
        rep = check_optimality_preservation(mdp, spec, build(x), budget, slack)
        out.append({"param": x, "preserved": rep.preserved})
    return out


def threshold(sweep) -> float | None:
    """Smallest swept parameter from which every larger one preserved optimality."""
    best = None
    for row in sorted(sweep, key=lambda r: r["param"], reverse=True):
        if row["preserved"] is not True:
            break
        best = row["param"]
    return best


# ---------------------------------------------------------------- JSON


def spec_to_json(spec) -> dict:
    if isinstance(spec, DiscountedRM):
        g = spec.gamma if np.ndim(spec.gamma) == 0 else list(spec.gamma)
        return {"kind": "discounted", "gamma": g, "machine": machine_to_json(spec.machine)}
    if isinstance(spec, LimitAvgRM):
        return {"kind": "average", "machine": machine_to_json(spec.machine)}
    if isinstance(spec, (Reach, Safe)):
        return {"kind": "reach" if isinstance(spec, Reach) else "safe", "props": sorted(spec.props)}
    if isinstance(spec, Ltl):
        return {"kind": "ltl", "formula": to_text(spec.formula)}
    if spec is None:
        return None
    raise TypeError(f"not a specification: {spec!r}")


def spec_from_json(doc, mdp_like):
    if doc is None:
        return None
    kind = doc["kind"]
    if kind in ("discounted", "average"):
        machine = machine_from_json(doc["machine"], mdp_like, mdp_like.propositions)
        return DiscountedRM(machine, doc["gamma"]) if kind == "discounted" else LimitAvgRM(machine)
    if kind == "reach":
        return Reach(doc["props"])
    if kind == "safe":
        return Safe(doc["props"])
    if kind == "ltl":
        return Ltl(parse_ltl(doc["formula"], mdp_like.propositions))
    raise ValueError(f"unknown specification kind {kind!r}")


def _entries(arr, keys):
    return [dict(zip(keys, [int(i) for i in idx]), prob=float(arr[tuple(idx)])) for idx in np.argwhere(arr != 0)]


def descriptor_to_json(rd: ReductionDescriptor) -> dict:
    return {
        "name": rd.name,
        "states": rd.n_states,
        "actions": rd.n_actions,
        "initial": rd.initial,
        "inner": {"states": rd.n_inner, "actions": int(rd.alpha.shape[2])},
        "propositions": list(rd.propositions),
        "labels": [mask_names(rd.propositions, lab) for lab in rd.labels],
        "beta": rd.beta.tolist(),
        "alpha": _entries(rd.alpha, ("state", "bar_action", "action")),
        "q1": _entries(rd.q1, ("from", "action", "to")),
        "q2": _entries(rd.q2, ("from", "bar_action", "action", "to")),
        "spec": spec_to_json(rd.spec),
        "tracking": None if rd.tracking is None else rd.tracking.tolist(),
        "params": rd.params,
    }


def descriptor_from_json(doc: dict) -> ReductionDescriptor:
    N, M = int(doc["states"]), int(doc["actions"])
    n, m = int(doc["inner"]["states"]), int(doc["inner"]["actions"])
    props = tuple(doc.get("propositions", []))
    alpha = np.zeros((N, M, m))
    q1 = np.zeros((N, M, N))
    q2 = np.zeros((N, M, m, N))
    for e in doc.get("alpha", []):
        alpha[e["state"], e["bar_action"], e["action"]] = e["prob"]
    for e in doc.get("q1", []):
        q1[e["from"], e["action"], e["to"]] = e["prob"]
    for e in doc.get("q2", []):
        q2[e["from"], e["bar_action"], e["action"], e["to"]] = e["prob"]
    labels = tuple(prop_mask(props, names) for names in doc.get("labels", [[]] * N))
    shape = MdpShape(N, M, int(doc["initial"]), props, labels)
    return ReductionDescriptor(
        doc.get("name", "custom"), n, int(doc["initial"]), props, labels, doc["beta"], alpha, q1, q2,
        spec_from_json(doc.get("spec"), shape), None if doc.get("tracking") is None else np.array(doc["tracking"]),
        dict(doc.get("params", {})),
    )


def save_descriptor(rd: ReductionDescriptor, path) -> None:
    Path(path).write_text(json.dumps(descriptor_to_json(rd), indent=1) + "\n")


def load_descriptor(path) -> ReductionDescriptor:
    return descriptor_from_json(json.loads(Path(path).read_text()))
