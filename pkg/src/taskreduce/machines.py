"""Reward machines, abstract (label-driven) reward machines and Büchi automata."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ltl import Formula, Not, Top, Until, eval_label, is_propositional
from .mdp import LassoRun, Mdp, Run, Violation, mask_names, prop_mask

MAX_ARM_PROPOSITIONS = 16


def _ro(a, dtype):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RewardMachine:
    """Reward machine reading MDP states.

    ``update[u, s']`` is the next machine state after the MDP enters ``s'``
    and ``rewards[u, s, a, s']`` is paid on that transition.
    """

    initial: int
    update: np.ndarray
    rewards: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "update", _ro(self.update, int))
        object.__setattr__(self, "rewards", _ro(self.rewards, float))
        k, n = self.update.shape
        if self.rewards.ndim != 4 or self.rewards.shape[0] != k or self.rewards.shape[1] != n:
            raise ValueError("rewards must have shape (machine states, n, m, n)")
        if self.normalized and (np.any(self.rewards < 0) or np.any(self.rewards > 1)):
            raise ValueError("normalized reward machine has rewards outside [0, 1]")

    @property
    def n_states(self) -> int:
        return self.update.shape[0]

    @classmethod
    def single_state(cls, reward, normalized=False):
        reward = np.asarray(reward, dtype=float)
        n = reward.shape[0]
        return cls(0, np.zeros((1, n), dtype=int), reward[None], normalized)


@dataclass(frozen=True, eq=False)
class AbstractRewardMachine:
    """Reward machine reading label bitmasks; independent of any MDP.

    ``tag`` marks machines built by :func:`build_reach_arm` and
    :func:`build_safe_arm`, whose optimal limit-average value reduces to a
    reachability or safety problem.
    """

    initial: int
    update: np.ndarray
    rewards: np.ndarray
    propositions: tuple[str, ...]
    normalized: bool = False
    tag: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "update", _ro(self.update, int))
        object.__setattr__(self, "rewards", _ro(self.rewards, float))
        object.__setattr__(self, "propositions", tuple(self.propositions))
        if len(self.propositions) > MAX_ARM_PROPOSITIONS:
            raise ValueError("label-keyed machines support at most 16 propositions")
        if self.update.shape != (self.update.shape[0], 1 << len(self.propositions)):
            raise ValueError("update must have one column per label")
        if self.rewards.shape != self.update.shape:
            raise ValueError("rewards must match the update table")
        if self.normalized and (np.any(self.rewards < 0) or np.any(self.rewards > 1)):
            raise ValueError("normalized reward machine has rewards outside [0, 1]")

    @property
    def n_states(self) -> int:
        return self.update.shape[0]

    def to_rm(self, mdp: Mdp) -> RewardMachine:
        """The same machine keyed by the states of ``mdp`` through its labels."""
        lab = _relabel(mdp.labels, mdp.propositions, self.propositions)
        upd = self.update[:, lab]
        r = self.rewards[:, lab]
        n, m = mdp.n_states, mdp.n_actions
        rewards = np.broadcast_to(r[:, None, None, :], (self.n_states, n, m, n))
        return RewardMachine(self.initial, upd, rewards, self.normalized)


def _relabel(labels, src_props, dst_props):
    """Project label bitmasks from one proposition list onto another."""
    out = []
    for lab in labels:
        names = mask_names(src_props, lab)
        out.append(prop_mask(dst_props, [x for x in names if x in dst_props]))
    return np.array(out, dtype=int)


def machine_for(mdp: Mdp, machine) -> RewardMachine:
    if isinstance(machine, AbstractRewardMachine):
        return machine.to_rm(mdp)
    if machine.update.shape[1] != mdp.n_states or machine.rewards.shape[1:] != mdp.transitions.shape:
        raise ValueError("reward machine does not match the MDP")
    return machine


def validate_machine(machine) -> list[Violation]:
    out = []
    k = machine.n_states
    if not 0 <= machine.initial < k:
        out.append(Violation("initial", (machine.initial,), "initial machine state out of range"))
    bad = np.argwhere((machine.update < 0) | (machine.update >= k))
    for idx in bad:
        out.append(Violation("update", tuple(int(i) for i in idx), f"update {tuple(idx)} leaves the machine"))
    if not np.all(np.isfinite(machine.rewards)):
        out.append(Violation("reward", (), "non-finite reward"))
    return out


# ---------------------------------------------------------------- builders


def _any_of(props: Iterable[str], propositions: Sequence[str]) -> tuple[int, np.ndarray]:
    X = prop_mask(propositions, props)
    if X == 0:
        raise ValueError("proposition set must be nonempty")
    labels = np.arange(1 << len(propositions))
    return X, (labels & X) != 0


def build_reach_arm(props: Iterable[str], propositions: Sequence[str], initial_label: int | None = None) -> AbstractRewardMachine:
    """Two-state machine paying 1 forever once some proposition of ``props`` holds.

    ``initial_label`` is fed to the machine before the run starts, so that a
    satisfying label at the initial MDP state (which the machine would
    otherwise never read) is not missed.
    """
    _, hit = _any_of(props, propositions)
    update = np.array([np.where(hit, 1, 0), np.ones_like(hit, dtype=int)])
    rewards = np.array([np.where(hit, 1.0, 0.0), np.ones(hit.shape)])
    init = 0 if initial_label is None else int(update[0, initial_label])
    return AbstractRewardMachine(init, update, rewards, propositions, True, "reach")


def build_safe_arm(props: Iterable[str], propositions: Sequence[str], initial_label: int | None = None) -> AbstractRewardMachine:
    """Two-state machine paying 1 while every label meets ``props``, 0 after a violation."""
    _, ok = _any_of(props, propositions)
    update = np.array([np.where(ok, 0, 1), np.ones_like(ok, dtype=int)])
    rewards = np.array([np.where(ok, 1.0, 0.0), np.zeros(ok.shape)])
    init = 0 if initial_label is None else int(update[0, initial_label])
    return AbstractRewardMachine(init, update, rewards, propositions, True, "safe")


# ---------------------------------------------------------------- returns


def _steps(machine: RewardMachine, u: int, start: int, steps, gamma):
    """Walk ``steps`` from ``start``; return (u, discounted sum, discount product, plain sum)."""
    total, disc, plain = 0.0, 1.0, 0.0
    s = start
    for a, nxt in steps:
        r = machine.rewards[u, s, a, nxt]
        total += disc * r
        plain += r
        if gamma is not None:
            disc *= gamma[s]
        u = machine.update[u, nxt]
        s = nxt
    return u, total, disc, plain


def rm_return(machine, run, gamma=None, *, average_over: int | None = None, mdp: Mdp | None = None) -> float:
    """Return of ``run`` under ``machine``.

    With ``gamma`` (constant or one factor per MDP state) this is the
    discounted sum, in closed form for lasso runs. With ``average_over=t``
    it is the mean of the first ``t`` rewards.
    """
    if isinstance(machine, AbstractRewardMachine):
        if mdp is None:
            raise ValueError("an MDP is needed to read labels")
        machine = machine.to_rm(mdp)
    if (gamma is None) == (average_over is None):
        raise ValueError("choose exactly one of gamma and average_over")
    if average_over is not None:
        t = average_over
        if isinstance(run, LassoRun):
            run = run.unroll(t)
        if t <= 0 or t > len(run):
            raise ValueError(f"t={t} exceeds the run length {len(run)}")
        _, _, _, plain = _steps(machine, machine.initial, run.start, run.steps[:t], None)
        return plain / t
    n = machine.update.shape[1]
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (n,))
    if isinstance(run, Run):
        return _steps(machine, machine.initial, run.start, run.steps, g)[1]
    u, total, disc, _ = _steps(machine, machine.initial, run.prefix.start, run.prefix.steps, g)
    seen = {}
    laps = []
    while u not in seen:
        seen[u] = len(laps)
        u2, lap, lap_disc, _ = _steps(machine, u, run.cycle.start, run.cycle.steps, g)
        laps.append((lap, lap_disc))
        u = u2
    first = seen[u]
    for lap, lap_disc in laps[:first]:
        total += disc * lap
        disc *= lap_disc
    period = 0.0
    period_disc = 1.0
    for lap, lap_disc in laps[first:]:
        period += period_disc * lap
        period_disc *= lap_disc
    return total + disc * period / (1.0 - period_disc)


# ---------------------------------------------------------------- automata


@dataclass(frozen=True, eq=False)
class BuchiAutomaton:
    """Büchi automaton over label bitmasks; ``edges[q][label]`` is a set of successors."""

    initial: int
    edges: tuple
    accepting: frozenset
    propositions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(frozenset(t) for t in row) for row in self.edges))
        object.__setattr__(self, "accepting", frozenset(self.accepting))
        object.__setattr__(self, "propositions", tuple(self.propositions))
        k = len(self.edges)
        width = 1 << len(self.propositions)
        if any(len(row) != width for row in self.edges):
            raise ValueError("each automaton state needs one entry per label")
        if not 0 <= self.initial < k or any(q >= k or q < 0 for q in self.accepting):
            raise ValueError("automaton state out of range")
        if any(q >= k or q < 0 for row in self.edges for t in row for q in t):
            raise ValueError("automaton edge leaves the state set")

    @property
    def n_states(self) -> int:
        return len(self.edges)

    @property
    def deterministic(self) -> bool:
        return all(len(t) == 1 for row in self.edges for t in row)

    def delta(self) -> np.ndarray:
        if not self.deterministic:
            raise ValueError("automaton is not deterministic")
        return np.array([[next(iter(t)) for t in row] for row in self.edges], dtype=int)

    def branching(self) -> int:
        return max(len(t) for row in self.edges for t in row)


def accepts_lasso(aut: BuchiAutomaton, prefix: Sequence[int], cycle: Sequence[int]) -> bool:
    """Acceptance of ``prefix · cycle^ω`` by a deterministic automaton."""
    d = aut.delta()
    q = aut.initial
    for lab in prefix:
        q = d[q, lab]
    seen = {}
    visits = []
    while q not in seen:
        seen[q] = len(visits)
        hit = False
        for lab in cycle:
            q = d[q, lab]
            hit |= q in aut.accepting
        visits.append(hit)
    return any(visits[seen[q]:])


def builtin_automaton(formula: Formula, propositions: Sequence[str]) -> BuchiAutomaton | None:
    """Deterministic automata for ``F p``, ``G p`` and ``G F p`` with ``p`` propositional."""
    labels = range(1 << len(propositions))

    def truth(p):
        return [eval_label(p, lab, propositions) for lab in labels]

    def is_eventually(f):
        return isinstance(f, Until) and isinstance(f.left, Top)

    if isinstance(formula, Not) and is_eventually(formula.arg):
        body = formula.arg.right
        # G F p  ==  !(true U !(true U p))
        if isinstance(body, Not) and is_eventually(body.arg) and is_propositional(body.arg.right):
            row = [{1} if x else {0} for x in truth(body.arg.right)]
            return BuchiAutomaton(0, [row, row], {1}, propositions)
        # G p  ==  !(true U !p), so body is !p
        if is_propositional(body):
            t = [not x for x in truth(body)]
            return BuchiAutomaton(0, [[{0} if x else {1} for x in t], [{1}] * len(t)], {0}, propositions)
    if is_eventually(formula) and is_propositional(formula.right):
        t = truth(formula.right)
        return BuchiAutomaton(0, [[{1} if x else {0} for x in t], [{1}] * len(t)], {1}, propositions)
    return None


# ---------------------------------------------------------------- JSON


def _label_keys(on, propositions):
    if on == "*":
        return list(range(1 << len(propositions)))
    return [prop_mask(propositions, on)]


def machine_from_json(doc: dict, mdp: Mdp | None = None, propositions: Sequence[str] | None = None):
    """Parse an RM/ARM document.

    ARM ``on`` fields list the exact label (proposition names) or ``"*"``.
    RM updates use ``{"state": s}`` and RM rewards use an object with any
    of ``from``/``action``/``to`` (missing keys match everything). Later
    entries override earlier ones; unset rewards are 0.
    """
    kind = doc.get("kind", "arm")
    k = int(doc["states"])
    init = int(doc.get("initial", 0))
    normalized = bool(doc.get("normalized", False))
    if kind == "arm":
        props = tuple(doc.get("propositions", propositions if propositions is not None else (mdp.propositions if mdp else ())))
        width = 1 << len(props)
        upd = np.full((k, width), -1, dtype=int)
        rew = np.zeros((k, width))
        for e in doc.get("update", []):
            for lab in _label_keys(e["on"], props):
                upd[int(e["from"]), lab] = int(e["to"])
        for e in doc.get("rewards", []):
            for lab in _label_keys(e["on"], props):
                rew[int(e["at"]), lab] = float(e["value"])
        if np.any(upd < 0):
            u, lab = map(int, np.argwhere(upd < 0)[0])
            raise ValueError(f"update not total: state {u}, label {mask_names(props, lab)}")
        return AbstractRewardMachine(init, upd, rew, props, normalized, doc.get("tag"))
    if kind != "rm":
        raise ValueError(f"unknown machine kind {kind!r}")
    if mdp is None:
        raise ValueError("a state-keyed machine needs its MDP")
    n, m = mdp.n_states, mdp.n_actions
    upd = np.full((k, n), -1, dtype=int)
    rew = np.zeros((k, n, m, n))
    for e in doc.get("update", []):
        on = e["on"]
        states = range(n) if on == "*" else [int(on["state"])]
        for s in states:
            upd[int(e["from"]), s] = int(e["to"])
    for e in doc.get("rewards", []):
        on = e.get("on", {})
        idx = tuple(slice(None) if key not in on else int(on[key]) for key in ("from", "action", "to"))
        rew[(int(e["at"]),) + idx] = float(e["value"])
    if np.any(upd < 0):
        u, s = map(int, np.argwhere(upd < 0)[0])
        raise ValueError(f"update not total: state {u}, MDP state {s}")
    return RewardMachine(init, upd, rew, normalized)


def machine_to_json(machine) -> dict:
    if isinstance(machine, AbstractRewardMachine):
        props = machine.propositions
        k, width = machine.update.shape
        doc = {
            "states": k,
            "initial": machine.initial,
            "kind": "arm",
            "propositions": list(props),
            "update": [
                {"from": u, "on": mask_names(props, lab), "to": int(machine.update[u, lab])}
                for u in range(k)
                for lab in range(width)
            ],
            "rewards": [
                {"at": u, "on": mask_names(props, lab), "value": float(machine.rewards[u, lab])}
                for u in range(k)
                for lab in range(width)
                if machine.rewards[u, lab] != 0
            ],
            "normalized": machine.normalized,
        }
        if machine.tag:
            doc["tag"] = machine.tag
        return doc
    k, n = machine.update.shape
    return {
        "states": k,
        "initial": machine.initial,
        "kind": "rm",
        "update": [{"from": u, "on": {"state": s}, "to": int(machine.update[u, s])} for u in range(k) for s in range(n)],
        "rewards": [
            {"at": int(u), "on": {"from": int(s), "action": int(a), "to": int(t)}, "value": float(machine.rewards[u, s, a, t])}
            for u, s, a, t in zip(*np.nonzero(machine.rewards))
        ],
        "normalized": machine.normalized,
    }


def automaton_from_json(doc: dict, propositions: Sequence[str]) -> BuchiAutomaton:
    k = int(doc["states"])
    width = 1 << len(propositions)
    edges = [[set() for _ in range(width)] for _ in range(k)]
    for e in doc.get("edges", []):
        for lab in _label_keys(e["on"], propositions):
            edges[int(e["from"])][lab].update(int(t) for t in e["to"])
    for q in range(k):
        for lab in range(width):
            if not edges[q][lab]:
                raise ValueError(f"automaton has no edge from state {q} on label {mask_names(propositions, lab)}")
    return BuchiAutomaton(int(doc.get("initial", 0)), edges, set(doc.get("accepting", [])), propositions)


def automaton_to_json(aut: BuchiAutomaton) -> dict:
    return {
        "states": aut.n_states,
        "initial": aut.initial,
        "accepting": sorted(aut.accepting),
        "edges": [
            {"from": q, "on": mask_names(aut.propositions, lab), "to": sorted(t)}
            for q, row in enumerate(aut.edges)
            for lab, t in enumerate(row)
        ],
    }


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
