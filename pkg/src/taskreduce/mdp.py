"""Finite labeled MDPs, runs, policies and a seeded simulator."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROW_TOL = 1e-9
MAX_PROPOSITIONS = 64


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Violation:
    check: str
    where: tuple
    message: str

    def to_json(self):
        return {"check": self.check, "where": list(self.where), "message": self.message}


@dataclass(frozen=True)
class MdpShape:
    """Everything about an MDP except its transition probabilities."""

    n_states: int
    n_actions: int
    initial: int
    propositions: tuple[str, ...] = ()
    labels: tuple[int, ...] = ()

    def prop_mask(self, names: Iterable[str]) -> int:
        return prop_mask(self.propositions, names)


def prop_mask(propositions: Sequence[str], names: Iterable[str]) -> int:
    mask = 0
    for name in names:
        try:
            mask |= 1 << list(propositions).index(name)
        except ValueError:
            raise ValueError(f"unknown proposition {name!r}") from None
    return mask


def mask_names(propositions: Sequence[str], mask: int) -> list[str]:
    return [p for i, p in enumerate(propositions) if mask >> i & 1]


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite labeled MDP with a dense transition array ``P[s, a, s']``.

    Construction only checks array shapes. Probability constraints are
    reported by :func:`validate_mdp` so that broken models can still be
    inspected.
    """

    transitions: np.ndarray
    initial: int = 0
    propositions: tuple[str, ...] = ()
    labels: tuple[int, ...] = ()
    action_names: tuple[str, ...] = ()

    def __post_init__(self):
        P = _frozen(self.transitions)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] == 0 or P.shape[1] == 0:
            raise ValueError(f"transition array must have shape (n, m, n), got {P.shape}")
        object.__setattr__(self, "transitions", P)
        n = P.shape[0]
        labels = tuple(int(x) for x in self.labels) if len(self.labels) else (0,) * n
        if len(labels) != n:
            raise ValueError("one label per state required")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "propositions", tuple(self.propositions))
        if len(self.propositions) > MAX_PROPOSITIONS:
            raise ValueError("at most 64 propositions are supported")
        names = tuple(self.action_names) or tuple(f"a{i + 1}" for i in range(P.shape[1]))
        object.__setattr__(self, "action_names", names)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def shape(self) -> MdpShape:
        return MdpShape(self.n_states, self.n_actions, self.initial, self.propositions, self.labels)

    def states_where(self, predicate) -> np.ndarray:
        """Boolean mask of states whose label bitmask satisfies ``predicate``."""
        return np.array([bool(predicate(lab)) for lab in self.labels])

    def with_transitions(self, P) -> "Mdp":
        return Mdp(P, self.initial, self.propositions, self.labels, self.action_names)


def validate_mdp(mdp: Mdp, tol: float = ROW_TOL) -> list[Violation]:
    out = []
    P = mdp.transitions
    n, m = mdp.n_states, mdp.n_actions
    if not 0 <= mdp.initial < n:
        out.append(Violation("initial", (mdp.initial,), f"initial state {mdp.initial} out of range 0..{n - 1}"))
    for s in range(n):
        for a in range(m):
            row = P[s, a]
            if not np.all(np.isfinite(row)):
                out.append(Violation("finite", (s, a), f"non-finite probability at ({s},{a})"))
                continue
            if np.any(row < 0) or np.any(row > 1):
                out.append(Violation("range", (s, a), f"probability outside [0,1] at ({s},{a})"))
            total = float(row.sum())
            if abs(total - 1.0) > tol:
                out.append(Violation("row-sum", (s, a), f"row ({s},{a}) sums to {total!r}"))
    for s, lab in enumerate(mdp.labels):
        if lab < 0 or lab >> len(mdp.propositions):
            out.append(Violation("label", (s,), f"label of state {s} uses undeclared propositions"))
    return out


class MdpValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations))


# ---------------------------------------------------------------- JSON


def mdp_to_json(mdp: Mdp) -> dict:
    P = mdp.transitions
    trans = []
    for s, a, t in zip(*np.nonzero(P)):
        trans.append({"from": int(s), "action": int(a), "to": int(t), "prob": float(P[s, a, t])})
    return {
        "propositions": list(mdp.propositions),
        "states": mdp.n_states,
        "initial": mdp.initial,
        "actions": list(mdp.action_names),
        "labels": [mask_names(mdp.propositions, lab) for lab in mdp.labels],
        "transitions": trans,
    }


def mdp_from_json(doc: dict, tol: float = ROW_TOL) -> Mdp:
    props = tuple(doc.get("propositions", []))
    n = int(doc["states"])
    actions = list(doc["actions"])
    m = len(actions)
    P = np.zeros((n, m, n))
    problems = []
    for k, e in enumerate(doc.get("transitions", [])):
        a = e["action"]
        if isinstance(a, str):
            if a not in actions:
                problems.append(Violation("action", (k,), f"transition {k}: unknown action {a!r}"))
                continue
            a = actions.index(a)
        s, t = int(e["from"]), int(e["to"])
        if not (0 <= s < n and 0 <= t < n and 0 <= a < m):
            problems.append(Violation("index", (k,), f"transition {k}: index out of range"))
            continue
        P[s, a, t] += float(e["prob"])
    labels = []
    for s, names in enumerate(doc.get("labels", [[] for _ in range(n)])):
        try:
            labels.append(prop_mask(props, names))
        except ValueError as exc:
            problems.append(Violation("label", (s,), f"state {s}: {exc}"))
            labels.append(0)
    if len(labels) != n:
        problems.append(Violation("label", (), "labels must list one entry per state"))
        labels = (labels + [0] * n)[:n]
    mdp = Mdp(P, int(doc.get("initial", 0)), props, tuple(labels), tuple(actions))
    problems += validate_mdp(mdp, tol)
    if problems:
        raise MdpValidationError(problems)
    return mdp


def load_mdp(path, tol: float = ROW_TOL) -> Mdp:
    return mdp_from_json(json.loads(Path(path).read_text()), tol)


def save_mdp(mdp: Mdp, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_json(mdp), indent=1) + "\n")


# ---------------------------------------------------------------- runs


@dataclass(frozen=True)
class Run:
    start: int
    steps: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(a), int(s)) for a, s in self.steps))

    @property
    def states(self) -> list[int]:
        return [self.start] + [s for _, s in self.steps]

    @property
    def last(self) -> int:
        return self.steps[-1][1] if self.steps else self.start

    def __len__(self):
        return len(self.steps)

    def check(self, mdp: Mdp) -> None:
        n, m = mdp.n_states, mdp.n_actions
        if not 0 <= self.start < n or any(not (0 <= a < m and 0 <= s < n) for a, s in self.steps):
            raise ValueError("run references an index out of range")


@dataclass(frozen=True)
class LassoRun:
    """``prefix`` followed by ``cycle`` repeated forever."""

    prefix: Run
    cycle: Run

    def __post_init__(self):
        if not self.cycle.steps:
            raise ValueError("lasso cycle must be nonempty")
        if self.prefix.last != self.cycle.start:
            raise ValueError("prefix must end where the cycle starts")
        if self.cycle.last != self.cycle.start:
            raise ValueError("cycle must return to its start state")

    def unroll(self, n_steps: int) -> Run:
        steps = list(self.prefix.steps)
        while len(steps) < n_steps:
            steps.extend(self.cycle.steps)
        return Run(self.prefix.start, tuple(steps[:n_steps]))


# ---------------------------------------------------------------- policies


@dataclass(frozen=True, eq=False)
class PositionalPolicy:
    choice: np.ndarray

    def __post_init__(self):
        C = _frozen(self.choice)
        if C.ndim != 2:
            raise ValueError("policy table must be (states, actions)")
        if np.any(C < -ROW_TOL) or np.any(np.abs(C.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("policy rows must be distributions")
        object.__setattr__(self, "choice", C)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "PositionalPolicy":
        actions = np.asarray(actions, dtype=int)
        C = np.zeros((len(actions), n_actions))
        C[np.arange(len(actions)), actions] = 1.0
        return cls(C)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.choice == 0) | (self.choice == 1)))

    def actions(self) -> np.ndarray:
        """Most likely action per state (the action itself when deterministic)."""
        return np.argmax(self.choice, axis=1)


@dataclass(frozen=True, eq=False)
class FiniteMemoryPolicy:
    """Memory ``k`` starts at ``initial``; after observing the next state
    ``s'`` it moves to ``update[k, s']``. The action at ``(k, s)`` is drawn
    from ``act[k, s]``."""

    initial: int
    update: np.ndarray
    act: np.ndarray

    def __post_init__(self):
        U = _frozen(self.update, int)
        A = _frozen(self.act)
        if U.ndim != 2 or A.ndim != 3 or A.shape[:2] != U.shape:
            raise ValueError("update must be (memory, states) and act (memory, states, actions)")
        if np.any(U < 0) or np.any(U >= U.shape[0]) or not 0 <= self.initial < U.shape[0]:
            raise ValueError("memory update leaves the memory set")
        if np.any(A < -ROW_TOL) or np.any(np.abs(A.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("action rows must be distributions")
        object.__setattr__(self, "update", U)
        object.__setattr__(self, "act", A)

    @property
    def n_memory(self) -> int:
        return self.update.shape[0]

    @classmethod
    def from_positional(cls, policy: PositionalPolicy) -> "FiniteMemoryPolicy":
        n = policy.choice.shape[0]
        return cls(0, np.zeros((1, n), dtype=int), policy.choice[None])


def as_memory_policy(policy) -> FiniteMemoryPolicy:
    if isinstance(policy, FiniteMemoryPolicy):
        return policy
    if isinstance(policy, PositionalPolicy):
        return FiniteMemoryPolicy.from_positional(policy)
    raise TypeError(f"not a policy: {type(policy).__name__}")


def cylinder_prob(mdp: Mdp, policy, run: Run) -> float:
    run.check(mdp)
    if run.start != mdp.initial:
        return 0.0
    pol = as_memory_policy(policy)
    k, s, prob = pol.initial, run.start, 1.0
    for a, nxt in run.steps:
        prob *= pol.act[k, s, a] * mdp.transitions[s, a, nxt]
        k, s = pol.update[k, nxt], nxt
    return float(prob)


# ---------------------------------------------------------------- simulation


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit sub-seed for trial ``index``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


class UniformStream:
    """Buffered stream of uniforms in [0, 1) from a seeded PCG64."""

    def __init__(self, seed: int, chunk: int = 4096):
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._chunk = chunk
        self._buf = []
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self._chunk).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def _cumulative_rows(P):
    n, m, _ = P.shape
    cum, last = [], []
    for s in range(n):
        cs, ls = [], []
        for a in range(m):
            row = P[s, a]
            cs.append(np.cumsum(row).tolist())
            ls.append(int(np.flatnonzero(row > 0)[-1]) if np.any(row > 0) else s)
        cum.append(cs)
        last.append(ls)
    return cum, last


def sample_index(cum: list, last: int, u: float) -> int:
    """Inverse-CDF draw; entries with zero mass are never returned."""
    i = bisect.bisect_right(cum, u)
    return i if i < len(cum) else last


class Simulator:
    """Black-box access to an MDP through ``reset`` and ``step``.

    Exactly one uniform is consumed per step, so simulators built with the
    same seed over MDPs of the same shape are coupled draw for draw.
    """

    def __init__(self, mdp: Mdp, seed: int = 0):
        self._mdp = mdp
        self._cum, self._last = _cumulative_rows(mdp.transitions)
        self._uniforms = UniformStream(seed)
        self.shape = mdp.shape
        self.state = mdp.initial
        self.steps_taken = 0

    def reset(self) -> int:
        self.state = self.shape.initial
        return self.state

    def step(self, action: int) -> int:
        if not 0 <= action < self.shape.n_actions:
            raise IndexError(f"action {action} out of range")
        s = self.state
        nxt = sample_index(self._cum[s][action], self._last[s][action], self._uniforms.next())
        self.state = nxt
        self.steps_taken += 1
        return nxt


def simulate(sim, action: int) -> int:
    return sim.step(action)
