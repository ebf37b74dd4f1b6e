"""Tabular learners over black-box simulators and the monitors that score them."""

from __future__ import annotations

import csv
import io
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import FiniteMemoryPolicy, Mdp, PositionalPolicy, derive_seed
from .specs import is_eps_optimal, optimal_value, spec_value


@dataclass(frozen=True)
class LearnerConfig:
    seed: int = 0
    steps: int = 100_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    lr_c: float = 10.0
    eval_every: int | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("step budget must be nonnegative")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0 < self.eps_fraction <= 1:
            raise ValueError("eps_fraction must lie in (0, 1]")
        if self.lr_c <= 0:
            raise ValueError("learning-rate constant must be positive")
        if self.eval_every is not None and self.eval_every <= 0:
            raise ValueError("eval_every must be positive")

    def epsilon(self, step: int) -> float:
        span = self.eps_fraction * self.steps
        if span <= 0 or step >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * step / span

    @property
    def stride(self) -> int:
        return self.eval_every or max(1, self.steps)


def _key(policy: FiniteMemoryPolicy) -> bytes:
    return b"|".join([str(policy.initial).encode(), policy.update.tobytes(), policy.act.tobytes()])


@dataclass
class PolicyTrace:
    """Output policies of a learner, one per snapshot iteration."""

    snapshots: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    values: list | None = None

    def record(self, iteration: int, policy) -> None:
        if self.snapshots and iteration <= self.snapshots[-1][0]:
            raise ValueError("snapshot iterations must increase")
        if isinstance(policy, PositionalPolicy):
            policy = FiniteMemoryPolicy.from_positional(policy)
        self.snapshots.append((iteration, policy))

    def __len__(self):
        return len(self.snapshots)

    def policies(self) -> list:
        return [p for _, p in self.snapshots]

    def policy_ids(self) -> list[int]:
        """Index of each snapshot's policy among the distinct ones, in order of appearance."""
        seen, out = {}, []
        for _, p in self.snapshots:
            out.append(seen.setdefault(_key(p), len(seen)))
        return out

    def suffix(self, start: int) -> "PolicyTrace":
        return PolicyTrace(self.snapshots[start:], self.observations, None if self.values is None else self.values[start:])

    def to_json(self) -> dict:
        ids = self.policy_ids()
        tables = {}
        for pid, (_, p) in zip(ids, self.snapshots):
            tables.setdefault(pid, {"initial": p.initial, "update": p.update.tolist(), "act": p.act.tolist()})
        return {
            "snapshots": [{"iteration": it, "policy": pid} for (it, _), pid in zip(self.snapshots, ids)],
            "policies": [tables[i] for i in range(len(tables))],
            "observations": [list(o) for o in self.observations],
        }


# ---------------------------------------------------------------- Q-learning


def reset_horizon(gamma: float, floor: float = 1e-6) -> int:
    """Smallest H with gamma**H <= floor."""
    if gamma <= 0:
        return 1
    H = max(1, math.ceil(math.log(floor) / math.log(gamma)))
    # the log ratio can round either way; settle on the exact power
    while gamma**H > floor:
        H += 1
    while H > 1 and gamma ** (H - 1) <= floor:
        H -= 1
    return H


def _greedy(q_row):
    best = 0
    for a in range(1, len(q_row)):
        if q_row[a] > q_row[best]:
            best = a
    return best


def q_learning(sim, reward, gamma: float, config: LearnerConfig = LearnerConfig()):
    """Tabular Q-learning with epsilon-greedy exploration.

    ``reward[s, a, s']`` is the observed transition reward. The episode is
    reset every ``H`` steps with ``gamma**H <= 1e-6`` unless the config
    sets a horizon. Returns ``(trace, Q)``.
    """
    if not 0 <= gamma < 1:
        raise ValueError("Q-learning needs a constant discount in [0, 1)")
    n, m = sim.shape.n_states, sim.shape.n_actions
    R = np.asarray(reward, dtype=float)
    if R.shape != (n, m, n):
        raise ValueError(f"reward table must have shape {(n, m, n)}")
    R = R.tolist()
    horizon = config.horizon or reset_horizon(gamma)
    rng = random.Random(derive_seed(config.seed, 1))
    Q = [[0.0] * m for _ in range(n)]
    visits = [[0] * m for _ in range(n)]
    best = [0] * n
    trace = PolicyTrace()
    stride = config.stride
    c = config.lr_c
    span = config.eps_fraction * config.steps
    e0, e1 = config.eps_start, config.eps_end

    def snapshot(it):
        trace.record(it, PositionalPolicy.deterministic(best, m))

    snapshot(0)
    s = sim.reset()
    for it in range(1, config.steps + 1):
        t = it - 1
        eps = e1 if t >= span else e0 + (e1 - e0) * t / span
        if rng.random() < eps:
            a = rng.randrange(m)
        else:
            a = best[s]
        s2 = sim.step(a)
        row = Q[s]
        visits[s][a] += 1
        lr = c / (c + visits[s][a])
        row[a] += lr * (R[s][a][s2] + gamma * Q[s2][best[s2]] - row[a])
        if a == best[s]:
            best[s] = _greedy(row)
        elif row[a] > row[best[s]] or (row[a] == row[best[s]] and a < best[s]):
            best[s] = a
        s = s2
        if it % horizon == 0:
            s = sim.reset()
        if it % stride == 0:
            snapshot(it)
    return trace, np.array(Q)


# ---------------------------------------------------------------- model-based


class ModelBasedLearner:
    """Certainty-equivalence learner.

    Visits state-action pairs in round-robin order, navigating on the
    estimated model (resetting when the next target is only reachable
    from the initial state), and plans optimally on the maximum-likelihood
    model. Unvisited rows of the estimate are self-loops.
    """

    def __init__(self, sim, spec, cache: dict | None = None):
        self.sim = sim
        self.spec = spec
        shape = sim.shape
        self.n, self.m = shape.n_states, shape.n_actions
        self.counts = np.zeros((self.n, self.m, self.n), dtype=np.int64)
        self._succ = [[set() for _ in range(self.m)] for _ in range(self.n)]
        self._targets = [(s, a) for s in range(self.n) for a in range(self.m)]
        self._next = 0
        self._cache = {} if cache is None else cache
        self.state = sim.reset()
        self.inner_steps = 0
        self.resets = 0

    def estimate(self) -> np.ndarray:
        rows = self.counts.sum(axis=2, keepdims=True)
        P = np.where(rows > 0, self.counts / np.maximum(rows, 1), 0.0)
        for s, a in np.argwhere(rows[:, :, 0] == 0):
            P[s, a, s] = 1.0
        return P

    def model(self) -> Mdp:
        sh = self.sim.shape
        return Mdp(self.estimate(), sh.initial, sh.propositions, sh.labels)

    def policy(self) -> FiniteMemoryPolicy:
        P = self.estimate()
        key = P.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            sh = self.sim.shape
            hit = optimal_value(Mdp(P, sh.initial, sh.propositions, sh.labels), self.spec)[1]
            self._cache[key] = hit
        return hit

    def _first_moves(self, start):
        """BFS over observed edges: state -> first action on a shortest path from ``start``."""
        first = {start: None}
        queue = deque([start])
        while queue:
            x = queue.popleft()
            for a in range(self.m):
                for y in sorted(self._succ[x][a]):
                    if y not in first:
                        first[y] = a if first[x] is None else first[x]
                        queue.append(y)
        return first

    def _choose(self):
        here = self._first_moves(self.state)
        home = None
        T = len(self._targets)
        for k in range(T):
            s, a = self._targets[(self._next + k) % T]
            if s == self.state:
                self._next = (self._next + k + 1) % T
                return a
            if s in here:
                self._next = (self._next + k) % T
                return here[s]
            if home is None:
                home = self._first_moves(self.sim.shape.initial)
            if s in home:
                self._next = (self._next + k) % T
                self.state = self.sim.reset()
                self.resets += 1
                return self._choose()
        raise AssertionError("the current state is always a reachable target")

    def step(self):
        s = self.state
        a = self._choose()
        s = self.state
        s2 = self.sim.step(a)
        self.inner_steps += 1
        self.counts[s, a, s2] += 1
        self._succ[s][a].add(s2)
        self.state = s2
        return s, a, s2


def model_based_learner(sim, spec, config: LearnerConfig = LearnerConfig(), learner_out: list | None = None, cache: dict | None = None) -> PolicyTrace:
    """Run the certainty-equivalence learner for exactly ``config.steps`` inner transitions.

    ``cache`` maps estimated models to planned policies and may be shared
    between runs with the same shape and objective.
    """
    learner = ModelBasedLearner(sim, spec, cache)
    trace = PolicyTrace()
    trace.record(0, learner.policy())
    stride = config.eval_every or 1
    for it in range(1, config.steps + 1):
        trace.observations.append(learner.step())
        if it % stride == 0 or it == config.steps:
            trace.record(it, learner.policy())
    if learner_out is not None:
        learner_out.append(learner)
    return trace


# ---------------------------------------------------------------- monitors


def pac_mistake_count(trace: PolicyTrace, mdp: Mdp, spec, eps: float, optimum: float | None = None) -> int:
    """Snapshots that are not eps-optimal in ``mdp``."""
    if optimum is None:
        optimum = optimal_value(mdp, spec)[0]
    verdicts = {}
    count = 0
    for _, p in trace.snapshots:
        k = _key(p)
        if k not in verdicts:
            verdicts[k] = is_eps_optimal(mdp, spec, p, eps, optimum)
        count += not verdicts[k]
    return count


@dataclass
class ConvergenceReport:
    rows: list
    optimum: float

    @property
    def final_gap(self) -> float:
        return self.rows[-1]["gap"] if self.rows else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "policy-id", "J", "gap"])
        for r in self.rows:
            w.writerow([r["iteration"], r["policy-id"], "%.17g" % r["J"], "%.17g" % r["gap"]])
        return buf.getvalue()


def convergence_trace(trace: PolicyTrace, mdp: Mdp, spec, optimum: float | None = None) -> ConvergenceReport:
    """Exact value of every snapshot and its gap to the optimum."""
    if optimum is None:
        optimum = optimal_value(mdp, spec)[0]
    memo = {}
    rows = []
    values = []
    for (it, p), pid in zip(trace.snapshots, trace.policy_ids()):
        if pid not in memo:
            memo[pid] = spec_value(mdp, spec, p)
        J = memo[pid]
        values.append(J)
        rows.append({"iteration": it, "policy-id": pid, "J": J, "gap": optimum - J})
    trace.values = values
    return ConvergenceReport(rows, optimum)


def save_trace(trace: PolicyTrace, report: ConvergenceReport | None, stem) -> None:
    """Write ``stem.json`` (policy tables) and, with a report, ``stem.csv``."""
    from pathlib import Path

    stem = Path(stem)
    stem.with_suffix(".json").write_text(json.dumps(trace.to_json()) + "\n")
    if report is not None:
        stem.with_suffix(".csv").write_text(report.to_csv())
