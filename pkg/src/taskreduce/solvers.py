"""Exact oracles on finite MDPs and the Markov chains their policies induce.

Linear systems go through ``numpy.linalg.solve`` (LU with partial
pivoting). Reachability-style fixpoints are preceded by graph analysis so
that values of exactly 0 and 1 are produced without round-off.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .mdp import FiniteMemoryPolicy, Mdp, PositionalPolicy

RESIDUAL_TOL = 1e-9
FIXPOINT_TOL = 1e-12
TIE_TOL = 1e-10


class SolverError(RuntimeError):
    pass


def as_mask(states, n: int) -> np.ndarray:
    states = np.asarray(states) if not isinstance(states, np.ndarray) else states
    if states.dtype == bool:
        if states.shape != (n,):
            raise ValueError("state mask has the wrong length")
        return states.copy()
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(list(states), dtype=int)] = True
    return mask


def gamma_vector(gamma, n: int) -> np.ndarray:
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (n,)).copy()
    if np.any(g <= 0) or np.any(g >= 1):
        raise ValueError("discount factors must lie strictly inside (0, 1)")
    return g


def _solve(A, b):
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular system: {exc}") from exc
    res = np.max(np.abs(A @ x - b), initial=0.0)
    if res > RESIDUAL_TOL * max(1.0, np.max(np.abs(x), initial=0.0)):
        raise SolverError(f"linear solve residual {res:.3e} too large")
    return x


def policy_matrix(mdp: Mdp, policy: PositionalPolicy) -> np.ndarray:
    return np.einsum("sa,sat->st", policy.choice, mdp.transitions)


def expected_reward(mdp: Mdp, reward, policy: PositionalPolicy) -> np.ndarray:
    q = np.einsum("sat,sat->sa", mdp.transitions, np.asarray(reward, dtype=float))
    return np.einsum("sa,sa->s", policy.choice, q)


# ---------------------------------------------------------------- discounted


def solve_discounted_chain(P, r, gamma) -> np.ndarray:
    n = P.shape[0]
    g = gamma_vector(gamma, n)
    return _solve(np.eye(n) - g[:, None] * P, r)


def discounted_value(mdp: Mdp, reward, gamma, policy: PositionalPolicy) -> np.ndarray:
    """Value of ``policy`` with state-dependent discounting.

    The discount applied after leaving state ``s`` is ``gamma[s]``, so a
    reward earned at step ``i`` is weighted by the product of the discounts
    of the states visited before it.
    """
    return solve_discounted_chain(policy_matrix(mdp, policy), expected_reward(mdp, reward, policy), gamma)


def _argmax_lowest(q, tol=TIE_TOL):
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tol, axis=1)


def value_iteration_discounted(mdp: Mdp, reward, gamma, tol: float = 1e-8):
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = mdp.n_states
    g = gamma_vector(gamma, n)
    P = mdp.transitions
    q_r = np.einsum("sat,sat->sa", P, np.asarray(reward, dtype=float))
    gmax = float(g.max())
    stop = tol * (1 - gmax) / (2 * gmax)
    v = np.zeros(n)
    while True:
        q = q_r + g[:, None] * (P @ v)
        new = q.max(axis=1)
        done = np.max(np.abs(new - v)) <= stop
        v = new
        if done:
            break
    q = q_r + g[:, None] * (P @ v)
    return v, PositionalPolicy.deterministic(_argmax_lowest(q), mdp.n_actions)


def discounted_policy_iteration(mdp: Mdp, reward, gamma, start: PositionalPolicy | None = None):
    """Exact optimum by Howard iteration, warm-started from ``start``."""
    n, m = mdp.n_states, mdp.n_actions
    g = gamma_vector(gamma, n)
    q_r = np.einsum("sat,sat->sa", mdp.transitions, np.asarray(reward, dtype=float))
    acts = start.actions() if start is not None else np.zeros(n, dtype=int)
    for _ in range(10_000):
        pol = PositionalPolicy.deterministic(acts, m)
        v = discounted_value(mdp, reward, g, pol)
        q = q_r + g[:, None] * (mdp.transitions @ v)
        cur = q[np.arange(n), acts]
        better = q.max(axis=1) > cur + TIE_TOL * max(1.0, np.max(np.abs(v)))
        if not better.any():
            return v, PositionalPolicy.deterministic(_prefer(q, acts), m)
        acts = np.where(better, _argmax_lowest(q), acts)
    raise SolverError("policy iteration did not terminate")


def _prefer(q, acts):
    """Lowest action tying with the current one, for canonical output."""
    n = q.shape[0]
    cur = q[np.arange(n), acts][:, None]
    return np.argmax(q >= cur - TIE_TOL * max(1.0, np.max(np.abs(q))), axis=1)


# ---------------------------------------------------------------- chains


DENSE_SCC_LIMIT = 64


def _closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure by repeated squaring."""
    R = adj | np.eye(adj.shape[0], dtype=bool)
    while True:
        Ri = R.astype(np.int32)
        nxt = (Ri @ Ri) > 0
        if np.array_equal(nxt, R):
            return R
        R = nxt


def sccs(adj: np.ndarray) -> np.ndarray:
    """Component label per state; small graphs label by their smallest member."""
    if adj.shape[0] <= DENSE_SCC_LIMIT:
        R = _closure(adj)
        return np.argmax(R & R.T, axis=1)
    _, labels = connected_components(csr_matrix(adj.astype(np.int8)), directed=True, connection="strong")
    return labels


def bottom_sccs(P: np.ndarray) -> list[np.ndarray]:
    """Recurrent classes of a Markov chain, ordered by smallest member."""
    adj = P > 0
    if adj.shape[0] <= DENSE_SCC_LIMIT:
        R = _closure(adj)
        # i is recurrent iff everything it reaches reaches it back
        rec = ~np.any(R & ~R.T, axis=1)
        labels = np.argmax(R & R.T, axis=1)
        return [np.flatnonzero(labels == c) for c in np.unique(labels[rec])]
    labels = sccs(adj)
    out = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        leaves = adj[members][:, labels != c].any()
        if not leaves:
            out.append(members)
    return sorted(out, key=lambda x: x[0])


def backward_reachable(adj: np.ndarray, target: np.ndarray, through: np.ndarray | None = None) -> np.ndarray:
    """States with a path into ``target``; intermediate states must lie in ``through``."""
    n = adj.shape[0]
    seen = target.copy()
    queue = deque(np.flatnonzero(target))
    pred = [np.flatnonzero(adj[:, t]) for t in range(n)]
    while queue:
        t = queue.popleft()
        for s in pred[t]:
            if not seen[s] and (through is None or through[s]):
                seen[s] = True
                queue.append(s)
    return seen


def chain_reach_prob(P: np.ndarray, target) -> np.ndarray:
    n = P.shape[0]
    T = as_mask(target, n)
    x = np.zeros(n)
    x[T] = 1.0
    can = backward_reachable(P > 0, T)
    rest = np.flatnonzero(can & ~T)
    if rest.size:
        A = np.eye(rest.size) - P[np.ix_(rest, rest)]
        b = P[np.ix_(rest, np.flatnonzero(T))].sum(axis=1)
        x[rest] = np.clip(_solve(A, b), 0.0, 1.0)
    return x


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary law of an irreducible chain via xᵀP = xᵀ with Σx = 1."""
    k = P.shape[0]
    A = P.T - np.eye(k)
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    return _solve(A, b)


def absorb(P: np.ndarray, classes, class_values) -> np.ndarray:
    """Expected terminal value when each recurrent class carries a value."""
    n = P.shape[0]
    h = np.zeros(n)
    recurrent = np.zeros(n, dtype=bool)
    for members, val in zip(classes, class_values):
        h[members] = val
        recurrent[members] = True
    trans = np.flatnonzero(~recurrent)
    if trans.size:
        A = np.eye(trans.size) - P[np.ix_(trans, trans)]
        b = P[np.ix_(trans, np.flatnonzero(recurrent))] @ h[recurrent]
        h[trans] = _solve(A, b)
    return h


def chain_gain(P: np.ndarray, r: np.ndarray) -> np.ndarray:
    classes = bottom_sccs(P)
    gains = []
    for members in classes:
        pi = stationary_distribution(P[np.ix_(members, members)])
        gains.append(float(pi @ r[members]))
    return absorb(P, classes, gains)


def chain_buchi_prob(P: np.ndarray, accepting) -> np.ndarray:
    acc = as_mask(accepting, P.shape[0])
    classes = bottom_sccs(P)
    hits = [1.0 if acc[c].any() else 0.0 for c in classes]
    return np.clip(absorb(P, classes, hits), 0.0, 1.0)


def limit_avg_value(mdp: Mdp, reward, policy: PositionalPolicy) -> float:
    if not isinstance(policy, PositionalPolicy):
        raise TypeError("exact limit-average evaluation needs a positional policy")
    g = chain_gain(policy_matrix(mdp, policy), expected_reward(mdp, reward, policy))
    return float(g[mdp.initial])


# ---------------------------------------------------------------- reachability


def _attractor(supp, allowed, goal):
    """Positive-probability attractor of ``goal`` using ``allowed`` actions.

    Returns (rank, action); rank is -1 outside the attractor and the action
    moves strictly closer to ``goal`` (lowest index among such actions).
    """
    n, m, _ = supp.shape
    rank = np.where(goal, 0, -1)
    action = np.zeros(n, dtype=int)
    frontier = goal.copy()
    level = 0
    while frontier.any():
        level += 1
        hits = supp[:, :, frontier].any(axis=2) & allowed
        new = (rank < 0) & hits.any(axis=1)
        if not new.any():
            break
        action[new] = np.argmax(hits[new], axis=1)
        rank[new] = level
        frontier = new
    return rank, action


def _prob1_max(supp, target):
    n, m, _ = supp.shape
    U = backward_reachable(supp.any(axis=1), target)
    while True:
        allowed = ~(supp & ~U[None, None, :]).any(axis=2) & U[:, None]
        rank, action = _attractor(supp, allowed, target)
        R = rank >= 0
        if np.array_equal(R, U):
            return U, action
        U = R


def _iterate(P, x, free, pick, tol=FIXPOINT_TOL):
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return x
    Psub = P[idx]
    while True:
        new = pick(Psub @ x, axis=1)
        delta = np.max(np.abs(new - x[idx]))
        x[idx] = new
        if delta <= tol:
            return x


def max_reach_prob(mdp: Mdp, target):
    n, m = mdp.n_states, mdp.n_actions
    P = mdp.transitions
    supp = P > 0
    T = as_mask(target, n)
    if not T.any():
        return np.zeros(n), PositionalPolicy.deterministic(np.zeros(n, dtype=int), m)
    can = backward_reachable(supp.any(axis=1), T)
    one, one_act = _prob1_max(supp, T)
    x = np.where(one, 1.0, 0.0)
    maybe = can & ~one
    x = _iterate(P, x, maybe, np.max)

    q = P @ x
    optimal = q >= x[:, None] - TIE_TOL
    rank, act = _attractor(supp, optimal & maybe[:, None], one)
    acts = np.zeros(n, dtype=int)
    acts[one] = one_act[one]
    acts[T] = 0
    stuck = maybe & (rank < 0)
    acts[maybe] = act[maybe]
    acts[stuck] = np.argmax(q[stuck], axis=1)
    pol = PositionalPolicy.deterministic(acts, m)
    v = chain_reach_prob(policy_matrix(mdp, pol), T)
    v[~can] = 0.0
    v[one] = 1.0
    return np.clip(v, 0.0, 1.0), pol


def _sure_avoid(supp, target):
    Z = ~target
    while True:
        ok = ~(supp & ~Z[None, None, :]).any(axis=2)
        nz = Z & ok.any(axis=1)
        if np.array_equal(nz, Z):
            return Z, np.argmax(ok, axis=1)
        Z = nz


def min_reach_prob(mdp: Mdp, target):
    n, m = mdp.n_states, mdp.n_actions
    P = mdp.transitions
    supp = P > 0
    T = as_mask(target, n)
    Z, stay = _sure_avoid(supp, T)
    W = backward_reachable(supp.any(axis=1), Z, through=~T)
    one = ~W
    x = np.where(one, 1.0, 0.0)
    maybe = W & ~Z
    x = _iterate(P, x, maybe, np.min)
    q = P @ x
    acts = np.argmax(q <= x[:, None] + TIE_TOL, axis=1)
    acts[Z] = stay[Z]
    acts[one] = 0
    pol = PositionalPolicy.deterministic(acts, m)
    v = chain_reach_prob(policy_matrix(mdp, pol), T)
    v[Z] = 0.0
    v[one] = 1.0
    return np.clip(v, 0.0, 1.0), pol


def max_safe_prob(mdp: Mdp, safe):
    safe = as_mask(safe, mdp.n_states)
    v, pol = min_reach_prob(mdp, ~safe)
    return 1.0 - v, pol


# ---------------------------------------------------------------- end components


@dataclass(frozen=True)
class EndComponent:
    states: frozenset
    actions: dict

    def __contains__(self, s):
        return s in self.states


def mec_decomposition(mdp: Mdp) -> list[EndComponent]:
    supp = mdp.transitions > 0
    n = mdp.n_states
    alive = np.ones(n, dtype=bool)
    allowed = np.ones(supp.shape[:2], dtype=bool)
    while True:
        adj = (supp & allowed[:, :, None]).any(axis=1) & alive[:, None] & alive[None, :]
        labels = sccs(adj)
        labels = np.where(alive, labels, -1)
        same = labels[:, None] == labels[None, :]
        leaves = (supp & ~same[:, None, :]).any(axis=2)
        new_allowed = allowed & ~leaves & alive[:, None]
        new_alive = alive & new_allowed.any(axis=1)
        if np.array_equal(new_allowed, allowed) and np.array_equal(new_alive, alive):
            break
        allowed, alive = new_allowed, new_alive
    out = []
    for c in np.unique(labels[alive]):
        members = np.flatnonzero(labels == c)
        acts = {int(s): tuple(int(a) for a in np.flatnonzero(allowed[s])) for s in members}
        out.append(EndComponent(frozenset(int(s) for s in members), acts))
    return sorted(out, key=lambda ec: min(ec.states))


def max_buchi_prob(mdp: Mdp, accepting):
    """Maximal probability of visiting ``accepting`` infinitely often.

    The policy first maximises the chance of entering an accepting end
    component, then inside it walks to a fixed accepting state forever.
    """
    n, m = mdp.n_states, mdp.n_actions
    acc = as_mask(accepting, n)
    supp = mdp.transitions > 0
    goal = np.zeros(n, dtype=bool)
    inside = []
    for ec in mec_decomposition(mdp):
        members = sorted(ec.states)
        if acc[members].any():
            goal[members] = True
            inside.append(ec)
    v, pol = max_reach_prob(mdp, goal)
    acts = pol.actions().copy()
    for ec in inside:
        members = np.array(sorted(ec.states))
        in_ec = np.zeros(n, dtype=bool)
        in_ec[members] = True
        allowed = np.zeros((n, m), dtype=bool)
        for s, a in ec.actions.items():
            allowed[s, list(a)] = True
        pivot = np.zeros(n, dtype=bool)
        pivot[members[acc[members]][0]] = True
        rank, act = _attractor(supp, allowed, pivot)
        acts[members] = act[members]
        p = int(np.flatnonzero(pivot)[0])
        acts[p] = ec.actions[p][0]
    return v, FiniteMemoryPolicy.from_positional(PositionalPolicy.deterministic(acts, m))
