"""Independent reference implementations used only by the tests.

Everything here works from raw transition tables by explicit loops or path
enumeration, deliberately avoiding the matrix routines under test.
"""
from __future__ import annotations

import itertools

import numpy as np

from retrace.online import Step, Trajectory


def policy_value_by_iteration(P, r, gamma, pi, tol=1e-13):
    """Q^pi by repeated Bellman backups until the sup change is below ``tol``."""
    q = np.zeros_like(r)
    while True:
        v = (pi * q).sum(axis=1)
        new = r + gamma * np.einsum("xay,y->xa", P, v)
        if np.abs(new - q).max() < tol:
            return new
        q = new


def q_star_by_policy_iteration(P, r, gamma):
    S, A = r.shape
    actions = np.zeros(S, dtype=int)
    while True:
        pi = np.eye(A)[actions]
        Ppi = np.einsum("xay,yb->xayb", P, pi).reshape(S * A, S * A)
        q = np.linalg.solve(np.eye(S * A) - gamma * Ppi, r.reshape(-1)).reshape(S, A)
        better = q.argmax(axis=1)
        improved = q[np.arange(S), better] > q[np.arange(S), actions] + 1e-12
        if not improved.any():
            return q
        actions = np.where(improved, better, actions)


def trace_value(family, lam, pi_p, mu_p, prod):
    """Per-step trace by its defining formula (capped uses the running product)."""
    ratio = pi_p / mu_p
    if family == "is":
        return ratio
    if family == "qpi":
        return lam
    if family == "tb":
        return lam * pi_p
    if family == "retrace":
        return lam * min(1.0, ratio)
    cap = np.inf if prod == 0.0 else 1.0 / prod
    return lam * min(cap, ratio)


def operator_by_paths(P, r, gamma, pi, mu, q, family, lam, horizon):
    """``Q + sum_{t<H} gamma^t E_mu[c_1..c_t (r_t + gamma E_pi Q(x_{t+1}) - Q(x_t, a_t))]``.

    Plain depth-first search over every (state, action) path with positive
    probability; no merging of histories.
    """
    S, A = r.shape
    v = (pi * q).sum(axis=1)
    resid = r + gamma * np.einsum("xay,y->xa", P, v) - q
    out = q.copy()

    def walk(x, a, t, weight, prod):
        total = weight * gamma**t * prod * resid[x, a]
        if t + 1 >= horizon:
            return total
        for y in range(S):
            if P[x, a, y] == 0.0:
                continue
            for b in range(A):
                if mu[y, b] == 0.0:
                    continue
                c = trace_value(family, lam, pi[y, b], mu[y, b], prod)
                if prod * c == 0.0:
                    continue
                total += walk(y, b, t + 1, weight * P[x, a, y] * mu[y, b], prod * c)
        return total

    for x, a in itertools.product(range(S), range(A)):
        out[x, a] += walk(x, a, 0, 1.0, 1.0)
    return out


def enumerate_trajectories(mdp, mu, max_len):
    """Every trajectory ``sample_trajectory`` can return, with its probability.

    Starts are uniform over non-absorbing states, as in the sampler.
    """
    P, r = mdp.transitions, mdp.rewards
    live = mdp.live_states
    out = []

    def extend(steps, x, prob):
        if x in mdp.absorbing:
            out.append((Trajectory(tuple(steps), x, True), prob))
            return
        if len(steps) == max_len:
            out.append((Trajectory(tuple(steps), x, False), prob))
            return
        for a in range(mdp.n_actions):
            if mu[x, a] == 0.0:
                continue
            step = Step(x, a, float(r[x, a]), float(mu[x, a]))
            for y in range(mdp.n_states):
                if P[x, a, y] > 0.0:
                    extend(steps + [step], y, prob * mu[x, a] * P[x, a, y])

    for x in live:
        extend([], x, 1.0 / len(live))
    return out


def expected_visits(mdp, mu, max_len):
    """``D(x, a) = E[#{t < max_len : (x_t, a_t) = (x, a)}]`` by forward propagation."""
    S = mdp.n_states
    d = np.zeros(S)
    d[list(mdp.live_states)] = 1.0 / len(mdp.live_states)
    visits = np.zeros((S, mdp.n_actions))
    live = ~mdp.absorbing_mask()
    for _ in range(max_len):
        pair = (d * live)[:, None] * mu
        visits += pair
        d = np.einsum("xa,xay->y", pair, mdp.transitions)
    return visits
