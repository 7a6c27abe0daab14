"""Benchmark MDP families: random Garnet instances and the deterministic chain."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .mdp import Mdp
from .rng import SplitMix64


@dataclass(frozen=True)
class GarnetParams:
    """Garnet instance parameters.

    ``n_states`` counts the non-absorbing states; the generated MDP appends
    one absorbing state at index ``n_states``. ``reward_sparsity`` is the
    probability that a pair's reward is zero.
    """

    n_states: int
    n_actions: int
    branching: int
    termination: float
    reward_sparsity: float = 0.5
    seed: int = 0
    gamma: float = 0.9

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise DomainError("n_states and n_actions must be positive")
        if not 1 <= self.branching <= self.n_states:
            raise DomainError("branching must lie in [1, n_states]")
        if not 0.0 < self.termination <= 1.0:
            raise DomainError("termination probability must lie in (0, 1]")
        if not 0.0 <= self.reward_sparsity <= 1.0:
            raise DomainError("reward_sparsity must lie in [0, 1]")


def generate_garnet(params: GarnetParams) -> Mdp:
    """Draw a Garnet MDP; identical parameters give an identical instance.

    Per live pair, in order: ``branching`` distinct successors by partial
    Fisher-Yates, flat-Dirichlet weights (normalised exponentials) scaled by
    ``1 - termination``, one sparsity uniform, one reward uniform in [-1, 1].
    """
    n, A = params.n_states, params.n_actions
    rng = SplitMix64(params.seed)
    S = n + 1
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    keep = 1.0 - params.termination
    for x in range(n):
        for a in range(A):
            pool = list(range(n))
            for i in range(params.branching):
                j = i + rng.integers(n - i)
                pool[i], pool[j] = pool[j], pool[i]
            succ = sorted(pool[: params.branching])
            w = [-math.log(1.0 - rng.random()) for _ in succ]
            total = sum(w)
            for y, wy in zip(succ, w):
                P[x, a, y] += keep * wy / total
            P[x, a, n] += params.termination
            sparse = rng.random() < params.reward_sparsity
            value = rng.uniform(-1.0, 1.0)
            r[x, a] = 0.0 if sparse else value
    P[n, :, n] = 1.0
    # absorb rounding so rows sum to one exactly enough for validation
    P[:n] /= P[:n].sum(axis=2, keepdims=True)
    return Mdp(P, r, params.gamma, frozenset({n}), r_max=1.0)


FORWARD, STAY = 0, 1


def generate_chain(n: int, gamma: float) -> Mdp:
    """``n``-state chain whose last state is terminal.

    Action 0 moves right (reward 1 on entering the terminal state), action 1
    stays put with reward 0.
    """
    if n < 2:
        raise DomainError("chain needs at least two states")
    P = np.zeros((n, 2, n))
    r = np.zeros((n, 2))
    for x in range(n - 1):
        P[x, FORWARD, x + 1] = 1.0
        P[x, STAY, x] = 1.0
    r[n - 2, FORWARD] = 1.0
    P[n - 1, :, n - 1] = 1.0
    return Mdp(P, r, gamma, frozenset({n - 1}), r_max=1.0)
