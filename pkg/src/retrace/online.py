"""Sampled trajectories and the online every-visit return-based update.

An episode is sampled under the behaviour policy ``mu_k``; every TD error
``delta_t = r_t + gamma E_{pi_k} Q_k(x_{t+1}, .) - Q_k(x_t, a_t)`` is computed
against the Q-table the episode started with, and each visited pair receives

    alpha_k(x, a) * sum_{t >= s} delta_t z_{s,t}

once, at the end of the episode (``s`` its first occurrence, ``z`` the
accumulating trace). Absorbing-state entries stay at zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DomainError
from .mdp import Mdp, check_policy, check_q, exact_q_pi, greedy_actions, sup_norm
from .rng import SplitMix64, derive_seed
from .traces import TraceSpec, trace_coefficient

DEFAULT_MAX_LEN = 1000


@dataclass(frozen=True)
class Step:
    state: int
    action: int
    reward: float
    mu_prob: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    final_state: int
    terminated: bool

    @property
    def length(self) -> int:
        return len(self.steps)


def sample_trajectory(
    mdp: Mdp,
    mu,
    rng_seed: int,
    max_len: int = DEFAULT_MAX_LEN,
    start: int | None = None,
    mu_checked: bool = False,
) -> Trajectory:
    """Roll out ``mu`` from a uniformly drawn non-absorbing state (or ``start``).

    Stops on entering an absorbing state or after ``max_len`` steps. The draw
    order is: start state (skipped when ``start`` is given), then per step one
    action uniform followed by one next-state uniform.
    """
    if max_len < 1:
        raise DomainError("max_len must be at least 1")
    if not mu_checked:
        mu = check_policy(mdp, mu)
    rng = SplitMix64(rng_seed)
    live = mdp.live_states
    if start is None:
        if not live:
            raise DomainError("every state is absorbing; nowhere to start")
        x = live[rng.integers(len(live))]
    else:
        x = int(start)
    absorbing = mdp.absorbing
    rows = _transition_rows(mdp)
    r = mdp.rewards
    mu_rows = mu.tolist()
    steps = []
    terminated = x in absorbing
    while not terminated and len(steps) < max_len:
        row = mu_rows[x]
        a = rng.categorical(row)
        if a < 0:
            raise DomainError(f"behaviour policy has no mass in state {x}")
        steps.append(Step(x, a, float(r[x, a]), row[a]))
        x = rng.categorical(rows[x][a])
        terminated = x in absorbing
    return Trajectory(tuple(steps), x, terminated)


def _transition_rows(mdp: Mdp) -> list:
    rows = mdp.__dict__.get("_rows")
    if rows is None:
        rows = mdp.transitions.tolist()
        mdp.__dict__["_rows"] = rows
    return rows


def trajectory_traces(traj: Trajectory, spec: TraceSpec, pi: np.ndarray) -> np.ndarray:
    """``c_t`` along the trajectory; ``c_0`` is unused and set to 0."""
    T = traj.length
    c = np.zeros(T)
    prod = 1.0
    for t in range(1, T):
        st = traj.steps[t]
        if st.mu_prob <= 0.0:
            raise DomainError(f"recorded behaviour probability is zero at step {t}")
        c[t] = trace_coefficient(spec, float(pi[st.state, st.action]), st.mu_prob, prod)
        prod *= c[t]
    if T and traj.steps[0].mu_prob <= 0.0:
        raise DomainError("recorded behaviour probability is zero at step 0")
    return c


def episode_increments(mdp: Mdp, q: np.ndarray, traj: Trajectory, spec: TraceSpec, pi: np.ndarray) -> dict:
    """Raw increments ``sum_{t>=s} delta_t z_{s,t}`` for each visited pair.

    Uses ``sum_s ... z_{s,t} = sum_{j: visit} G_j`` with the backward recursion
    ``G_j = delta_j + gamma c_{j+1} G_{j+1}``. Keys are ``(x, a)`` in order of
    first occurrence.
    """
    T = traj.length
    if T == 0:
        return {}
    gamma = mdp.gamma
    v = (pi * q).sum(axis=1)
    if traj.terminated:
        v_last = 0.0
    else:
        v_last = float(v[traj.final_state])
    c = trajectory_traces(traj, spec, pi)
    steps = traj.steps
    G = [0.0] * T
    nxt = 0.0
    for t in range(T - 1, -1, -1):
        st = steps[t]
        boot = v_last if t == T - 1 else float(v[steps[t + 1].state])
        delta = st.reward + gamma * boot - float(q[st.state, st.action])
        g_t = delta + (gamma * c[t + 1] * nxt if t + 1 < T else 0.0)
        G[t] = g_t
        nxt = g_t
    out: dict = {}
    for t, st in enumerate(steps):
        key = (st.state, st.action)
        out[key] = out.get(key, 0.0) + G[t]
    return out


@dataclass
class StepSizeSchedule:
    """``alpha(x, a) = alpha0 / (1 + n(x, a)) ** exponent``.

    ``n`` counts trajectories that have already updated the pair. The
    schedule is mutated by :func:`every_visit_update`.
    """

    alpha0: float = 0.5
    exponent: float = 0.75
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise DomainError("alpha0 must be positive")
        if not 0.5 < self.exponent <= 1.0:
            raise DomainError("exponent must lie in (0.5, 1] for Robbins-Monro step sizes")

    def alpha(self, pair) -> float:
        return self.alpha0 / (1.0 + self.counts.get(pair, 0)) ** self.exponent

    def visit(self, pair):
        self.counts[pair] = self.counts.get(pair, 0) + 1

    def fresh(self) -> "StepSizeSchedule":
        return StepSizeSchedule(self.alpha0, self.exponent)


def every_visit_update(
    mdp: Mdp, q, traj: Trajectory, spec: TraceSpec, pi, sched: StepSizeSchedule, inplace: bool = False
) -> np.ndarray:
    """One episode of the every-visit algorithm.

    Returns a new Q-table unless ``inplace``. Visit counters in ``sched`` are
    advanced once per visited pair.
    """
    q = check_q(mdp, q)
    pi = check_policy(mdp, pi)
    return _apply_episode(mdp, q if inplace else q.copy(), traj, spec, pi, sched)


def _apply_episode(mdp, out, traj, spec, pi, sched):
    inc = episode_increments(mdp, out, traj, spec, pi)
    absorbing = mdp.absorbing
    for pair, total in inc.items():
        if pair[0] in absorbing:
            continue
        out[pair] += sched.alpha(pair) * total
        sched.visit(pair)
    return out


# --- policies ----------------------------------------------------------------


def epsilon_greedy(q, epsilon: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError("epsilon must lie in [0, 1]")
    S, A = q.shape
    pi = np.full((S, A), epsilon / A)
    pi[np.arange(S), greedy_actions(q)] += 1.0 - epsilon
    return pi


def softmax_policy(q, beta: float) -> np.ndarray:
    if beta < 0:
        raise DomainError("beta must be non-negative")
    z = beta * np.asarray(q, dtype=float)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mixture_behavior(q, base_mu, eps_mix: float) -> np.ndarray:
    """Greedy action with probability ``1 - eps_mix``; the rest spread like ``base_mu``."""
    if not 0.0 <= eps_mix < 1.0:
        raise DomainError("mixture coefficient must lie in [0, 1)")
    q = np.asarray(q, dtype=float)
    base_mu = np.asarray(base_mu, dtype=float)
    S, A = q.shape
    g = greedy_actions(q)
    rows = np.arange(S)
    denom = 1.0 - base_mu[rows, g]
    bad = np.flatnonzero(denom <= 1e-12)
    if bad.size:
        raise DomainError(f"base behaviour puts all its mass on the greedy action in state {bad[0]}")
    mu = eps_mix * base_mu / denom[:, None]
    mu[rows, g] = 1.0 - eps_mix
    return mu


class ScheduleKind(str, Enum):
    EPSILON_GREEDY = "epsilon_greedy"
    SOFTMAX = "softmax"
    MIXTURE = "mixture"
    FIXED = "fixed"


def constant(value: float) -> Callable[[int], float]:
    return lambda k: value


def inverse_decay(value0: float) -> Callable[[int], float]:
    """``value0 / k`` for episode ``k >= 1``."""
    return lambda k: value0 / k


def linear_growth(beta0: float, rate: float) -> Callable[[int], float]:
    return lambda k: beta0 + rate * (k - 1)


@dataclass(frozen=True)
class PolicySchedule:
    """Episode-indexed policy generator.

    ``sequence`` gives ``epsilon_k`` (non-increasing) or ``beta_k``
    (non-decreasing) for ``k >= 1``.
    """

    kind: ScheduleKind
    sequence: Callable[[int], float] | None = None
    base_mu: np.ndarray | None = None
    eps_mix: float = 0.0
    policy_table: np.ndarray | None = None

    @classmethod
    def epsilon_greedy(cls, sequence):
        return cls(ScheduleKind.EPSILON_GREEDY, sequence=sequence)

    @classmethod
    def softmax(cls, sequence):
        return cls(ScheduleKind.SOFTMAX, sequence=sequence)

    @classmethod
    def mixture(cls, base_mu, eps_mix):
        return cls(ScheduleKind.MIXTURE, base_mu=np.asarray(base_mu, float), eps_mix=eps_mix)

    @classmethod
    def fixed(cls, policy):
        return cls(ScheduleKind.FIXED, policy_table=np.asarray(policy, float))

    def policy(self, q: np.ndarray, k: int) -> np.ndarray:
        if self.kind is ScheduleKind.EPSILON_GREEDY:
            return epsilon_greedy(q, min(1.0, self.sequence(k)))
        if self.kind is ScheduleKind.SOFTMAX:
            return softmax_policy(q, self.sequence(k))
        if self.kind is ScheduleKind.MIXTURE:
            return mixture_behavior(q, self.base_mu, self.eps_mix)
        return self.policy_table


# --- control ---------------------------------------------------------------


@dataclass
class LearningRecord:
    """Errors logged during a control run; ``episodes[i]`` is the episode count at log ``i``."""

    episodes: list = field(default_factory=list)
    error_q_star: list = field(default_factory=list)
    error_q_pi: list = field(default_factory=list)
    q_norm: list = field(default_factory=list)
    q_final: np.ndarray | None = None

    def log(self, k, q, q_star, q_pi):
        self.episodes.append(k)
        self.error_q_star.append(sup_norm(q - q_star))
        self.error_q_pi.append(sup_norm(q - q_pi))
        self.q_norm.append(sup_norm(q))


DIVERGENCE_CAP = 1e6


def run_control(
    mdp: Mdp,
    spec: TraceSpec,
    target_sched: PolicySchedule,
    behavior_sched: PolicySchedule,
    step_sched: StepSizeSchedule,
    q0,
    episodes: int,
    seed: int,
    q_star: np.ndarray,
    log_interval: int = 100,
    max_len: int = DEFAULT_MAX_LEN,
) -> LearningRecord:
    """Alternate sampling and every-visit updates for ``episodes`` episodes.

    Episode ``k`` (1-based) uses ``pi_k`` and ``mu_k`` built from the current
    Q-table and a trajectory seeded by ``derive_seed(seed, k)``. A greedy
    ``epsilon_k = 0`` target gives Watkins' Q(lambda). Logging stops early once
    ``||Q|| > 1e6``.
    """
    if episodes < 0:
        raise DomainError("episodes must be non-negative")
    q = check_q(mdp, q0).copy()
    q[list(mdp.absorbing)] = 0.0
    record = LearningRecord()
    # schedules built from valid inputs yield valid policies; check the first pair only
    check_policy(mdp, behavior_sched.policy(q, 1))
    pi = check_policy(mdp, target_sched.policy(q, 1))
    record.log(0, q, q_star, exact_q_pi(mdp, pi))
    for k in range(1, episodes + 1):
        pi = target_sched.policy(q, k)
        mu = behavior_sched.policy(q, k)
        traj = sample_trajectory(mdp, mu, derive_seed(seed, k), max_len, mu_checked=True)
        _apply_episode(mdp, q, traj, spec, pi, step_sched)
        diverged = not np.all(np.isfinite(q)) or sup_norm(q) > DIVERGENCE_CAP
        if k % log_interval == 0 or k == episodes or diverged:
            record.log(k, q, q_star, exact_q_pi(mdp, target_sched.policy(q, k + 1)))
        if diverged:
            break
    record.q_final = q
    return record


def robbins_monro_partial_sums(sched: StepSizeSchedule, n_terms: int) -> tuple[float, float]:
    """``(sum alpha_n, sum alpha_n^2)`` over the first ``n_terms`` visits of one pair."""
    n = np.arange(n_terms, dtype=float)
    a = sched.alpha0 / (1.0 + n) ** sched.exponent
    return float(a.sum()), float((a * a).sum())
