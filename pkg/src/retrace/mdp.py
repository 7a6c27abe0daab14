"""Finite MDPs, tabular policies and the exact dynamic-programming operators.

Conventions:

* transitions have shape ``(S, A, S)``, rewards and Q-tables shape ``(S, A)``
* policies are ``(S, A)`` arrays whose rows are action distributions
* operator matrices act on Q-tables flattened row-major, so the pair
  ``(x, a)`` sits at index ``x * A + a``

Absorbing states are explicit zero-reward self-loops, which keeps every
operator square.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, NumericalError, StructuralError

ROW_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Mdp:
    """Finite MDP ``(X, A, gamma, P, r)`` with an explicit absorbing set.

    Arrays are copied and made read-only on construction. ``r_max`` defaults
    to ``max |r|``.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    absorbing: frozenset = field(default_factory=frozenset)
    r_max: float | None = None

    def __post_init__(self):
        P = _frozen(self.transitions)
        r = _frozen(self.rewards)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise StructuralError(f"transitions must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise StructuralError(f"rewards shape {r.shape} does not match {P.shape[:2]}")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(P)) or np.any(P < 0.0):
            raise DomainError("transition probabilities must be finite and non-negative")
        sums = P.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
        if bad.size:
            x, a = bad[0]
            raise DomainError(f"transition row ({x}, {a}) sums to {sums[x, a]!r}, not 1")
        if not np.all(np.isfinite(r)):
            raise DomainError("rewards must be finite")
        absorbing = frozenset(int(x) for x in self.absorbing)
        n = P.shape[0]
        for x in absorbing:
            if not 0 <= x < n:
                raise StructuralError(f"absorbing state {x} out of range")
            if np.any(P[x, :, x] != 1.0) or np.any(r[x] != 0.0):
                raise DomainError(f"absorbing state {x} must self-loop with zero reward")
        r_max = float(np.abs(r).max()) if self.r_max is None else float(self.r_max)
        if np.abs(r).max() > r_max:
            raise DomainError(f"|reward| exceeds declared r_max={r_max}")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "absorbing", absorbing)
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    @property
    def live_states(self) -> list[int]:
        return [x for x in range(self.n_states) if x not in self.absorbing]

    def absorbing_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.absorbing)] = True
        return mask


def check_policy(mdp: Mdp, pi) -> np.ndarray:
    """Validate ``pi`` against ``mdp`` and return it as a float array."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise StructuralError(
            f"policy shape {pi.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )
    if np.any(pi < 0.0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > ROW_TOL):
        raise DomainError("policy rows must be non-negative and sum to 1")
    return pi


def check_q(mdp: Mdp, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise StructuralError(
            f"Q shape {q.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )
    if not np.all(np.isfinite(q)):
        raise DomainError("Q-function entries must be finite")
    return q


def uniform_policy(mdp: Mdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax, ties to the lowest action index."""
    return np.argmax(q, axis=1)


def state_action_operator(mdp: Mdp, weights: np.ndarray) -> np.ndarray:
    """Matrix ``M[(x,a),(x',a')] = P(x'|x,a) * weights[x',a']``.

    With ``weights = pi`` this is ``P^pi``; with ``weights = mu * c`` it is the
    sub-stochastic trace operator.
    """
    S, A = mdp.n_states, mdp.n_actions
    return (mdp.transitions.reshape(S * A, S)[:, :, None] * weights[None, :, :]).reshape(
        S * A, S * A
    )


def transition_operator(mdp: Mdp, pi) -> np.ndarray:
    """``P^pi`` as an ``(SA, SA)`` row-stochastic matrix."""
    return state_action_operator(mdp, check_policy(mdp, pi))


def expected_next_value(mdp: Mdp, pi: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``(P^pi Q)(x, a)`` without materialising the matrix."""
    return mdp.transitions @ (pi * q).sum(axis=1)


def bellman_operator(mdp: Mdp, pi, q) -> np.ndarray:
    pi = check_policy(mdp, pi)
    q = check_q(mdp, q)
    return mdp.rewards + mdp.gamma * expected_next_value(mdp, pi, q)


def bellman_optimality_operator(mdp: Mdp, q) -> np.ndarray:
    q = check_q(mdp, q)
    return mdp.rewards + mdp.gamma * (mdp.transitions @ q.max(axis=1))


def solve_pairs(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense solve with a conditioning guard.

    ``rhs`` may be a flattened Q-table or a matrix of right-hand sides.
    """
    try:
        x = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"singular system (condition number {np.linalg.cond(matrix):.3e})"
        ) from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite solution (condition number {np.linalg.cond(matrix):.3e})")
    return x


def exact_q_pi(mdp: Mdp, pi) -> np.ndarray:
    """``Q^pi = (I - gamma P^pi)^{-1} r`` by direct factorisation."""
    P_pi = transition_operator(mdp, pi)
    n = mdp.n_pairs
    q = solve_pairs(np.eye(n) - mdp.gamma * P_pi, mdp.rewards.reshape(n))
    return q.reshape(mdp.n_states, mdp.n_actions)


def exact_q_star(mdp: Mdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Value iteration on the optimality operator.

    Stops once successive iterates differ by at most ``tol*(1-gamma)/(2*gamma)``
    in sup-norm, which bounds the distance to ``Q*`` by ``tol``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    gamma = mdp.gamma
    if gamma == 0.0:
        return np.array(mdp.rewards)
    threshold = tol * (1.0 - gamma) / (2.0 * gamma)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    P, r = mdp.transitions, mdp.rewards
    for _ in range(max_iter):
        q_next = r + gamma * (P @ q.max(axis=1))
        if np.max(np.abs(q_next - q)) <= threshold:
            return q_next
        q = q_next
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} iterations")


def lambda_return_operator(mdp: Mdp, pi, q, lam: float) -> np.ndarray:
    """``T^pi_lambda Q = Q + (I - lambda gamma P^pi)^{-1} (T^pi Q - Q)``."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    pi = check_policy(mdp, pi)
    q = check_q(mdp, q)
    n = mdp.n_pairs
    residual = (bellman_operator(mdp, pi, q) - q).reshape(n)
    step = solve_pairs(np.eye(n) - lam * mdp.gamma * transition_operator(mdp, pi), residual)
    return q + step.reshape(q.shape)


def sup_norm(v) -> float:
    """Elementwise sup-norm of a Q-table or vector."""
    v = np.asarray(v)
    return float(np.max(np.abs(v))) if v.size else 0.0


def operator_norm(m: np.ndarray) -> float:
    """Norm induced by the sup vector norm: maximum absolute row sum."""
    return float(np.max(np.abs(m).sum(axis=1)))


# --- text format -----------------------------------------------------------


def _index(token: str, bound: int) -> int:
    i = int(token)
    if not 0 <= i < bound:
        raise StructuralError(f"index {i} out of range [0, {bound})")
    return i


def parse_mdp(text: str) -> Mdp:
    """Parse the line-oriented MDP format.

    ::

        mdp <n_states> <n_actions> <gamma>
        r <x> <a> <value>          # unspecified rewards are 0
        p <x> <a> <x'> <prob>      # every (x, a) row must be given
        absorbing <x>

    ``#`` starts a comment.
    """
    header = None
    rewards = transitions = None
    seen_r, seen_p = set(), set()
    absorbing = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "mdp":
                if header is not None or len(tok) != 4:
                    raise StructuralError("expected a single 'mdp <n_states> <n_actions> <gamma>'")
                S, A, gamma = int(tok[1]), int(tok[2]), float(tok[3])
                if S < 1 or A < 1:
                    raise StructuralError("n_states and n_actions must be positive")
                header = (S, A, gamma)
                rewards = np.zeros((S, A))
                transitions = np.zeros((S, A, S))
                continue
            if header is None:
                raise StructuralError("'mdp' header must come first")
            S, A = header[0], header[1]
            if tok[0] == "r" and len(tok) == 4:
                x, a, v = _index(tok[1], S), _index(tok[2], A), float(tok[3])
                if (x, a) in seen_r:
                    raise StructuralError(f"duplicate reward for ({x}, {a})")
                seen_r.add((x, a))
                rewards[x, a] = v
            elif tok[0] == "p" and len(tok) == 5:
                x, a, y, v = _index(tok[1], S), _index(tok[2], A), _index(tok[3], S), float(tok[4])
                if (x, a, y) in seen_p:
                    raise StructuralError(f"duplicate transition ({x}, {a}, {y})")
                seen_p.add((x, a, y))
                transitions[x, a, y] = v
            elif tok[0] == "absorbing" and len(tok) == 2:
                absorbing.add(_index(tok[1], S))
            else:
                raise StructuralError(f"unrecognised line {raw.strip()!r}")
        except (IndexError, ValueError) as exc:
            raise StructuralError(f"line {lineno}: {exc}") from None
    if header is None:
        raise StructuralError("missing 'mdp' header")
    S, A, gamma = header
    given = {(x, a) for x, a, _ in seen_p}
    for x in range(S):
        for a in range(A):
            if (x, a) not in given:
                raise StructuralError(f"no transitions given for ({x}, {a})")
    return Mdp(transitions, rewards, gamma, frozenset(absorbing))


def load_mdp(path) -> Mdp:
    with open(path, encoding="utf-8") as fh:
        return parse_mdp(fh.read())


def format_mdp(mdp: Mdp) -> str:
    """Serialise to the text format; floats use ``repr`` so parsing round-trips."""
    lines = [f"mdp {mdp.n_states} {mdp.n_actions} {mdp.gamma!r}"]
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions):
            v = float(mdp.rewards[x, a])
            if v != 0.0:
                lines.append(f"r {x} {a} {v!r}")
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for y in range(mdp.n_states):
                p = float(mdp.transitions[x, a, y])
                if p != 0.0:
                    lines.append(f"p {x} {a} {y} {p!r}")
    for x in sorted(mdp.absorbing):
        lines.append(f"absorbing {x}")
    return "\n".join(lines) + "\n"
