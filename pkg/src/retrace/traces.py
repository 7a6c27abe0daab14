"""Trace coefficients and the expected return-based operator built from them.

For a Markov trace ``c(a, x)`` the operator is

    R Q = Q + (I - gamma P^{c mu})^{-1} (T^pi Q - Q),

where ``P^{c mu}`` weights the next pair ``(x', a')`` by ``mu(a'|x') c(a', x')``.
The capped history-dependent trace has no such matrix form and is evaluated
by exact enumeration over trajectory prefixes instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ResourceError
from .mdp import (
    Mdp,
    bellman_operator,
    check_policy,
    check_q,
    solve_pairs,
    state_action_operator,
    transition_operator,
)


class TraceFamily(str, Enum):
    IMPORTANCE_SAMPLING = "importance_sampling"
    QPI_LAMBDA = "qpi_lambda"
    TREE_BACKUP = "tree_backup"
    RETRACE = "retrace"
    CAPPED_NON_MARKOV = "capped_non_markov"


_ALIASES = {
    "is": TraceFamily.IMPORTANCE_SAMPLING,
    "importance_sampling": TraceFamily.IMPORTANCE_SAMPLING,
    "qpi": TraceFamily.QPI_LAMBDA,
    "qpi_lambda": TraceFamily.QPI_LAMBDA,
    "tb": TraceFamily.TREE_BACKUP,
    "tree_backup": TraceFamily.TREE_BACKUP,
    "retrace": TraceFamily.RETRACE,
    "capped": TraceFamily.CAPPED_NON_MARKOV,
    "capped_non_markov": TraceFamily.CAPPED_NON_MARKOV,
}


@dataclass(frozen=True)
class TraceSpec:
    family: TraceFamily
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", TraceFamily(self.family))
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")

    @classmethod
    def parse(cls, name: str, lam: float = 1.0) -> "TraceSpec":
        try:
            family = _ALIASES[name.strip().lower()]
        except KeyError:
            raise DomainError(f"unknown trace family {name!r}") from None
        return cls(family, lam)

    @property
    def markovian(self) -> bool:
        return self.family is not TraceFamily.CAPPED_NON_MARKOV

    @property
    def label(self) -> str:
        return self.family.value

    def require_markovian(self):
        if not self.markovian:
            raise DomainError(
                "the capped history-dependent trace has no matrix form; "
                "use the enumeration routines"
            )


def trace_coefficient(spec: TraceSpec, pi_prob: float, mu_prob: float, running_product: float = 1.0) -> float:
    """Trace ``c_s`` for an action with target/behaviour probabilities given.

    ``running_product`` is ``c_1 ... c_{s-1}`` and only matters for the
    capped history-dependent family.
    """
    if mu_prob <= 0.0:
        raise DomainError("behaviour probability of a taken action must be positive")
    fam, lam = spec.family, spec.lam
    if fam is TraceFamily.IMPORTANCE_SAMPLING:
        return pi_prob / mu_prob
    if fam is TraceFamily.QPI_LAMBDA:
        return lam
    if fam is TraceFamily.TREE_BACKUP:
        return lam * pi_prob
    if fam is TraceFamily.RETRACE:
        return lam * min(1.0, pi_prob / mu_prob)
    if running_product < 0.0:
        raise DomainError("running trace product must be non-negative")
    cap = math.inf if running_product == 0.0 else 1.0 / running_product
    return lam * min(cap, pi_prob / mu_prob)


def behaviour_weighted_trace(spec: TraceSpec, pi: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Table of ``mu(a|x) c(a, x)``, written so that ``mu = 0`` never divides."""
    spec.require_markovian()
    fam, lam = spec.family, spec.lam
    if fam is TraceFamily.IMPORTANCE_SAMPLING:
        bad = np.argwhere((pi > 0.0) & (mu <= 0.0))
        if bad.size:
            x, a = bad[0]
            raise DomainError(
                f"importance sampling needs mu > 0 wherever pi > 0; violated at ({x}, {a})"
            )
        return pi.copy()
    if fam is TraceFamily.QPI_LAMBDA:
        return lam * mu
    if fam is TraceFamily.TREE_BACKUP:
        return lam * pi * mu
    return lam * np.minimum(pi, mu)


def trace_matrix(mdp: Mdp, spec: TraceSpec, pi, mu) -> np.ndarray:
    """``P^{c mu}`` as an ``(SA, SA)`` sub-stochastic matrix (Retrace gives lambda P^{pi^mu})."""
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    return state_action_operator(mdp, behaviour_weighted_trace(spec, pi, mu))


def pi_and_mu_matrix(mdp: Mdp, pi, mu) -> np.ndarray:
    """``P^{pi ^ mu}``: next pairs weighted by ``min(pi, mu)``."""
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    return state_action_operator(mdp, np.minimum(pi, mu))


def respects_ratio_bound(spec: TraceSpec, pi, mu, atol: float = 1e-12) -> bool:
    """True when ``0 <= c <= pi/mu`` on every action ``mu`` can take."""
    weighted = behaviour_weighted_trace(spec, np.asarray(pi, float), np.asarray(mu, float))
    return bool(np.all(weighted <= np.asarray(pi) + atol))


def apply_expected_operator(mdp: Mdp, spec: TraceSpec, pi, mu, q) -> np.ndarray:
    """Exact ``R Q`` for a Markov trace, via one dense solve."""
    pi = check_policy(mdp, pi)
    q = check_q(mdp, q)
    n = mdp.n_pairs
    Pc = trace_matrix(mdp, spec, pi, mu)
    residual = (bellman_operator(mdp, pi, q) - q).reshape(n)
    return q + solve_pairs(np.eye(n) - mdp.gamma * Pc, residual).reshape(q.shape)


def default_horizon(gamma: float) -> int:
    """Smallest H with ``gamma**H <= 1e-8``, capped at 40."""
    if gamma <= 0.0:
        return 1
    return max(1, min(40, math.ceil(math.log(1e-8) / math.log(gamma))))


class TruncatedValue(NamedTuple):
    q: np.ndarray
    tail_bound: float


ENUMERATION_BUDGET = 10_000_000


def _capped_discounted_sums(mdp, spec, pi, mu, f, horizon, budget):
    """``sum_{t<H} gamma^t E_mu[c_1...c_t f(x_t, a_t)]`` from every start pair.

    Prefixes are merged on ``(x, a, c_1...c_t)``: the capped trace depends on
    history only through the running product, so merging is exact.
    """
    S, A = mdp.n_states, mdp.n_actions
    gamma = mdp.gamma
    P = mdp.transitions
    out = np.zeros((S, A))
    expanded = 0
    succ = [
        [[(y, float(P[x, a, y])) for y in range(S) if P[x, a, y] > 0.0] for a in range(A)]
        for x in range(S)
    ]
    moves = [[(b, float(mu[y, b]), float(pi[y, b])) for b in range(A) if mu[y, b] > 0.0] for y in range(S)]
    for x0 in range(S):
        for a0 in range(A):
            total = f[x0, a0]
            layer = {(x0, a0, 1.0): 1.0}
            disc = 1.0
            for _ in range(1, horizon):
                disc *= gamma
                nxt: dict = {}
                for (x, a, prod), w in layer.items():
                    for y, p in succ[x][a]:
                        for b, mb, pb in moves[y]:
                            c = trace_coefficient(spec, pb, mb, prod)
                            key = (y, b, prod * c)
                            nxt[key] = nxt.get(key, 0.0) + w * p * mb
                expanded += len(nxt)
                if expanded > budget:
                    raise ResourceError(
                        f"trajectory enumeration exceeded the budget of {budget} prefixes"
                    )
                layer = {k: w for k, w in nxt.items() if k[2] > 0.0 and w > 0.0}
                if not layer:
                    break
                total += disc * sum(w * prod * f[y, b] for (y, b, prod), w in layer.items())
            out[x0, a0] = total
    return out


def apply_expected_operator_nonmarkov(
    mdp: Mdp, spec: TraceSpec, pi, mu, q, horizon: int, budget: int = ENUMERATION_BUDGET
) -> TruncatedValue:
    """``R Q`` for the capped history-dependent trace, truncated after ``horizon`` terms.

    ``horizon=1`` keeps only the ``t = 0`` term and returns ``T^pi Q``. The
    reported tail bound is ``gamma^H / (1 - gamma) * ||T^pi Q - Q||``, valid
    because the capped running product never exceeds one.
    """
    if spec.family is not TraceFamily.CAPPED_NON_MARKOV:
        raise DomainError("enumeration path is reserved for the capped history-dependent trace")
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    q = check_q(mdp, q)
    residual = bellman_operator(mdp, pi, q) - q
    sums = _capped_discounted_sums(mdp, spec, pi, mu, residual, horizon, budget)
    tail = mdp.gamma**horizon / (1.0 - mdp.gamma) * float(np.max(np.abs(residual)))
    return TruncatedValue(q + sums, tail)


@dataclass(frozen=True)
class ContractionReport:
    eta: np.ndarray
    max_eta: float
    truncation_horizon: int
    truncation_bound: float


def contraction_diagnostics(mdp: Mdp, spec: TraceSpec, pi, mu, horizon: int | None = None) -> ContractionReport:
    """Per-pair contraction coefficients ``eta = 1 - (1-gamma) E_mu[sum gamma^t c_1..c_t]``.

    Closed form for Markov traces (``horizon`` ignored); truncated enumeration
    for the capped trace, whose ``eta`` is then accurate to ``gamma^H``.
    """
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    S, A = mdp.n_states, mdp.n_actions
    g = mdp.gamma
    if spec.markovian:
        n = mdp.n_pairs
        C = solve_pairs(np.eye(n) - g * trace_matrix(mdp, spec, pi, mu), np.ones(n)).reshape(S, A)
        H, bound = 0, 0.0
    else:
        H = default_horizon(g) if horizon is None else horizon
        C = _capped_discounted_sums(mdp, spec, pi, mu, np.ones((S, A)), H, ENUMERATION_BUDGET)
        bound = g**H
    eta = 1.0 - (1.0 - g) * C
    return ContractionReport(eta, float(eta.max()), H, bound)


def control_matrix_A(mdp: Mdp, spec: TraceSpec, pi, mu) -> np.ndarray:
    """``A = gamma (I - gamma P^{c mu})^{-1} (P^pi - P^{c mu})``.

    ``R Q - Q^pi = A (Q - Q^pi)`` for every Markov trace, so this is also the
    linear part of the expected iteration.
    """
    Pc = trace_matrix(mdp, spec, pi, mu)
    P_pi = transition_operator(mdp, pi)
    n = mdp.n_pairs
    return mdp.gamma * solve_pairs(np.eye(n) - mdp.gamma * Pc, P_pi - Pc)
