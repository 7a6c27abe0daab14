"""Diagnostics that check the operator theory numerically.

Matrix norms here are the operator norm induced by the sup vector norm, i.e.
the maximum absolute row sum.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StructuralError
from .mdp import (
    Mdp,
    bellman_operator,
    bellman_optimality_operator,
    check_policy,
    exact_q_pi,
    operator_norm,
    sup_norm,
    transition_operator,
)
from .rng import SplitMix64, categorical_array, derive_seed
from .traces import (
    TraceFamily,
    TraceSpec,
    apply_expected_operator,
    behaviour_weighted_trace,
    control_matrix_A,
    pi_and_mu_matrix,
    respects_ratio_bound,
    trace_coefficient,
)


def offpolicyness(pi, mu) -> float:
    """``max_x ||pi(.|x) - mu(.|x)||_1``."""
    pi = np.asarray(pi, float)
    mu = np.asarray(mu, float)
    if pi.shape != mu.shape:
        raise StructuralError(f"policy shapes differ: {pi.shape} vs {mu.shape}")
    return float(np.abs(pi - mu).sum(axis=1).max())


def greediness_gap(mdp: Mdp, pi, q) -> float:
    """Smallest ``eps`` with ``T^pi Q >= T Q - eps ||Q|| e``; zero when ``Q`` is zero.

    A value-scaled distance to greedy, unlike the policy-space
    :func:`offpolicyness`.
    """
    scale = sup_norm(q)
    if scale == 0.0:
        return 0.0
    gap = bellman_optimality_operator(mdp, q) - bellman_operator(mdp, pi, q)
    return max(float(gap.max()), 0.0) / scale


def qpi_lambda_safety(pi, mu, gamma: float) -> float:
    """Largest lambda for which Q^pi(lambda) is known to contract: ``(1-gamma)/(gamma eps)``."""
    if not 0.0 < gamma < 1.0:
        raise DomainError("gamma must lie in (0, 1)")
    eps = offpolicyness(pi, mu)
    if eps == 0.0:
        return math.inf
    return (1.0 - gamma) / (gamma * eps)


def verify_contraction(mdp: Mdp, spec: TraceSpec, pi, mu, n_samples: int, seed: int) -> float:
    """Worst observed ``||RQ - Q^pi|| / ||Q - Q^pi||`` over random ``Q`` in [-10, 10].

    Draws closer than 1e-8 to ``Q^pi`` are rejected and redrawn.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    spec.require_markovian()
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    if not respects_ratio_bound(spec, pi, mu):
        raise DomainError(
            f"{spec.label}({spec.lam}) violates 0 <= c <= pi/mu here; "
            "use spectral_radius_qpi for this regime"
        )
    q_pi = exact_q_pi(mdp, pi)
    rng = SplitMix64(seed)
    shape = q_pi.shape
    worst = 0.0
    done = 0
    while done < n_samples:
        q = rng.random_array(q_pi.size).reshape(shape) * 20.0 - 10.0
        denom = sup_norm(q - q_pi)
        if denom < 1e-8:
            continue
        ratio = sup_norm(apply_expected_operator(mdp, spec, pi, mu, q) - q_pi) / denom
        worst = max(worst, ratio)
        done += 1
    return worst


def qpi_iteration_matrix(mdp: Mdp, lam: float, pi, mu) -> np.ndarray:
    """Linear part ``gamma (I - lambda gamma P^mu)^{-1} (P^pi - lambda P^mu)`` of expected Q^pi(lambda)."""
    return control_matrix_A(mdp, TraceSpec(TraceFamily.QPI_LAMBDA, lam), pi, mu)


def spectral_radius(m: np.ndarray, tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Spectral radius by power iteration, with a dense-eigenvalue fallback.

    The power estimate is ``||M v_k|| / ||v_k||`` in the sup norm. When it
    fails to settle (complex or sign-alternating dominant eigenvalues) and the
    matrix is at most 64x64, the eigenvalue moduli are computed directly.
    """
    m = np.asarray(m, float)
    n = m.shape[0]
    if not np.any(m):
        return 0.0
    # fixed pseudo-random positive start: overlaps any Perron vector, rarely orthogonal otherwise
    v = SplitMix64(n).random_array(n) + 0.5
    est = prev = None
    converged = False
    for _ in range(max_iter):
        w = m @ v
        norm = np.abs(w).max()
        if norm == 0.0:
            return 0.0
        est = float(norm)
        v = w / norm
        if prev is not None and abs(est - prev) <= tol * max(1.0, est):
            converged = True
            break
        prev = est
    if converged:
        return est
    if n <= 64:
        return float(np.abs(np.linalg.eigvals(m)).max())
    warnings.warn(f"power iteration did not converge; best estimate {est:.6g}", RuntimeWarning)
    return est


def spectral_radius_qpi(mdp: Mdp, lam: float, pi, mu) -> float:
    """Spectral radius of the expected Q^pi(lambda) iteration; above 1 means it diverges."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError("lambda must lie in [0, 1]")
    return spectral_radius(qpi_iteration_matrix(mdp, lam, pi, mu))


def commutation_defect(mdp: Mdp, pi, mu) -> float:
    """``||P^pi P^{pi^mu} - P^{pi^mu} P^pi||`` (max absolute row sum)."""
    P_pi = transition_operator(mdp, pi)
    P_min = pi_and_mu_matrix(mdp, pi, mu)
    return operator_norm(P_pi @ P_min - P_min @ P_pi)


@dataclass(frozen=True)
class VarianceEstimate:
    mean: float
    variance: float
    stderr_mean: float
    stderr_variance: float
    n_samples: int
    iid_lower_bound: float | None
    per_step_variance: float | None


def per_state_trace_variance(mdp: Mdp, spec: TraceSpec, pi, mu) -> np.ndarray:
    """``V(c | x)`` under ``a ~ mu(.|x)`` for each state, by direct enumeration."""
    spec.require_markovian()
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    out = np.zeros(mdp.n_states)
    for x in range(mdp.n_states):
        acts = [a for a in range(mdp.n_actions) if mu[x, a] > 0.0]
        cs = np.array([trace_coefficient(spec, pi[x, a], mu[x, a]) for a in acts])
        w = mu[x, acts]
        m = float(w @ cs)
        out[x] = float(w @ (cs - m) ** 2)
    return out


SAMPLE_BLOCK = 1024


def trace_product_variance(
    mdp: Mdp, spec: TraceSpec, pi, mu, n_samples: int, horizon: int, seed: int
) -> VarianceEstimate:
    """Monte-Carlo mean and variance of ``sum_{t<=H} gamma^t c_1...c_t`` under ``mu``.

    Samples run in blocks of 1024 whose streams are seeded with
    ``derive_seed(seed, block)``; per step each block draws all action
    uniforms, then all next-state uniforms. Paths that enter an absorbing
    state stop accumulating. The i.i.d. lower bound
    ``sum_{t=1}^H gamma^{2t} V(c)^t`` is reported when all non-absorbing
    states share one per-step variance.
    """
    if n_samples < 2:
        raise DomainError("n_samples must be at least 2")
    spec.require_markovian()
    pi = check_policy(mdp, pi)
    mu = check_policy(mdp, mu)
    gamma = mdp.gamma
    safe_mu = np.where(mu > 0.0, mu, 1.0)
    ctab = np.where(mu > 0.0, behaviour_weighted_trace(spec, pi, mu) / safe_mu, 0.0)
    live = np.array(mdp.live_states)
    absorbing = mdp.absorbing_mask()
    P = mdp.transitions
    totals = np.empty(n_samples)
    for block, lo in enumerate(range(0, n_samples, SAMPLE_BLOCK)):
        n = min(SAMPLE_BLOCK, n_samples - lo)
        rng = SplitMix64(derive_seed(seed, block))
        x = live[np.minimum((rng.random_array(n) * len(live)).astype(int), len(live) - 1)]
        a = categorical_array(mu[x], rng.random_array(n))
        total = np.ones(n)
        prod = np.ones(n)
        alive = ~absorbing[x]
        disc = 1.0
        for _ in range(horizon):
            x = categorical_array(P[x, a], rng.random_array(n))
            a = categorical_array(mu[x], rng.random_array(n))
            alive &= ~absorbing[x]
            disc *= gamma
            prod = prod * ctab[x, a]
            total += np.where(alive, disc * prod, 0.0)
        totals[lo : lo + n] = total
    mean = float(totals.mean())
    var = float(totals.var(ddof=1))
    # standard error of the sample variance from the fourth central moment
    m4 = float(np.mean((totals - mean) ** 4))
    se_var = math.sqrt(max(m4 - var * var * (n_samples - 3) / (n_samples - 1), 0.0) / n_samples)
    per_state = per_state_trace_variance(mdp, spec, pi, mu)[mdp.live_states]
    v = None
    bound = None
    if per_state.size and np.ptp(per_state) <= 1e-12:
        v = float(per_state[0])
        bound = float(sum((gamma * gamma * v) ** t for t in range(1, horizon + 1)))
    return VarianceEstimate(mean, var, math.sqrt(var / n_samples), se_var, n_samples, bound, v)


# --- inter-algorithm scores ---------------------------------------------------


@dataclass(frozen=True)
class ScoreTable:
    games: list
    algorithms: list
    raw_scores: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw_scores, float)
        if raw.shape != (len(self.games), len(self.algorithms)):
            raise StructuralError("raw_scores must be games x algorithms")
        if len(self.algorithms) < 2:
            raise DomainError("score normalisation needs at least two algorithms")
        object.__setattr__(self, "raw_scores", raw)


@dataclass(frozen=True)
class ScoreDistribution:
    z: np.ndarray
    grid: np.ndarray
    f: np.ndarray
    degenerate_games: list


SCORE_GRID = np.round(np.arange(101) * 0.01, 2)


def inter_algorithm_scores(table: ScoreTable, grid=SCORE_GRID) -> ScoreDistribution:
    """Per-game min-max scores ``z`` and ``f_a(x) = |{g : z_ga >= x}| / n_games``.

    Games where every algorithm scored the same get ``z = 1`` for all and are
    listed in ``degenerate_games``.
    """
    raw = table.raw_scores
    lo = raw.min(axis=1, keepdims=True)
    spread = raw.max(axis=1, keepdims=True) - lo
    flat = spread[:, 0] == 0.0
    z = np.where(flat[:, None], 1.0, (raw - lo) / np.where(flat[:, None], 1.0, spread))
    grid = np.asarray(grid, float)
    f = (z[:, :, None] >= grid[None, None, :]).sum(axis=0) / len(table.games)
    degenerate = [g for g, d in zip(table.games, flat) if d]
    return ScoreDistribution(z, grid, f, degenerate)


def read_score_csv(path) -> ScoreTable:
    """Load a ``game,algorithm,score`` CSV; first-appearance order is kept."""
    games, algos, values = [], [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ["game", "algorithm", "score"]:
            raise StructuralError("score CSV header must be 'game,algorithm,score'")
        for row in reader:
            g, a = row["game"], row["algorithm"]
            if g not in games:
                games.append(g)
            if a not in algos:
                algos.append(a)
            if (g, a) in values:
                raise StructuralError(f"duplicate score for ({g}, {a})")
            values[(g, a)] = float(row["score"])
    raw = np.empty((len(games), len(algos)))
    for i, g in enumerate(games):
        for j, a in enumerate(algos):
            if (g, a) not in values:
                raise StructuralError(f"missing score for ({g}, {a})")
            raw[i, j] = values[(g, a)]
    return ScoreTable(games, algos, raw)


def write_distribution_csv(path, table: ScoreTable, dist: ScoreDistribution):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "x", "f"])
        for j, algo in enumerate(table.algorithms):
            for i, x in enumerate(dist.grid):
                w.writerow([algo, f"{x:.2f}", repr(float(dist.f[j, i]))])
