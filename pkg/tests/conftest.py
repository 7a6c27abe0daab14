import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from retrace.generators import GarnetParams, generate_garnet
from retrace.mdp import Mdp

sys.path.insert(0, str(Path(__file__).parent))

GAMMAS = (0.5, 0.9, 0.99)


def random_policy(rng, n_states, n_actions, full_support=True):
    p = rng.dirichlet(np.ones(n_actions), size=n_states)
    if not full_support:
        p[rng.random((n_states, n_actions)) < 0.3] = 0.0
        empty = p.sum(axis=1) == 0.0
        p[empty, 0] = 1.0
        p /= p.sum(axis=1, keepdims=True)
    return p


def make_battery(n=20, seed=2024):
    """``n`` random instances ``(mdp, pi, mu)`` with at most 10 states, gamma cycling over GAMMAS.

    ``mu`` has full support so every trace family is well defined.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        live = int(rng.integers(1, 10))
        params = GarnetParams(
            n_states=live,
            n_actions=int(rng.integers(2, 5)),
            branching=int(rng.integers(1, live + 1)),
            termination=float(rng.uniform(0.05, 0.5)),
            reward_sparsity=0.3,
            seed=1000 + i,
            gamma=GAMMAS[i % len(GAMMAS)],
        )
        mdp = generate_garnet(params)
        pi = random_policy(rng, mdp.n_states, mdp.n_actions, full_support=bool(i % 2))
        mu = random_policy(rng, mdp.n_states, mdp.n_actions)
        out.append((mdp, pi, mu))
    return out


@pytest.fixture(scope="session")
def battery():
    return make_battery()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def small_mdps(draw, max_states=4, max_actions=3, absorbing=True):
    """Random dense MDP; the last state is absorbing when ``absorbing`` is set."""
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    seed = draw(st.integers(0, 2**32 - 1))
    gamma = draw(st.sampled_from([0.0, 0.3, 0.5, 0.9, 0.95]))
    rng = np.random.default_rng(seed)
    n = S + 1 if absorbing else S
    P = rng.dirichlet(np.ones(n), size=(n, A))
    # sparsify some rows so zero-probability branches are exercised
    P[rng.random(P.shape) < 0.3] = 0.0
    P[:, :, 0] += (P.sum(axis=2) == 0.0)
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-1, 1, size=(n, A))
    absorbing_set = frozenset()
    if absorbing:
        P[S] = 0.0
        P[S, :, S] = 1.0
        r[S] = 0.0
        absorbing_set = frozenset({S})
    return Mdp(P, r, gamma, absorbing_set)


@st.composite
def mdp_with_policies(draw, **kw):
    mdp = draw(small_mdps(**kw))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pi = random_policy(rng, mdp.n_states, mdp.n_actions, full_support=draw(st.booleans()))
    mu = random_policy(rng, mdp.n_states, mdp.n_actions)
    q = rng.uniform(-5, 5, size=(mdp.n_states, mdp.n_actions))
    q[list(mdp.absorbing)] = 0.0
    return mdp, pi, mu, q


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
