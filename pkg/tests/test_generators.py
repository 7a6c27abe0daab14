import hashlib
import math

import numpy as np
import pytest

from retrace.errors import DomainError
from retrace.generators import FORWARD, STAY, GarnetParams, generate_chain, generate_garnet
from retrace.mdp import exact_q_star, format_mdp
from retrace.rng import SplitMix64


def garnet_by_documented_draw_order(n, A, b, term, sparsity, seed):
    """Re-derivation of the Garnet recipe straight from the SplitMix64 stream."""
    rng = SplitMix64(seed)
    P = np.zeros((n + 1, A, n + 1))
    r = np.zeros((n + 1, A))
    for x in range(n):
        for a in range(A):
            pool = list(range(n))
            for i in range(b):
                j = i + min(int(rng.random() * (n - i)), n - i - 1)
                pool[i], pool[j] = pool[j], pool[i]
            succ = sorted(pool[:b])
            w = [-math.log(1.0 - rng.random()) for _ in succ]
            for y, wy in zip(succ, w):
                P[x, a, y] += (1 - term) * wy / sum(w)
            P[x, a, n] += term
            zero = rng.random() < sparsity
            value = -1.0 + 2.0 * rng.random()
            r[x, a] = 0.0 if zero else value
    P[n, :, n] = 1.0
    return P, r


class TestGarnet:
    def test_single_step_horizon(self):
        m = generate_garnet(GarnetParams(4, 3, 1, 1.0, seed=9))
        assert np.allclose(exact_q_star(m), m.rewards, atol=1e-12)

    def test_deterministic_serialisation(self):
        p = GarnetParams(6, 3, 2, 0.1, seed=17)
        assert format_mdp(generate_garnet(p)) == format_mdp(generate_garnet(p))
        assert format_mdp(generate_garnet(p)) != format_mdp(generate_garnet(GarnetParams(6, 3, 2, 0.1, seed=18)))

    def test_golden_instance(self):
        text = format_mdp(generate_garnet(GarnetParams(3, 2, 2, 0.1, seed=42)))
        assert hashlib.sha256(text.encode()).hexdigest() == (
            "6dbf2088605198db48ad69cf1254b3e5928a5d389a47ebdbeab16085e8ea05df"
        )

    @pytest.mark.parametrize("seed", [0, 1, 42])
    def test_matches_documented_recipe(self, seed):
        m = generate_garnet(GarnetParams(5, 3, 3, 0.2, reward_sparsity=0.4, seed=seed))
        P, r = garnet_by_documented_draw_order(5, 3, 3, 0.2, 0.4, seed)
        assert np.allclose(m.transitions, P, atol=1e-15, rtol=0)
        assert np.array_equal(m.rewards, r)

    def test_invariants_over_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(1, 8))
            b = int(rng.integers(1, n + 1))
            term = float(rng.uniform(0.01, 1.0))
            m = generate_garnet(GarnetParams(n, 2, b, term, seed=seed))
            assert m.absorbing == frozenset({n})
            P = m.transitions
            assert np.allclose(P.sum(axis=2), 1.0, atol=1e-12)
            assert np.allclose(P[:n, :, n], term, atol=1e-12)
            live_succ = (P[:n, :, :n] > 0.0).sum(axis=2)
            assert np.all(live_succ <= b)
            if term < 1.0:
                assert np.all(live_succ >= 1)
            assert np.all(np.abs(m.rewards) <= 1.0)

    def test_sparsity_extremes(self):
        assert not generate_garnet(GarnetParams(5, 2, 2, 0.1, reward_sparsity=1.0)).rewards.any()
        dense = generate_garnet(GarnetParams(5, 2, 2, 0.1, reward_sparsity=0.0)).rewards
        assert np.all(dense[:5] != 0.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_states=3, n_actions=2, branching=4, termination=0.1),
            dict(n_states=3, n_actions=2, branching=0, termination=0.1),
            dict(n_states=3, n_actions=2, branching=1, termination=0.0),
            dict(n_states=0, n_actions=2, branching=1, termination=0.5),
            dict(n_states=3, n_actions=2, branching=1, termination=0.5, reward_sparsity=1.5),
        ],
    )
    def test_bad_params(self, kwargs):
        with pytest.raises(DomainError):
            GarnetParams(**kwargs)


class TestChain:
    def test_two_states(self):
        q = exact_q_star(generate_chain(2, 0.9))
        assert q[0, FORWARD] == pytest.approx(1.0, abs=1e-9)

    def test_five_states(self):
        q = exact_q_star(generate_chain(5, 0.9))
        assert q[0, FORWARD] == pytest.approx(0.9**3, abs=1e-9)
        assert q[3, FORWARD] == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("n", [2, 3, 6])
    def test_stay_is_discounted_forward(self, n):
        m = generate_chain(n, 0.8)
        q = exact_q_star(m)
        for x in m.live_states:
            assert q[x, STAY] == pytest.approx(0.8 * q[x, FORWARD], abs=1e-9)

    def test_too_short(self):
        with pytest.raises(DomainError):
            generate_chain(1, 0.9)
