import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import commutation_adversary, qpi_divergence_instance
from retrace.analysis import (
    SCORE_GRID,
    ScoreTable,
    commutation_defect,
    greediness_gap,
    inter_algorithm_scores,
    offpolicyness,
    per_state_trace_variance,
    qpi_iteration_matrix,
    qpi_lambda_safety,
    read_score_csv,
    spectral_radius,
    spectral_radius_qpi,
    trace_product_variance,
    verify_contraction,
    write_distribution_csv,
)
from retrace.errors import DomainError, StructuralError
from retrace.generators import GarnetParams, generate_garnet
from retrace.mdp import Mdp, uniform_policy
from retrace.online import epsilon_greedy, mixture_behavior
from retrace.rng import SplitMix64, derive_seed
from retrace.traces import TraceSpec, contraction_diagnostics, trace_coefficient


def single_state():
    return Mdp(np.ones((1, 2, 1)), np.zeros((1, 2)), 0.9)


PI_SINGLE = np.array([[0.9, 0.1]])
MU_SINGLE = np.array([[0.5, 0.5]])


class TestOffPolicyness:
    def test_examples(self):
        assert offpolicyness(MU_SINGLE, MU_SINGLE) == 0.0
        assert offpolicyness([[1.0, 0.0]], [[0.0, 1.0]]) == 2.0
        assert offpolicyness(PI_SINGLE, MU_SINGLE) == pytest.approx(0.8)
        with pytest.raises(StructuralError):
            offpolicyness(PI_SINGLE, np.ones((2, 2)) / 2)

    def test_safety_threshold(self):
        assert qpi_lambda_safety(MU_SINGLE, MU_SINGLE, 0.9) == math.inf
        assert qpi_lambda_safety([[1.0, 0.0]], [[0.0, 1.0]], 0.9) == pytest.approx(0.1 / 1.8)
        assert qpi_lambda_safety([[1.0, 0.0]], [[0.0, 1.0]], 0.9) == pytest.approx((1 - 0.9) / (2 * 0.9))
        with pytest.raises(DomainError):
            qpi_lambda_safety(MU_SINGLE, MU_SINGLE, 0.0)


class TestGreedinessGap:
    def test_bandit_example(self):
        bandit = Mdp(np.ones((1, 2, 1)), np.zeros((1, 2)), 0.5)
        q = np.array([[1.0, 0.0]])
        assert greediness_gap(bandit, [[0.5, 0.5]], q) == pytest.approx(0.25)
        assert greediness_gap(bandit, [[1.0, 0.0]], q) == 0.0
        assert greediness_gap(bandit, [[0.5, 0.5]], np.zeros((1, 2))) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def test_epsilon_greedy_bound(self, seed, eps):
        m = generate_garnet(GarnetParams(4, 3, 2, 0.1, seed=seed % 1000))
        q = np.random.default_rng(seed).normal(size=(5, 3))
        assert greediness_gap(m, epsilon_greedy(q, eps), q) <= 2 * m.gamma * eps + 1e-12


class TestContraction:
    def test_garnet_ratio_below_max_eta(self):
        m = generate_garnet(GarnetParams(5, 3, 2, 0.1, seed=3))
        rng = np.random.default_rng(3)
        pi = rng.dirichlet(np.ones(3), size=6)
        mu = uniform_policy(m)
        spec = TraceSpec.parse("retrace", 0.9)
        ratio = verify_contraction(m, spec, pi, mu, 200, seed=1)
        assert ratio <= contraction_diagnostics(m, spec, pi, mu).max_eta + 1e-9

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_tree_backup_any_policies(self, lam):
        m, pi, mu = qpi_divergence_instance()
        assert verify_contraction(m, TraceSpec.parse("tb", lam), pi, mu, 100, seed=2) <= m.gamma + 1e-9

    def test_rejects_invalid_spec(self):
        m, pi, mu = qpi_divergence_instance()
        with pytest.raises(DomainError):
            verify_contraction(m, TraceSpec.parse("qpi", 1.0), pi, mu, 10, seed=0)
        with pytest.raises(DomainError):
            verify_contraction(m, TraceSpec.parse("capped", 1.0), pi, mu, 10, seed=0)
        with pytest.raises(DomainError):
            verify_contraction(m, TraceSpec.parse("tb", 1.0), pi, mu, 0, seed=0)

    def test_deterministic_given_seed(self):
        m, pi, mu = qpi_divergence_instance()
        spec = TraceSpec.parse("retrace", 0.5)
        assert verify_contraction(m, spec, pi, mu, 20, 5) == verify_contraction(m, spec, pi, mu, 20, 5)


class TestSpectralRadius:
    def test_lambda_zero_gives_gamma(self):
        rng = np.random.default_rng(1)
        m = Mdp(rng.dirichlet(np.ones(4), size=(4, 2)), rng.random((4, 2)), 0.9)
        pi = rng.dirichlet(np.ones(2), size=4)
        mu = rng.dirichlet(np.ones(2), size=4)
        assert spectral_radius_qpi(m, 0.0, pi, mu) == pytest.approx(m.gamma, abs=1e-7)

    def test_on_policy_below_gamma(self):
        m = generate_garnet(GarnetParams(6, 2, 3, 0.1, seed=2))
        pi = uniform_policy(m)
        for lam in (0.0, 0.5, 1.0):
            assert spectral_radius_qpi(m, lam, pi, pi) <= m.gamma + 1e-8

    def test_single_state_on_policy_closed_form(self):
        """One state, pi = mu: the iteration matrix is rank one with eigenvalue gamma(1-lam)/(1-lam gamma)."""
        m = single_state()
        for lam in (0.0, 0.4, 1.0):
            expected = 0.9 * (1 - lam) / (1 - lam * 0.9)
            assert spectral_radius_qpi(m, lam, MU_SINGLE, MU_SINGLE) == pytest.approx(expected, abs=1e-9)

    def test_divergence_instance(self):
        m, pi, mu = qpi_divergence_instance()
        rho = spectral_radius_qpi(m, 1.0, pi, mu)
        eig = np.abs(np.linalg.eigvals(qpi_iteration_matrix(m, 1.0, pi, mu))).max()
        assert rho > 1.0
        assert rho == pytest.approx(eig, rel=1e-7)

    def test_rotation_needs_fallback(self):
        c, s = math.cos(0.3), math.sin(0.3)
        rot = 0.8 * np.array([[c, -s], [s, c]])
        assert spectral_radius(rot) == pytest.approx(0.8, abs=1e-12)

    def test_zero_and_nilpotent(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0
        assert spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])) == 0.0

    def test_large_non_convergent_warns(self):
        c, s = math.cos(1.0), math.sin(1.0)
        rot = np.kron(np.eye(33), np.array([[c, -s], [s, c]]))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            spectral_radius(rot, max_iter=50)
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_matches_dense_eigenvalues_for_nonnegative(self, seed, n):
        rng = np.random.default_rng(seed)
        m = rng.random((n, n))
        assert spectral_radius(m) == pytest.approx(np.abs(np.linalg.eigvals(m)).max(), rel=1e-6)

    def test_consistent_with_safety_threshold(self):
        for seed in range(20):
            m = generate_garnet(GarnetParams(5, 3, 2, 0.05, seed=seed, gamma=0.9))
            rng = np.random.default_rng(seed)
            pi = rng.dirichlet(np.ones(3), size=6)
            mu = rng.dirichlet(np.ones(3), size=6)
            lam = min(1.0, 0.999 * qpi_lambda_safety(pi, mu, m.gamma))
            assert spectral_radius_qpi(m, lam, pi, mu) <= 1.0 + 1e-8


class TestCommutation:
    def test_same_policy_commutes(self):
        m = generate_garnet(GarnetParams(5, 3, 3, 0.1, seed=0))
        pi = uniform_policy(m)
        assert commutation_defect(m, pi, pi) <= 1e-12

    def test_mixture_behaviour_vanishing_defect(self):
        m = generate_garnet(GarnetParams(5, 3, 3, 0.1, seed=4))
        rng = np.random.default_rng(0)
        base = rng.dirichlet(np.ones(3), size=6)
        q = rng.uniform(-1, 1, size=(6, 3))
        mu = mixture_behavior(q, base, 0.3)
        defects = [commutation_defect(m, epsilon_greedy(q, e), mu) for e in (1e-1, 1e-3, 1e-6)]
        assert defects[-1] < 1e-4
        assert defects[-1] < defects[0]

    def test_adversary(self):
        assert commutation_defect(*commutation_adversary()) > 0.1


class TestVariance:
    def test_per_step_closed_form(self):
        m = single_state()
        assert per_state_trace_variance(m, TraceSpec.parse("is"), PI_SINGLE, MU_SINGLE)[0] == pytest.approx(0.64)
        assert per_state_trace_variance(m, TraceSpec.parse("retrace", 1.0), PI_SINGLE, MU_SINGLE)[0] == pytest.approx(0.16)

    def test_deterministic_traces_have_no_variance(self):
        m = generate_garnet(GarnetParams(4, 2, 2, 0.0001, seed=3))
        pi = uniform_policy(m)
        est = trace_product_variance(m, TraceSpec.parse("retrace", 1.0), pi, pi, 500, 5, seed=0)
        # c = 1 everywhere, so only absorption can vary the sum; with termination 1e-4 over 5 steps it rarely does
        single = trace_product_variance(single_state(), TraceSpec.parse("retrace", 1.0), MU_SINGLE, MU_SINGLE, 500, 5, 0)
        assert single.variance == 0.0
        assert single.mean == pytest.approx(sum(0.9**t for t in range(6)))
        assert est.variance >= 0.0

    def test_iid_lower_bound(self):
        est = trace_product_variance(single_state(), TraceSpec.parse("retrace", 1.0), PI_SINGLE, MU_SINGLE, 1000, 10, 0)
        assert est.per_step_variance == pytest.approx(0.16)
        assert est.iid_lower_bound == pytest.approx(sum((0.81 * 0.16) ** t for t in range(1, 11)))

    def test_matches_scalar_reference_stream(self):
        """Block sampler vs a per-sample loop over the same documented draw order."""
        m = generate_garnet(GarnetParams(3, 2, 2, 0.2, seed=6))
        rng = np.random.default_rng(6)
        pi = rng.dirichlet(np.ones(2), size=4)
        mu = rng.dirichlet(np.ones(2), size=4)
        spec = TraceSpec.parse("retrace", 0.8)
        H, n, seed = 6, 1500, 77
        est = trace_product_variance(m, spec, pi, mu, n, H, seed)
        totals = []
        for block, lo in enumerate(range(0, n, 1024)):
            k = min(1024, n - lo)
            u = SplitMix64(derive_seed(seed, block)).random_array(k * (2 + 2 * H)).reshape(2 + 2 * H, k)
            live = m.live_states
            for i in range(k):
                x = live[min(int(u[0, i] * len(live)), len(live) - 1)]
                a = int(np.searchsorted(np.cumsum(mu[x]), u[1, i], side="right"))
                total, prod, alive = 1.0, 1.0, x not in m.absorbing
                for t in range(H):
                    x = int(np.searchsorted(np.cumsum(m.transitions[x, a]), u[2 + 2 * t, i], side="right"))
                    a = int(np.searchsorted(np.cumsum(mu[x]), u[3 + 2 * t, i], side="right"))
                    alive = alive and x not in m.absorbing
                    prod *= trace_coefficient(spec, pi[x, a], mu[x, a])
                    if alive:
                        total += m.gamma ** (t + 1) * prod
                totals.append(total)
        totals = np.array(totals)
        assert est.mean == pytest.approx(totals.mean(), rel=1e-12)
        assert est.variance == pytest.approx(totals.var(ddof=1), rel=1e-10)

    def test_retrace_not_above_importance_sampling(self):
        for seed in range(3):
            m = generate_garnet(GarnetParams(4, 2, 2, 0.1, seed=seed))
            rng = np.random.default_rng(seed)
            pi = rng.dirichlet(np.ones(2), size=5)
            mu = rng.dirichlet(np.ones(2) * 3, size=5)
            a = trace_product_variance(m, TraceSpec.parse("is"), pi, mu, 20_000, 20, seed)
            b = trace_product_variance(m, TraceSpec.parse("retrace", 1.0), pi, mu, 20_000, 20, seed)
            assert b.variance <= a.variance + 3 * math.hypot(a.stderr_variance, b.stderr_variance)

    def test_needs_two_samples(self):
        with pytest.raises(DomainError):
            trace_product_variance(single_state(), TraceSpec.parse("is"), PI_SINGLE, MU_SINGLE, 1, 5, 0)


class TestScores:
    def test_two_algorithm_example(self):
        d = inter_algorithm_scores(ScoreTable(["g"], ["A", "B"], [[10.0, 20.0]]))
        assert np.array_equal(d.z, [[0.0, 1.0]])
        i = int(np.flatnonzero(np.isclose(d.grid, 0.5))[0])
        assert d.f[0, i] == 0.0 and d.f[1, i] == 1.0

    def test_degenerate(self):
        d = inter_algorithm_scores(ScoreTable(["g1", "g2"], ["A", "B"], [[3.0, 3.0], [1.0, 1.0]]))
        assert np.all(d.z == 1.0) and np.all(d.f == 1.0)
        assert d.degenerate_games == ["g1", "g2"]

    def test_needs_two_algorithms(self):
        with pytest.raises(DomainError):
            ScoreTable(["g"], ["A"], [[1.0]])
        with pytest.raises(StructuralError):
            ScoreTable(["g"], ["A", "B"], [[1.0, 2.0, 3.0]])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(2, 5))
    def test_random_tables(self, seed, games, algos):
        rng = np.random.default_rng(seed)
        raw = np.round(rng.normal(size=(games, algos)), 1)
        d = inter_algorithm_scores(ScoreTable([f"g{i}" for i in range(games)], [f"a{j}" for j in range(algos)], raw))
        assert np.all((d.z >= 0.0) & (d.z <= 1.0))
        for i in range(games):
            if f"g{i}" not in d.degenerate_games:
                assert d.z[i].min() == 0.0 and d.z[i].max() == 1.0
        assert np.all(np.diff(d.f, axis=1) <= 0.0)
        assert np.all(d.f[:, 0] == 1.0)

    def test_grid(self):
        assert SCORE_GRID.size == 101 and SCORE_GRID[0] == 0.0 and SCORE_GRID[-1] == 1.0

    def test_csv_round_trip(self, tmp_path):
        src = tmp_path / "scores.csv"
        src.write_text("game,algorithm,score\ng1,A,1\ng1,B,3\ng2,A,5\ng2,B,4\n")
        table = read_score_csv(src)
        assert table.games == ["g1", "g2"] and table.algorithms == ["A", "B"]
        out = tmp_path / "f.csv"
        write_distribution_csv(out, table, inter_algorithm_scores(table))
        lines = out.read_text().splitlines()
        assert lines[0] == "algorithm,x,f"
        assert lines[1] == "A,0.00,1.0"
        assert len(lines) == 1 + 2 * 101
        assert "A,1.00,0.5" in lines and "B,0.50,0.5" in lines

    @pytest.mark.parametrize(
        "body, fragment",
        [
            ("game,algo,score\n", "header"),
            ("game,algorithm,score\ng,A,1\ng,A,2\ng,B,1\n", "duplicate"),
            ("game,algorithm,score\ng,A,1\nh,B,1\n", "missing"),
        ],
    )
    def test_csv_errors(self, tmp_path, body, fragment):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(StructuralError, match=fragment):
            read_score_csv(p)
