import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from trsbts.errors import EmptyInput, MissingStats, ShapeMismatch, TooShort
from trsbts.psd_linalg import SymMatrix, spectral_floor
from trsbts.scoring import (
    EnergyScoreConfig,
    EntropicConfig,
    conditional_kernel_aggregate,
    conditional_kernel_score,
    energy_score_path,
    energy_score_window,
    enriched_features,
    entropic_nll_step,
    entropic_select,
    entropic_validate,
    median_pairwise_distance,
)


class TestEnergyScoreWindow:
    def test_perfect_single_member(self):
        z = np.array([1.0, -2.0, 0.5])
        assert energy_score_window(z[None, :], z) == 0.0

    def test_mirrored_pair(self):
        z = np.array([0.3, 0.7])
        u = np.array([1.0, 2.0])
        got = energy_score_window(np.vstack([z - u, z + u]), z)
        assert np.isclose(got, np.linalg.norm(u) / 2.0)

    def test_double_sum_oracle(self):
        rng = np.random.default_rng(0)
        ens = rng.standard_normal((50, 4))
        obs = rng.standard_normal(4)
        got = energy_score_window(ens, obs)
        L = 50
        t1 = sum(np.linalg.norm(e - obs) for e in ens) / L
        t2 = sum(
            np.linalg.norm(a - b) for a in ens for b in ens
        ) / (2.0 * L * L)
        assert np.isclose(got, t1 - t2, rtol=1e-12)

    def test_non_negative_fuzz(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            L = rng.integers(1, 6)
            d = rng.integers(1, 4)
            ens = rng.standard_normal((L, d)) * rng.uniform(0.1, 10)
            obs = rng.standard_normal(d)
            assert energy_score_window(ens, obs) >= -1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            energy_score_window(np.zeros((2, 3)), np.zeros(2))


class _EchoModel:
    """Test stub: always continues with the stored true future."""

    def __init__(self, path, p_mem, K):
        self.path = path
        self.p_mem = p_mem
        self.K = K

    def sample_window(self, history, K, L, rng):
        # locate the history block in the path and echo its future
        n = self.path.shape[0]
        for i in range(self.p_mem, n - K + 1):
            if np.array_equal(self.path[i - self.p_mem : i], history):
                return np.repeat(self.path[i : i + K][None], L, axis=0)
        raise AssertionError("history not found")


class _Ar1Model:
    """Samples the exact transition of X_{t+1} = a X_t + sigma N(0,1)."""

    def __init__(self, a, sigma):
        self.a = a
        self.sigma = sigma

    def sample_window(self, history, K, L, rng):
        out = np.empty((L, K, 1))
        x = np.full(L, history[-1, 0])
        for k in range(K):
            x = self.a * x + self.sigma * rng.standard_normal(L)
            out[:, k, 0] = x
        return out


class TestEnergyScorePath:
    def test_echo_model_scores_zero(self):
        rng = np.random.default_rng(2)
        path = rng.standard_normal((20, 2))
        cfg = EnergyScoreConfig(p_mem=2, K=3, L=4, stride=2)
        model = _EchoModel(path, 2, 3)
        assert energy_score_path(model, path, cfg, rng) == 0.0

    def test_ar1_matches_bayes_floor(self):
        a, sigma = 0.8, 0.5
        rng = np.random.default_rng(3)
        n = 400
        path = np.zeros((n, 1))
        for t in range(1, n):
            path[t] = a * path[t - 1] + sigma * rng.standard_normal()
        cfg = EnergyScoreConfig(p_mem=1, K=1, L=512, stride=1)
        got = energy_score_path(_Ar1Model(a, sigma), path, cfg, np.random.default_rng(4))
        # two-independent-samples MC oracle, per window then averaged
        orng = np.random.default_rng(5)
        vals = []
        for i in range(1, n):
            mu = a * path[i - 1, 0]
            x = mu + sigma * orng.standard_normal(4000)
            xp = mu + sigma * orng.standard_normal(4000)
            vals.append(
                np.mean(np.abs(x - path[i, 0])) - 0.5 * np.mean(np.abs(x - xp))
            )
        want = float(np.mean(vals))
        assert abs(got - want) / want < 0.05

    def test_stride_full_single_window(self):
        rng = np.random.default_rng(6)
        path = rng.standard_normal((10, 1))
        cfg = EnergyScoreConfig(p_mem=1, K=1, L=2, stride=10)
        model = _Ar1Model(0.5, 1.0)
        # single admissible start at i = 1
        got = energy_score_path(model, path, cfg, np.random.default_rng(7))
        ens = _Ar1Model(0.5, 1.0).sample_window(
            path[0:1], 1, 2, np.random.default_rng(7)
        )
        want = energy_score_window(ens.reshape(2, -1), path[1].ravel())
        assert got == want

    def test_too_short(self):
        cfg = EnergyScoreConfig(p_mem=5, K=5, L=1)
        with pytest.raises(TooShort):
            energy_score_path(_Ar1Model(0.5, 1.0), np.zeros((6, 1)), cfg, None)

    def test_dims_slice(self):
        rng = np.random.default_rng(8)
        path = rng.standard_normal((12, 3))
        cfg = EnergyScoreConfig(p_mem=1, K=1, L=4, dims=(0, 1))
        model = _EchoModel(path, 1, 1)
        assert energy_score_path(model, path, cfg, rng) == 0.0


class TestEnrichedFeatures:
    def test_zero_path(self):
        out = enriched_features(np.zeros((3, 2)), np.zeros(2), 1.0, 1.0)
        assert np.allclose(out, 0.0)

    def test_hand_value_1d(self):
        out = enriched_features(np.array([[2.0]]), np.array([-1.0]), 1.0, 1.0)
        assert np.allclose(out, [2.0, 9.0])

    def test_direct_recomputation(self):
        rng = np.random.default_rng(9)
        K, d = 4, 3
        w = rng.standard_normal((K, d))
        prev = rng.standard_normal(d)
        sp, si = 0.7, 1.3
        out = enriched_features(w, prev, sp, si)
        states = np.vstack([prev, w])
        expect = []
        for r in range(K):
            inc = states[r + 1] - states[r]
            expect.append(w[r] / (sp * np.sqrt(d)))
            expect.append(np.outer(inc, inc).ravel() / (si * d))
        assert np.allclose(out, np.concatenate(expect), rtol=1e-12)
        assert out.size == K * (d + d * d)

    def test_missing_stats(self):
        with pytest.raises(MissingStats):
            enriched_features(np.zeros((1, 1)), np.zeros(1), 0.0, 1.0)


class TestConditionalKernelScore:
    def test_single_matching_atom(self):
        got = conditional_kernel_score(
            np.array([1.0]), np.array([[0.5, 0.5]]), np.array([0.5, 0.5]), 1.0
        )
        assert np.isclose(got, -1.0)

    def test_sign_structure_far_atoms(self):
        rng = np.random.default_rng(10)
        w = rng.random(5)
        w /= w.sum()
        atoms = rng.standard_normal((5, 2))
        obs = atoms.mean(axis=0) + 1e6
        got = conditional_kernel_score(w, atoms, obs, 1.0)
        assert got >= 0.0

    def test_double_sum_oracle(self):
        rng = np.random.default_rng(11)
        M, d = 12, 3
        w = rng.random(M)
        w /= w.sum()
        atoms = rng.standard_normal((M, d))
        obs = rng.standard_normal(d)
        sk = 0.9
        norm = rng.uniform(0.5, 2.0, size=d)
        got = conditional_kernel_score(w, atoms, obs, sk, normalizer=norm)
        za = atoms / norm
        zo = obs / norm

        def k(a, b):
            return np.exp(-np.sum((a - b) ** 2) / (2 * sk**2))

        want = sum(
            w[m] * w[l] * k(za[m], za[l]) for m in range(M) for l in range(M)
        ) - 2 * sum(w[m] * k(za[m], zo) for m in range(M))
        assert np.isclose(got, want, rtol=1e-12)

    def test_minimizing_weights_are_local_minimum(self):
        rng = np.random.default_rng(12)
        M = 6
        atoms = rng.standard_normal((M, 2))
        obs = rng.standard_normal(2)

        def f(w):
            return conditional_kernel_score(w / w.sum(), atoms, obs, 1.0)

        res = minimize(
            f,
            np.full(M, 1.0 / M),
            method="SLSQP",
            bounds=[(1e-9, 1.0)] * M,
            constraints={"type": "eq", "fun": lambda w: w.sum() - 1.0},
            options={"ftol": 1e-14, "maxiter": 500},
        )
        w_star = res.x / res.x.sum()
        base = conditional_kernel_score(w_star, atoms, obs, 1.0)
        for _ in range(100):
            pert = w_star + 1e-4 * rng.standard_normal(M)
            pert = np.clip(pert, 1e-12, None)
            pert /= pert.sum()
            assert conditional_kernel_score(pert, atoms, obs, 1.0) >= base - 1e-12

    def test_weight_sum_enforced(self):
        with pytest.raises(ShapeMismatch):
            conditional_kernel_score(
                np.array([0.5, 0.6]), np.zeros((2, 1)), np.zeros(1), 1.0
            )

    def test_median_heuristic_positive(self):
        rng = np.random.default_rng(13)
        assert median_pairwise_distance(rng.standard_normal((10, 2))) > 0
        assert median_pairwise_distance(np.zeros((1, 2))) == 1.0


class TestConditionalKernelAggregate:
    def test_type7_quantile(self):
        scores = [1.0, 2.0, 3.0, 4.0]
        assert np.isclose(
            conditional_kernel_aggregate(scores, 0.5), 2.5
        )

    def test_monotone_and_reorder_invariant(self):
        rng = np.random.default_rng(14)
        s = rng.standard_normal(20)
        a = conditional_kernel_aggregate(s, 0.9)
        assert conditional_kernel_aggregate(s + 0.5, 0.9) >= a
        perm = rng.permutation(20)
        assert conditional_kernel_aggregate(s[perm], 0.9) == a

    def test_empty(self):
        with pytest.raises(EmptyInput):
            conditional_kernel_aggregate([], 0.9)


def floored(m, eps=1e-10):
    return spectral_floor(SymMatrix(m), eps)


class TestEntropicNll:
    def test_standard_normal_at_zero(self):
        got = entropic_nll_step(floored(np.eye(1)), 1.0, np.zeros(1))
        assert np.isclose(got, 0.5 * np.log(2.0 * np.pi))

    def test_quadratic_scaling(self):
        s = floored(np.eye(2))
        base = entropic_nll_step(s, 1.0, np.zeros(2))
        d1 = entropic_nll_step(s, 1.0, np.array([1.0, 0.0])) - base
        d2 = entropic_nll_step(s, 1.0, np.array([2.0, 0.0])) - base
        assert np.isclose(d2, 4.0 * d1)

    def test_perpendicular_floor_penalty(self):
        eps = 1e-4
        dt = 0.5
        s = floored(np.diag([1.0, 0.0]), eps)
        on = entropic_nll_step(s, dt, np.array([0.3, 0.0]))
        perp = 0.2
        off = entropic_nll_step(s, dt, np.array([0.3, perp]))
        assert np.isclose(off - on, perp**2 / (2.0 * eps * dt))

    def test_scipy_logpdf_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            a = rng.standard_normal((3, 3))
            s = floored(a @ a.T + 0.2 * np.eye(3))
            dt = rng.uniform(0.1, 2.0)
            delta = rng.standard_normal(3)
            want = -multivariate_normal(np.zeros(3), s.matrix * dt).logpdf(delta)
            assert np.isclose(entropic_nll_step(s, dt, delta), want, rtol=1e-10)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            entropic_nll_step(floored(np.eye(1)), 0.0, np.zeros(1))


class TestPropriety:
    def test_truth_beats_shifted_on_average(self):
        rng = np.random.default_rng(16)
        n_rep = 200
        diffs = np.empty(n_rep)
        for r in range(n_rep):
            obs = rng.standard_normal(2)
            good = rng.standard_normal((32, 2))
            bad = rng.standard_normal((32, 2)) + 1.5
            diffs[r] = energy_score_window(bad, obs) - energy_score_window(good, obs)
        mean = diffs.mean()
        se = diffs.std(ddof=1) / np.sqrt(n_rep)
        assert mean > 3.0 * se  # one-sided at 3 sigma


class TestEntropicSelect:
    def test_single_candidate(self):
        cfg = EntropicConfig()
        assert entropic_select(
            [floored(np.eye(1))], [np.zeros((3, 1))], 1.0, cfg
        ) == 0

    def test_identical_candidates_tie_to_zero(self):
        cfg = EntropicConfig()
        c = floored(np.eye(2))
        got = entropic_select([c, c, c], [np.zeros((4, 2))], 1.0, cfg)
        assert got == 0

    def test_true_family_selected(self):
        rng = np.random.default_rng(17)
        true_cov = np.diag([1.0, 0.25])
        wrong = np.diag([4.0, 4.0])
        dt = 0.1
        chol = np.linalg.cholesky(true_cov * dt)
        paths = [
            (chol @ rng.standard_normal((2, 40))).T for _ in range(50)
        ]
        got = entropic_select(
            [floored(wrong), floored(true_cov)], paths, dt, EntropicConfig()
        )
        assert got == 1

    def test_empty(self):
        with pytest.raises(EmptyInput):
            entropic_select([], [np.zeros((2, 1))], 1.0, EntropicConfig())


class TestEntropicValidate:
    def test_single_path_is_its_score(self):
        cfg = EntropicConfig(alpha=0.9)
        cov = floored(np.eye(1))
        incs = np.array([[0.5], [1.0]])
        got = entropic_validate([[cov, cov]], [incs], 1.0, cfg)
        want = np.mean(
            [entropic_nll_step(cov, 1.0, row) for row in incs]
        )
        assert np.isclose(got, want)

    def test_cross_check_with_select_score(self):
        rng = np.random.default_rng(18)
        cov = np.diag([1.0, 0.5])
        dt = 0.2
        chol = np.linalg.cholesky(cov * dt)
        paths = [(chol @ rng.standard_normal((2, 20))).T for _ in range(10)]
        fam = floored(cov)
        cfg = EntropicConfig()
        gen = [[fam] * 20 for _ in paths]
        val = entropic_validate(gen, paths, dt, cfg)
        per_path = [
            np.mean([entropic_nll_step(fam, dt, row) for row in p]) for p in paths
        ]
        assert np.isclose(val, np.quantile(per_path, cfg.alpha))

    def test_median_agrees_with_mean_on_symmetric_cloud(self):
        rng = np.random.default_rng(19)
        cov = floored(np.eye(1))
        dt = 1.0
        paths = [rng.standard_normal((200, 1)) for _ in range(400)]
        gen = [[cov] * 200 for _ in paths]
        med = entropic_validate(gen, paths, dt, EntropicConfig(alpha=0.5))
        per_path = [
            np.mean([entropic_nll_step(cov, dt, row) for row in p]) for p in paths
        ]
        assert abs(med - np.mean(per_path)) < 0.02

    def test_misaligned(self):
        cov = floored(np.eye(1))
        with pytest.raises(ShapeMismatch):
            entropic_validate([[cov]], [np.zeros((2, 1))], 1.0, EntropicConfig())


class TestConfigs:
    def test_energy_config_validation(self):
        with pytest.raises(ValueError):
            EnergyScoreConfig(L=0)

    def test_entropic_config_validation(self):
        with pytest.raises(ValueError):
            EntropicConfig(eps=0.0)
        with pytest.raises(ValueError):
            EntropicConfig(alpha=1.0)
