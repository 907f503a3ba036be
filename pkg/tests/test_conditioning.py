import numpy as np
import pytest

from trsbts.conditioning import (
    NEG_INF,
    ConditioningSummary,
    KernelConfig,
    TerminalSurrogate,
    kernel_logweight,
    kernel_logweights,
    pcr_fit,
    pcr_logweights,
    pseudo_distance,
    stable_softmax,
    wls_drift,
)
from trsbts.errors import AllExcluded, DegenerateData, ShapeMismatch
from trsbts.psd_linalg import SymMatrix, log_spectral_dist, mahalanobis, spectral_floor


def floored(m, eps=1e-10):
    return spectral_floor(SymMatrix(m), eps)


class TestPcrFit:
    def test_rank_step_span(self):
        # variance only in span(e1, e2): threshold 0.99 keeps exactly 2
        rng = np.random.default_rng(0)
        z = rng.standard_normal((500, 2)) * np.array([2.0, 1.0])
        x = np.zeros((500, 4))
        x[:, 0] = z[:, 0]
        x[:, 1] = z[:, 1]
        red = pcr_fit(x, 0.99)
        assert red.k == 2
        proj = red.projector()
        want = np.diag([1.0, 1.0, 0.0, 0.0])
        assert np.allclose(proj, want, atol=1e-10)

    def test_threshold_one_full_rank(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((50, 3))
        assert pcr_fit(x, 1.0).k == 3

    def test_repeated_point_degenerate(self):
        x = np.ones((10, 3))
        with pytest.raises(DegenerateData):
            pcr_fit(x, 0.9)

    def test_projector_idempotent_symmetric(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((100, 5))
        red = pcr_fit(x, 0.8)
        p = red.projector()
        assert np.allclose(p @ p, p, atol=1e-10)
        assert np.allclose(p, p.T, atol=1e-12)
        assert np.allclose(
            red.components @ red.components.T, np.eye(red.k), atol=1e-10
        )

    def test_rejects_too_few(self):
        with pytest.raises(DegenerateData):
            pcr_fit(np.zeros((1, 2)), 0.9)


class TestWlsDrift:
    def test_constant_increments(self):
        v = np.array([1.0, -2.0])
        incs = np.tile(v, (4, 1))
        cums = [floored(np.eye(2))] * 4
        assert np.allclose(wls_drift(incs, cums), v)

    def test_ordinary_mean_1d(self):
        incs = np.array([[0.0], [2.0]])
        cums = [floored(np.eye(1))] * 2
        assert np.isclose(wls_drift(incs, cums)[0], 1.0)

    def test_weighted_mean_closed_form(self):
        # locally-constant solution is the C_k^{-1}-weighted mean
        rng = np.random.default_rng(3)
        d, L = 3, 5
        incs = rng.standard_normal((L, d))
        cums = []
        for _ in range(L):
            a = rng.standard_normal((d, d))
            cums.append(floored(a @ a.T + 0.5 * np.eye(d)))
        A = sum(c.inv for c in cums)
        b = sum(c.inv @ dx for c, dx in zip(cums, incs))
        want = np.linalg.solve(A, b)
        assert np.allclose(wls_drift(incs, cums), want, atol=1e-10)

    def test_linear_in_time_recovery(self):
        # recovers (theta0, theta1) against the closed-form WLS oracle
        rng = np.random.default_rng(4)
        d, L = 2, 12
        theta0 = np.array([0.5, -1.0])
        theta1 = np.array([0.2, 0.3])
        ks = np.arange(L)
        incs = theta0 + np.outer(ks, theta1) + 0.01 * rng.standard_normal((L, d))
        cums = [floored(np.eye(d))] * L
        theta = wls_drift(incs, cums, model="linear_in_time")
        # identity weights: closed-form OLS with features (1, k) per dim
        X = np.column_stack([np.ones(L), ks.astype(float)])
        beta = np.linalg.lstsq(X, incs, rcond=None)[0]
        want = np.concatenate([beta[0], beta[1]])
        assert np.allclose(theta, want, atol=1e-8)
        assert np.allclose(theta[:d], theta0, atol=0.05)
        assert np.allclose(theta[d:], theta1, atol=0.01)

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            wls_drift(np.zeros((2, 1)), [floored(np.eye(1))] * 2, model="cubic")


def summary(anchor, incs=None, latent=(), cums=()):
    return ConditioningSummary(
        anchor=np.asarray(anchor, dtype=float),
        past_increments=np.zeros((0, len(anchor))) if incs is None else np.asarray(incs),
        latent=np.asarray(latent, dtype=float),
        frozen_cumulants=tuple(cums),
    )


class TestPseudoDistance:
    def test_identical_zero(self):
        q = summary([1.0, 2.0], [[0.1, 0.2]], cums=(floored(np.eye(2)),))
        assert pseudo_distance(q, q) == 0.0

    def test_single_mahalanobis_component(self):
        c = floored(np.array([[4.0]]))
        q = summary([0.0], [[0.0]], cums=(c,))
        s = summary([0.0], [[2.0]], cums=(c,))
        assert np.isclose(pseudo_distance(q, s), 1.0)

    def test_component_sum_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            d, p = 3, 2
            qc = [floored(rng.standard_normal((d, d)) @ np.eye(d) * 0.0 + np.eye(d) * rng.uniform(0.5, 2.0)) for _ in range(p)]
            sc = [floored(np.eye(d) * rng.uniform(0.5, 2.0)) for _ in range(p)]
            q = summary(
                rng.standard_normal(d),
                rng.standard_normal((p, d)),
                latent=rng.standard_normal(4),
                cums=qc,
            )
            s = summary(
                rng.standard_normal(d),
                rng.standard_normal((p, d)),
                latent=rng.standard_normal(4),
                cums=sc,
            )
            sq = float(np.sum((q.anchor - s.anchor) ** 2))
            for k in range(p):
                sq += mahalanobis(q.past_increments[k] - s.past_increments[k], qc[k]) ** 2
                sq += log_spectral_dist(qc[k], sc[k]) ** 2
            sq += float(np.sum((q.latent - s.latent) ** 2))
            assert np.isclose(pseudo_distance(q, s), np.sqrt(sq), rtol=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            q = summary(rng.standard_normal(2))
            s = summary(rng.standard_normal(2))
            assert pseudo_distance(q, s) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            pseudo_distance(summary([0.0]), summary([0.0, 0.0]))

    def test_scalar_anchor_metric(self):
        q = summary([0.0, 0.0])
        s = summary([2.0, 0.0])
        assert np.isclose(pseudo_distance(q, s, anchor_metric=2.0), 1.0)


class TestKernels:
    def test_gaussian_zero(self):
        assert kernel_logweight(KernelConfig("gaussian", h=0.5), 0.0) == 0.0

    def test_gaussian_value(self):
        cfg = KernelConfig("gaussian", h=2.0)
        assert np.isclose(kernel_logweight(cfg, 1.0), -0.125)

    def test_quartic_support_boundary(self):
        cfg = KernelConfig("quartic_compact", h=1.5)
        assert kernel_logweight(cfg, 1.5) == NEG_INF
        assert kernel_logweight(cfg, 2.0) == NEG_INF

    def test_quartic_half(self):
        cfg = KernelConfig("quartic_compact", h=1.0)
        assert np.isclose(kernel_logweight(cfg, 1.0 / np.sqrt(2.0)), np.log(0.5))

    def test_truncated_gaussian(self):
        cfg = KernelConfig("truncated_gaussian", h=1.0, R=2.0)
        assert np.isclose(kernel_logweight(cfg, 1.0), -0.5)
        assert kernel_logweight(cfg, 2.5) == NEG_INF

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(7)
        dists = rng.uniform(0.0, 3.0, size=50)
        for variant in ("gaussian", "quartic_compact", "truncated_gaussian"):
            cfg = KernelConfig(variant, h=1.2, R=1.5)
            vec = kernel_logweights(cfg, dists)
            scal = np.array([kernel_logweight(cfg, d) for d in dists])
            assert np.array_equal(vec, scal)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            kernel_logweight(KernelConfig(), -0.1)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            KernelConfig(variant="cubic")
        with pytest.raises(ValueError):
            KernelConfig(h=0.0)


class TestStableSoftmax:
    def test_uniform(self):
        assert np.allclose(stable_softmax([3.0, 3.0, 3.0]), 1.0 / 3.0)

    def test_extreme_no_overflow(self):
        w = stable_softmax([0.0, -1000.0])
        assert np.isclose(w[0], 1.0)
        assert w[1] < 1e-300

    def test_log_counts(self):
        w = stable_softmax(np.log([1.0, 2.0, 3.0]))
        assert np.allclose(w, [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0])

    def test_neg_inf_exact_zero(self):
        w = stable_softmax([0.0, NEG_INF, 0.0])
        assert w[1] == 0.0
        assert np.isclose(w.sum(), 1.0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        lw = rng.standard_normal(20)
        a = stable_softmax(lw)
        b = stable_softmax(lw + 123.456)
        assert np.argmax(a) == np.argmax(b)
        assert np.allclose(a, b, atol=1e-15)

    def test_all_excluded(self):
        with pytest.raises(AllExcluded):
            stable_softmax([NEG_INF, NEG_INF])

    def test_empty_rejected(self):
        with pytest.raises(ShapeMismatch):
            stable_softmax([])


class TestPcrLogweights:
    def test_identical_zero(self):
        q = summary([1.0, 2.0], [[0.5, 0.5]])
        assert pcr_logweights(q, [q])[0] == 0.0

    def test_single_block_hand_value(self):
        q = summary([0.0], [[0.0]])
        s = summary([1.0], [[2.0]])
        got = pcr_logweights(q, [s], anchor_bandwidth=1.0, incr_bandwidth=1.0)
        assert np.isclose(got[0], -2.5)

    def test_term_sum_oracle(self):
        rng = np.random.default_rng(9)
        d, p = 4, 3
        fitdata = rng.standard_normal((100, d))
        red = pcr_fit(fitdata, 0.9)
        q = summary(rng.standard_normal(d), rng.standard_normal((p, d)))
        cands = [
            summary(rng.standard_normal(d), rng.standard_normal((p, d)))
            for _ in range(10)
        ]
        got = pcr_logweights(
            q, cands, state_reducer=red, incr_reducer=red,
            anchor_bandwidth=0.7, incr_bandwidth=1.3,
        )
        for j, c in enumerate(cands):
            val = -0.5 * np.sum(
                (red.transform(q.anchor) - red.transform(c.anchor)) ** 2
            ) / 0.7**2
            val -= 0.5 * np.sum(
                (red.transform(q.past_increments) - red.transform(c.past_increments))
                ** 2
            ) / 1.3**2
            assert np.isclose(got[j], val, rtol=1e-12)

    def test_structure_mismatch(self):
        q = summary([0.0], [[0.0]])
        s = summary([0.0], np.zeros((2, 1)))
        with pytest.raises(ShapeMismatch):
            pcr_logweights(q, [s])


class TestTerminalSurrogate:
    def test_valid(self):
        s = TerminalSurrogate(
            weights=np.array([0.5, 0.5]),
            atoms=np.zeros((2, 3)),
            source_indices=np.array([0, 1]),
        )
        assert s.size == 2
        assert np.allclose(s.mean(), 0.0)

    def test_rejects_bad_weights(self):
        with pytest.raises(ShapeMismatch):
            TerminalSurrogate(
                weights=np.array([0.5, 0.6]),
                atoms=np.zeros((2, 2)),
                source_indices=np.array([0, 1]),
            )

    def test_rejects_empty(self):
        with pytest.raises(ShapeMismatch):
            TerminalSurrogate(
                weights=np.zeros(0), atoms=np.zeros((0, 2)), source_indices=np.zeros(0)
            )
