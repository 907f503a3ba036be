import numpy as np
import pytest

from trsbts.errors import EndpointOffLeaf, KnotMismatch, TimeOutOfRange
from trsbts.psd_linalg import SymMatrix, spectral_floor
from trsbts.reference import (
    CumulantPath,
    FrozenInterval,
    cumulant_interp_error,
    frozen_bridge_mean,
    kernel_ratio,
    kernel_ratio_grad,
    log_kernel_ratio,
)


def make_interval(d=2, beta=1.0, eps=1e-10, cov=None, anchor=None):
    if cov is None:
        cov = np.eye(d)
    f = spectral_floor(SymMatrix(cov), eps)
    if anchor is None:
        anchor = np.zeros(d)
    return FrozenInterval(t_start=0.0, t_end=beta, cov=f, anchor=anchor)


class TestKernelRatio:
    def test_start_time_is_one(self):
        fi = make_interval(d=3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            delta = rng.standard_normal(3)
            assert np.isclose(kernel_ratio(fi, 0.0, fi.anchor, delta), 1.0)

    def test_half_life_prefactor(self):
        # x = anchor, delta = 0, alpha = beta/2: exponents vanish, only
        # the (beta/alpha)^{d/2} prefactor survives
        for d in (1, 2, 5):
            fi = make_interval(d=d)
            val = kernel_ratio(fi, 0.5, fi.anchor, np.zeros(d))
            assert np.isclose(val, 2.0 ** (d / 2.0))

    def test_two_density_quotient_oracle(self):
        # against the explicit quotient of the two floored Gaussian
        # densities computed with longdouble intermediates
        rng = np.random.default_rng(1)
        for _ in range(30):
            d = 3
            a = rng.standard_normal((d, d))
            fi = make_interval(d=d, beta=0.7, cov=a @ a.T + 0.5 * np.eye(d),
                               anchor=rng.standard_normal(d))
            t = rng.uniform(0.0, 0.69)
            x = rng.standard_normal(d) * 0.3 + fi.anchor
            delta = rng.standard_normal(d) * 0.3
            alpha = fi.t_end - t
            beta = fi.duration
            inv = np.asarray(fi.cov.inv, dtype=np.longdouble)
            res = np.asarray(fi.anchor + delta - x, dtype=np.longdouble)
            dl = np.asarray(delta, dtype=np.longdouble)
            log_num = -res @ inv @ res / (2.0 * alpha) - 0.5 * d * np.log(
                np.longdouble(alpha)
            )
            log_den = -dl @ inv @ dl / (2.0 * beta) - 0.5 * d * np.log(
                np.longdouble(beta)
            )
            want = float(log_num - log_den)
            assert np.isclose(log_kernel_ratio(fi, t, x, delta), want, rtol=1e-10)

    def test_time_out_of_range(self):
        fi = make_interval()
        with pytest.raises(TimeOutOfRange):
            kernel_ratio(fi, 1.0, fi.anchor, np.zeros(2))
        with pytest.raises(TimeOutOfRange):
            kernel_ratio(fi, -0.1, fi.anchor, np.zeros(2))

    def test_log_concavity_coefficient(self):
        # for alpha < beta the quadratic coefficient in delta is negative
        fi = make_interval()
        alpha = 0.25
        beta = 1.0
        assert 1.0 / alpha - 1.0 / beta > 0

    def test_on_leaf_eps_independence(self):
        # rank-deficient base: values on the active leaf are eps-independent
        cov = np.diag([2.0, 0.0])
        anchor = np.zeros(2)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = np.array([rng.standard_normal(), 0.0])
            delta = np.array([rng.standard_normal(), 0.0])
            vals = []
            for eps in (1e-8, 1e-12):
                fi = make_interval(cov=cov, eps=eps, anchor=anchor)
                vals.append(log_kernel_ratio(fi, 0.3, x, delta))
            assert np.isclose(vals[0], vals[1], rtol=1e-10, atol=1e-10)


class TestKernelRatioGrad:
    def test_zero_at_pinning_point(self):
        fi = make_interval(d=3)
        delta = np.array([1.0, -2.0, 0.5])
        g = kernel_ratio_grad(fi, 0.2, fi.anchor + delta, delta)
        assert np.allclose(g, 0.0)

    def test_hand_value_1d(self):
        fi = make_interval(d=1)
        g = kernel_ratio_grad(fi, 0.0, np.array([1.0]), np.array([2.0]))
        assert np.isclose(g[0], 1.0)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            d = 3
            a = rng.standard_normal((d, d))
            fi = make_interval(d=d, beta=0.8, cov=a @ a.T + 0.3 * np.eye(d),
                               anchor=rng.standard_normal(d))
            t = rng.uniform(0.0, 0.7)
            x = rng.standard_normal(d)
            delta = rng.standard_normal(d)
            g = kernel_ratio_grad(fi, t, x, delta)
            h = 1e-5
            fd = np.zeros(d)
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                fd[j] = (
                    log_kernel_ratio(fi, t, x + e, delta)
                    - log_kernel_ratio(fi, t, x - e, delta)
                ) / (2.0 * h)
            assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)


class TestCumulantPath:
    def test_rejects_nonzero_start(self):
        with pytest.raises(KnotMismatch):
            CumulantPath([0.0, 1.0], [np.eye(2), 2.0 * np.eye(2)])

    def test_rejects_nonmonotone(self):
        with pytest.raises(KnotMismatch):
            CumulantPath(
                [0.0, 0.5, 1.0],
                [np.zeros((2, 2)), np.eye(2), 0.5 * np.eye(2)],
            )

    def test_linear_interp(self):
        cp = CumulantPath([0.0, 1.0], [np.zeros((2, 2)), np.eye(2)])
        assert np.allclose(cp.gamma_at(0.25), 0.25 * np.eye(2))


class TestFrozenBridgeMean:
    def test_single_knot_linear(self):
        cp = CumulantPath([0.0, 2.0], [np.zeros((2, 2)), 2.0 * np.eye(2)])
        x = np.array([1.0, 0.0])
        z = np.array([3.0, 4.0])
        for t in (0.0, 0.5, 1.0, 2.0):
            want = x + (t / 2.0) * (z - x)
            assert np.allclose(frozen_bridge_mean(cp, t, x, z), want)

    def test_terminal_hits_z(self):
        cp = CumulantPath([0.0, 1.0], [np.zeros((2, 2)), np.diag([1.0, 2.0])])
        x = np.zeros(2)
        z = np.array([0.3, -0.7])
        assert np.allclose(frozen_bridge_mean(cp, 1.0, x, z), z)

    def test_two_knot_symbolic(self):
        # Gamma = diag(t^2, t) (normalized to vanish at 0), evaluated exactly
        knots = [0.0, 0.5, 1.0]
        gammas = [np.diag([t**2, t]) for t in knots]
        cp = CumulantPath(knots, gammas)
        x = np.zeros(2)
        z = np.array([2.0, 2.0])
        # piecewise-linear in t between the knots
        t = 0.25
        g = 0.5 * np.diag([0.0, 0.0]) + 0.5 * np.diag([0.25, 0.5])
        want = x + g @ np.linalg.inv(np.diag([1.0, 1.0])) @ (z - x)
        assert np.allclose(frozen_bridge_mean(cp, t, x, z), want)

    def test_off_leaf_rejected(self):
        c = np.diag([1.0, 0.0])
        cp = CumulantPath([0.0, 1.0], [np.zeros((2, 2)), c])
        with pytest.raises(EndpointOffLeaf):
            frozen_bridge_mean(cp, 0.5, np.zeros(2), np.array([1.0, 1.0]))


def random_cumulant(rng, d, knots):
    """Random PSD-nondecreasing cumulant path on the given knots."""
    gammas = [np.zeros((d, d))]
    acc = np.zeros((d, d))
    for _ in knots[1:]:
        a = rng.standard_normal((d, d)) * 0.5
        acc = acc + a @ a.T
        gammas.append(acc.copy())
    return CumulantPath(knots, gammas)


class TestInterpError:
    def test_self_zero(self):
        cp = CumulantPath([0.0, 1.0], [np.zeros((2, 2)), np.eye(2)])
        assert cumulant_interp_error(cp, cp) == 0.0

    def test_linear_refinement_zero(self):
        knots = np.linspace(0.0, 1.0, 6)
        fine = CumulantPath(knots, [t * np.eye(2) for t in knots])
        coarse = CumulantPath([0.0, 1.0], [np.zeros((2, 2)), np.eye(2)])
        assert cumulant_interp_error(coarse, fine) < 1e-12

    def test_quadratic_against_dense_sup_oracle(self):
        knots = np.linspace(0.0, 1.0, 11)
        fine = CumulantPath(knots, [np.diag([t**2]) for t in knots])
        coarse = CumulantPath([0.0, 1.0], [np.zeros((1, 1)), np.eye(1)])
        got = cumulant_interp_error(coarse, fine)
        want = max(abs(fine.gamma_at(t)[0, 0] - t) for t in knots)
        assert np.isclose(got, want)
        assert got > 0

    def test_rejects_non_refinement(self):
        a = CumulantPath([0.0, 0.3, 1.0], [np.zeros((1, 1)), np.eye(1) * 0.3, np.eye(1)])
        b = CumulantPath([0.0, 0.5, 1.0], [np.zeros((1, 1)), np.eye(1) * 0.5, np.eye(1)])
        with pytest.raises(KnotMismatch):
            cumulant_interp_error(a, b)

    def test_rejects_terminal_mismatch(self):
        a = CumulantPath([0.0, 1.0], [np.zeros((1, 1)), np.eye(1)])
        b = CumulantPath([0.0, 0.5, 1.0], [np.zeros((1, 1)), np.eye(1), 2 * np.eye(1)])
        with pytest.raises(KnotMismatch):
            cumulant_interp_error(a, b)

    def test_bridge_mean_stability_bound(self):
        # sup_t |m_t - m_t^P| <= interp_error * |C^{+1/2}(z - x)|
        rng = np.random.default_rng(4)
        for _ in range(100):
            d = rng.integers(1, 4)
            fine_knots = np.linspace(0.0, 1.0, 9)
            fine = random_cumulant(rng, d, fine_knots)
            coarse_knots = np.array([0.0, 0.5, 1.0])
            idx = [0, 4, 8]
            coarse = CumulantPath(
                coarse_knots, [fine.gammas[i].entries for i in idx]
            )
            eta = cumulant_interp_error(coarse, fine)
            c = fine.terminal
            w, q = c.eig
            cut = 1e-12 * max(w.max(initial=0.0), 0.0)
            x = rng.standard_normal(d)
            z = x + c.entries @ rng.standard_normal(d)
            inv_half_w = np.where(w > cut, 1.0 / np.sqrt(np.where(w > cut, w, 1.0)), 0.0)
            rhs_vec = (q * inv_half_w) @ q.T @ (z - x)
            bound = eta * np.linalg.norm(rhs_vec)
            for t in np.linspace(0.0, 1.0, 33):
                gap = np.linalg.norm(
                    frozen_bridge_mean(fine, t, x, z)
                    - frozen_bridge_mean(coarse, t, x, z)
                )
                assert gap <= bound + 1e-9
