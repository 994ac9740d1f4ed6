"""Forward-process sampling moments and analytic scores for Gaussian targets."""

import numpy as np
import pytest

from cldgen.errors import InvalidSpecError, InvalidTimeError
from cldgen.forward import (
    GaussianMixtureSpec,
    PhaseEnsemble,
    analytic_log_density,
    analytic_modified_score,
    analytic_score,
    forward_sample,
    gaussian_marginal,
)
from cldgen.kinetics import Block2, KineticParams, stationary_cov, transition_cov, transition_matrix

from oracles import cov_quadrature, expm_oracle


def cov_se(cov, n):
    """Standard errors of empirical covariance entries of a 2-d Gaussian."""
    c = np.asarray(cov)
    return np.sqrt((np.outer(np.diag(c), np.diag(c)) + c * c) / n)


class TestForwardSample:
    def test_time_zero_positions_exact(self):
        p = KineticParams(a=1, sigma=2, epsilon=0, v=1)
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((500, 3))
        ens = forward_sample(p, 0.0, x0, rng)
        np.testing.assert_array_equal(ens.x, x0)
        # velocities are fresh N(0, v^2) draws
        assert abs(ens.v.std() - 1.0) < 0.1

    def test_negative_time(self):
        with pytest.raises(InvalidTimeError):
            forward_sample(KineticParams(), -1.0, np.zeros((2, 1)), np.random.default_rng(0))

    def test_long_time_covariance_from_point_mass(self):
        p = KineticParams(a=1, sigma=2, epsilon=0, v=1)
        rng = np.random.default_rng(1)
        n = 100_000
        ens = forward_sample(p, 10.0, np.zeros((n, 1)), rng)
        u = np.stack([ens.x[:, 0], ens.v[:, 0]], axis=1)
        emp = np.cov(u.T)
        from cldgen.kinetics import hybrid_cov
        ref = hybrid_cov(p, 10.0).as_array()
        assert np.all(np.abs(emp - ref) <= 3.0 * cov_se(ref, n) + 1e-12)

    def test_mean_matches_flow(self):
        p = KineticParams(a=0.5, sigma=1.0, epsilon=0.25, v=1)
        rng = np.random.default_rng(2)
        n = 100_000
        x0 = np.full((n, 2), 1.5)
        t = 0.8
        ens = forward_sample(p, t, x0, rng)
        flow = transition_matrix(p, t)
        expect_x = flow.m00 * 1.5
        expect_v = flow.m10 * 1.5
        from cldgen.kinetics import hybrid_cov
        c = hybrid_cov(p, t)
        np.testing.assert_allclose(ens.x.mean(axis=0), expect_x,
                                   atol=3 * np.sqrt(float(c.m00) / n))
        np.testing.assert_allclose(ens.v.mean(axis=0), expect_v,
                                   atol=3 * np.sqrt(float(c.m11) / n))

    def test_per_example_times(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.5)
        rng = np.random.default_rng(3)
        ts = np.array([0.0, 1.0, 2.0])
        x0 = np.ones((3, 2))
        ens = forward_sample(p, ts, x0, rng)
        # row with t = 0 keeps its position exactly
        np.testing.assert_array_equal(ens.x[0], x0[0])

    def test_cross_coordinate_independence(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        rng = np.random.default_rng(4)
        n = 100_000
        x0 = rng.standard_normal((n, 2))  # independent coordinates
        ens = forward_sample(p, 1.0, x0, rng)
        pairs = [(ens.x[:, 0], ens.v[:, 1]), (ens.x[:, 1], ens.v[:, 0]),
                 (ens.x[:, 0], ens.x[:, 1]), (ens.v[:, 0], ens.v[:, 1])]
        for u, w in pairs:
            c = np.corrcoef(u, w)[0, 1]
            assert abs(c) < 4.0 / np.sqrt(n)


class TestGaussianMarginal:
    def test_time_zero(self):
        p = KineticParams(a=1, sigma=2, epsilon=0, v=0.5)
        means, covs = gaussian_marginal(p, 0.0, np.array([1.0, -2.0]), np.array([0.3, 0.7]))
        np.testing.assert_allclose(means, [[1.0, 0.0], [-2.0, 0.0]], atol=1e-15)
        np.testing.assert_allclose(covs[0], np.diag([0.3, 0.25]), atol=1e-15)
        np.testing.assert_allclose(covs[1], np.diag([0.7, 0.25]), atol=1e-15)

    def test_long_time(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        means, covs = gaussian_marginal(p, 30.0, np.array([5.0]), np.array([2.0]))
        np.testing.assert_allclose(means, np.zeros((1, 2)), atol=1e-10)
        np.testing.assert_allclose(covs[0], stationary_cov(p).as_array(), atol=1e-10)

    def test_dense_oracle(self):
        p = KineticParams(a=1, sigma=2, epsilon=0, v=1)
        t, s = 1.0, 1.0
        means, covs = gaussian_marginal(p, t, np.array([2.0]), np.array([s]))
        e = expm_oracle(1.0, t)
        ref_cov = cov_quadrature(1.0, 2.0, 0.0, t) + e @ np.diag([s, 1.0]) @ e.T
        np.testing.assert_allclose(means[0], e @ np.array([2.0, 0.0]), atol=1e-12)
        np.testing.assert_allclose(covs[0], ref_cov, atol=1e-8)


def fd_gradient(fn, u: PhaseEnsemble, h=1e-4):
    """Central finite differences of a log-density over the stacked state."""
    m = u.as_matrix()
    grad = np.zeros_like(m)
    for j in range(m.shape[1]):
        up, dn = m.copy(), m.copy()
        up[:, j] += h
        dn[:, j] -= h
        grad[:, j] = (fn(PhaseEnsemble.from_matrix(up)) - fn(PhaseEnsemble.from_matrix(dn))) / (2 * h)
    return grad


class TestAnalyticScore:
    def stationary_setup(self):
        # data N(0,1), v = 1 under a=1, sigma=2, eps=0 keeps the marginal N(0, I) forever
        p = KineticParams(a=1, sigma=2, epsilon=0, v=1)
        spec = GaussianMixtureSpec.single(0.0, 1.0, d=2)
        return p, spec

    def test_stationary_score_is_minus_u(self):
        p, spec = self.stationary_setup()
        rng = np.random.default_rng(5)
        ens = PhaseEnsemble(rng.standard_normal((50, 2)), rng.standard_normal((50, 2)))
        for t in (0.2, 1.0, 4.0):
            sx, sv = analytic_score(spec, p, t, ens)
            np.testing.assert_allclose(sx, -ens.x, atol=1e-10)
            np.testing.assert_allclose(sv, -ens.v, atol=1e-10)

    def test_score_matches_fd_gradient_single(self):
        p = KineticParams(a=0.5, sigma=1.5, epsilon=0.25, v=0.8)
        spec = GaussianMixtureSpec.single(np.array([1.0, -1.0]), np.array([0.5, 2.0]))
        rng = np.random.default_rng(6)
        ens = PhaseEnsemble(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
        t = 0.7
        sx, sv = analytic_score(spec, p, t, ens)
        got = np.concatenate([sx, sv], axis=1)
        ref = fd_gradient(lambda e: analytic_log_density(spec, p, t, e), ens)
        np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)

    def test_score_matches_fd_gradient_mixture(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.5, v=1)
        spec = GaussianMixtureSpec(
            weights=[0.3, 0.7],
            means=[[2.0, 0.0], [-1.0, 1.0]],
            diag_covs=[[0.5, 0.5], [1.0, 2.0]],
        )
        rng = np.random.default_rng(7)
        ens = PhaseEnsemble(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
        t = 0.5
        sx, sv = analytic_score(spec, p, t, ens)
        got = np.concatenate([sx, sv], axis=1)
        ref = fd_gradient(lambda e: analytic_log_density(spec, p, t, e), ens)
        np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-5)

    def test_symmetric_mixture_midpoint(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25)
        spec = GaussianMixtureSpec(
            weights=[0.5, 0.5],
            means=[[3.0], [-3.0]],
            diag_covs=[[1.0], [1.0]],
        )
        ens = PhaseEnsemble(np.zeros((1, 1)), np.zeros((1, 1)))
        sx, sv = analytic_score(spec, p, 0.8, ens)
        np.testing.assert_allclose(sx, 0.0, atol=1e-12)
        np.testing.assert_allclose(sv, 0.0, atol=1e-12)

    def test_far_apart_modes_high_dim(self):
        # responsibilities must survive 25 far-apart modes at d = 100
        from cldgen.datasets import mg25_spec
        p = KineticParams(a=1, sigma=2, epsilon=0.25)
        spec = mg25_spec(100)
        rng = np.random.default_rng(8)
        ens = PhaseEnsemble(rng.standard_normal((10, 100)) * 3, rng.standard_normal((10, 100)))
        sx, sv = analytic_score(spec, p, 0.05, ens)
        assert np.all(np.isfinite(sx)) and np.all(np.isfinite(sv))


class TestModifiedScore:
    def test_stationary_data_zero(self):
        p = KineticParams(a=1, sigma=2, epsilon=0, v=1)
        spec = GaussianMixtureSpec.single(0.0, 1.0, d=3)
        rng = np.random.default_rng(9)
        ens = PhaseEnsemble(rng.standard_normal((30, 3)), rng.standard_normal((30, 3)))
        for t in (0.1, 1.0, 5.0):
            mx, mv = analytic_modified_score(spec, p, t, ens)
            np.testing.assert_allclose(mx, 0.0, atol=1e-10)
            np.testing.assert_allclose(mv, 0.0, atol=1e-10)

    def test_difference_identity(self):
        p = KineticParams(a=0.7, sigma=1.3, epsilon=0.5, v=0.9)
        spec = GaussianMixtureSpec.single(1.0, 2.0, d=2)
        rng = np.random.default_rng(10)
        ens = PhaseEnsemble(rng.standard_normal((25, 2)), rng.standard_normal((25, 2)))
        sx, sv = analytic_score(spec, p, 0.6, ens)
        mx, mv = analytic_modified_score(spec, p, 0.6, ens)
        cx, cv = stationary_cov(p).inv().apply(ens.x, ens.v)
        np.testing.assert_allclose(mx - sx, cx, atol=1e-13)
        np.testing.assert_allclose(mv - sv, cv, atol=1e-13)

    def test_fd_gradient_of_relative_density(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        spec = GaussianMixtureSpec.single(0.5, 1.5, d=2)
        rng = np.random.default_rng(11)
        ens = PhaseEnsemble(rng.standard_normal((10, 2)), rng.standard_normal((10, 2)))
        t = 0.9
        sinv = stationary_cov(p).inv()

        def log_relative(e):
            # log p_t - log p_inf, dropping the constant normalizer of p_inf
            quad_x, quad_v = sinv.apply(e.x, e.v)
            quad = (e.x * quad_x + e.v * quad_v).sum(axis=1)
            return analytic_log_density(spec, p, t, e) + 0.5 * quad

        mx, mv = analytic_modified_score(spec, p, t, ens)
        ref = fd_gradient(log_relative, ens)
        np.testing.assert_allclose(np.concatenate([mx, mv], axis=1), ref, rtol=1e-5, atol=1e-5)

    def test_hessian_decay_envelope(self):
        # ||S_eps^2 (hessian + S_inf^{-1})|| decays at essentially rate 2a
        # once past the changeover time, located empirically (not asserted)
        from cldgen.bounds import gaussian_pair_hessian
        for a, eps in [(1.0, 0.0), (1.0, 0.5), (0.5, 0.25)]:
            p = KineticParams(a=a, sigma=2, epsilon=eps, v=1)
            noise_sq = Block2.diag(p.epsilon**2, p.sigma**2)
            sinv = stationary_cov(p).inv()
            ts = np.linspace(0.25, 10.0 / a, 48)
            vals = []
            for t in ts:
                h = gaussian_pair_hessian(p, float(t), data_var=4.0)
                vals.append(float((noise_sq @ (h + sinv)).op_norm()))
            vals = np.array(vals)
            peak = int(np.argmax(vals))
            tail = slice(peak + 1, None)
            assert np.all(np.diff(vals[tail]) < 0)
            slope = np.polyfit(ts[tail], np.log(vals[tail]), 1)[0]
            assert slope <= -1.5 * a


class TestMixtureSpecValidation:
    def test_bad_weights(self):
        with pytest.raises(InvalidSpecError):
            GaussianMixtureSpec([0.5, 0.4], [[0.0], [1.0]], [[1.0], [1.0]])

    def test_negative_cov(self):
        with pytest.raises(InvalidSpecError):
            GaussianMixtureSpec([1.0], [[0.0]], [[-1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidSpecError):
            GaussianMixtureSpec([1.0], [[0.0, 1.0]], [[1.0]])
