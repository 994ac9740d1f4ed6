"""Hybrid score-matching loss and training loop."""

import numpy as np
import pytest

from cldgen.errors import NonFiniteLossError
from cldgen.forward import GaussianMixtureSpec, PhaseEnsemble, analytic_score
from cldgen.kinetics import KineticParams, hybrid_cov, transition_cov, transition_matrix
from cldgen.network import NetArch, init_params
from cldgen.seeding import substream
from cldgen.training import TrainConfig, hsm_loss, train

from oracles import cov_quadrature, expm_oracle


def small_cfg(**kw):
    defaults = dict(epochs=1, batch_size=64, lr=1e-4, horizon=8.0, t_cutoff=0.08, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestHsmLoss:
    def test_zero_net_loss_matches_analytic_expectation(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        arch = NetArch(d=2, mid=8, depth=2)
        params = init_params(arch, np.random.default_rng(0))  # zero output layer
        cfg = small_cfg(batch_size=50_000, lambda_mode="det_sq")
        seed = 123
        x0 = np.random.default_rng(1).standard_normal((50_000, 2))
        loss, _ = hsm_loss(p, arch, params, x0, np.random.default_rng(seed), cfg)

        # replay the internal time draw (times are drawn before the noise)
        t_alg = np.random.default_rng(seed).uniform(cfg.t_cutoff, cfg.horizon, size=50_000)
        lam = np.asarray(transition_cov(p, t_alg).det()) ** 2
        inv = hybrid_cov(p, t_alg).inv()
        tr = np.asarray(inv.trace())
        expected = float(np.mean(lam * arch.d * tr))
        # Var(g^T M g) = 2 ||M||_F^2 per coordinate pair
        fro2 = np.asarray((inv @ inv).trace())
        mc_std = float(np.sqrt(np.sum(lam**2 * 2.0 * arch.d * fro2))) / 50_000
        assert abs(loss - expected) <= 3.0 * mc_std

    def test_perfect_predictor_gives_zero(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.5, v=1)
        arch = NetArch(d=2, mid=8, depth=2)
        params = init_params(arch, np.random.default_rng(2))
        cfg = small_cfg(batch_size=256)
        x0 = np.random.default_rng(3).standard_normal((256, 2))

        def conditional_score(t_alg, ens):
            t_phys = np.asarray(p.schedule.integrate(t_alg))
            flow = transition_matrix(p, t_phys)
            mx, mv = flow.apply(x0, np.zeros_like(x0))
            inv = hybrid_cov(p, t_phys).inv()
            gx, gv = inv.apply(ens.x - mx, ens.v - mv)
            return -gx, -gv

        loss, grads = hsm_loss(p, arch, params, x0, np.random.default_rng(4), cfg,
                               score_fn=conditional_score)
        assert grads is None
        assert loss < 1e-20

    @pytest.mark.parametrize("epsilon,out_mult", [(0.25, 2), (0.0, 1)])
    def test_gradient_matches_finite_differences(self, epsilon, out_mult):
        p = KineticParams(a=1, sigma=2, epsilon=epsilon, v=1)
        arch = NetArch(d=1, mid=8, depth=2, out_dim=out_mult * 1, embed_dim=8)
        rng = np.random.default_rng(5)
        params = init_params(arch, rng, dtype=np.float64)
        params.w_out = rng.standard_normal(params.w_out.shape) * 0.1
        cfg = small_cfg(batch_size=16)
        x0 = rng.standard_normal((16, 1))
        seed = 42

        def eval_loss(ps):
            return hsm_loss(p, arch, ps, x0, np.random.default_rng(seed), cfg)

        loss, grads = eval_loss(params)
        probe = np.random.default_rng(6)
        for ti, tensor in enumerate(params.tensors()):
            flat = tensor.reshape(-1)
            gflat = grads.tensors()[ti].reshape(-1)
            for j in probe.choice(flat.size, size=min(3, flat.size), replace=False):
                h = 1e-6 * max(1.0, abs(flat[j]))
                orig = flat[j]
                flat[j] = orig + h
                up, _ = eval_loss(params)
                flat[j] = orig - h
                dn, _ = eval_loss(params)
                flat[j] = orig
                fd = (up - dn) / (2 * h)
                assert abs(fd - gflat[j]) <= 1e-5 * max(1.0, abs(fd))

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(7)
        for epsilon in (0.0, 0.25, 1.0):
            p = KineticParams(a=0.5, sigma=1.5, epsilon=epsilon, v=0.9)
            arch = NetArch(d=2, mid=8, depth=1, out_dim=2 if epsilon == 0 else 4, embed_dim=8)
            params = init_params(arch, rng)
            params.w_out = rng.standard_normal(params.w_out.shape).astype(np.float32) * 0.2
            cfg = small_cfg(lambda_mode="uniform")
            loss, _ = hsm_loss(p, arch, params, rng.standard_normal((64, 2)), rng, cfg)
            assert loss >= 0

    def test_weight_positive_on_window(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        cfg = small_cfg()
        ts = np.linspace(cfg.t_cutoff, cfg.horizon, 200)
        lam = np.asarray(transition_cov(p, ts).det()) ** 2
        assert np.all(lam > 0)

    def test_nonfinite_loss_raises(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25)
        arch = NetArch(d=1, mid=4, depth=1, embed_dim=4)
        params = init_params(arch, np.random.default_rng(8))
        params.w_in[0, 0] = np.nan
        with pytest.raises(NonFiniteLossError):
            hsm_loss(p, arch, params, np.zeros((8, 1)), np.random.default_rng(9), small_cfg(batch_size=8))

    def test_affine_minimizer_recovers_analytic_score(self):
        # population HSM minimizer over affine maps = the analytic score map
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        t = 0.6
        mean, var = 0.5, 2.0
        rng = np.random.default_rng(10)
        n = 400_000
        x0 = rng.normal(mean, np.sqrt(var), size=(n, 1))

        # regression pairs built densely, independent of the training module
        e = expm_oracle(p.a, t)
        base = cov_quadrature(p.a, p.sigma, p.epsilon, t)
        hyb = base + e @ np.diag([0.0, p.v**2]) @ e.T
        root = np.linalg.cholesky(hyb)  # any factor R with R R^T = cov works
        g = rng.standard_normal((n, 2))
        means = np.stack([e[0, 0] * x0[:, 0], e[1, 0] * x0[:, 0]], axis=1)
        u = means + g @ root.T
        target = -np.linalg.solve(hyb, (u - means).T).T

        design = np.concatenate([u, np.ones((n, 1))], axis=1)
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        w_hat, b_hat = coef[:2].T, coef[2]

        marg_cov = base + e @ np.diag([var, p.v**2]) @ e.T
        w_star = -np.linalg.inv(marg_cov)
        mu = e @ np.array([mean, 0.0])
        b_star = np.linalg.inv(marg_cov) @ mu
        assert np.linalg.norm(w_hat - w_star) <= 0.05 * np.linalg.norm(w_star)
        assert np.linalg.norm(b_hat - b_star) <= 0.05 * (np.linalg.norm(b_star) + 1.0)

        # the fitted map also matches the packaged analytic score
        spec = GaussianMixtureSpec.single(mean, var, d=1)
        ens = PhaseEnsemble(u[:100, :1], u[:100, 1:])
        sx, sv = analytic_score(spec, p, t, ens)
        pred = ens.as_matrix() @ w_star.T + b_star
        np.testing.assert_allclose(np.concatenate([sx, sv], axis=1), pred, atol=1e-10)


class TestTrainLoop:
    def test_zero_lr_keeps_params(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25)
        arch = NetArch(d=1, mid=8, depth=1, embed_dim=8)
        data = np.random.default_rng(11).standard_normal((128, 1))
        cfg = small_cfg(epochs=1, batch_size=64, lr=0.0)
        params, adam, trace = train(p, arch, data, cfg)
        fresh = init_params(arch, substream(cfg.seed, 0))
        for a, b in zip(params.tensors(), fresh.tensors()):
            np.testing.assert_array_equal(a, b)
        assert adam.step == 2  # two batches

    def test_smoke_loss_decreases(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25, v=1)
        arch = NetArch(d=1, mid=32, depth=2, embed_dim=32)
        data = np.random.default_rng(12).standard_normal((2000, 1))
        cfg = small_cfg(epochs=200, batch_size=500, lr=1e-3, lambda_mode="det_sq")
        params, _, trace = train(p, arch, data, cfg)
        losses = np.array([row[1] for row in trace])
        q = len(losses) // 5
        assert losses[-q:].mean() < losses[:q].mean()

    def test_seeded_determinism(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25)
        arch = NetArch(d=1, mid=8, depth=1, embed_dim=8)
        data = np.random.default_rng(13).standard_normal((256, 1))
        cfg = small_cfg(epochs=3, batch_size=64, lr=1e-3)
        p1, _, t1 = train(p, arch, data, cfg)
        p2, _, t2 = train(p, arch, data, cfg)
        assert [r[1] for r in t1] == [r[1] for r in t2]
        for a, b in zip(p1.tensors(), p2.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_nonfinite_context(self):
        p = KineticParams(a=1, sigma=2, epsilon=0.25)
        arch = NetArch(d=1, mid=8, depth=1, embed_dim=8)
        data = np.full((128, 1), np.nan)
        cfg = small_cfg(epochs=1, batch_size=64)
        with pytest.raises(NonFiniteLossError, match="epoch 0 step 0"):
            train(p, arch, data, cfg)

    def test_dataset_too_small(self):
        p = KineticParams()
        arch = NetArch(d=1, mid=4, depth=1, embed_dim=4)
        with pytest.raises(ValueError):
            train(p, arch, np.zeros((10, 1)), small_cfg(batch_size=64))


class TestTrainConfig:
    def test_default_cutoff(self):
        cfg = TrainConfig(horizon=8.0)
        assert cfg.t_cutoff == pytest.approx(8e-5)

    def test_lambda_auto(self):
        cfg = TrainConfig()
        assert cfg.resolve_lambda(KineticParams(epsilon=0.5)) == "det_sq"
        assert cfg.resolve_lambda(KineticParams(epsilon=0.0)) == "uniform"

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(horizon=1.0, t_cutoff=2.0)
        with pytest.raises(ValueError):
            TrainConfig(lambda_mode="nope")
