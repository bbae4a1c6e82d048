from __future__ import annotations

import numpy as np
import pytest

from oodkit.errors import ConfigError, FitError
from oodkit.estimators import (
    EstimatorConfig,
    MAFlow,
    beta_schedule,
    fit,
    load_estimator,
    lof_score,
    maf_log_prob,
    ppca_closed_form,
    ppca_log_likelihood,
    save_estimator,
    vae_loss,
)
from oodkit.estimators.autoencoder import FittedAE, kl_standard_normal, mlp
from oodkit.nn import Network

from oracles import central_differences, gaussian_logpdf, lof_direct, relative_errors

FAST = {
    "ppca": {"q": 3},
    "lof": {},
    "ae": {},
    "vae": {},
    "maf": {"n_layers": 3, "hidden_units": 32},
}


def fast_config(kind, seed=0, epochs=8):
    return EstimatorConfig(kind, dict(FAST[kind]), epochs=epochs, seed=seed)


class TestConfig:
    def test_default_hyperparameters(self):
        assert EstimatorConfig("ppca").params["q"] == 19
        assert EstimatorConfig("lof").params["k"] == 5
        ae = EstimatorConfig("ae").params
        assert ae["hidden_dims"] == [75] and ae["latent_dim"] == 20 and ae["lr"] == 0.007
        vae = EstimatorConfig("vae").params
        assert vae["hidden_dims"] == [25, 25, 25] and vae["latent_dim"] == 10 and vae["lr"] == 0.001
        maf = EstimatorConfig("flow").params
        assert maf == {"n_layers": 20, "hidden_units": 256, "lr": 0.001, "batch_norm": True}
        c = EstimatorConfig("ae")
        assert (c.epochs, c.batch_size, c.patience) == (30, 64, 5)

    @pytest.mark.parametrize("kind,params", [
        ("nope", {}), ("ppca", {"q": 0}), ("lof", {"k": 0}), ("ae", {"lr": 0}),
        ("vae", {"beta_warmup_epochs": -1}), ("maf", {"hidden_units": 0}), ("ae", {"bogus": 1}),
    ])
    def test_invalid(self, kind, params):
        with pytest.raises(ConfigError):
            EstimatorConfig(kind, params)

    def test_round_trip(self):
        c = EstimatorConfig("vae", {"latent_dim": 4}, name="v", epochs=3, seed=2)
        assert EstimatorConfig.from_dict(c.to_dict()) == c


class TestPPCA:
    def test_isotropic(self):
        # a 4x4 Hadamard design has covariance exactly proportional to I
        H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float)
        X = np.vstack([H, -H])
        lam = np.cov(X, rowvar=False)[0, 0]
        mu, W, s2 = ppca_closed_form(X, 2)
        np.testing.assert_allclose(W, 0.0, atol=1e-7)
        assert s2 == pytest.approx(lam)

    def test_full_rank_matches_gaussian(self, rng):
        X = rng.normal(size=(60, 4)) @ rng.normal(size=(4, 4))
        mu, W, s2 = ppca_closed_form(X, 4)
        oracle = gaussian_logpdf(X, X.mean(axis=0), np.cov(X, rowvar=False))
        np.testing.assert_allclose(ppca_log_likelihood(X, mu, W, s2), oracle, atol=1e-6)

    def test_below_full_gaussian(self, rng):
        X = rng.normal(size=(80, 4)) @ rng.normal(size=(4, 4))
        full = gaussian_logpdf(X, X.mean(axis=0), np.cov(X, rowvar=False)).mean()
        ll = [ppca_log_likelihood(X, *ppca_closed_form(X, q)).mean() for q in range(1, 5)]
        assert ll[2] <= full + 1e-9
        assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))

    def test_gap_tracks_noise_spread(self, rng):
        # q = d-1 leaves one noise eigenvalue (no spread): PPCA is the full Gaussian
        X = rng.normal(size=(100, 4)) @ rng.normal(size=(4, 4))
        full = gaussian_logpdf(X, X.mean(axis=0), np.cov(X, rowvar=False)).mean()
        assert ppca_log_likelihood(X, *ppca_closed_form(X, 3)).mean() == pytest.approx(full, abs=1e-9)
        # with two noise eigenvalues the gap shrinks as their spread shrinks;
        # the sample covariance is made exactly diag(9, 4, 1, 1 + spread)
        Z = rng.normal(size=(400, 4))
        Z -= Z.mean(axis=0)
        Z = Z @ np.linalg.inv(np.linalg.cholesky(np.cov(Z, rowvar=False))).T
        gaps = []
        for spread in (0.5, 0.1, 0.01):
            X = Z * np.sqrt([9.0, 4.0, 1.0, 1.0 + spread])
            full = gaussian_logpdf(X, X.mean(axis=0), np.cov(X, rowvar=False)).mean()
            gaps.append(full - ppca_log_likelihood(X, *ppca_closed_form(X, 2)).mean())
        assert all(g >= -1e-12 for g in gaps)
        assert gaps[0] > gaps[1] > gaps[2]

    def test_line_data_guarded(self):
        t = np.linspace(-1, 1, 50)
        X = np.stack([t, 2 * t], axis=1)
        mu, W, s2 = ppca_closed_form(X, 1)
        assert s2 > 0
        assert np.all(np.isfinite(ppca_log_likelihood(X, mu, W, s2)))

    def test_score_at_mean(self, rng):
        X = rng.normal(size=(200_000, 2))
        est = fit(EstimatorConfig("ppca", {"q": 1}), X)
        # negated peak log-density of N(0, I_2) is ln(2 pi)
        assert est.score(np.zeros((1, 2)))[0] == pytest.approx(np.log(2 * np.pi), abs=0.01)

    def test_q_bounds(self, rng):
        X = rng.normal(size=(30, 4))
        with pytest.raises(FitError):
            fit(EstimatorConfig("ppca", {"q": 4}), X)
        fit(EstimatorConfig("ppca"), rng.normal(size=(100, 56)))


class TestLOF:
    def test_oracle_small(self, rng):
        for _ in range(20):
            n, d, k = int(rng.integers(6, 20)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
            ref, q = rng.normal(size=(n, d)), rng.normal(size=(4, d))
            np.testing.assert_allclose(lof_score(ref, k, q), lof_direct(ref, k, q), rtol=1e-9, atol=1e-9)

    def test_six_point_example(self):
        ref = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5], [2, 0]], dtype=float)
        q = np.array([[6.0, 6.0]])
        s = lof_score(ref, 2, q)
        assert s[0] > 1.5
        assert s[0] == pytest.approx(lof_direct(ref, 2, q)[0], rel=1e-12)

    def test_identical_points(self):
        ref = np.ones((6, 2))
        assert lof_score(ref, 3, np.ones((1, 2)))[0] == pytest.approx(1.0)

    def test_grid_interior(self):
        g = np.stack(np.meshgrid(np.arange(11.0), np.arange(11.0)), -1).reshape(-1, 2)
        assert lof_score(g, 2, np.array([[5.0, 5.0]]))[0] == pytest.approx(1.0, abs=1e-9)

    def test_permutation_invariant(self, rng):
        ref, q = rng.normal(size=(25, 3)), rng.normal(size=(5, 3))
        np.testing.assert_allclose(lof_score(ref, 4, q), lof_score(ref[rng.permutation(25)], 4, q), rtol=1e-12)

    def test_k_too_large(self, rng):
        with pytest.raises(FitError):
            fit(EstimatorConfig("lof", {"k": 10}), rng.normal(size=(10, 2)))


class TestVAE:
    def test_beta_schedule(self):
        assert beta_schedule(0, 10) == 0.0
        assert beta_schedule(5, 10) == 0.5
        assert beta_schedule(10, 10) == 1.0
        assert beta_schedule(3, 0) == 1.0

    def test_kl_closed_form(self):
        assert kl_standard_normal(np.zeros((1, 3)), np.zeros((1, 3)))[0] == 0.0
        assert kl_standard_normal(np.ones((1, 1)), np.zeros((1, 1)))[0] == pytest.approx(0.5)

    def _nets(self, rng, d=4, latent=2):
        return Network(mlp(d, [5], 2 * latent, rng)), Network(mlp(latent, [5], d, rng))

    def test_beta_zero_is_reconstruction(self, rng):
        enc, dec = self._nets(rng)
        X, eps = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
        loss, parts = vae_loss(enc, dec, X, 0.0, eps=eps)
        h = enc(X)
        z = h[:, :2] + np.exp(0.5 * h[:, 2:]) * eps
        assert loss == pytest.approx(np.mean((dec(z) - X) ** 2), rel=1e-12)

    def test_gradients(self, rng):
        enc, dec = self._nets(rng)
        X, eps = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
        _, _, (ge, gd) = vae_loss(enc, dec, X, 0.6, eps=eps, return_grads=True)
        layers = enc.layers + dec.layers
        params = [layer.params[k] for layer in layers for k in sorted(layer.params)]
        numeric = central_differences(lambda: vae_loss(enc, dec, X, 0.6, eps=eps)[0], params)
        analytic = [g[k] for g in ge + gd for k in sorted(g)]
        assert np.mean(relative_errors(analytic, numeric) < 1e-4) >= 0.99

    def test_beta_range(self, rng):
        enc, dec = self._nets(rng)
        with pytest.raises(ValueError):
            vae_loss(enc, dec, np.zeros((2, 4)), 1.5)


def _flow(rng, dim, n_layers=2, hidden=6):
    flow = MAFlow.build(dim, n_layers, hidden, True, rng)
    for layer in flow.layers:
        for k in layer.params:
            layer.params[k] = rng.normal(0, 0.3, layer.params[k].shape)
    for b in flow.blocks:
        if hasattr(b, "bn"):
            b.bn.running_mean = rng.normal(0, 0.3, dim)
            b.bn.running_var = rng.uniform(0.5, 1.5, dim)
    return flow


class TestMAF:
    def test_identity_flow(self, rng):
        flow = MAFlow.build(3, 4, 8, True, rng, identity=True)
        X = rng.normal(size=(20, 3)) * 3
        expected = -1.5 * np.log(2 * np.pi) - 0.5 * np.sum(X * X, axis=1)
        np.testing.assert_allclose(maf_log_prob(flow, X), expected, atol=1e-9)

    def test_inverse(self, rng):
        flow = _flow(rng, 3, 3)
        X = rng.normal(size=(30, 3))
        u, _, _ = flow.forward(X)
        assert np.max(np.abs(flow.inverse(u) - X)) < 1e-6

    def test_logdet_vs_jacobian(self, rng):
        for _ in range(5):
            flow = _flow(rng, 2, 3)
            x = rng.normal(size=(1, 2))
            _, logdet, _ = flow.forward(x)
            h = 1e-6
            J = np.zeros((2, 2))
            for j in range(2):
                e = np.zeros((1, 2))
                e[0, j] = h
                J[:, j] = (flow.forward(x + e)[0] - flow.forward(x - e)[0])[0] / (2 * h)
            assert logdet[0] == pytest.approx(np.log(abs(np.linalg.det(J))), abs=1e-4)

    def test_nll_gradients(self, rng):
        flow = _flow(rng, 3, 2, 5)
        X = rng.normal(size=(9, 3))
        _, grads = flow.nll_and_grads(X)
        params = [layer.params[k] for layer in flow.layers for k in sorted(layer.params)]
        analytic = [g[k] for g in grads for k in sorted(g)]
        numeric = central_differences(lambda: flow.nll_and_grads(X)[0], params)
        assert np.mean(relative_errors(analytic, numeric) < 1e-4) >= 0.99

    def test_sample_shape(self, rng):
        flow = _flow(rng, 2)
        assert flow.sample(5, rng=1).shape == (5, 2)


class TestContract:
    @pytest.mark.parametrize("kind", list(FAST))
    def test_orientation(self, small_encoded, kind):
        Xtr, Xva, Xte, _ = small_encoded
        est = fit(fast_config(kind), Xtr, Xva)
        far = Xte.values.copy()
        cont = [g[0] for f, g in zip(Xtr.encoding.schema.features, Xtr.encoding.groups) if not f.is_categorical]
        far[:, cont] += 5.0
        s_far, s_in = est.score(far), est.score(Xte)
        assert np.all(np.isfinite(s_in)) and s_far.mean() > s_in.mean()

    @pytest.mark.parametrize("kind", list(FAST))
    def test_seeded_reproducible_and_serializable(self, small_encoded, tmp_path, kind):
        Xtr, Xva, Xte, _ = small_encoded
        a = fit(fast_config(kind, seed=4, epochs=3), Xtr, Xva)
        b = fit(fast_config(kind, seed=4, epochs=3), Xtr, Xva)
        sa = a.score(Xte)
        np.testing.assert_array_equal(sa, b.score(Xte))
        np.testing.assert_array_equal(sa, a.score(Xte))
        save_estimator(a, tmp_path / "m.json")
        back = load_estimator(tmp_path / "m.json")
        np.testing.assert_array_equal(back.score(Xte), sa)
        assert back.encoding.to_dict() == Xtr.encoding.to_dict()

    def test_perfect_decoder_scores_zero(self, rng):
        ae = fit(fast_config("ae", epochs=1), rng.normal(size=(50, 3)))
        identity = FittedAE(ae.config, Network(mlp(3, [], 3, rng)))
        identity.net.layers[0].params["W"] = np.eye(3)
        assert np.all(identity.score(rng.normal(size=(4, 3))) == 0.0)

    def test_width_mismatch(self, small_encoded):
        Xtr, *_ = small_encoded
        est = fit(fast_config("ppca"), Xtr)
        with pytest.raises(ValueError):
            est.score(np.zeros((2, Xtr.values.shape[1] + 1)))

    def test_non_finite_training_data(self):
        X = np.ones((10, 2))
        X[3, 1] = np.nan
        with pytest.raises(FitError):
            fit(fast_config("ae"), X)

    def test_empty_validation_disables_early_stopping(self, small_encoded):
        Xtr, *_ = small_encoded
        est = fit(fast_config("ae", epochs=2), Xtr, np.zeros((0, Xtr.values.shape[1])))
        assert np.all(np.isfinite(est.score(Xtr)))
