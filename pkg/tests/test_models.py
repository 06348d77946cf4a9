import numpy as np
import pytest

import targetpred as tp
from targetpred import models


def _random_conjugate(rng, n=20, p=3, noise=1.0, prior_scale=1.0):
    X = rng.standard_normal((n, p))
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    data = tp.Dataset(X=X, Y=y[:, None], tau=[0.0])
    model = tp.ConjugateLinearModel(
        prior_precision=np.eye(p) * prior_scale, noise_variance=noise)
    return data, model


class TestDataset:
    def test_rejects_single_subject(self):
        with pytest.raises(models.ModelError):
            tp.Dataset(X=np.ones((1, 2)), Y=np.ones((1, 3)),
                       tau=[0.0, 0.5, 1.0])

    def test_rejects_nonincreasing_tau(self):
        with pytest.raises(models.ModelError):
            tp.Dataset(X=np.ones((3, 2)), Y=np.ones((3, 2)), tau=[0.5, 0.5])

    def test_rejects_tau_outside_unit_interval(self):
        with pytest.raises(models.ModelError):
            tp.Dataset(X=np.ones((3, 2)), Y=np.ones((3, 2)), tau=[0.0, 1.5])

    def test_rejects_missing_entries(self):
        Y = np.ones((3, 2))
        Y[1, 0] = np.nan
        with pytest.raises(models.ModelError):
            tp.Dataset(X=np.ones((3, 2)), Y=Y, tau=[0.0, 1.0])


class TestStandardize:
    def test_continuous_scaled_to_half_sd(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 3)) * 7 + 2
        Z = tp.standardize_covariates(X)
        assert np.allclose(Z.std(axis=0, ddof=1), 0.5)
        assert np.allclose(Z.mean(axis=0), 0.0, atol=1e-12)

    def test_binary_columns_untouched(self):
        rng = np.random.default_rng(1)
        X = np.hstack([(rng.random((40, 1)) > 0.3).astype(float),
                       rng.standard_normal((40, 1))])
        Z = tp.standardize_covariates(X)
        assert np.array_equal(Z[:, 0], X[:, 0])

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((30, 4))
        once = tp.standardize_covariates(X)
        assert np.allclose(tp.standardize_covariates(once), once)


class TestFitConjugate:
    def test_strong_zero_prior_pins_mean_at_zero(self):
        rng = np.random.default_rng(3)
        data, _ = _random_conjugate(rng)
        model = tp.ConjugateLinearModel(prior_precision=np.eye(3) * 1e6,
                                        noise_variance=1.0)
        post = tp.fit_conjugate(data, model)
        assert np.all(np.abs(post.mean) < 1e-3)

    def test_flat_prior_identity_design_recovers_y(self):
        data = tp.Dataset(X=np.eye(2), Y=np.array([[1.0], [2.0]]), tau=[0.0])
        model = tp.ConjugateLinearModel(prior_precision=np.eye(2) * 1e-12,
                                        noise_variance=1.0)
        post = tp.fit_conjugate(data, model)
        assert np.allclose(post.mean, [1.0, 2.0], atol=1e-9)

    def test_matches_dense_ridge_solve_oracle(self):
        # posterior mean must equal (X'X/s2 + P)^{-1} X'y/s2 to 1e-8 relative
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = rng.integers(5, 50)
            p = rng.integers(1, 10)
            X = rng.standard_normal((n, p))
            y = rng.standard_normal(n)
            s2 = float(rng.uniform(0.1, 4.0))
            P = np.diag(rng.uniform(0.1, 2.0, p))
            data = tp.Dataset(X=X, Y=y[:, None], tau=[0.0])
            model = tp.ConjugateLinearModel(prior_precision=P,
                                            noise_variance=s2)
            post = tp.fit_conjugate(data, model)
            oracle = np.linalg.solve(X.T @ X / s2 + P, X.T @ y / s2)
            denom = max(np.abs(oracle).max(), 1.0)
            assert np.abs(post.mean - oracle).max() / denom < 1e-8

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(5)
        data, _ = _random_conjugate(rng, p=3)
        model = tp.ConjugateLinearModel(prior_precision=np.eye(4),
                                        noise_variance=1.0)
        with pytest.raises(models.ModelError):
            tp.fit_conjugate(data, model)

    def test_non_spd_prior_rejected(self):
        with pytest.raises(models.ModelError):
            tp.ConjugateLinearModel(prior_precision=-np.eye(2),
                                    noise_variance=1.0)


class TestGibbsFosr:
    def test_zero_noise_recovery_within_3_posterior_sds(self):
        rng = np.random.default_rng(6)
        n, p, m, L = 30, 3, 24, 4
        tau = np.linspace(0, 1, m)
        model = tp.FosrModel.bspline(tau, L=L)
        Xraw = rng.standard_normal((n, p))
        A = rng.standard_normal((p + 1, L))
        Y = (tp.design_matrix(Xraw) @ A) @ model.basis.T
        data = tp.Dataset(X=Xraw, Y=Y, tau=tau)
        post = tp.gibbs_fosr(data, model, iters=400, burnin=200, seed=7)
        amean = post.params["alpha"].mean(axis=0)
        asd = post.params["alpha"].std(axis=0)
        assert np.all(np.abs(amean - A) <= 3 * asd)

    def test_single_subject_rejected(self):
        with pytest.raises(models.ModelError):
            tp.Dataset(X=np.ones((1, 2)), Y=np.ones((1, 8)),
                       tau=np.linspace(0, 1, 8))

    def test_fixed_seed_bitwise_identical(self):
        rng = np.random.default_rng(8)
        tau = np.linspace(0, 1, 12)
        data = tp.Dataset(X=rng.standard_normal((10, 2)),
                          Y=rng.standard_normal((10, 12)), tau=tau)
        model = tp.FosrModel.bspline(tau, L=4)
        a = tp.gibbs_fosr(data, model, iters=60, burnin=20, seed=42)
        b = tp.gibbs_fosr(data, model, iters=60, burnin=20, seed=42)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_variance_draws_strictly_positive(self):
        rng = np.random.default_rng(9)
        tau = np.linspace(0, 1, 10)
        data = tp.Dataset(X=rng.standard_normal((12, 2)),
                          Y=rng.standard_normal((12, 10)), tau=tau)
        post = tp.gibbs_fosr(data, tp.FosrModel.bspline(tau, L=4),
                             iters=80, burnin=10, seed=1)
        for name in ("sigma_eps", "sigma_gamma", "sigma_alpha"):
            assert np.all(post.params[name] > 0)

    def test_bad_iteration_counts_rejected(self):
        rng = np.random.default_rng(10)
        tau = np.linspace(0, 1, 8)
        data = tp.Dataset(X=rng.standard_normal((6, 1)),
                          Y=rng.standard_normal((6, 8)), tau=tau)
        with pytest.raises(models.ModelError):
            tp.gibbs_fosr(data, tp.FosrModel.bspline(tau, L=4),
                          iters=10, burnin=10, seed=0)

    def test_fitted_curves_invariant_to_basis_column_order(self):
        # identical draws because the canonical basis ignores column order
        rng = np.random.default_rng(11)
        tau = np.linspace(0, 1, 16)
        data = tp.Dataset(X=rng.standard_normal((8, 2)),
                          Y=rng.standard_normal((8, 16)), tau=tau)
        raw = models._raw_spline_basis(tau, 5)
        perm = raw[:, [3, 0, 4, 1, 2]]
        a = tp.gibbs_fosr(data, tp.FosrModel(basis=raw), 50, 10, seed=3)
        b = tp.gibbs_fosr(data, tp.FosrModel(basis=perm), 50, 10, seed=3)
        curves_a = a.params["theta"][-1] @ a.params["basis"].T
        curves_b = b.params["theta"][-1] @ b.params["basis"].T
        assert np.array_equal(curves_a, curves_b)


class TestOrthogonalBasis:
    def test_orthonormal(self):
        tau = np.linspace(0, 1, 40)
        B = tp.FosrModel.bspline(tau, L=7).basis
        assert np.allclose(B.T @ B, np.eye(7), atol=1e-10)

    def test_rank_deficient_basis_rejected(self):
        tau = np.linspace(0, 1, 10)
        raw = models._raw_spline_basis(tau, 4)
        bad = np.hstack([raw, raw[:, :1]])
        with pytest.raises(models.ModelError):
            models.orthogonalize_basis(bad)


class TestPredictiveDraws:
    def test_zero_noise_draws_equal_model_mean(self):
        post = tp.PosteriorDrawSet(
            kind="conjugate",
            params={"theta": np.array([[1.0, -2.0], [0.5, 0.5]])},
            meta={"noise_variance": 0.0})
        X = np.array([[1.0, 0.0], [1.0, 3.0]])
        preds = tp.predictive_draws(post, X, seed=0)
        assert np.array_equal(preds.draws[:, :, 0], post.params["theta"] @ X.T)

    def test_mean_matches_closed_form_within_3_mc_ses(self):
        rng = np.random.default_rng(12)
        data, model = _random_conjugate(rng, n=25, p=3)
        post = tp.fit_conjugate(data, model)
        S = 50_000
        draws = post.draws(S, seed=13)
        xt = rng.standard_normal((4, 3))
        preds = tp.predictive_draws(draws, xt, seed=14)
        mc_mean = preds.draws[:, :, 0].mean(axis=0)
        mc_se = preds.draws[:, :, 0].std(axis=0) / np.sqrt(S)
        assert np.all(np.abs(mc_mean - post.predictive_mean(xt)) < 3 * mc_se)

    def test_single_draw_shape(self):
        post = tp.PosteriorDrawSet(
            kind="conjugate", params={"theta": np.array([[2.0]])},
            meta={"noise_variance": 1.0})
        preds = tp.predictive_draws(post, np.array([[1.0], [2.0]]), seed=0)
        assert preds.draws.shape == (1, 2, 1)

    def test_mc_error_shrinks_with_draw_count(self):
        rng = np.random.default_rng(15)
        data, model = _random_conjugate(rng, n=30, p=2)
        post = tp.fit_conjugate(data, model)
        xt = rng.standard_normal((20, 2))
        truth = post.predictive_mean(xt)
        errs = []
        for S in (1_000, 10_000):
            preds = tp.predictive_draws(post.draws(S, seed=16), xt, seed=17)
            errs.append(np.abs(preds.draws[:, :, 0].mean(axis=0) - truth).mean())
        assert errs[1] < errs[0]

    def test_streaming_functional_draws_bitwise_equal(self):
        rng = np.random.default_rng(18)
        tau = np.linspace(0, 1, 12)
        data = tp.Dataset(X=rng.standard_normal((8, 2)),
                          Y=rng.standard_normal((8, 12)), tau=tau)
        post = tp.gibbs_fosr(data, tp.FosrModel.bspline(tau, L=4),
                             iters=40, burnin=20, seed=19)
        design = tp.design_matrix(data.X)
        spec = tp.FunctionalSpec(kind="max")
        preds = tp.predictive_draws(post, design, seed=20)
        direct = tp.apply_to_draws(spec, preds)
        streamed = tp.functional_draws(post, design, spec, seed=20)
        assert np.array_equal(direct, streamed)

    def test_subject_replicates_use_subject_coefficients(self):
        rng = np.random.default_rng(21)
        tau = np.linspace(0, 1, 10)
        data = tp.Dataset(X=rng.standard_normal((6, 2)),
                          Y=rng.standard_normal((6, 10)), tau=tau)
        post = tp.gibbs_fosr(data, tp.FosrModel.bspline(tau, L=4),
                             iters=30, burnin=10, seed=22)
        # zero noise scale forces draws to equal the subjects' fitted curves
        post.params["sigma_eps"][:] = 0.0
        design = tp.design_matrix(data.X)
        preds = tp.predictive_draws(post, design, seed=23,
                                    subject_rows=np.arange(6))
        fitted = np.einsum("snl,ml->snm", post.params["theta"],
                           post.params["basis"])
        assert np.allclose(preds.draws, fitted)


class TestStarOperators:
    def test_round_floor_above_zero(self):
        assert tp.star_round(1.7) == 1

    def test_round_zero_at_or_below_zero(self):
        assert tp.star_round(-0.3) == 0
        assert tp.star_round(0.0) == 0

    def test_round_rejects_non_finite(self):
        with pytest.raises(ValueError):
            tp.star_round(np.inf)

    def test_transform_values(self):
        assert tp.star_transform(1.0) == 0.0
        assert tp.star_transform(4.0) == 2.0
        assert tp.star_transform(0.0) == -2.0

    def test_transform_rejects_negative(self):
        with pytest.raises(ValueError):
            tp.star_transform(-0.5)

    def test_inverse_rejects_below_minus_two(self):
        with pytest.raises(ValueError):
            tp.star_inverse(-2.5)

    def test_round_trip_identity_on_wide_grid(self):
        t = np.linspace(0.0, 1e6, 1000)
        back = tp.star_inverse(tp.star_transform(t))
        denom = np.maximum(t, 1.0)
        assert np.max(np.abs(back - t) / denom) < 1e-9


class TestSerialization:
    def test_dataset_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(24)
        tau = np.linspace(0, 1, 5)
        data = tp.Dataset(X=rng.standard_normal((7, 3)),
                          Y=rng.standard_normal((7, 5)), tau=tau)
        models.save_dataset(data, tmp_path / "d.csv", tmp_path / "d.json")
        back = models.load_dataset(tmp_path / "d.csv", tmp_path / "d.json")
        assert np.array_equal(back.X, data.X)
        assert np.array_equal(back.Y, data.Y)
        assert np.array_equal(back.tau, data.tau)

    def test_draws_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(25)
        tau = np.linspace(0, 1, 8)
        data = tp.Dataset(X=rng.standard_normal((6, 2)),
                          Y=rng.standard_normal((6, 8)), tau=tau)
        post = tp.gibbs_fosr(data, tp.FosrModel.bspline(tau, L=4),
                             iters=30, burnin=10, seed=26)
        models.save_draws(post, tmp_path / "d.bin", tmp_path / "d.json")
        back = models.load_draws(tmp_path / "d.bin", tmp_path / "d.json")
        assert back.kind == post.kind
        for k in post.params:
            assert np.array_equal(back.params[k], post.params[k])

    def test_corrupted_archive_rejected(self, tmp_path):
        post = tp.PosteriorDrawSet(
            kind="conjugate", params={"theta": np.ones((3, 2))},
            meta={"noise_variance": 1.0})
        models.save_draws(post, tmp_path / "d.bin", tmp_path / "d.json")
        raw = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "d.bin").write_bytes(raw[:-16])
        with pytest.raises(models.ModelError):
            models.load_draws(tmp_path / "d.bin", tmp_path / "d.json")


class TestSplitRhat:
    def test_white_noise_near_one(self):
        rng = np.random.default_rng(27)
        assert abs(models.split_rhat(rng.standard_normal(4000)) - 1.0) < 0.05

    def test_trending_chain_flagged(self):
        assert models.split_rhat(np.linspace(0, 1, 1000)) > 1.5
