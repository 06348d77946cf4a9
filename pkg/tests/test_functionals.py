import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import targetpred as tp
from targetpred import functionals as fx


def _grid(m):
    return np.linspace(0.0, 1.0, m)


def curves_and_grid(draw, min_m=3, max_m=40):
    m = draw(st.integers(min_m, max_m))
    curve = draw(st.lists(
        st.floats(-50, 50, allow_nan=False, allow_infinity=False),
        min_size=m, max_size=m))
    return np.asarray(curve), _grid(m)


curve_strategy = st.builds(lambda: None)  # placeholder, see composite below


@st.composite
def curve_cases(draw):
    return curves_and_grid(draw)


class TestApply:
    def test_constant_curve(self):
        tau = _grid(9)
        c = 3.25
        curve = np.full(9, c)
        assert tp.apply(tp.FunctionalSpec(kind="avg"), curve, tau) == pytest.approx(c)
        assert tp.apply(tp.FunctionalSpec(kind="sd"), curve, tau) == 0.0
        assert tp.apply(tp.FunctionalSpec(kind="max"), curve, tau) == c
        assert tp.apply(tp.FunctionalSpec(kind="argmax"), curve, tau) == tau[0]

    def test_breakpoint_curve_argmax_at_peak(self):
        # rising then falling piecewise-linear curve peaks at its breakpoint;
        # the grid argmax is one of the two grid points bracketing it
        tau = _grid(101)
        step = tau[1] - tau[0]
        rng = np.random.default_rng(0)
        for _ in range(20):
            a0 = rng.standard_normal()
            a1, a2 = rng.chisquare(5, 2)
            tstar = rng.uniform(0.2, 0.8)
            curve = a0 + a1 * tau - (a1 + a2) * np.maximum(tau - tstar, 0.0)
            got = tp.apply(tp.FunctionalSpec(kind="argmax"), curve, tau)
            assert abs(got - tstar) <= step
        # exactly on the grid the argmax is recovered exactly
        curve = 1.0 + 2.0 * tau - 5.0 * np.maximum(tau - tau[40], 0.0)
        assert tp.apply(tp.FunctionalSpec(kind="argmax"), curve, tau) == tau[40]

    def test_all_zero_curve_indicators(self):
        tau = _grid(25)
        curve = np.zeros(25)
        sed = tp.apply(tp.FunctionalSpec(kind="sedentary", threshold=100.0),
                       curve, tau)
        zw = tp.apply(tp.FunctionalSpec(kind="zeros_window",
                                        window=(0.0, 1.0)), curve, tau)
        assert sed == pytest.approx(1.0, abs=1e-12)
        assert zw == 1.0  # indicator output is exact

    def test_avg_matches_bruteforce_trapezoid(self):
        # independent quadrature oracle on a small irregular case
        rng = np.random.default_rng(1)
        tau = np.sort(rng.uniform(0, 1, 7))
        curve = rng.standard_normal(7)
        total = 0.0
        length = 0.0
        for j in range(6):
            dt = tau[j + 1] - tau[j]
            total += 0.5 * (curve[j] + curve[j + 1]) * dt
            length += dt
        assert tp.apply(tp.FunctionalSpec(kind="avg"), curve, tau) == \
            pytest.approx(total / length, abs=1e-12)

    def test_tlac_log_curve(self):
        tau = _grid(50)
        curve = np.full(50, np.e - 1.0)
        assert tp.apply(tp.FunctionalSpec(kind="tlac"), curve, tau) == \
            pytest.approx(1.0)

    def test_tlac_rejects_boundary_violation(self):
        tau = _grid(5)
        curve = np.array([0.0, -1.5, 0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            tp.apply(tp.FunctionalSpec(kind="tlac"), curve, tau)

    def test_zeros_window_respects_window(self):
        tau = _grid(25)
        curve = np.zeros(25)
        curve[-1] = 5.0   # outside [1am, 5am] window
        spec = tp.FunctionalSpec(kind="zeros_window", window=(1 / 24, 5 / 24))
        assert tp.apply(spec, curve, tau) == 1.0
        curve[1] = 3.0    # tau=1/24 falls inside the window
        assert tp.apply(spec, curve, tau) == 0.0

    def test_contrast_matrix(self):
        tau = _grid(4)
        C = np.array([[1.0, 0, 0, -1.0], [0.5, 0.5, 0, 0]])
        curve = np.array([1.0, 2.0, 3.0, 4.0])
        out = tp.apply(tp.FunctionalSpec(kind="contrast", contrast=C),
                       curve, tau)
        assert np.allclose(out, [-3.0, 1.5])

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            tp.apply(tp.FunctionalSpec(kind="avg"), np.ones(4), _grid(5))


class TestQuadratureRefinement:
    def test_refinement_with_interpolated_midpoints(self):
        # inserting midpoints with interpolated values changes results by
        # < 1e-6 for smooth curves (threshold chosen away from the range so
        # the sedentary integrand is smooth too)
        m = 2001
        tau = _grid(m)
        curve = 2.0 + np.sin(2 * np.pi * tau) + 0.5 * np.cos(5 * tau)
        tau_f = np.sort(np.concatenate([tau, (tau[:-1] + tau[1:]) / 2]))
        curve_f = np.interp(tau_f, tau, curve)
        for kind in ("avg", "tlac", "sd", "sedentary", "max", "argmax"):
            spec = tp.FunctionalSpec(kind=kind, threshold=10.0)
            a = tp.apply(spec, curve, tau)
            b = tp.apply(spec, curve_f, tau_f)
            assert abs(a - b) < 1e-6, kind


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 30), st.integers(0, 2 ** 32 - 1),
           st.floats(0.1, 100.0))
    def test_argmax_invariant_to_positive_scaling(self, m, seed, c):
        rng = np.random.default_rng(seed)
        curve = rng.standard_normal(m)
        tau = _grid(m)
        spec = tp.FunctionalSpec(kind="argmax")
        assert tp.apply(spec, c * curve, tau) == tp.apply(spec, curve, tau)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 30), st.integers(0, 2 ** 32 - 1))
    def test_max_at_least_avg(self, m, seed):
        rng = np.random.default_rng(seed)
        curve = rng.standard_normal(m) * 10
        tau = _grid(m)
        mx = tp.apply(tp.FunctionalSpec(kind="max"), curve, tau)
        av = tp.apply(tp.FunctionalSpec(kind="avg"), curve, tau)
        assert mx >= av - 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 20), st.integers(0, 2 ** 32 - 1),
           st.integers(0, 19))
    def test_indicators_monotone_in_curve_values(self, m, seed, raise_at):
        # raising any curve value never increases sedentary or zeros_window
        rng = np.random.default_rng(seed)
        curve = rng.standard_normal(m)
        tau = _grid(m)
        bumped = curve.copy()
        bumped[raise_at % m] += abs(rng.standard_normal()) + 0.1
        for spec in (tp.FunctionalSpec(kind="sedentary", threshold=0.5),
                     tp.FunctionalSpec(kind="zeros_window",
                                       window=(0.0, 1.0))):
            assert tp.apply(spec, bumped, tau) <= tp.apply(spec, curve, tau)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2 ** 32 - 1))
    def test_sd_nonnegative_and_argmax_on_grid(self, m, seed):
        rng = np.random.default_rng(seed)
        curve = rng.standard_normal(m)
        tau = _grid(m) if m > 1 else np.zeros(1)
        assert tp.apply(tp.FunctionalSpec(kind="sd"), curve, tau) >= 0.0
        am = tp.apply(tp.FunctionalSpec(kind="argmax"), curve, tau)
        assert am in set(tau)


class TestApplyToDraws:
    def test_single_draw_single_point(self):
        draws = np.arange(5.0).reshape(1, 1, 5)
        preds = tp.PredictiveDrawSet(draws=draws,
                                     design=np.ones((1, 1)), tau=_grid(5))
        spec = tp.FunctionalSpec(kind="max")
        out = tp.apply_to_draws(spec, preds)
        assert out.shape == (1, 1)
        assert out[0, 0] == tp.apply(spec, draws[0, 0], _grid(5))

    def test_identity_contrast_returns_raw_draws(self):
        rng = np.random.default_rng(2)
        draws = rng.standard_normal((4, 3, 6))
        preds = tp.PredictiveDrawSet(draws=draws, design=np.ones((3, 1)),
                                     tau=_grid(6))
        spec = tp.FunctionalSpec(kind="contrast", contrast=np.eye(6))
        assert np.array_equal(tp.apply_to_draws(spec, preds), draws)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        tau = _grid(11)
        draws = rng.standard_normal((100, 4, 11))
        preds = tp.PredictiveDrawSet(draws=draws, design=np.ones((4, 1)),
                                     tau=tau)
        for kind in ("avg", "sd", "sedentary", "max", "argmax"):
            spec = tp.FunctionalSpec(kind=kind, threshold=0.0)
            got = tp.apply_to_draws(spec, preds)
            oracle = np.array([[tp.apply(spec, draws[s, i], tau)
                                for i in range(4)] for s in range(100)])
            assert np.allclose(got.mean(axis=0), oracle.mean(axis=0),
                               atol=1e-12)
            if kind in ("max", "argmax"):   # no quadrature arithmetic
                assert np.array_equal(got, oracle)
            else:
                assert np.allclose(got, oracle, atol=1e-12)


class TestHbar:
    def test_degenerate_draws_give_common_value(self):
        tau = _grid(7)
        one = np.sin(tau)[None, None, :]
        draws = np.repeat(one, 50, axis=0)
        preds = tp.PredictiveDrawSet(draws=draws, design=np.ones((1, 1)),
                                     tau=tau)
        spec = tp.FunctionalSpec(kind="avg")
        assert tp.hbar(spec, preds)[0] == tp.apply(spec, np.sin(tau), tau)

    def test_linear_contrast_matches_predictive_mean(self):
        # hbar of a contrast equals C @ (predictive mean) within MC error
        rng = np.random.default_rng(4)
        X = rng.standard_normal((12, 2))
        y = X @ np.array([1.0, -0.5]) + 0.3 * rng.standard_normal(12)
        data = tp.Dataset(X=X, Y=y[:, None], tau=[0.0])
        model = tp.ConjugateLinearModel(prior_precision=np.eye(2),
                                        noise_variance=0.09)
        post = tp.fit_conjugate(data, model)
        S = 40_000
        preds = tp.predictive_draws(post.draws(S, seed=5), X, seed=6)
        spec = tp.FunctionalSpec(kind="contrast", contrast=np.eye(1))
        hb = tp.hbar(spec, preds)[:, 0]
        se = preds.draws[:, :, 0].std(axis=0) / np.sqrt(S)
        assert np.all(np.abs(hb - post.predictive_mean(X)) < 3 * se)

    def test_binary_functional_hbar_is_probability(self):
        rng = np.random.default_rng(7)
        draws = (rng.random((200, 5, 8)) > 0.7).astype(float)
        preds = tp.PredictiveDrawSet(draws=draws, design=np.ones((5, 1)),
                                     tau=_grid(8))
        hb = tp.hbar(tp.FunctionalSpec(kind="zeros_window",
                                       window=(0.0, 1.0)), preds)
        assert np.all((hb >= 0.0) & (hb <= 1.0))


class TestSpecSerialization:
    def test_json_roundtrip(self):
        for spec in (tp.FunctionalSpec(kind="avg"),
                     tp.FunctionalSpec(kind="sedentary", threshold=50.0),
                     tp.FunctionalSpec(kind="zeros_window",
                                       window=(0.25, 0.75)),
                     tp.FunctionalSpec(kind="contrast",
                                       contrast=np.eye(3))):
            back = tp.FunctionalSpec.from_json_dict(spec.to_json_dict())
            assert back.kind == spec.kind
            assert back.threshold == spec.threshold
            assert back.window == spec.window
            if spec.contrast is not None:
                assert np.array_equal(back.contrast, spec.contrast)

    def test_contrast_csv_roundtrip(self, tmp_path):
        C = np.random.default_rng(8).standard_normal((2, 5))
        fx.save_contrast_csv(C, tmp_path / "c.csv")
        assert np.array_equal(fx.load_contrast_csv(tmp_path / "c.csv"), C)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            tp.FunctionalSpec(kind="nope")
        with pytest.raises(ValueError):
            tp.FunctionalSpec(kind="zeros_window", window=(0.5, 0.2))
        with pytest.raises(ValueError):
            tp.FunctionalSpec(kind="sedentary", threshold=np.inf)
        with pytest.raises(ValueError):
            tp.FunctionalSpec(kind="contrast")
