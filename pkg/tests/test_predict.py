import math

import numpy as np
import pytest

from geoact.errors import DegenerateMean, NoTrainingData, TooShort
from geoact.predict import (
    KIND_GP,
    KIND_GP_MEANFUNC,
    KIND_PW,
    FitSettings,
    KernelParams,
    PredictorConfig,
    _line_through,
    fit,
    linear_mean,
    log_marginal_likelihood,
    predict,
    predict_many,
)
from geoact.trajdata import Trajectory


def make_traj(times, xs, ys):
    return Trajectory(np.asarray(times, float), np.asarray(xs, float),
                      np.asarray(ys, float))


def config(sigma_m=3.0, lookback=300.0, mean_mode="zero", fixed=None):
    return PredictorConfig(sigma_m=sigma_m, lookback=lookback,
                           mean_mode=mean_mode,
                           fit=FitSettings(fixed_params=fixed))


def dense_gp_oracle(times, values, params, sigma_m, dts, mean=None):
    """Direct-inverse GP posterior, no Cholesky anywhere.

    ``mean`` is a callable m(t); defaults to zero. Returns (mu, var) at the
    absolute times ``dts``.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    dts = np.asarray(dts, float)
    m_train = np.zeros_like(times) if mean is None else mean(times)
    m_query = np.zeros_like(dts) if mean is None else mean(dts)
    k = lambda a, b: params.sigma_f ** 2 * np.exp(
        -(a[:, None] - b[None, :]) ** 2 / (2 * params.length_scale ** 2))
    a_inv = np.linalg.inv(k(times, times) + sigma_m ** 2 * np.eye(times.size))
    k_star = k(dts, times)
    mu = m_query + k_star @ a_inv @ (values - m_train)
    var = params.sigma_f ** 2 + sigma_m ** 2 - np.sum(
        (k_star @ a_inv) * k_star, axis=1)
    return mu, var


def dense_lml_oracle(times, values, params, sigma_m, resid=None):
    times = np.asarray(times, float)
    values = np.asarray(values, float) if resid is None else np.asarray(resid, float)
    d2 = (times[:, None] - times[None, :]) ** 2
    a = params.sigma_f ** 2 * np.exp(-d2 / (2 * params.length_scale ** 2)) \
        + sigma_m ** 2 * np.eye(times.size)
    sign, logdet = np.linalg.slogdet(a)
    assert sign > 0
    return float(-0.5 * values @ np.linalg.solve(a, values) - 0.5 * logdet
                 - 0.5 * times.size * math.log(2 * math.pi))


class TestPassiveWait:
    def test_constant_prediction(self):
        traj = make_traj([0, 10, 20], [1, 2, 3], [4, 5, 6])
        pred = fit(traj, 20.0, config(), KIND_PW)
        a = predict(pred, 0.0)
        b = predict(pred, 500.0)
        assert a == b
        assert a.mean == (3.0, 6.0)
        assert a.std == (3.0, 3.0)

    def test_anchor_is_latest_window_point(self):
        traj = make_traj([0, 10, 20], [1, 2, 3], [4, 5, 6])
        pred = fit(traj, 10.0, config(), KIND_PW)
        assert pred.anchor_time == 10.0
        assert predict(pred, 0.0).mean == (2.0, 5.0)


class TestGpAgainstDenseOracle:
    def test_random_datasets(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            n = rng.integers(1, 21)
            times = np.sort(rng.uniform(-280.0, 0.0, n))
            times[-1] = 0.0
            times = np.unique(times)
            xs = rng.normal(0.0, 200.0, times.size)
            ys = rng.normal(0.0, 200.0, times.size)
            # sigma_f/sigma_m kept in a well-conditioned range so 1e-8
            # relative agreement is meaningful (the predictive variance is
            # a difference of sigma_f^2-scale terms)
            params = KernelParams(float(rng.uniform(5, 200)),
                                  float(rng.uniform(5, 400)))
            sigma_m = float(rng.uniform(1.0, 10.0))
            traj = make_traj(times, xs, ys)
            pred = fit(traj, 0.0, config(sigma_m=sigma_m, fixed=params),
                       KIND_GP)
            dts = rng.uniform(0.0, 300.0, 7)
            mu_x, mu_y, sd_x, sd_y = predict_many(pred, dts)
            mu_o, var_o = dense_gp_oracle(times, xs, params, sigma_m, dts)
            scale = np.maximum(np.abs(mu_o), 1.0)
            assert np.all(np.abs(mu_x - mu_o) / scale < 1e-8)
            assert np.all(np.abs(sd_x ** 2 - var_o) / np.abs(var_o) < 1e-8)
            mu_o, _ = dense_gp_oracle(times, ys, params, sigma_m, dts)
            assert np.all(np.abs(mu_y - mu_o) / np.maximum(np.abs(mu_o), 1.0)
                          < 1e-8)

    def test_three_point_dataset_exact(self):
        times = np.array([-60.0, -30.0, 0.0])
        xs = np.array([100.0, 130.0, 170.0])
        ys = np.array([-50.0, -20.0, 10.0])
        params = KernelParams(80.0, 45.0)
        traj = make_traj(times, xs, ys)
        pred = fit(traj, 0.0, config(fixed=params), KIND_GP)
        dts = np.array([0.0, 15.0, 90.0])
        mu_x, _, sd_x, _ = predict_many(pred, dts)
        mu_o, var_o = dense_gp_oracle(times, xs, params, 3.0, dts)
        np.testing.assert_allclose(mu_x, mu_o, rtol=1e-10)
        np.testing.assert_allclose(sd_x ** 2, var_o, rtol=1e-10)


class TestSinglePoint:
    def test_posterior_pulls_to_measurement(self):
        traj = make_traj([0.0], [50.0], [-30.0])
        pred = fit(traj, 0.0, config(), KIND_GP)
        loc = predict(pred, 0.0)
        assert abs(loc.mean[0] - 50.0) < 3.0
        assert abs(loc.mean[1] + 30.0) < 3.0

    def test_closed_form_shrinkage(self):
        params = KernelParams(100.0, 60.0)
        traj = make_traj([0.0], [50.0], [0.0])
        pred = fit(traj, 0.0, config(fixed=params), KIND_GP)
        expected = params.sigma_f ** 2 / (params.sigma_f ** 2 + 9.0) * 50.0
        assert predict(pred, 0.0).mean[0] == pytest.approx(expected, rel=1e-12)


class TestMeanFunction:
    def test_collinear_points_are_interpolated_exactly(self):
        traj = make_traj([0.0, 10.0], [0.0, 20.0], [5.0, -5.0])
        pred = fit(traj, 10.0, config(), KIND_GP_MEANFUNC)
        assert pred.axis_x.mean_slope == pytest.approx(2.0)
        assert np.all(pred.axis_x.alpha == 0.0)
        for dt in (0.0, 7.0, 40.0):
            loc = predict(pred, dt)
            assert loc.mean[0] == pytest.approx(20.0 + 2.0 * dt, abs=1e-9)
            assert loc.mean[1] == pytest.approx(-5.0 - 1.0 * dt, abs=1e-9)

    def test_linear_mean_examples(self):
        traj = make_traj([0.0, 10.0], [0.0, 20.0], [5.0, 5.0])
        (slope_x, int_x), (slope_y, int_y) = linear_mean(traj, 10.0)
        assert (slope_x, int_x) == (2.0, 0.0)
        assert (slope_y, int_y) == (0.0, 5.0)
        assert slope_x * 20.0 + int_x == 40.0

    def test_degenerate_mean(self):
        with pytest.raises(DegenerateMean):
            _line_through(5.0, 1.0, 5.0, 2.0)

    def test_too_few_points(self):
        with pytest.raises(TooShort):
            linear_mean(make_traj([0.0], [1.0], [1.0]), 0.0)

    def test_single_point_falls_back_to_constant(self):
        traj = make_traj([0.0], [42.0], [7.0])
        pred = fit(traj, 0.0, config(), KIND_GP_MEANFUNC)
        assert pred.axis_x.mean_slope == 0.0
        assert pred.axis_x.mean_at_anchor == 42.0


class TestLogMarginalLikelihood:
    def test_one_point_closed_form(self):
        params = KernelParams(2.0, 10.0)
        got = log_marginal_likelihood([0.0], [0.0], params, 1.0)
        expected = -0.5 * math.log(params.sigma_f ** 2 + 1.0) \
            - 0.5 * math.log(2 * math.pi)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        times = np.sort(rng.uniform(-200, 0, 8))
        values = rng.normal(0, 50, 8)
        params = KernelParams(60.0, 30.0)
        got = log_marginal_likelihood(times, values, params, 3.0)
        want = dense_lml_oracle(times - times[-1], values, params, 3.0)
        assert got == pytest.approx(want, rel=1e-10)

    def test_tiny_jitter_insensitivity(self):
        rng = np.random.default_rng(6)
        times = np.sort(rng.uniform(-200, 0, 10))
        values = rng.normal(0, 50, 10)
        params = KernelParams(60.0, 30.0)
        base = log_marginal_likelihood(times, values, params, 3.0)
        # oracle with an explicit 1e-12 diagonal bump
        t_rel = times - times[-1]
        d2 = (t_rel[:, None] - t_rel[None, :]) ** 2
        a = params.sigma_f ** 2 * np.exp(-d2 / (2 * params.length_scale ** 2)) \
            + (9.0 + 1e-12) * np.eye(10)
        sign, logdet = np.linalg.slogdet(a)
        bumped = float(-0.5 * values @ np.linalg.solve(a, values) - 0.5 * logdet
                       - 5 * math.log(2 * math.pi))
        assert abs(bumped - base) < 1e-6

    def test_finite_difference_slope_in_sigma_f(self):
        rng = np.random.default_rng(7)
        times = np.sort(rng.uniform(-250, 0, 5))
        values = rng.normal(0, 80, 5)
        sigma_m = 3.0
        sf, ls = 70.0, 40.0
        h = 1e-5
        fd = (log_marginal_likelihood(times, values, KernelParams(sf + h, ls), sigma_m)
              - log_marginal_likelihood(times, values, KernelParams(sf - h, ls), sigma_m)
              ) / (2 * h)
        # analytic slope: 0.5 tr((alpha alpha^T - A^-1) dA/dsf), dA/dsf = 2 K_f / sf
        t_rel = times - times[-1]
        d2 = (t_rel[:, None] - t_rel[None, :]) ** 2
        k_f = sf ** 2 * np.exp(-d2 / (2 * ls ** 2))
        a = k_f + sigma_m ** 2 * np.eye(5)
        a_inv = np.linalg.inv(a)
        alpha = a_inv @ values
        da = 2.0 * k_f / sf
        analytic = 0.5 * (alpha @ da @ alpha - np.trace(a_inv @ da))
        assert abs(fd - analytic) / abs(analytic) < 1e-4


class TestPredictorProperties:
    def test_interpolation_with_tiny_noise(self):
        params = KernelParams(100.0, 60.0)
        traj = make_traj([-90.0, -60.0, -30.0, 0.0],
                         [10.0, 14.0, 11.0, 16.0], [0.0, 1.0, 2.0, 3.0])
        pred = fit(traj, 0.0, config(sigma_m=1e-6, fixed=params), KIND_GP)
        assert abs(predict(pred, 0.0).mean[0] - 16.0) < 1e-3

    def test_variance_non_decreasing_forward(self):
        traj = make_traj([-120.0, -60.0, 0.0], [0.0, 50.0, 100.0],
                         [0.0, -50.0, -100.0])
        for kind in (KIND_GP, KIND_GP_MEANFUNC):
            pred = fit(traj, 0.0, config(), kind)
            _, _, sd_x, sd_y = predict_many(pred, np.arange(0.0, 300.0, 5.0))
            assert np.all(np.diff(sd_x) >= -1e-9)
            assert np.all(np.diff(sd_y) >= -1e-9)

    def test_prior_reversion_far_from_data(self):
        params = KernelParams(50.0, 10.0)
        traj = make_traj([-20.0, -10.0, 0.0], [5.0, 10.0, 15.0],
                         [1.0, 2.0, 3.0])
        pred = fit(traj, 0.0, config(fixed=params), KIND_GP)
        loc = predict(pred, 1000.0)
        assert abs(loc.mean[0]) < 1e-6
        assert loc.std[0] == pytest.approx(math.sqrt(50.0 ** 2 + 9.0), rel=1e-9)
        pred_mf = fit(traj, 0.0, config(fixed=params), KIND_GP_MEANFUNC)
        loc_mf = predict(pred_mf, 1000.0)
        assert loc_mf.mean[0] == pytest.approx(15.0 + 0.5 * 1000.0, rel=1e-9)

    def test_meanfunc_variance_smaller_on_average(self):
        """Corpus-mean predictive std: linear-mean GP below zero-mean GP."""
        rng = np.random.default_rng(31)
        ratios = []
        for _ in range(20):
            speed = rng.uniform(8, 25)
            heading = rng.uniform(0, 2 * math.pi)
            times = np.sort(rng.choice(np.arange(-300.0, 1.0, 5.0),
                                       size=4, replace=False))
            times[-1] = 0.0
            xs = 500.0 + speed * math.cos(heading) * times + rng.normal(0, 3, 4)
            ys = -300.0 + speed * math.sin(heading) * times + rng.normal(0, 3, 4)
            traj = make_traj(times, xs, ys)
            sds = {}
            for kind in (KIND_GP, KIND_GP_MEANFUNC):
                pred = fit(traj, 0.0, config(), kind)
                _, _, sd_x, sd_y = predict_many(pred, np.arange(0.0, 200.0, 10.0))
                sds[kind] = float(np.mean((sd_x + sd_y) / 2.0))
            ratios.append(sds[KIND_GP_MEANFUNC] / sds[KIND_GP])
        assert np.mean(ratios) < 1.0

    def test_determinism(self):
        traj = make_traj([-100.0, -50.0, 0.0], [3.0, 6.0, 9.0],
                         [1.0, 0.0, -1.0])
        a = fit(traj, 0.0, config(), KIND_GP)
        b = fit(traj, 0.0, config(), KIND_GP)
        dts = np.array([0.0, 17.3, 120.0])
        for ax, bx in zip(predict_many(a, dts), predict_many(b, dts)):
            assert np.array_equal(ax, bx)

    def test_axis_independence(self):
        times = [-100.0, -50.0, 0.0]
        xs = [3.0, 6.0, 9.0]
        a = fit(make_traj(times, xs, [1.0, 0.0, -1.0]), 0.0, config(), KIND_GP)
        b = fit(make_traj(times, xs, [900.0, -4.0, 77.0]), 0.0, config(),
                KIND_GP)
        dts = np.array([0.0, 30.0, 150.0])
        assert np.array_equal(predict_many(a, dts)[0], predict_many(b, dts)[0])
        assert np.array_equal(predict_many(a, dts)[2], predict_many(b, dts)[2])

    def test_empty_window(self):
        traj = make_traj([0.0, 5.0], [1.0, 2.0], [3.0, 4.0])
        with pytest.raises(NoTrainingData):
            fit(traj, 1000.0, config(lookback=10.0), KIND_GP)

    def test_serializable_diagnostics(self):
        import json

        traj = make_traj([-50.0, 0.0], [1.0, 2.0], [3.0, 4.0])
        pred = fit(traj, 0.0, config(), KIND_GP_MEANFUNC)
        blob = json.dumps(pred.to_diagnostic_dict())
        assert "length_scale" in blob
