import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from durational.errors import MaxIterExceeded, NRInfeasible, ZeroExposureInterval
from durational.estimator import (ALPHA_BOUND, BetaOrder, ExpandedDesign, FitOptions,
                                  actor_exposure, alpha_step, beta_step, fit_block_coordinate,
                                  fit_model, fit_newton_raphson, gamma_groups, gamma_step,
                                  normalize_identifiability, separated_columns, surrogate)
from durational.events import make_stream
from durational.grid import LikelihoodGrid, build_grid
from durational.likelihood import (ParamVector, full_derivatives, log_likelihood,
                                   pair_intensity)
from durational.model import DURATION, INCIDENCE, BaselineGrid, ModelSpec

from conftest import random_instance, random_params

TIGHT = FitOptions(tol_param=1e-9, tol_rel_ll=1e-13, max_iter=20000)


def grid_of(rows, n, T, stats=(), points=None):
    spec = ModelSpec(stats, (), BaselineGrid(points or (0.0, T)))
    return build_grid(make_stream(rows, n, T), spec)[INCIDENCE]


class TestOptions:
    def test_defaults(self):
        o = FitOptions()
        assert (o.tol_param, o.tol_rel_ll, o.max_iter) == (1e-3, 1e-3, 500)
        assert o.beta_update_order is BetaOrder.JACOBI and o.step1_halving

    @pytest.mark.parametrize("kw", [{"tol_param": 0}, {"tol_rel_ll": -1}, {"max_iter": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FitOptions(**kw)

    def test_order_parse(self):
        assert FitOptions(beta_update_order="gauss-seidel").beta_update_order \
            is BetaOrder.GAUSS_SEIDEL


class TestNormalize:
    def test_identity(self):
        p = ParamVector([0.5], [1.0, 2.0], [0.0, 3.0])
        q = normalize_identifiability(p)
        np.testing.assert_array_equal(q.flat(), p.flat())

    def test_example(self):
        q = normalize_identifiability(ParamVector([], [0.0, 0.0], [2.0, 3.0]))
        np.testing.assert_array_equal(q.gamma, [0.0, 1.0])
        np.testing.assert_array_equal(q.beta, [1.0, 1.0])

    def test_intensity_invariant(self):
        rng = np.random.default_rng(0)
        g = BaselineGrid((0.0, 3.0, 7.0, 10.0))
        p = ParamVector(rng.normal(size=2), rng.normal(size=4), rng.normal(size=3))
        q = normalize_identifiability(p)
        for t in rng.uniform(0, 10, 20):
            s = rng.normal(size=2)
            a, b = sorted(rng.choice(4, 2, replace=False))
            assert abs(math.log(pair_intensity((a, b), t, p, s, g))
                       - math.log(pair_intensity((a, b), t, q, s, g))) < 1e-12


class TestGammaStep:
    def test_closed_form(self):
        rows = [(0, 1, 1.0, 2.0), (0, 1, 3.0, 4.0), (0, 1, 5.0, 6.0)]
        data = grid_of(rows, 2, 9.0)
        g = gamma_step(ParamVector.for_grid(data), data)
        assert g[0] == pytest.approx(math.log(0.5))

    def test_balanced(self):
        data = grid_of([(0, 1, 1.0, 2.0)], 2, 2.0)
        assert gamma_step(ParamVector.for_grid(data), data)[0] == pytest.approx(0.0)

    def test_empty_interval_inherits(self):
        rows = [(0, 1, 1.0, 2.0), (0, 1, 8.0, 9.0)]
        data = grid_of(rows, 2, 10.0, points=(0.0, 3.0, 6.0, 10.0))
        np.testing.assert_array_equal(gamma_groups(data.events_per_interval), [0, 0, 1])
        g = gamma_step(ParamVector.for_grid(data), data)
        assert g[1] == g[0] and g[2] != g[0]

    def test_leading_empty(self):
        np.testing.assert_array_equal(gamma_groups([0, 0, 2, 0, 1]), [0, 0, 0, 0, 1])

    def test_zero_exposure(self):
        # an event on a zero-length segment: the interval has y but no exposure
        data = LikelihoodGrid(INCIDENCE, (), 2, BaselineGrid((0.0, 1.0, 2.0)),
                              np.array([0, 0]), np.array([1, 1]), np.array([0.0, 1.5]),
                              np.array([1.0, 1.5]), np.array([0.0, 1.0]), np.zeros((2, 0)),
                              0.0, np.array([0.0, 1.0, 1.5, 2.0]))
        with pytest.raises(ZeroExposureInterval):
            gamma_step(ParamVector.for_grid(data), data)


class TestAlphaStep:
    def data(self):
        rows = [(0, 1, 0.5, 1.0), (1, 2, 0.8, 1.5), (0, 2, 2.0, 3.0), (0, 1, 3.5, 4.0),
                (1, 2, 4.2, 5.0), (0, 1, 6.0, None)]
        return grid_of(rows, 3, 8.0, ("gcp",))

    def test_fixed_point(self):
        data = self.data()
        fit = fit_block_coordinate(data, TIGHT)
        a = alpha_step(fit.theta_hat, data)
        np.testing.assert_allclose(a, fit.theta_hat.alpha, atol=1e-9)

    def test_one_step_near_golden(self):
        data = self.data()
        p = ParamVector.for_grid(data)
        p.beta[:] = -0.4

        def negll(a):
            return -log_likelihood(ParamVector([a], p.beta, p.gamma), data)
        best = optimize.minimize_scalar(negll, bracket=(-2, 0, 2), method="golden",
                                        tol=1e-12).x
        p.alpha[:] = best + 1e-4
        assert alpha_step(p, data)[0] == pytest.approx(best, abs=1e-6)

    def test_halving_keeps_ascent(self):
        data = self.data()
        p = ParamVector([25.0], [0.0] * 3, [0.0])
        before = log_likelihood(p, data)
        full = ParamVector(alpha_step(p, data, halving=False), p.beta, p.gamma)
        halved = ParamVector(alpha_step(p, data), p.beta, p.gamma)
        assert log_likelihood(halved, data) >= before
        assert log_likelihood(full, data) < before or full.alpha[0] == halved.alpha[0]


class TestBetaStep:
    def test_symmetric(self):
        data = grid_of([(0, 1, 1.0, 2.0), (0, 1, 3.0, 4.0)], 2, 5.0)
        b = beta_step(ParamVector.for_grid(data), data)
        assert b[0] == b[1]

    def test_surrogate_touches(self, instance):
        _, _, _, grids = instance
        rng = np.random.default_rng(0)
        for data in grids.values():
            p = random_params(rng, data)
            assert surrogate(p.beta, p, data) == pytest.approx(log_likelihood(p, data),
                                                               abs=1e-9)

    @pytest.mark.parametrize("order", list(BetaOrder))
    def test_ascent(self, order, instance):
        _, _, _, grids = instance
        rng = np.random.default_rng(1)
        for data in grids.values():
            for _ in range(10):
                p = random_params(rng, data, 1.0)
                q = ParamVector(p.alpha, beta_step(p, data, order), p.gamma)
                assert log_likelihood(q, data) >= log_likelihood(p, data) - 1e-10

    def test_maximizes_surrogate(self, instance):
        _, _, _, grids = instance
        data = grids[INCIDENCE]
        p = random_params(np.random.default_rng(2), data)
        live = data.events_per_actor > 0
        res = optimize.minimize(lambda b: -surrogate(np.where(live, b, p.beta), p, data),
                                p.beta, method="BFGS", options={"gtol": 1e-11})
        b = beta_step(p, data)
        np.testing.assert_allclose(b[live], res.x[live], atol=1e-6)

    def test_floor(self):
        data = grid_of([(0, 1, 1.0, 2.0)], 3, 5.0)
        b = beta_step(ParamVector.for_grid(data), data)
        assert b[2] == -30.0

    def test_actor_exposure_sums(self, instance):
        _, _, _, grids = instance
        data = grids[INCIDENCE]
        p = random_params(np.random.default_rng(3), data)
        E = actor_exposure(p, data)
        grad, _ = full_derivatives(p, data)
        np.testing.assert_allclose(data.events_per_actor - E,
                                   grad[data.n_stats:data.n_stats + data.n_actors])


class TestBlockCoordinate:
    def test_poisson_mle(self):
        rows = [(0, 1, 1.0, 1.5), (0, 1, 2.5, 3.0), (0, 1, 4.0, 4.2), (0, 1, 7.0, 7.5)]
        data = grid_of(rows, 2, 10.0)
        fit = fit_block_coordinate(data, TIGHT)
        th = fit.theta_hat
        exposure = 1.0 + 1.0 + 1.0 + 2.8 + 2.5
        assert math.exp(th.gamma[0] + th.beta[0] + th.beta[1]) == pytest.approx(4 / exposure)
        assert th.gamma[0] == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([INCIDENCE, DURATION]),
           st.sampled_from(list(BetaOrder)))
    def test_monotone_ascent(self, seed, m, order):
        _, _, _, grids = random_instance(seed % 100, n=5, m=30)
        opts = FitOptions(1e-6, 1e-10, max_iter=300, beta_update_order=order)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterExceeded)
            fit = fit_block_coordinate(grids[m], opts)
        d = np.diff(fit.ll_trace)
        assert np.all(d >= -1e-10 * np.abs(np.asarray(fit.ll_trace[1:])))

    def test_stationary_at_convergence(self):
        _, _, _, grids = random_instance(4, n=8, m=80)
        for data in grids.values():
            fit = fit_block_coordinate(data, TIGHT)
            assert fit.converged
            grad, _ = full_derivatives(fit.theta_hat, data)
            P, N = data.n_stats, data.n_actors
            assert np.abs(grad[:P]).max() < 1e-4
            live = ~fit.floored
            assert np.abs(grad[P:P + N][live]).max() < 1e-4
            grp = np.bincount(fit.gamma_groups, grad[P + N:])
            assert np.abs(grp).max() < 1e-4

    def test_max_iter_warning(self, instance):
        _, _, _, grids = instance
        with pytest.warns(MaxIterExceeded):
            fit = fit_block_coordinate(grids[INCIDENCE], FitOptions(max_iter=1))
        assert not fit.converged and fit.iterations == 1

    def test_callback_and_trace(self, instance):
        _, _, _, grids = instance
        seen = []
        fit = fit_block_coordinate(grids[DURATION], callback=lambda k, th, ll: seen.append(ll))
        assert seen == fit.ll_trace[1:] and len(seen) == fit.iterations

    def test_time_rescaling(self):
        _, _, _, grids = random_instance(5, n=6, m=60)
        data = grids[INCIDENCE].select(["gcp", "absdiff:x"])
        a = fit_block_coordinate(data, TIGHT)
        b = fit_block_coordinate(data.rescaled(7.0), TIGHT)
        np.testing.assert_allclose(a.theta_hat.alpha, b.theta_hat.alpha, atol=1e-6)
        la = a.theta_hat.beta[0] + a.theta_hat.beta[1]
        lb = b.theta_hat.beta[0] + b.theta_hat.beta[1]
        assert math.exp(lb - la) == pytest.approx(1 / 7.0, rel=1e-6)

    def test_separated_effect_pinned(self):
        # gcp is positive only on pairs that never form again
        rows = [(0, 1, 0.0, 1.0), (1, 2, 1.5, 2.0), (3, 4, 3.0, 3.5), (3, 4, 5.0, 5.5)]
        data = grid_of(rows, 5, 8.0, ("gcp", "ni"))
        signs = separated_columns(data)
        assert signs.tolist() == [-1, 0]
        fit = fit_block_coordinate(data, TIGHT)
        assert fit.pinned_alpha.tolist() == [True, False]
        assert fit.theta_hat.alpha[0] == -ALPHA_BOUND and fit.converged


class TestNewtonRaphson:
    def test_matches_block(self):
        _, _, _, grids = random_instance(6, n=8, m=80)
        for data in grids.values():
            a = fit_block_coordinate(data, TIGHT)
            b = fit_newton_raphson(data, TIGHT)
            assert b.converged
            np.testing.assert_allclose(a.theta_hat.alpha, b.theta_hat.alpha, atol=1e-6)
            assert abs(a.loglik - b.loglik) <= 1e-9 * abs(b.loglik)

    def test_optimal_against_probes(self, instance):
        _, _, _, grids = instance
        data = grids[INCIDENCE]
        fit = fit_newton_raphson(data, TIGHT)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            probe = ParamVector(fit.theta_hat.alpha + rng.normal(size=data.n_stats) * 0.1,
                                fit.theta_hat.beta + rng.normal(size=data.n_actors) * 0.1,
                                fit.theta_hat.gamma + rng.normal(size=data.n_intervals) * 0.1)
            assert log_likelihood(probe, data) <= fit.loglik + 1e-9

    def test_design_loglik(self, instance):
        _, _, _, grids = instance
        data = grids[DURATION]
        design = ExpandedDesign(data)
        p = random_params(np.random.default_rng(1), data)
        from durational.likelihood import linear_predictor
        assert design.loglik(linear_predictor(p, data), p.gamma) == \
            pytest.approx(log_likelihood(p, data), rel=1e-12)
        assert design.n_rows >= data.n_segments

    def test_memory_guard(self, instance):
        _, _, _, grids = instance
        with pytest.raises(NRInfeasible):
            fit_newton_raphson(grids[INCIDENCE], FitOptions(memory_limit=1000))

    def test_fit_model(self, instance):
        _, _, _, grids = instance
        out = fit_model(grids, engine="newton")
        assert set(out) == {INCIDENCE, DURATION}
        with pytest.raises(ValueError):
            fit_model(grids, engine="gradient")
