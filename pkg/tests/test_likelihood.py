import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from durational.errors import (DimensionMismatch, InstanceTooLarge, InvalidInterval,
                               PairNotAtRisk, TimeOutOfWindow)
from durational.events import make_stream
from durational.grid import build_grid
from durational.likelihood import (ParamVector, alpha_derivatives, baseline_value,
                                   exposure_integral, full_derivatives, joint_log_likelihood,
                                   log_likelihood, naive_log_likelihood, pair_intensity)
from durational.model import DURATION, INCIDENCE, BaselineGrid, ModelSpec
from durational.statistics import StatisticsState, recompute_full

from conftest import random_instance, random_params


def central_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestBaseline:
    def test_zero(self):
        g = BaselineGrid((0.0, 5.0, 10.0))
        assert all(baseline_value(t, [0.0, 0.0], g) == 0.0 for t in (0.0, 3.0, 9.9))

    def test_lookup_and_boundary(self):
        g = BaselineGrid((0.0, 5.0, 10.0))
        assert baseline_value(7.0, [0.0, -0.3], g) == -0.3
        assert baseline_value(5.0, [0.0, -0.3], g) == -0.3

    def test_out_of_window(self):
        with pytest.raises(TimeOutOfWindow):
            baseline_value(10.0, [0.0, 0.0], BaselineGrid((0.0, 5.0, 10.0)))

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            BaselineGrid((0.0, 3.0, 3.0))
        with pytest.raises(ValueError):
            BaselineGrid((1.0, 3.0))
        assert BaselineGrid.fixed_width(10.0, 3.0).points == (0.0, 3.0, 6.0, 9.0, 10.0)


class TestIntensity:
    grid = BaselineGrid((0.0, 10.0))

    def test_identity(self):
        state = StatisticsState(3, ModelSpec(("gcp",), ()))
        p = ParamVector.zeros(1, 3, 1)
        assert pair_intensity((0, 2), 1.0, p, state, self.grid) == 1.0

    def test_log_two(self):
        p = ParamVector([1.0], [0.0, 0.0], [0.0])
        assert pair_intensity((0, 1), 1.0, p, [math.log(2)], self.grid) == pytest.approx(2.0)

    def test_unit_step(self):
        a = 2.867
        p0 = pair_intensity((0, 1), 1.0, ParamVector([a], [0, 0], [0]), [0.0], self.grid)
        p1 = pair_intensity((0, 1), 1.0, ParamVector([a], [0, 0], [0]), [1.0], self.grid)
        assert p1 / p0 == pytest.approx(17.58, abs=5e-3)
        assert 2 ** a == pytest.approx(7.295, abs=5e-4)

    def test_not_at_risk(self):
        s = make_stream([(0, 1, 0.0, None)], 3, 10.0)
        spec = ModelSpec(("gcp",), ("ni",))
        state = StatisticsState(3, spec).replay(s.transitions, until=1.0)
        p = ParamVector.zeros(1, 3, 1)
        with pytest.raises(PairNotAtRisk):
            pair_intensity((0, 1), 1.0, p, state, self.grid, INCIDENCE)
        with pytest.raises(PairNotAtRisk):
            pair_intensity((0, 2), 1.0, p, state, self.grid, DURATION)
        with pytest.raises(PairNotAtRisk):
            pair_intensity((0, 2), 1.0, p, state, self.grid, INCIDENCE, "exclusive")
        assert pair_intensity((0, 1), 1.0, p, state, self.grid, DURATION) == 1.0

    def test_clamped(self):
        p = ParamVector([1.0], [0.0, 0.0], [0.0])
        assert np.isfinite(pair_intensity((0, 1), 1.0, p, [1e4], self.grid))


class TestExposure:
    def test_constant(self):
        g = BaselineGrid((0.0, 10.0))
        assert exposure_integral((0, 1), 2.0, 5.0, ParamVector.zeros(0, 2, 1), [], g) == 3.0

    def test_change_point(self):
        g = BaselineGrid((0.0, 1.0, 2.0))
        p = ParamVector([], [0.0, 0.0], [0.0, math.log(2)])
        assert exposure_integral((0, 1), 0.0, 2.0, p, [], g) == pytest.approx(3.0)

    def test_invalid(self):
        g = BaselineGrid((0.0, 10.0))
        p = ParamVector.zeros(0, 2, 1)
        with pytest.raises(InvalidInterval):
            exposure_integral((0, 1), 3.0, 3.0, p, [], g)
        with pytest.raises(InvalidInterval):
            exposure_integral((0, 1), 3.0, 11.0, p, [], g)

    def test_riemann(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            g = BaselineGrid(tuple(np.concatenate([[0.0], np.sort(rng.uniform(0, 10, 4)), [10.0]])))
            p = ParamVector(rng.normal(size=2), rng.normal(size=3), rng.normal(size=5))
            s = rng.normal(size=2)
            lo, hi = np.sort(rng.uniform(0, 10, 2))
            m = 10**5
            mid = lo + (np.arange(m) + 0.5) * (hi - lo) / m
            lam = np.exp(p.alpha @ s + p.beta[0] + p.beta[2] + p.gamma[g.interval_of(mid)])
            exact = exposure_integral((0, 2), lo, hi, p, s, g)
            assert lam.sum() * (hi - lo) / m == pytest.approx(exact, rel=1e-4)


class TestLogLikelihood:
    def test_no_events(self):
        s = make_stream([], 2, 1.0)
        data = build_grid(s, ModelSpec((), (), BaselineGrid((0.0, 1.0))))[INCIDENCE]
        assert log_likelihood(ParamVector.zeros(0, 2, 1), data) == -1.0

    def test_one_event(self):
        s = make_stream([(0, 1, 1.0, None)], 2, 1.0)
        data = build_grid(s, ModelSpec((), (), BaselineGrid((0.0, 1.0))))[INCIDENCE]
        assert data.n_events == 1
        assert log_likelihood(ParamVector.zeros(0, 2, 1), data) == -1.0

    def test_dimension_mismatch(self, instance):
        _, _, _, grids = instance
        with pytest.raises(DimensionMismatch):
            log_likelihood(ParamVector.zeros(1, 6, 3), grids[INCIDENCE])

    @pytest.mark.parametrize("seed", range(4))
    def test_naive_oracle(self, seed):
        stream, spec, cov, grids = random_instance(seed, n=5, m=20)
        rng = np.random.default_rng(seed)
        for m, data in grids.items():
            p = random_params(rng, data)
            assert log_likelihood(p, data) == pytest.approx(
                naive_log_likelihood(p, stream, spec, m, cov), abs=1e-10, rel=1e-12)

    def test_exclusive_naive_oracle(self):
        rows = [(0, 1, 0.0, 1.0), (2, 3, 0.5, 2.0), (0, 2, 2.5, 3.0), (1, 3, 1.5, None)]
        s = make_stream(rows, 4, 4.0)
        spec = ModelSpec(("gcp", "ni"), ("ni",), BaselineGrid.uniform(4.0, 2), policy="exclusive")
        grids = build_grid(s, spec)
        rng = np.random.default_rng(0)
        for m, data in grids.items():
            p = random_params(rng, data)
            assert log_likelihood(p, data) == pytest.approx(
                naive_log_likelihood(p, s, spec, m), abs=1e-10)

    def test_separable(self, instance):
        _, _, _, grids = instance
        rng = np.random.default_rng(1)
        params = {m: random_params(rng, d) for m, d in grids.items()}
        total = log_likelihood(params[INCIDENCE], grids[INCIDENCE]) + \
            log_likelihood(params[DURATION], grids[DURATION])
        assert joint_log_likelihood(params, grids) == pytest.approx(total, abs=0, rel=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from([INCIDENCE, DURATION]))
    def test_concave(self, seed, lam, m):
        _, _, _, grids = random_instance(seed % 50)
        data = grids[m]
        rng = np.random.default_rng(seed)
        p1, p2 = random_params(rng, data, 1.0), random_params(rng, data, 1.0)
        mix = ParamVector.from_flat(lam * p1.flat() + (1 - lam) * p2.flat(),
                                    data.n_stats, data.n_actors)
        assert log_likelihood(mix, data) >= \
            lam * log_likelihood(p1, data) + (1 - lam) * log_likelihood(p2, data) - 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-5, 5))
    def test_null_direction(self, seed, c):
        _, _, _, grids = random_instance(seed % 50)
        data = grids[INCIDENCE]
        p = random_params(np.random.default_rng(seed), data)
        q = ParamVector(p.alpha, p.beta - c / 2, p.gamma + c)
        assert log_likelihood(q, data) == pytest.approx(log_likelihood(p, data), abs=1e-9)


def rem_direct(params, stream, grid, stats, covariates=None):
    """Relational event log-likelihood: sum of event log-rates minus the
    integrated rate of every pair, plus the ``log(t - t*)`` offset."""
    spec = ModelSpec(stats, (), grid, rem=True)
    times = sorted({*grid.points, *(e.begin for e in stream.events)})
    n = stream.n_actors
    ii, jj = np.triu_indices(n, 1)
    total = 0.0
    for a, b in zip(times[:-1], times[1:]):
        s = recompute_full(stream, spec, b, covariates)["incidence"]
        eta = s @ params.alpha + params.beta[ii] + params.beta[jj] + \
            params.gamma[grid.interval_of(a)]
        total -= np.exp(eta).sum() * (b - a)
        for e in stream.events:
            if e.begin == b:
                k = int(np.flatnonzero((ii == e.i) & (jj == e.j))[0])
                total += eta[k] + math.log(b - a)
    return total


def test_rem_special_case():
    rng = np.random.default_rng(2)
    rows = [(int(a), int(b), float(t), None) for t in np.sort(rng.uniform(0, 10, 25)).round(2)
            for a, b in [sorted(rng.choice(5, 2, replace=False))]]
    s = make_stream(rows, 5, 10.0, instantaneous=True)
    grid = BaselineGrid.uniform(10.0, 3)
    spec = ModelSpec(("gcp", "ni"), (), grid, rem=True)
    grids = build_grid(s, spec)
    assert set(grids) == {INCIDENCE}
    p = random_params(rng, grids[INCIDENCE])
    assert log_likelihood(p, grids[INCIDENCE]) == pytest.approx(
        rem_direct(p, s, grid, ("gcp", "ni")), abs=1e-9)


class TestDerivatives:
    @pytest.mark.parametrize("seed", range(3))
    def test_alpha_fd(self, seed):
        _, _, _, grids = random_instance(seed)
        rng = np.random.default_rng(seed)
        for data in grids.values():
            p = random_params(rng, data)
            g, H = alpha_derivatives(p, data)

            def f(a):
                return log_likelihood(ParamVector(a, p.beta, p.gamma), data)
            np.testing.assert_allclose(g, central_gradient(f, p.alpha), rtol=1e-6, atol=1e-8)
            assert np.all(np.linalg.eigvalsh(H) <= 1e-10)

    def test_alpha_zero_at_fixed_point(self):
        from durational.estimator import FitOptions, fit_block_coordinate
        _, _, _, grids = random_instance(1, n=6, m=60)
        fit = fit_block_coordinate(grids[INCIDENCE], FitOptions(1e-10, 1e-14, max_iter=20000))
        g, _ = alpha_derivatives(fit.theta_hat, grids[INCIDENCE])
        assert np.abs(g).max() < 1e-6

    def test_hand_single_pair(self):
        s = make_stream([(0, 1, 0.5, 1.5), (0, 1, 2.0, None)], 2, 4.0)
        data = build_grid(s, ModelSpec(("ni",), (), BaselineGrid((0.0, 4.0))))[INCIDENCE]
        # exposure segments: (0, .5] with s=0 ends in an event, (1.5, 2] with s=log 2 too
        p = ParamVector([0.3], [0.0, 0.0], [0.0])
        g, _ = alpha_derivatives(p, data)
        l2 = math.log(2)
        assert g[0] == pytest.approx(l2 * (1 - 0.5 * 2 ** 0.3))

    def test_full_symmetric_and_fd(self):
        _, _, _, grids = random_instance(3)
        rng = np.random.default_rng(3)
        for data in grids.values():
            p = random_params(rng, data)
            grad, blocks = full_derivatives(p, data)
            H = blocks.dense()
            np.testing.assert_array_equal(H, H.T)

            def f(x):
                return log_likelihood(ParamVector.from_flat(x, data.n_stats, data.n_actors), data)

            def g(x):
                return full_derivatives(ParamVector.from_flat(x, data.n_stats, data.n_actors),
                                        data)[0]
            x = p.flat()
            np.testing.assert_allclose(grad, central_gradient(f, x), rtol=1e-6, atol=1e-8)
            Hfd = np.column_stack([central_gradient(lambda z: g(z)[k], x) for k in range(len(x))])
            np.testing.assert_allclose(H, Hfd, rtol=1e-5, atol=1e-7)

    def test_two_actor_beta_block(self):
        s = make_stream([(0, 1, 1.0, 2.0)], 2, 4.0)
        data = build_grid(s, ModelSpec((), (), BaselineGrid((0.0, 4.0))))[INCIDENCE]
        p = ParamVector([], [0.2, -0.1], [0.0])
        grad, b = full_derivatives(p, data)
        e = (1.0 + 2.0) * math.exp(0.1)  # exposure on (0, 1] and (2, 4]
        np.testing.assert_allclose(b.bb, -e * np.ones((2, 2)))
        np.testing.assert_allclose(grad[:2], 1.0 - e)

    def test_guard(self, instance):
        _, _, _, grids = instance
        data = grids[INCIDENCE]
        with pytest.raises(InstanceTooLarge):
            full_derivatives(ParamVector.for_grid(data), data, max_entries=10)
