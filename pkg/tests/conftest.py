"""Shared fixtures: small random streams, covariates and simulated instances."""

import numpy as np
import pytest

from durational.events import CovariateTable, make_stream
from durational.grid import build_grid
from durational.likelihood import ParamVector
from durational.model import DURATION, INCIDENCE, BaselineGrid, ModelSpec
from durational.simulator import SimConfig, simulate

INC_STATS = ("gcp", "absdiff:x", "match:g")
DUR_STATS = ("ni", "duration", "match:g")


def random_stream(rng, n, m, window_end, mean_len=None):
    """Up to ``m`` non-overlapping events on ``n`` actors, times rounded to 0.1."""
    mean_len = window_end / 10 if mean_len is None else mean_len
    rows, spans = [], {}
    for _ in range(m):
        i, j = sorted(int(a) for a in rng.choice(n, 2, replace=False))
        b = float(np.round(rng.uniform(0, 0.9 * window_end), 1))
        e = float(np.round(b + rng.exponential(mean_len), 1))
        e = e if e < window_end else None
        if e is not None and e <= b:
            continue
        hi = window_end if e is None else e
        if any(not (hi <= bb or b >= (window_end if ee is None else ee))
               for bb, ee in spans.get((i, j), [])):
            continue
        spans.setdefault((i, j), []).append((b, e))
        rows.append((i, j, b, e))
    return make_stream(rows, n_actors=n, window_end=window_end)


def random_covariates(rng, n):
    cov = CovariateTable(n)
    cov.add_monadic("x", rng.normal(size=n))
    cov.add_monadic("g", rng.integers(0, 2, n))
    return cov


def random_instance(seed, n=6, m=40, window_end=20.0, n_intervals=3):
    """Random stream with both sub-model grids built."""
    rng = np.random.default_rng(seed)
    stream = random_stream(rng, n, m, window_end)
    cov = random_covariates(rng, n)
    spec = ModelSpec(INC_STATS, DUR_STATS, BaselineGrid.uniform(window_end, n_intervals))
    return stream, spec, cov, build_grid(stream, spec, cov)


def random_params(rng, data, scale=0.3):
    return ParamVector(rng.normal(size=data.n_stats) * scale,
                       rng.normal(size=data.n_actors) * scale,
                       rng.normal(size=data.n_intervals) * scale)


def small_sim_config(seed, n=20, window_end=100.0, n_intervals=4):
    """Generator with identifiable effects; about 300-600 formations at n=20."""
    rng = np.random.default_rng(seed + 7919)
    cov = CovariateTable(n)
    cov.add_monadic("x", rng.normal(size=n))
    cov.add_monadic("g", rng.integers(0, 2, n))
    grid = BaselineGrid.uniform(window_end, n_intervals)
    spec = ModelSpec(INC_STATS, DUR_STATS, grid)
    gamma = np.linspace(0.0, -0.2, n_intervals)
    params = {
        INCIDENCE: ParamVector((0.3, -0.5, 0.5), rng.normal(-2.2, 0.3, n), gamma),
        DURATION: ParamVector((0.2, 0.2, -0.3), rng.normal(0.0, 0.3, n), gamma),
    }
    return SimConfig(n, spec, params, window_end, cov, seed=seed)


def sim_instance(seed, **kw):
    cfg = small_sim_config(seed, **kw)
    stream = simulate(cfg)
    return cfg, stream, build_grid(stream, cfg.spec, cfg.covariates)


@pytest.fixture
def instance():
    return random_instance(0)
