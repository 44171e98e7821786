"""Sampling durational event streams by competing exponential clocks.

Every pair carries one clock: the formation intensity while the pair is not
interacting and the dissolution intensity while it is. The next transition
happens after an ``Exp(R)`` wait with ``R`` the summed intensity and the
winning pair is drawn proportionally to its intensity. Statistics are
evaluated at the current transition time and held until the next one.

Piecewise baselines are handled window by window. The unit-exponential
residual of the running wait is carried across window seams, so splitting
a window at a point where nothing changes leaves the sample path intact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import EventBudgetExhausted, RateUnderflow
from .events import (CovariateTable, DurationalEvent, EventStream, RiskSetPolicy,
                     TransitionKind, TransitionRecord, from_transitions, pair_arrays)
from .likelihood import ParamVector
from .model import DURATION, INCIDENCE, BaselineGrid, ModelSpec
from .statistics import StatisticsState

UNDERFLOW = 1e-300


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) seeded through a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master: int, index: int) -> int:
    """64-bit seed of replicate ``index`` split off ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class SimConfig:
    """Everything needed to sample one stream.

    ``params`` maps ``"incidence"`` and ``"duration"`` to :class:`ParamVector`
    objects whose ``gamma`` matches the respective grid of ``spec``.
    ``max_events`` bounds the number of sampled transitions.
    """

    n_actors: int
    spec: ModelSpec
    params: dict
    window_end: float
    covariates: Optional[CovariateTable] = None
    max_events: int = 10**7
    seed: int = 0

    def __post_init__(self):
        if self.max_events < 0:
            raise ValueError("max_events must be non-negative")
        for m in (INCIDENCE, DURATION):
            p = self.params[m]
            g = self.spec.grid(m)
            if abs(g.window_end - self.window_end) > 1e-9 * max(1.0, self.window_end):
                raise ValueError(f"{m} grid does not cover [0, {self.window_end}]")
            if len(p.alpha) != len(self.spec.stats(m)) or len(p.beta) != self.n_actors \
                    or len(p.gamma) != g.n_intervals:
                raise ValueError(f"{m} parameters do not match the model statistics")

    @property
    def policy(self) -> RiskSetPolicy:
        return self.spec.policy

    def with_seed(self, seed) -> "SimConfig":
        return replace(self, seed=int(seed))


@dataclass
class SimInfo:
    n_transitions: int = 0
    budget_exhausted: bool = False
    underflow_windows: list = field(default_factory=list)


class _Sampler:
    """Mutable trajectory state shared by consecutive windows."""

    def __init__(self, config: SimConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        n = config.n_actors
        self.n = n
        self.ii, self.jj = pair_arrays(n)
        K = len(self.ii)
        self.state = StatisticsState(n, config.spec, config.covariates)
        pin, pdur = config.params[INCIDENCE], config.params[DURATION]
        self.a_inc, self.a_dur = pin.alpha, pdur.alpha
        self.pop_inc = pin.beta[self.ii] + pin.beta[self.jj]
        self.pop_dur = pdur.beta[self.ii] + pdur.beta[self.jj]
        self.dur_cols = [k for k, s in enumerate(config.spec.duration) if s.kind == "duration"]
        self.eta_inc = self.state.cache[INCIDENCE] @ self.a_inc + self.pop_inc if K else np.zeros(0)
        self.eta_dur_static = (self.state.cache[DURATION] @ self.a_dur + self.pop_dur
                               if K else np.zeros(0))
        self.eta_dur = self.eta_dur_static.copy()
        self.tied = np.zeros(K, dtype=bool)
        self.last_start = np.zeros(K)
        self.busy = np.zeros(n, dtype=np.int64)
        self.exclusive = config.policy is RiskSetPolicy.EXCLUSIVE
        self.eligible = np.ones(K, dtype=bool)
        self.t = 0.0
        self.residual = None  # unit-exponential still to be consumed
        self.records = []
        self.refresh_elapsed(0.0)
        if self.exclusive:
            by_actor = [[] for _ in range(n)]
            for k, (a, b) in enumerate(zip(self.ii, self.jj)):
                by_actor[a].append(k)
                by_actor[b].append(k)
            self.by_actor = [np.asarray(v, dtype=np.int64) for v in by_actor]

    def refresh_elapsed(self, t):
        """Re-evaluate the elapsed-time statistic of tied pairs at ``t``."""
        if not self.dur_cols:
            self.eta_dur = self.eta_dur_static
            return
        p = np.flatnonzero(self.tied)
        add = np.log1p(t - self.last_start[p]) * self.a_dur[self.dur_cols].sum()
        self.eta_dur[p] = self.eta_dur_static[p] + add

    def rates(self, g_inc, g_dur):
        lam = np.where(self.tied, np.exp(np.clip(self.eta_dur + g_dur, -700, 700)),
                       np.exp(np.clip(self.eta_inc + g_inc, -700, 700)))
        if self.exclusive:
            lam = np.where(self.eligible | self.tied, lam, 0.0)
        return lam

    def apply(self, k, t):
        i, j = int(self.ii[k]), int(self.jj[k])
        kind = TransitionKind.DISSOLUTION if self.tied[k] else TransitionKind.FORMATION
        rec = TransitionRecord(i, j, t, kind)
        self.records.append(rec)
        changed = self.state.apply_transition(rec)
        for (a, b), v_inc, v_dur in changed:
            p = a * (2 * self.n - a - 1) // 2 + (b - a - 1)
            self.eta_inc[p] = v_inc @ self.a_inc + self.pop_inc[p]
            self.eta_dur_static[p] = v_dur @ self.a_dur + self.pop_dur[p]
        if kind is TransitionKind.FORMATION:
            self.tied[k] = True
            self.last_start[k] = t
            self.busy[i] += 1
            self.busy[j] += 1
        else:
            self.tied[k] = False
            self.busy[i] -= 1
            self.busy[j] -= 1
        if self.exclusive:
            for a in (i, j):
                idx = self.by_actor[a]
                self.eligible[idx] = (self.busy[self.ii[idx]] == 0) & (self.busy[self.jj[idx]] == 0)
        self.refresh_elapsed(t)


def simulate_constant_window(sampler: _Sampler, t_start: float, t_end: float,
                             g_inc: float, g_dur: float, info: SimInfo) -> list:
    """Sample transitions in ``(t_start, t_end]`` with constant baselines.

    Returns the transitions added in this window. Stops early when the
    event budget is exhausted (``info.budget_exhausted``) or the total rate
    underflows (a :class:`RateUnderflow` warning).
    """
    cfg = sampler.cfg
    rng = sampler.rng
    sampler.t = t_start
    start = len(sampler.records)
    while True:
        if len(sampler.records) >= cfg.max_events:
            info.budget_exhausted = True
            break
        lam = sampler.rates(g_inc, g_dur)
        cum = np.cumsum(lam)
        R = float(cum[-1]) if len(cum) else 0.0
        if R <= UNDERFLOW:
            warnings.warn(f"total rate {R:g} underflows in window ({t_start}, {t_end}]",
                          RateUnderflow, stacklevel=3)
            info.underflow_windows.append((t_start, t_end))
            break
        if sampler.residual is None:
            sampler.residual = -np.log1p(-rng.random())
        dt = sampler.residual / R
        if sampler.t + dt > t_end:
            sampler.residual -= R * (t_end - sampler.t)
            sampler.residual = max(sampler.residual, 0.0)
            sampler.t = t_end
            break
        t = sampler.t + dt
        sampler.residual = None
        k = int(np.searchsorted(cum, rng.random() * R, side="right"))
        k = min(k, len(cum) - 1)
        while lam[k] <= 0:  # guard against landing on a zero-rate pair at the boundary
            k -= 1
        sampler.t = t
        sampler.apply(k, t)
    added = sampler.records[start:]
    info.n_transitions = len(sampler.records)
    return added


def simulate(config: SimConfig, return_info: bool = False):
    """Sample one stream on ``[0, T]``.

    Windows are the merged intervals of both baseline grids. Ties still open
    at ``T`` are returned as censored events.
    """
    rng = make_rng(config.seed)
    sampler = _Sampler(config, rng)
    info = SimInfo()
    g_inc_grid = config.spec.grid(INCIDENCE)
    g_dur_grid = config.spec.grid(DURATION)
    cuts = np.unique(np.concatenate([g_inc_grid.array, g_dur_grid.array]))
    dur_points = set(g_dur_grid.points[1:-1])
    gi = config.params[INCIDENCE].gamma
    gd = config.params[DURATION].gamma
    for a, b in zip(cuts[:-1], cuts[1:]):
        if a in dur_points:
            sampler.refresh_elapsed(a)
        simulate_constant_window(sampler, float(a), float(b), float(gi[g_inc_grid.interval_of(a)]),
                                 float(gd[g_dur_grid.interval_of(a)]), info)
        if info.budget_exhausted:
            warnings.warn(f"event budget of {config.max_events} transitions exhausted at "
                          f"t={sampler.t:g}", EventBudgetExhausted, stacklevel=2)
            break
    events = from_transitions(sampler.records)
    stream = EventStream(tuple(sorted(events, key=lambda e: (e.begin, e.i, e.j))),
                         config.n_actors, float(config.window_end))
    return (stream, info) if return_info else stream


def replicate(config: SimConfig, n_reps: int, master_seed: Optional[int] = None) -> list:
    """``n_reps`` independent streams with seeds split off the master seed."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    master = config.seed if master_seed is None else master_seed
    return [simulate(config.with_seed(derive_seed(master, r))) for r in range(n_reps)]


# -- the recovery-study generator ------------------------------------------------

STUDY_INCIDENCE = ("ccp", "absdiff:x1", "match:x2")
STUDY_DURATION = ("ni", "absdiff:x1", "match:x2")
STUDY_ALPHA_INCIDENCE = (-0.5, 1.0, 0.5)
STUDY_ALPHA_DURATION = (0.5, 0.5, 0.5)


def study_config(n_actors: int = 100, window_end: float = 10_000.0, n_intervals: int = 9,
                 seed: int = 0, gamma_end: float = -0.1, max_events: int = 10**7) -> SimConfig:
    """Generator of the recovery study with freshly drawn covariates and popularity.

    ``x1 ~ N(0, 1)``; ``x2`` uniform on three levels;
    ``beta_inc ~ N(-6 - log(N)/10, 1)``, ``beta_dur ~ N(8/5 - log(N)/10, 1)``;
    both baselines fall linearly from 0 to ``gamma_end`` over ``n_intervals``
    equal intervals.
    """
    rng = make_rng(np.random.SeedSequence(int(seed), spawn_key=(2**31,)))
    n = int(n_actors)
    cov = CovariateTable(n)
    cov.add_monadic("x1", rng.standard_normal(n))
    cov.add_monadic("x2", rng.integers(0, 3, n))
    grid = BaselineGrid.uniform(window_end, n_intervals)
    gamma = np.linspace(0.0, gamma_end, n_intervals)
    b_inc = rng.normal(-6.0 - np.log(n) / 10.0, 1.0, n)
    b_dur = rng.normal(8.0 / 5.0 - np.log(n) / 10.0, 1.0, n)
    spec = ModelSpec(STUDY_INCIDENCE, STUDY_DURATION, grid, grid)
    params = {INCIDENCE: ParamVector(STUDY_ALPHA_INCIDENCE, b_inc, gamma),
              DURATION: ParamVector(STUDY_ALPHA_DURATION, b_dur, gamma)}
    return SimConfig(n, spec, params, float(window_end), cov, max_events, int(seed))
