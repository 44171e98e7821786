"""Intensities, exact exposure integrals, log-likelihood and derivatives of
one sub-model.

Intensity of pair ``(i, j)``::

    lambda_ij(t) = exp(alpha . s_ij(H_t) + beta_i + beta_j + f(t, gamma))

with ``f`` a step function on the baseline grid. All evaluations below work
on a :class:`~durational.grid.LikelihoodGrid` segment table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, InstanceTooLarge, InvalidInterval, PairNotAtRisk,
                     TimeOutOfWindow)
from .events import RiskSetPolicy, TransitionKind
from .grid import LikelihoodGrid
from .model import BaselineGrid, DURATION, INCIDENCE

EXP_CLAMP = 700.0
MAX_BLOCK_ENTRIES = 10**8


def safe_exp(x):
    return np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP))


@dataclass
class ParamVector:
    """``theta = (alpha, beta, gamma)`` of one sub-model."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float)).copy()
        for name in ("alpha", "beta", "gamma"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @classmethod
    def zeros(cls, n_stats, n_actors, n_intervals):
        return cls(np.zeros(n_stats), np.zeros(n_actors), np.zeros(n_intervals))

    @classmethod
    def for_grid(cls, data: LikelihoodGrid):
        return cls.zeros(data.n_stats, data.n_actors, data.n_intervals)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.gamma])

    @classmethod
    def from_flat(cls, x, n_stats, n_actors):
        x = np.asarray(x, dtype=float)
        return cls(x[:n_stats], x[n_stats:n_stats + n_actors], x[n_stats + n_actors:])

    def copy(self):
        return ParamVector(self.alpha, self.beta, self.gamma)

    def check(self, data: LikelihoodGrid):
        if (len(self.alpha), len(self.beta), len(self.gamma)) != (
                data.n_stats, data.n_actors, data.n_intervals):
            raise DimensionMismatch(
                f"parameters ({len(self.alpha)}, {len(self.beta)}, {len(self.gamma)}) do not match "
                f"data ({data.n_stats}, {data.n_actors}, {data.n_intervals})")


# -- pointwise quantities ------------------------------------------------------

def baseline_value(t: float, gamma, grid: BaselineGrid) -> float:
    """``f(t, gamma)``; at a change point the right interval's value applies."""
    if not 0 <= t < grid.window_end:
        raise TimeOutOfWindow(f"t={t} outside [0, {grid.window_end})")
    return float(np.asarray(gamma, dtype=float)[grid.interval_of(t)])


def _stat_vector(stats, pair, submodel, t):
    if hasattr(stats, "vector"):
        return stats.vector(submodel, pair[0], pair[1], t)
    return np.asarray(stats, dtype=float)


def pair_intensity(pair, t: float, params: ParamVector, stats, grid: BaselineGrid,
                   submodel: str = INCIDENCE, policy=RiskSetPolicy.UNRESTRICTED) -> float:
    """Intensity of ``pair`` at ``t``.

    ``stats`` is either a replayed :class:`~durational.statistics.StatisticsState`
    (then the pair must be in the sub-model's risk set) or a ready statistic
    vector.
    """
    i, j = min(pair), max(pair)
    if hasattr(stats, "is_tied"):
        tied = stats.is_tied(i, j)
        at_risk = tied if submodel == DURATION else (stats.instantaneous or not tied)
        if at_risk and submodel == INCIDENCE and RiskSetPolicy.parse(policy) is RiskSetPolicy.EXCLUSIVE:
            at_risk = not stats.partners[i] and not stats.partners[j]
        if not at_risk:
            raise PairNotAtRisk(f"pair {(i, j)} is not at risk for {submodel} at t={t}")
    s = _stat_vector(stats, (i, j), submodel, t)
    eta = params.alpha @ s + params.beta[i] + params.beta[j] + baseline_value(t, params.gamma, grid)
    return float(safe_exp(eta))


def exposure_integral(pair, t_lo: float, t_hi: float, params: ParamVector, stats,
                      grid: BaselineGrid, submodel: str = INCIDENCE) -> float:
    """Exact ``int_{t_lo}^{t_hi} lambda du`` with statistics frozen at ``t_lo``."""
    if not t_lo < t_hi:
        raise InvalidInterval(f"empty interval ({t_lo}, {t_hi}]")
    if t_lo < 0 or t_hi > grid.window_end:
        raise InvalidInterval(f"interval ({t_lo}, {t_hi}] leaves the window")
    i, j = min(pair), max(pair)
    s = _stat_vector(stats, (i, j), submodel, t_lo)
    c = grid.array
    ov = np.clip(np.minimum(c[1:], t_hi) - np.maximum(c[:-1], t_lo), 0.0, None)
    base = float(ov @ safe_exp(params.gamma))
    return float(safe_exp(params.alpha @ s + params.beta[i] + params.beta[j]) * base)


# -- likelihood over a segment table -------------------------------------------

def linear_predictor(params: ParamVector, data: LikelihoodGrid) -> np.ndarray:
    """``alpha . s + beta_i + beta_j`` per segment (baseline excluded)."""
    eta = params.beta[data.actor_i] + params.beta[data.actor_j]
    if data.n_stats:
        eta = eta + data.S @ params.alpha
    return eta


def segment_exposure(params: ParamVector, data: LikelihoodGrid) -> np.ndarray:
    return safe_exp(linear_predictor(params, data)) * data.baseline_integral(params.gamma)


def log_likelihood(params: ParamVector, data: LikelihoodGrid) -> float:
    r"""Poisson log-likelihood

    .. math:: \sum_t \sum_{(i,j)\in U(t)} y \log((t - t^*)\lambda) - (t - t^*)\lambda

    evaluated through the segment table (terms with ``y = 0`` drop the log).
    """
    params.check(data)
    eta = linear_predictor(params, data)
    gam = np.clip(params.gamma, -EXP_CLAMP, EXP_CLAMP)
    mask = data.y > 0
    event_part = float(np.sum(np.clip(eta[mask], -EXP_CLAMP, EXP_CLAMP) + gam[data.qhi[mask]]))
    exposure = float(np.sum(safe_exp(eta) * data.baseline_integral(params.gamma)))
    return event_part - exposure + data.log_offset


def alpha_derivatives(params: ParamVector, data: LikelihoodGrid):
    """Gradient and Hessian of the log-likelihood in ``alpha``."""
    params.check(data)
    e = segment_exposure(params, data)
    S = data.S
    grad = S.T @ (data.y - e)
    hess = -(S * e[:, None]).T @ S
    return grad, hess


@dataclass
class HessianBlocks:
    """The six distinct blocks of the full Hessian, ordered (alpha, beta, gamma)."""

    aa: np.ndarray
    ab: np.ndarray
    ag: np.ndarray
    bb: np.ndarray
    bg: np.ndarray
    gg: np.ndarray  # diagonal, stored as a vector

    def dense(self) -> np.ndarray:
        P, N, Q = self.aa.shape[0], self.bb.shape[0], len(self.gg)
        H = np.zeros((P + N + Q, P + N + Q))
        a, b = slice(0, P), slice(P, P + N)
        g = slice(P + N, P + N + Q)
        H[a, a] = self.aa
        H[a, b] = self.ab
        H[b, a] = self.ab.T
        H[a, g] = self.ag
        H[g, a] = self.ag.T
        H[b, b] = self.bb
        H[b, g] = self.bg
        H[g, b] = self.bg.T
        H[g, g] = np.diag(self.gg)
        return H


def full_derivatives(params: ParamVector, data: LikelihoodGrid, *,
                     max_entries: int = MAX_BLOCK_ENTRIES):
    """Full gradient (alpha, beta, gamma) and Hessian blocks.

    Raises
    ------
    InstanceTooLarge
        If the ``N x Q`` or ``N x N`` blocks exceed ``max_entries``.
    """
    params.check(data)
    P, N, Q = data.n_stats, data.n_actors, data.n_intervals
    if N * Q > max_entries or N * N > max_entries:
        raise InstanceTooLarge(f"N={N}, Q={Q} exceeds the dense-block guard")
    ai, aj = data.actor_i, data.actor_j
    w = safe_exp(linear_predictor(params, data))
    eg = safe_exp(params.gamma)
    e = w * data.baseline_integral(params.gamma)
    S = data.S
    y = data.y
    grad_a = S.T @ (y - e)
    exp_actor = np.bincount(ai, e, N) + np.bincount(aj, e, N)
    grad_b = data.events_per_actor - exp_actor
    per_q = data.interval_aggregate(w) * eg
    grad_g = data.events_per_interval - per_q
    aa = -(S * e[:, None]).T @ S
    ab = np.zeros((P, N))
    for p in range(P):
        ab[p] = -(np.bincount(ai, e * S[:, p], N) + np.bincount(aj, e * S[:, p], N))
    ag = np.zeros((P, Q))
    for p in range(P):
        ag[p] = -data.interval_aggregate(w * S[:, p]) * eg
    pair_tot = np.zeros((N, N))
    np.add.at(pair_tot, (ai, aj), e)
    bb = -(pair_tot + pair_tot.T)
    bb[np.diag_indices(N)] = -exp_actor
    bg = -(data.interval_aggregate(w, ai, N) + data.interval_aggregate(w, aj, N)) * eg[None, :]
    gg = -per_q
    grad = np.concatenate([grad_a, grad_b, grad_g])
    return grad, HessianBlocks(aa, ab, ag, bb, bg, gg)


def joint_log_likelihood(params_by_model: dict, grids: dict) -> float:
    """Sum of the sub-model log-likelihoods (they share no parameters)."""
    return sum(log_likelihood(params_by_model[m], grids[m]) for m in grids)


# -- literal evaluation (oracle) ---------------------------------------------------

def naive_log_likelihood(params: ParamVector, stream, spec, submodel: str,
                         covariates=None) -> float:
    """Triple loop over grid intervals, at-risk pairs and statistics.

    Shares nothing with the segment machinery beyond the parameter layout:
    statistics come from :func:`~durational.statistics.recompute_full`, risk
    sets from :func:`~durational.events.risk_set`. Slow; for small instances.
    """
    from .events import pair_state_at, risk_set
    from .statistics import recompute_full

    grid = spec.grid(submodel)
    T = stream.window_end
    times = sorted({0.0, T, *grid.points, *(r.t for r in stream.transitions)})
    kind = TransitionKind.FORMATION if submodel == INCIDENCE else TransitionKind.DISSOLUTION
    events_at = {}
    for r in stream.transitions:
        if r.kind is kind:
            events_at.setdefault(r.t, set()).add((r.i, r.j))
    stats = spec.stats(submodel)
    n = stream.n_actors
    total = 0.0
    for t_prev, t in zip(times[:-1], times[1:]):
        state = pair_state_at(stream, t)
        if spec.rem or stream.instantaneous:
            pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        else:
            pairs = risk_set(state, spec.policy, kind)
        full = recompute_full(stream, spec, t, covariates)[submodel]
        q = grid.interval_left_of(t)
        for (a, b) in sorted(pairs):
            k = a * (2 * n - a - 1) // 2 + (b - a - 1)
            s = full[k].copy()
            for c, st in enumerate(stats):
                if st.kind == "duration":
                    s[c] = np.log(t_prev - state.last_start[a, b] + 1.0)
            lam = np.exp(params.alpha @ s + params.beta[a] + params.beta[b] + params.gamma[q])
            y = 1.0 if (a, b) in events_at.get(t, ()) else 0.0
            if y:
                total += np.log((t - t_prev) * lam)
            total -= (t - t_prev) * lam
    return float(total)
