"""Block-coordinate ascent for one sub-model and a Newton-Raphson reference.

The ascent cycles through three conditional updates:

1. ``alpha``: a Newton step on the statistic effects, halved until the
   log-likelihood does not decrease;
2. ``beta``: the closed-form maximizer of an AM-GM minorizer of the
   log-likelihood in the popularity parameters;
3. ``gamma``: the closed-form conditional maximizer of the baseline levels.

Every iteration ends with the identifiability shift ``gamma[0] = 0``.
"""

from __future__ import annotations

import enum
import resource
import sys
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import (CollinearStatistics, InstanceTooLarge, MaxIterExceeded, NonFiniteLikelihood,
                     NRInfeasible, SingularHessian, ZeroExposureInterval)
from .grid import LikelihoodGrid
from .likelihood import ParamVector, linear_predictor, log_likelihood, safe_exp

BETA_FLOOR = -30.0
ALPHA_BOUND = 30.0
DEFAULT_MEMORY_LIMIT = 16 * 2**30


class BetaOrder(enum.Enum):
    JACOBI = "jacobi"
    GAUSS_SEIDEL = "gauss_seidel"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        if key in ("gaussseidel", "gs"):
            key = "gauss_seidel"
        return cls(key)


@dataclass
class FitOptions:
    """Stopping rule and update variants.

    Both ``||theta_k+1 - theta_k||_2 < tol_param`` and
    ``|l_k+1 - l_k| / |l_k+1| < tol_rel_ll`` must hold to stop.
    """

    tol_param: float = 1e-3
    tol_rel_ll: float = 1e-3
    max_iter: int = 500
    beta_update_order: BetaOrder = BetaOrder.JACOBI
    step1_halving: bool = True
    max_halvings: int = 30
    beta_floor: float = BETA_FLOOR
    memory_limit: float = DEFAULT_MEMORY_LIMIT

    def __post_init__(self):
        if self.tol_param <= 0 or self.tol_rel_ll <= 0:
            raise ValueError("tolerances must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        self.max_iter = int(self.max_iter)
        self.beta_update_order = BetaOrder.parse(self.beta_update_order)


@dataclass
class FitResult:
    theta_hat: ParamVector
    ll_trace: list
    iterations: int
    converged: bool
    wall_time: float
    peak_memory: int
    method: str = "block"
    submodel: str = ""
    stat_names: list = field(default_factory=list)
    floored: np.ndarray = None
    gamma_groups: np.ndarray = None
    n_events: int = 0
    # effects held fixed: separated (at the bound) or without information
    pinned_alpha: np.ndarray = None

    @property
    def loglik(self) -> float:
        return self.ll_trace[-1]

    @property
    def n_parameters(self) -> int:
        """Free parameters: statistics, active actors, baseline groups minus the pin."""
        n_act = int((~self.floored).sum()) if self.floored is not None else len(self.theta_hat.beta)
        n_grp = len(np.unique(self.gamma_groups)) if self.gamma_groups is not None \
            else len(self.theta_hat.gamma)
        return len(self.theta_hat.alpha) + n_act + n_grp - 1


def peak_rss_bytes() -> int:
    """Peak resident set of this process so far."""
    r = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(r if sys.platform == "darwin" else r * 1024)


# -- identifiability -------------------------------------------------------------

def normalize_identifiability(theta: ParamVector) -> ParamVector:
    """Shift ``gamma`` so that ``gamma[0] = 0`` and compensate in ``beta``."""
    out = theta.copy()
    g0 = out.gamma[0]
    out.gamma = out.gamma - g0
    out.beta = out.beta + g0 / 2.0
    return out


# -- baseline groups ---------------------------------------------------------------

def gamma_groups(events_per_interval) -> np.ndarray:
    """Group label per baseline interval.

    An interval without events shares the level of the preceding interval;
    leading empty intervals share the level of the first non-empty one.
    """
    y = np.asarray(events_per_interval)
    return np.maximum(np.cumsum(y > 0) - 1, 0).astype(np.int64)


def separated_columns(data: LikelihoodGrid) -> np.ndarray:
    """Statistics whose effect has its maximum likelihood at infinity.

    A column of one sign that is zero on every event segment but not on all
    exposure makes the log-likelihood monotone in its coefficient. Returns
    the limiting sign per column (-1, +1) or 0 where the MLE is finite.
    """
    out = np.zeros(data.n_stats, dtype=np.int64)
    ev = data.y > 0
    for p in range(data.n_stats):
        col = data.S[:, p]
        if not np.any(col != 0) or np.any(col[ev] != 0):
            continue
        if np.all(col >= 0):
            out[p] = -1
        elif np.all(col <= 0):
            out[p] = 1
    return out


def estimable_columns(data: LikelihoodGrid, signs=None) -> np.ndarray:
    """Columns with a finite, identified effect.

    Separated columns and columns that vanish everywhere (whose effect the
    likelihood does not depend on) are held fixed by the fitters.
    """
    signs = separated_columns(data) if signs is None else signs
    return (signs == 0) & np.any(data.S != 0, axis=0)


def pin_separated(alpha, signs) -> np.ndarray:
    """Move separated coefficients to ``sign * ALPHA_BOUND``."""
    a = np.asarray(alpha, dtype=float).copy()
    a[signs != 0] = signs[signs != 0] * ALPHA_BOUND
    return a


# -- the three steps -----------------------------------------------------------

def _solve_ridge(A: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``A d = g`` for symmetric PSD ``A``, adding a ridge if needed."""
    P = len(g)
    try:
        return linalg.cho_solve(linalg.cho_factor(A), g)
    except linalg.LinAlgError:
        pass
    scale = np.trace(A) / P if P else 0.0
    if scale <= 0 or not np.isfinite(scale):
        raise CollinearStatistics("statistic block of the Hessian is zero")
    ridge = 1e-8
    while ridge <= 1e-2 * (1 + 1e-12):
        try:
            return linalg.cho_solve(linalg.cho_factor(A + ridge * scale * np.eye(P)), g)
        except linalg.LinAlgError:
            ridge *= 10
    raise SingularHessian("statistic block stays singular after ridge regularization")


def alpha_step(theta: ParamVector, data: LikelihoodGrid, *, halving: bool = True,
               max_halvings: int = 30, free: Optional[np.ndarray] = None) -> np.ndarray:
    """Newton update of ``alpha`` with ``beta`` and ``gamma`` held fixed.

    Only the coordinates in the boolean mask ``free`` move (default: all).
    """
    P = data.n_stats
    free = np.ones(P, bool) if free is None else np.asarray(free, bool)
    if P == 0 or not free.any():
        return theta.alpha.copy()
    S = data.S[:, free]
    B = data.baseline_integral(theta.gamma)
    b = theta.beta[data.actor_i] + theta.beta[data.actor_j]
    if not free.all():
        b = b + data.S[:, ~free] @ theta.alpha[~free]
    ymask = data.y > 0

    def ll_of(a):
        eta = S @ a + b
        return (float(np.sum(np.clip(eta[ymask], -700, 700)))
                - float(np.sum(safe_exp(eta) * B)))

    a0 = theta.alpha[free]
    eta = S @ a0 + b
    e = safe_exp(eta) * B
    g = S.T @ (data.y - e)
    A = (S * e[:, None]).T @ S
    d = _solve_ridge(A, g)
    out = theta.alpha.copy()
    if not halving:
        out[free] = a0 + d
        return out
    base = ll_of(a0)
    step = 1.0
    for _ in range(max_halvings + 1):
        cand = a0 + step * d
        val = ll_of(cand)
        if np.isfinite(val) and val >= base:
            out[free] = cand
            return out
        step *= 0.5
    return out


def _pair_weights(theta: ParamVector, data: LikelihoodGrid) -> np.ndarray:
    """``exp(alpha . s) * int exp(f)`` per segment: exposure without popularity."""
    w = data.baseline_integral(theta.gamma)
    if data.n_stats:
        w = w * safe_exp(data.S @ theta.alpha)
    return w


def actor_exposure(theta: ParamVector, data: LikelihoodGrid) -> np.ndarray:
    """``E_i = sum over segments involving i of the segment exposure``."""
    n = data.n_actors
    e = _pair_weights(theta, data) * np.exp(theta.beta[data.actor_i] + theta.beta[data.actor_j])
    return np.bincount(data.actor_i, e, n) + np.bincount(data.actor_j, e, n)


def beta_step(theta: ParamVector, data: LikelihoodGrid, order=BetaOrder.JACOBI,
              floor: float = BETA_FLOOR) -> np.ndarray:
    """Maximizer of the minorizer in ``beta``.

    Jacobi form::

        beta_i <- beta_i + (log Y_i - log E_i) / 2

    with ``Y_i`` the actor's events and ``E_i`` its current exposure. Actors
    without events move to ``min(beta_i, floor)``.
    """
    order = BetaOrder.parse(order)
    Y = data.events_per_actor
    beta = theta.beta.copy()
    dead = Y <= 0
    if order is BetaOrder.JACOBI:
        E = actor_exposure(theta, data)
        live = ~dead & (E > 0)
        beta[live] += 0.5 * (np.log(Y[live]) - np.log(E[live]))
        beta[dead] = np.minimum(beta[dead], floor)
        return beta
    # Gauss-Seidel: sequential single-actor updates, each the exact maximizer of
    # the minorizer built at the partially updated point
    w = _pair_weights(theta, data)
    n = data.n_actors
    ai, aj = data.actor_i, data.actor_j
    segs_of = _actor_index(data)
    for i in range(n):
        if dead[i]:
            beta[i] = min(beta[i], floor)
            continue
        idx = segs_of[i]
        other = np.where(ai[idx] == i, aj[idx], ai[idx])
        E_i = float(np.sum(w[idx] * np.exp(beta[i] + beta[other])))
        if E_i > 0:
            beta[i] += 0.5 * (np.log(Y[i]) - np.log(E_i))
    return beta


def _actor_index(data: LikelihoodGrid):
    n = data.n_actors
    ends = np.concatenate([data.actor_i, data.actor_j])
    seg = np.concatenate([np.arange(data.n_segments)] * 2)
    order = np.argsort(ends, kind="stable")
    bounds = np.searchsorted(ends[order], np.arange(n + 1))
    return [seg[order[bounds[k]:bounds[k + 1]]] for k in range(n)]


def surrogate(beta, theta_k: ParamVector, data: LikelihoodGrid) -> float:
    r"""Minorizer :math:`m(\beta \mid \theta_k)` of the log-likelihood in ``beta``.

    The bilinear term :math:`p_i p_j` of each exposure is bounded by
    :math:`(p_j^k/p_i^k\, p_i^2 + p_i^k/p_j^k\, p_j^2)/2`, which separates the
    actors. ``m`` equals the log-likelihood at ``beta = theta_k.beta``.
    """
    beta = np.asarray(beta, dtype=float)
    w = _pair_weights(theta_k, data)
    bk = theta_k.beta
    ai, aj = data.actor_i, data.actor_j
    ymask = data.y > 0
    rest = linear_predictor(ParamVector(theta_k.alpha, np.zeros_like(bk), theta_k.gamma), data)
    event = float(np.sum(rest[ymask] + beta[ai[ymask]] + beta[aj[ymask]]
                         + np.asarray(theta_k.gamma)[data.qhi[ymask]]))
    bound = 0.5 * w * (np.exp(2 * beta[ai] + bk[aj] - bk[ai]) + np.exp(2 * beta[aj] + bk[ai] - bk[aj]))
    return event - float(np.sum(bound)) + data.log_offset


def gamma_step(theta: ParamVector, data: LikelihoodGrid, groups=None) -> np.ndarray:
    """Closed-form baseline levels ``log(sum y / sum q)`` per interval group."""
    Q = data.n_intervals
    if groups is None:
        groups = gamma_groups(data.events_per_interval)
    eta = linear_predictor(theta, data)
    qsum = data.interval_aggregate(safe_exp(eta))
    ysum = data.events_per_interval
    bad = (qsum <= 0) & (ysum > 0)
    if bad.any():
        raise ZeroExposureInterval(f"interval(s) {np.flatnonzero(bad).tolist()} have events "
                                   "but no exposure")
    G = int(groups.max()) + 1 if Q else 0
    Yg = np.bincount(groups, ysum, G)
    Qg = np.bincount(groups, qsum, G)
    if Yg.sum() == 0:
        return theta.gamma.copy()
    with np.errstate(divide="ignore"):
        lev = np.log(Yg) - np.log(Qg)
    return lev[groups]


# -- driver -----------------------------------------------------------------

def _param_delta(new: ParamVector, old: ParamVector, live: np.ndarray, free=None) -> float:
    da = new.alpha - old.alpha
    if free is not None:
        da = da[free]
    d = np.concatenate([da, (new.beta - old.beta)[live], new.gamma - old.gamma])
    return float(np.linalg.norm(d))


def _converged(delta, ll_new, ll_old, opts) -> bool:
    rel = abs(ll_new - ll_old) / max(abs(ll_new), 1e-300)
    return delta < opts.tol_param and rel < opts.tol_rel_ll


def fit_block_coordinate(data: LikelihoodGrid, opts: Optional[FitOptions] = None,
                         init: Optional[ParamVector] = None, callback=None) -> FitResult:
    """Fit one sub-model by block-coordinate ascent from ``theta = 0``.

    Parameters
    ----------
    data : LikelihoodGrid
    opts : FitOptions, optional
    init : ParamVector, optional
        Starting point; zeros by default.
    callback : callable, optional
        Called as ``callback(k, theta, ll)`` after each iteration.

    Returns
    -------
    FitResult
        Normalized estimate with ``ll_trace[0]`` the starting value.
    """
    opts = opts or FitOptions()
    t0 = time.perf_counter()
    theta = ParamVector.for_grid(data) if init is None else init.copy()
    theta.check(data)
    groups = gamma_groups(data.events_per_interval)
    live = data.events_per_actor > 0
    signs = separated_columns(data)
    free = estimable_columns(data, signs)
    ll = log_likelihood(theta, data)
    if not np.isfinite(ll):
        raise NonFiniteLikelihood("log-likelihood at the starting point is not finite")
    trace = [ll]
    converged = False
    k = 0
    for k in range(1, opts.max_iter + 1):
        old = theta
        new = theta.copy()
        if k == 1 and not free.all():
            # separated effects jump to their bound; this only raises l
            new.alpha = pin_separated(new.alpha, signs)
        new.alpha = alpha_step(new, data, halving=opts.step1_halving,
                               max_halvings=opts.max_halvings, free=free)
        new.beta = beta_step(new, data, opts.beta_update_order, opts.beta_floor)
        new.gamma = gamma_step(new, data, groups)
        new = normalize_identifiability(new)
        ll_new = log_likelihood(new, data)
        if not np.isfinite(ll_new):
            raise NonFiniteLikelihood(f"log-likelihood became non-finite at iteration {k}")
        trace.append(ll_new)
        theta = new
        if callback is not None:
            callback(k, theta, ll_new)
        if _converged(_param_delta(new, old, live, free), ll_new, trace[-2], opts):
            converged = True
            break
    if not converged:
        warnings.warn(f"block-coordinate ascent stopped after {opts.max_iter} iterations",
                      MaxIterExceeded, stacklevel=2)
    return FitResult(theta, trace, k, converged, time.perf_counter() - t0, peak_rss_bytes(),
                     "block", data.submodel, data.stat_names, ~live, groups, data.n_events,
                     ~free)


# -- Newton-Raphson on the expanded design ------------------------------------------

ROW_BYTES = 4 + 4 + 8  # segment id, cell id, exposure length


class ExpandedDesign:
    """The pair-by-global-interval rows of a Poisson GLM.

    Every segment is split at each point of the global grid it spans, which
    is the literal layout of the sum over time points and at-risk pairs.
    Rows store the segment id, the global interval (cell) and its length.
    """

    def __init__(self, data: LikelihoodGrid, memory_limit: float = DEFAULT_MEMORY_LIMIT):
        gt = data.grid_times
        a = np.searchsorted(gt, data.lo, side="left")
        b = np.searchsorted(gt, data.hi, side="left")
        counts = (b - a).astype(np.int64)
        n_rows = int(counts.sum())
        need = self.estimate_bytes(n_rows, data)
        if need > memory_limit:
            raise NRInfeasible(f"expanded design needs ~{need / 2**30:.1f} GiB "
                               f"({n_rows:,} rows), limit {memory_limit / 2**30:.1f} GiB")
        self.data = data
        self.n_rows = n_rows
        starts = np.repeat(a - np.cumsum(np.concatenate([[0], counts[:-1]])), counts)
        cell = (starts + np.arange(n_rows)).astype(np.int32)
        self.seg = np.repeat(np.arange(data.n_segments, dtype=np.int32), counts)
        self.cell = cell
        self.length = (gt[cell + 1] - gt[cell]).astype(np.float64)
        self.cell_interval = data.baseline.interval_left_of(gt[1:])

    @staticmethod
    def estimate_bytes(n_rows: int, data: LikelihoodGrid, chunk: int = 2**22) -> int:
        return int(n_rows * ROW_BYTES + 4 * min(n_rows, chunk) * 8
                   + data.n_segments * (data.n_stats + 8) * 8)

    @classmethod
    def count_rows(cls, data: LikelihoodGrid) -> int:
        gt = data.grid_times
        return int(np.sum(np.searchsorted(gt, data.hi) - np.searchsorted(gt, data.lo)))

    def nbytes(self) -> int:
        return self.seg.nbytes + self.cell.nbytes + self.length.nbytes

    def aggregate(self, eta_seg, gamma, groups, n_groups, chunk: int = 2**22):
        """Row pass: per-segment exposure and per-(segment, group) exposure."""
        n_seg = self.data.n_segments
        eg = np.clip(gamma, -700, 700)
        cell_gamma = eg[self.cell_interval]
        cell_group = groups[self.cell_interval]
        e_seg = np.zeros(n_seg)
        e_sg = np.zeros(n_seg * n_groups)
        for s in range(0, self.n_rows, chunk):
            seg = self.seg[s:s + chunk]
            cell = self.cell[s:s + chunk]
            w = safe_exp(eta_seg[seg] + cell_gamma[cell]) * self.length[s:s + chunk]
            e_seg += np.bincount(seg, w, n_seg)
            e_sg += np.bincount(seg.astype(np.int64) * n_groups + cell_group[cell], w,
                                n_seg * n_groups)
        return e_seg, e_sg.reshape(n_seg, n_groups)

    def loglik(self, eta_seg, gamma, chunk: int = 2**22) -> float:
        data = self.data
        ymask = data.y > 0
        event = float(np.sum(np.clip(eta_seg[ymask], -700, 700)
                             + np.clip(gamma, -700, 700)[data.qhi[ymask]]))
        eg = np.clip(gamma, -700, 700)
        cell_gamma = eg[self.cell_interval]
        total = 0.0
        for s in range(0, self.n_rows, chunk):
            seg = self.seg[s:s + chunk]
            total += float(np.sum(safe_exp(eta_seg[seg] + cell_gamma[self.cell[s:s + chunk]])
                                  * self.length[s:s + chunk]))
        return event - total + data.log_offset


def fit_newton_raphson(data: LikelihoodGrid, opts: Optional[FitOptions] = None,
                       design: Optional[ExpandedDesign] = None) -> FitResult:
    """Damped full-parameter Newton-Raphson on the expanded Poisson design.

    ``gamma[0]`` and actors without events are held fixed (the latter at the
    floor), empty baseline intervals share their neighbour's level, exactly
    as in :func:`fit_block_coordinate`. Steps are halved until ascent.

    Raises
    ------
    NRInfeasible
        When the expanded design would exceed ``opts.memory_limit``.
    """
    opts = opts or FitOptions()
    t0 = time.perf_counter()
    if design is None:
        design = ExpandedDesign(data, opts.memory_limit)
    N = data.n_actors
    groups = gamma_groups(data.events_per_interval)
    G = int(groups.max()) + 1
    live = data.events_per_actor > 0
    act = np.flatnonzero(live)
    Na = len(act)
    signs = separated_columns(data)
    free = estimable_columns(data, signs)
    P = int(free.sum())
    ai, aj = data.actor_i, data.actor_j
    S = data.S[:, free]
    Y_act = data.events_per_actor
    Y_grp = np.bincount(groups, data.events_per_interval, G)

    theta = ParamVector.for_grid(data)
    theta.beta[~live] = opts.beta_floor
    theta.alpha = pin_separated(theta.alpha, signs)

    def eta_of(th):
        return linear_predictor(th, data)

    def unpack(x, th):
        out = th.copy()
        out.alpha = th.alpha.copy()
        out.alpha[free] += x[:P]
        out.beta = th.beta.copy()
        out.beta[act] += x[P:P + Na]
        gg = np.concatenate([[0.0], x[P + Na:]])
        out.gamma = th.gamma + gg[groups]
        return out

    ll = design.loglik(eta_of(theta), theta.gamma)
    trace = [ll]
    converged = False
    pos = -np.ones(N, dtype=np.int64)
    pos[act] = np.arange(Na)
    k = 0
    for k in range(1, opts.max_iter + 1):
        eta = eta_of(theta)
        e_seg, e_sg = design.aggregate(eta, theta.gamma, groups, G)
        # score
        g_a = S.T @ (data.y - e_seg)
        exp_act = np.bincount(ai, e_seg, N) + np.bincount(aj, e_seg, N)
        g_b = (Y_act - exp_act)[act]
        g_g = (Y_grp - e_sg.sum(axis=0))[1:]
        grad = np.concatenate([g_a, g_b, g_g])
        # information = X^T W X over the design columns [S, actor dummies, group dummies]
        D = P + Na + G - 1
        A = np.zeros((D, D))
        A[:P, :P] = (S * e_seg[:, None]).T @ S
        pi, pj = pos[ai], pos[aj]
        for p in range(P):
            col = e_seg * S[:, p]
            v = np.bincount(ai, col, N) + np.bincount(aj, col, N)
            A[p, P:P + Na] = v[act]
        both = (pi >= 0) & (pj >= 0)
        bb = np.zeros((Na, Na))
        np.add.at(bb, (pi[both], pj[both]), e_seg[both])
        bb = bb + bb.T
        bb[np.diag_indices(Na)] = exp_act[act]
        A[P:P + Na, P:P + Na] = bb
        A[:P, P + Na:] = (S.T @ e_sg)[:, 1:]
        bg = np.zeros((N, G))
        np.add.at(bg, ai, e_sg)
        np.add.at(bg, aj, e_sg)
        A[P:P + Na, P + Na:] = bg[act][:, 1:]
        A[P + Na:, P + Na:] = np.diag(e_sg.sum(axis=0)[1:])
        iu = np.triu_indices(D, 1)
        A[(iu[1], iu[0])] = A[iu]
        try:
            step = linalg.cho_solve(linalg.cho_factor(A), grad)
        except linalg.LinAlgError:
            scale = np.trace(A) / D
            step = None
            ridge = 1e-8
            while ridge <= 1e-2 * (1 + 1e-12):
                try:
                    step = linalg.cho_solve(linalg.cho_factor(A + ridge * scale * np.eye(D)), grad)
                    break
                except linalg.LinAlgError:
                    ridge *= 10
            if step is None:
                raise SingularHessian("Newton-Raphson information matrix is singular")
        t = 1.0
        new, ll_new = theta, ll
        for _ in range(opts.max_halvings + 1):
            cand = unpack(t * step, theta)
            val = design.loglik(eta_of(cand), cand.gamma)
            if np.isfinite(val) and val >= ll:
                new, ll_new = cand, val
                break
            t *= 0.5
        delta = _param_delta(new, theta, live, free)
        theta = new
        trace.append(ll_new)
        if _converged(delta, ll_new, trace[-2], opts):
            converged = True
            break
    if not converged:
        warnings.warn(f"Newton-Raphson stopped after {opts.max_iter} iterations",
                      MaxIterExceeded, stacklevel=2)
    return FitResult(theta, trace, k, converged, time.perf_counter() - t0, peak_rss_bytes(),
                     "newton", data.submodel, data.stat_names, ~live, groups, data.n_events,
                     ~free)


def fit_model(grids: dict, opts: Optional[FitOptions] = None, engine: str = "block") -> dict:
    """Fit every sub-model in ``grids`` (they share no parameters)."""
    fitter = {"block": fit_block_coordinate, "newton": fit_newton_raphson}.get(engine)
    if fitter is None:
        raise ValueError(f"unknown engine {engine!r}; use 'block' or 'newton'")
    return {m: fitter(g, opts) for m, g in grids.items()}
