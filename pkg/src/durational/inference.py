"""Standard errors, effect sizes, information criteria and greedy selection."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import CollinearStatistics, DurationalError, SingularInnerBlock
from .estimator import FitOptions, FitResult, fit_block_coordinate
from .grid import LikelihoodGrid
from .likelihood import full_derivatives
from .model import Statistic


@dataclass
class AlphaCovariance:
    """Covariance of the statistic effects with standard errors and Wald z."""

    matrix: np.ndarray
    alpha: np.ndarray
    names: list = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        d = np.diag(self.matrix)
        with np.errstate(invalid="ignore"):
            return np.where(np.isnan(d), np.nan, np.sqrt(np.clip(d, 0.0, None)))

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.alpha / self.se


def grouped_information(theta, data: LikelihoodGrid, floored=None, groups=None):
    """Blocks of the information (negative Hessian) over the free parameters.

    Actors in ``floored`` are dropped, baseline intervals are summed into
    ``groups`` and the first group is dropped (it carries the pin).

    Returns
    -------
    tuple
        ``(I_aa, I_ab, I_ag, I_bb, I_bg, d_gg)`` with ``d_gg`` the diagonal
        of the baseline block.
    """
    from .estimator import gamma_groups

    _, H = full_derivatives(theta, data)
    live = ~np.asarray(floored, bool) if floored is not None \
        else np.ones(data.n_actors, bool)
    if groups is None:
        groups = gamma_groups(data.events_per_interval)
    G = int(groups.max()) + 1
    M = np.zeros((data.n_intervals, G))
    M[np.arange(data.n_intervals), groups] = 1.0
    M = M[:, 1:]
    I_aa = -H.aa
    I_ab = -H.ab[:, live]
    I_ag = -H.ag @ M
    I_bb = -H.bb[np.ix_(live, live)]
    I_bg = -H.bg[live] @ M
    d_gg = -(H.gg @ M)
    return I_aa, I_ab, I_ag, I_bb, I_bg, d_gg


def alpha_covariance(theta, data: LikelihoodGrid, floored=None, groups=None) -> AlphaCovariance:
    """``[I^-1]_aa`` through nested Schur complements.

    With ``X = [I_ab, I_ag]`` and ``Y`` the popularity/baseline block,
    ``Lambda = (I_aa - X Y^-1 X^T)^-1``. ``Y^-1`` is applied through a
    second Schur complement on the diagonal baseline block, so the largest
    dense factorization is ``N x N``.

    Raises
    ------
    SingularInnerBlock
        Naming the block ('gamma', 'beta' or 'alpha') that failed.
    """
    pinned = None
    if isinstance(theta, FitResult):
        floored = theta.floored if floored is None else floored
        groups = theta.gamma_groups if groups is None else groups
        pinned = theta.pinned_alpha
        theta = theta.theta_hat
    I_aa, I_ab, I_ag, I_bb, I_bg, d = grouped_information(theta, data, floored, groups)
    P = data.n_stats
    # effects held fixed by the fitter carry no information; NaN variance
    keep = np.ones(P, bool) if pinned is None else ~np.asarray(pinned, bool)
    I_aa, I_ab, I_ag = I_aa[np.ix_(keep, keep)], I_ab[keep], I_ag[keep]
    if np.any(d <= 0):
        raise SingularInnerBlock("gamma", "(an interval group has no exposure)")
    dinv = 1.0 / d
    Z = I_bb - (I_bg * dinv) @ I_bg.T
    Xb = I_ab - (I_ag * dinv) @ I_bg.T
    inner = (I_ag * dinv) @ I_ag.T + _project(Z, Xb)
    schur = I_aa - inner
    schur = 0.5 * (schur + schur.T)
    full = np.full((P, P), np.nan)
    if schur.size:
        try:
            cov = linalg.cho_solve(linalg.cho_factor(schur), np.eye(len(schur)))
        except linalg.LinAlgError as exc:
            raise SingularInnerBlock("alpha", str(exc)) from exc
        full[np.ix_(keep, keep)] = 0.5 * (cov + cov.T)
    return AlphaCovariance(full, theta.alpha.copy(), data.stat_names)


def _project(Z, X) -> np.ndarray:
    """``X Z^+ X^T`` for the popularity Schur block ``Z``.

    ``Z`` loses rank when popularity is only identified up to a shift inside
    a sparse component (an isolated pair, say). The alpha block is still
    defined as long as ``X`` has no weight on those null directions.
    """
    try:
        return X @ linalg.cho_solve(linalg.cho_factor(Z), X.T)
    except linalg.LinAlgError:
        pass
    w, V = linalg.eigh(Z)
    big = w > 1e-10 * max(w.max(), 1e-300)
    XV = X @ V
    if np.abs(XV[:, ~big]).max(initial=0.0) > 1e-7 * max(np.abs(XV).max(), 1e-300):
        raise SingularInnerBlock("beta", "(effects load on an unidentified popularity direction)")
    return (XV[:, big] / w[big]) @ XV[:, big].T


def information_matrix(theta, data: LikelihoodGrid, floored=None, groups=None) -> np.ndarray:
    """Dense information over the free parameters (alpha, beta, gamma groups)."""
    I_aa, I_ab, I_ag, I_bb, I_bg, d = grouped_information(theta, data, floored, groups)
    top = np.hstack([I_aa, I_ab, I_ag])
    mid = np.hstack([I_ab.T, I_bb, I_bg])
    bot = np.hstack([I_ag.T, I_bg.T, np.diag(d)])
    return np.vstack([top, mid, bot])


# -- effect sizes ------------------------------------------------------------------

def count_step_factor(alpha, count) -> float:
    """Intensity factor when a log(count + 1) statistic goes from ``count`` to ``count + 1``."""
    return float(((count + 2.0) / (count + 1.0)) ** alpha)


def effect_table(alpha_hat, cov: Optional[AlphaCovariance] = None, stats=None) -> list:
    """Per-statistic rows with ``exp(alpha)`` and, for count statistics, ``2**alpha``.

    ``2**alpha`` is the factor of the first unit on the original count scale
    (``log 1 -> log 2``); it is None for covariate statistics.
    """
    alpha_hat = np.atleast_1d(np.asarray(alpha_hat, dtype=float))
    if stats is None:
        stats = cov.names if cov is not None else [f"stat{k}" for k in range(len(alpha_hat))]
    se = cov.se if cov is not None else np.full(len(alpha_hat), np.nan)
    rows = []
    for k, name in enumerate(stats):
        st = Statistic.parse(name)
        a = float(alpha_hat[k])
        s = float(se[k])
        rows.append({
            "stat": st.name,
            "alpha": a,
            "se": s,
            "z": a / s if s > 0 else float("nan"),
            "exp_alpha": float(np.exp(a)),
            "two_pow_alpha": float(2.0 ** a) if st.log_count else None,
        })
    return rows


COEF_FIELDS = ("stat", "alpha", "se", "z", "exp_alpha", "two_pow_alpha")


def write_coefficients(path, tables: dict) -> None:
    """CSV ``submodel,stat,alpha,se,z,exp_alpha,two_pow_alpha``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("submodel",) + COEF_FIELDS)
        for sub, rows in tables.items():
            for r in rows:
                w.writerow([sub] + [_fmt(r[c]) for c in COEF_FIELDS])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 12))
    return v


# -- information criteria --------------------------------------------------------

class AICFlavor(enum.Enum):
    STANDARD = "standard"
    EVENT_COUNT = "event_count"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        return cls({"eventcount": "event_count", "log_m": "event_count"}.get(key, key))


def aic(fit, flavor=AICFlavor.STANDARD) -> float:
    """Information criterion of one fit, or the sum over a dict of fits.

    ``STANDARD``: ``2 k - 2 l`` with ``k = P + active actors + baseline
    groups``. ``EVENT_COUNT``: ``2 log M - l`` with ``M`` the event count.
    """
    if isinstance(fit, dict):
        return float(sum(aic(f, flavor) for f in fit.values()))
    flavor = AICFlavor.parse(flavor)
    if flavor is AICFlavor.EVENT_COUNT:
        return 2.0 * np.log(max(fit.n_events, 1)) - fit.loglik
    k = len(fit.theta_hat.alpha) + int((~fit.floored).sum()) + len(np.unique(fit.gamma_groups))
    return 2.0 * k - 2.0 * fit.loglik


# -- greedy forward selection --------------------------------------------------------

@dataclass
class SelectionStep:
    submodel: str
    stats: tuple
    criterion: float
    accepted: bool
    error: str = ""


@dataclass
class SelectionTrace:
    steps: list = field(default_factory=list)
    selected: dict = field(default_factory=dict)

    def accepted_values(self, submodel) -> list:
        return [s.criterion for s in self.steps if s.submodel == submodel and s.accepted]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("submodel", "stats", "criterion", "accepted", "error"))
            for s in self.steps:
                w.writerow((s.submodel, ";".join(s.stats),
                            "" if not np.isfinite(s.criterion) else repr(round(s.criterion, 9)),
                            int(s.accepted), s.error))


def check_design_rank(data: LikelihoodGrid) -> None:
    """Raise CollinearStatistics if the statistic columns plus an intercept are rank deficient.

    Columns that vanish everywhere are skipped; the fitters hold their
    effects fixed.
    """
    S = data.S[:, np.any(data.S != 0, axis=0)]
    if S.shape[1] == 0:
        return
    X = np.column_stack([np.ones(data.n_segments), S])
    # scaled Gram matrix is cheap and adequate for a rank test on a few columns
    G = X.T @ X
    dscale = np.sqrt(np.clip(np.diag(G), 1e-300, None))
    ev = np.linalg.eigvalsh(G / np.outer(dscale, dscale))
    if ev.min() <= 1e-10 * ev.max():
        raise CollinearStatistics(f"statistics {data.stat_names} are collinear (or constant) "
                                  "on this data")


def _fit_candidate(data, opts):
    check_design_rank(data)
    return fit_block_coordinate(data, opts)


def greedy_select(grids: dict, candidates: dict, base: Optional[dict] = None,
                  opts: Optional[FitOptions] = None, flavor=AICFlavor.STANDARD) -> SelectionTrace:
    """Forward stepwise selection, incidence first and then duration.

    Parameters
    ----------
    grids : dict
        Segment tables per sub-model holding every base and candidate column.
    candidates : dict
        Candidate statistic names per sub-model.
    base : dict, optional
        Starting statistic names per sub-model (default: none).
    """
    base = base or {}
    trace = SelectionTrace()
    for sub in grids:
        data = grids[sub]
        current = [Statistic.parse(s).name for s in base.get(sub, ())]
        pool = [Statistic.parse(s).name for s in candidates.get(sub, ()) if
                Statistic.parse(s).name not in current]
        try:
            best = aic(_fit_candidate(data.select(current), opts), flavor)
            trace.steps.append(SelectionStep(sub, tuple(current), best, True))
        except DurationalError as exc:
            trace.steps.append(SelectionStep(sub, tuple(current), float("nan"), False, str(exc)))
            trace.selected[sub] = tuple(current)
            continue
        while pool:
            scores = []
            for cand in pool:
                stats = current + [cand]
                try:
                    val = aic(_fit_candidate(data.select(stats), opts), flavor)
                    scores.append((val, cand, ""))
                except DurationalError as exc:
                    scores.append((float("inf"), cand, f"{type(exc).__name__}: {exc}"))
            first = len(trace.steps)
            for val, cand, err in scores:
                trace.steps.append(SelectionStep(sub, tuple(current + [cand]), val, False, err))
            k = int(np.argmin([s[0] for s in scores]))
            val, cand, _ = scores[k]
            if not (val < best):
                break
            trace.steps[first + k].accepted = True
            best = val
            current.append(cand)
            pool.remove(cand)
        trace.selected[sub] = tuple(current)
    return trace
