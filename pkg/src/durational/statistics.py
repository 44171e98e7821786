"""Summary statistics with event-local cache updates.

:class:`StatisticsState` replays transitions and keeps, for every pair, the
common-partner counts, interaction counts and the cached statistic vectors
of both sub-models. After a transition only the pairs that share an actor
with the event pair are revisited.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import OutOfOrderTransition, PairNotTied
from .events import (CovariateTable, EventStream, TransitionKind, TransitionRecord,
                     pair_arrays, pair_index)
from .model import DURATION, INCIDENCE, ModelSpec, Statistic, check_admissible


def covariate_column(stat: Statistic, covariates: Optional[CovariateTable], ii, jj):
    if covariates is None:
        raise KeyError(f"statistic {stat.name} needs covariates")
    if stat.kind == "dyad":
        return covariates.dyadic_values(stat.covariate)[ii, jj].astype(float)
    x = covariates.monadic_values(stat.covariate)
    if stat.kind == "match":
        return (x[ii] == x[jj]).astype(float)
    return np.abs(x[ii] - x[jj])


class StatisticsState:
    """Incrementally maintained history summaries for one event stream.

    Parameters
    ----------
    n_actors : int
    spec : ModelSpec
        Supplies the statistic lists of both sub-models.
    covariates : CovariateTable, optional
    instantaneous : bool
        Relational-event data: formations never open a tie.
    """

    def __init__(self, n_actors: int, spec: ModelSpec, covariates=None,
                 instantaneous: bool = False):
        self.n = n = n_actors
        self.spec = spec
        self.covariates = covariates
        self.instantaneous = instantaneous
        self.time = 0.0
        self.partners = [set() for _ in range(n)]     # u: current ties
        self.ever = [set() for _ in range(n)]         # v: ever tied
        self.common_current = np.zeros((n, n), dtype=np.int64)
        self.common_ever = np.zeros((n, n), dtype=np.int64)
        self.n_past = np.zeros((n, n), dtype=np.int64)
        self.last_start = np.full((n, n), np.nan)
        self.ii, self.jj = pair_arrays(n)
        self.stats = {INCIDENCE: spec.incidence, DURATION: spec.duration}
        self._duration_col = {m: [k for k, s in enumerate(st) if s.kind == "duration"]
                              for m, st in self.stats.items()}
        self._count_cols = {m: [(k, s.kind) for k, s in enumerate(st)
                                if s.kind in ("ccp", "gcp", "ni")]
                            for m, st in self.stats.items()}
        # cached vectors; the time-varying duration column is kept at 0 here
        self.cache = {m: self._initial_matrix(st) for m, st in self.stats.items()}

    # -- construction ------------------------------------------------------
    def _initial_matrix(self, stats):
        out = np.zeros((len(self.ii), len(stats)))
        for k, s in enumerate(stats):
            if s.kind in ("dyad", "match", "absdiff"):
                out[:, k] = covariate_column(s, self.covariates, self.ii, self.jj)
        return out

    # -- per-pair evaluation -------------------------------------------------
    def is_tied(self, i, j) -> bool:
        return j in self.partners[i]

    def _value(self, s: Statistic, i, j, t):
        if s.kind == "ccp":
            return np.log1p(self.common_current[i, j])
        if s.kind == "gcp":
            return np.log1p(self.common_ever[i, j])
        if s.kind == "ni":
            return np.log1p(self.n_past[i, j])
        if s.kind == "duration":
            if not self.is_tied(i, j):
                return 0.0
            return np.log1p(t - self.last_start[i, j])
        return float(covariate_column(s, self.covariates, np.array([i]), np.array([j]))[0])

    def _vector(self, model, i, j, k):
        # covariate columns never change; start from the cached row
        out = self.cache[model][k].copy()
        for c, kind in self._count_cols[model]:
            if kind == "ccp":
                out[c] = np.log1p(self.common_current[i, j])
            elif kind == "gcp":
                out[c] = np.log1p(self.common_ever[i, j])
            else:
                out[c] = np.log1p(self.n_past[i, j])
        return out

    def vector(self, model: str, i: int, j: int, t: Optional[float] = None) -> np.ndarray:
        """Statistic vector of pair ``(i, j)`` at ``t`` (default: replay time)."""
        k = pair_index(i, j, self.n)
        v = self.cache[model][k].copy()
        t = self.time if t is None else t
        for c in self._duration_col[model]:
            v[c] = self._value(self.stats[model][c], min(i, j), max(i, j), t)
        return v

    def matrix(self, model: str, t: Optional[float] = None) -> np.ndarray:
        """All cached pair vectors (pair-index order) evaluated at ``t``."""
        m = self.cache[model].copy()
        cols = self._duration_col[model]
        if cols:
            t = self.time if t is None else t
            m[:, cols] = 0.0
            for i in range(self.n):
                for j in self.partners[i]:
                    if j > i:
                        m[pair_index(i, j, self.n), cols] = np.log1p(t - self.last_start[i, j])
        return m

    # -- replay ------------------------------------------------------------
    def apply_transition(self, rec: TransitionRecord) -> list:
        """Apply one transition and refresh the affected cached vectors.

        Returns
        -------
        list of (pair, incidence_vector, duration_vector)
            The event pair, whose tie state always flips, followed by every
            other pair whose cached vector changed. The time-varying duration
            column is not part of the comparison.
        """
        if rec.t < self.time:
            raise OutOfOrderTransition(f"transition at t={rec.t} precedes replay time {self.time}")
        self.time = rec.t
        i, j = rec.i, rec.j
        touched = {(i, j)}
        cc, ce = self.common_current, self.common_ever
        if rec.kind is TransitionKind.FORMATION:
            if not self.instantaneous:
                if j in self.partners[i]:
                    raise OutOfOrderTransition(f"pair {(i, j)} is already tied at t={rec.t}")
                for h in self.partners[j]:
                    cc[i, h] += 1
                    cc[h, i] += 1
                    touched.add((min(i, h), max(i, h)))
                for h in self.partners[i]:
                    cc[j, h] += 1
                    cc[h, j] += 1
                    touched.add((min(j, h), max(j, h)))
                self.partners[i].add(j)
                self.partners[j].add(i)
            if j not in self.ever[i]:
                for h in self.ever[j]:
                    if h != i:
                        ce[i, h] += 1
                        ce[h, i] += 1
                        touched.add((min(i, h), max(i, h)))
                for h in self.ever[i]:
                    if h != j:
                        ce[j, h] += 1
                        ce[h, j] += 1
                        touched.add((min(j, h), max(j, h)))
                self.ever[i].add(j)
                self.ever[j].add(i)
            self.n_past[i, j] += 1
            self.n_past[j, i] += 1
            self.last_start[i, j] = self.last_start[j, i] = rec.t
        else:
            if j not in self.partners[i]:
                raise OutOfOrderTransition(f"pair {(i, j)} is not tied at t={rec.t}")
            self.partners[i].discard(j)
            self.partners[j].discard(i)
            for h in self.partners[j]:
                cc[i, h] -= 1
                cc[h, i] -= 1
                touched.add((min(i, h), max(i, h)))
            for h in self.partners[i]:
                cc[j, h] -= 1
                cc[h, j] -= 1
                touched.add((min(j, h), max(j, h)))
        changed = []
        for a, b in sorted(touched):
            k = pair_index(a, b, self.n)
            new_inc = self._vector(INCIDENCE, a, b, k)
            new_dur = self._vector(DURATION, a, b, k)
            if ((a, b) == (i, j) or (new_inc != self.cache[INCIDENCE][k]).any()
                    or (new_dur != self.cache[DURATION][k]).any()):
                self.cache[INCIDENCE][k] = new_inc
                self.cache[DURATION][k] = new_dur
                changed.append(((a, b), new_inc, new_dur))
        return changed

    def replay(self, transitions, until: Optional[float] = None) -> "StatisticsState":
        """Apply transitions with ``t < until`` (all when ``until`` is None)."""
        for rec in transitions:
            if until is not None and rec.t >= until:
                break
            self.apply_transition(rec)
        if until is not None:
            self.time = max(self.time, until)
        return self


def stat_value(stat, pair, state: StatisticsState, t: Optional[float] = None,
               submodel: Optional[str] = None) -> float:
    """Value of one statistic for ``pair`` with ``state`` replayed to ``t``.

    Count statistics are ``log(count + 1)``; the duration statistic is
    ``log(t - last_start + 1)`` and requires a currently tied pair.
    """
    stat = Statistic.parse(stat)
    if submodel is not None:
        check_admissible(stat, submodel, state.spec.policy, state.spec.rem)
    i, j = min(pair), max(pair)
    t = state.time if t is None else t
    if stat.kind == "duration" and not state.is_tied(i, j):
        raise PairNotTied(f"pair {(i, j)} has no ongoing interaction at t={t}")
    return float(state._value(stat, i, j, t))


def recompute_full(stream: EventStream, spec: ModelSpec, t: float, covariates=None) -> dict:
    """From-scratch statistic matrices at ``t`` for every pair.

    Works directly on the event list with dense matrix products, sharing no
    code with :class:`StatisticsState`; used as the cache oracle.
    """
    n = stream.n_actors
    u = np.zeros((n, n))
    v = np.zeros((n, n))
    cnt = np.zeros((n, n))
    last = np.full((n, n), np.nan)
    for ev in stream.events:
        if ev.begin < t:
            v[ev.i, ev.j] = v[ev.j, ev.i] = 1.0
            cnt[ev.i, ev.j] += 1
            cnt[ev.j, ev.i] += 1
            if np.isnan(last[ev.i, ev.j]) or ev.begin > last[ev.i, ev.j]:
                last[ev.i, ev.j] = last[ev.j, ev.i] = ev.begin
            if not stream.instantaneous and (ev.end is None or ev.end >= t):
                u[ev.i, ev.j] = u[ev.j, ev.i] = 1.0
    ii, jj = np.triu_indices(n, 1)
    ccp = np.log((u @ u)[ii, jj] + 1.0)
    gcp = np.log((v @ v)[ii, jj] + 1.0)
    ni = np.log(cnt[ii, jj] + 1.0)
    tied = u[ii, jj] > 0
    with np.errstate(invalid="ignore"):
        dur = np.where(tied, np.log(np.where(tied, t - last[ii, jj], 0.0) + 1.0), 0.0)
    out = {}
    for model, stats in ((INCIDENCE, spec.incidence), (DURATION, spec.duration)):
        cols = []
        for s in stats:
            if s.kind == "ccp":
                cols.append(ccp)
            elif s.kind == "gcp":
                cols.append(gcp)
            elif s.kind == "ni":
                cols.append(ni)
            elif s.kind == "duration":
                cols.append(dur)
            else:
                cols.append(covariate_column(s, covariates, ii, jj))
        out[model] = np.column_stack(cols) if cols else np.zeros((len(ii), 0))
    return out
