"""Exposure bookkeeping: turn an event stream into per-pair constant segments.

For each sub-model a pair contributes one *segment* ``(lo, hi]`` for every
stretch of time during which it is in the risk set and its statistic vector
does not change. A segment ends either with the pair's own transition
(``y = 1``) or with a change of its state (``y = 0``). Baseline change points
do not split segments; the baseline is integrated exactly over each segment.
The log-likelihood is then a sum over segments, which costs
``O(N^2 + M * affected)`` instead of ``O(N^2 * (M + Q))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .events import EventStream, RiskSetPolicy, TransitionKind, pair_arrays, pair_index
from .model import DURATION, INCIDENCE, BaselineGrid, ModelSpec
from .statistics import StatisticsState


@dataclass
class LikelihoodGrid:
    """Segment table of one sub-model.

    Attributes
    ----------
    actor_i, actor_j : ndarray of int
        Actors of each segment's pair (``actor_i < actor_j``).
    lo, hi : ndarray
        Segment bounds; statistics are constant on ``(lo, hi]``.
    y : ndarray
        1.0 if the segment ends with the pair's transition.
    S : ndarray, shape (n_segments, P)
    log_offset : float
        ``sum y * log(t - t*)`` over modelled events, with ``t*`` the
        previous point of the global grid (change points and transition times).
    grid_times : ndarray
        Sorted distinct global grid points, starting with 0 and ending with T.
    """

    submodel: str
    stats: tuple
    n_actors: int
    baseline: BaselineGrid
    actor_i: np.ndarray
    actor_j: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    y: np.ndarray
    S: np.ndarray
    log_offset: float
    grid_times: np.ndarray
    n_conditioned: int = 0
    # derived
    qlo: np.ndarray = field(init=False, repr=False)
    qhi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = self.baseline.array
        self.qlo = self.baseline.interval_of(np.minimum(self.lo, c[-1])) if len(self.lo) \
            else np.zeros(0, np.int64)
        self.qhi = self.baseline.interval_left_of(self.hi) if len(self.hi) \
            else np.zeros(0, np.int64)
        self.qlo = np.asarray(self.qlo, dtype=np.int64)
        self.qhi = np.asarray(self.qhi, dtype=np.int64)
        same = self.qlo == self.qhi
        self._same = same
        self._len_same = np.where(same, self.hi - self.lo, 0.0)
        nxt = np.minimum(self.qlo + 1, len(c) - 1)
        self._len_first = np.where(same, 0.0, c[nxt] - self.lo)
        self._len_last = np.where(same, 0.0, self.hi - c[self.qhi])
        self.pair = (self.actor_i * (2 * self.n_actors - self.actor_i - 1) // 2
                     + (self.actor_j - self.actor_i - 1)).astype(np.int64)
        n = self.n_actors
        self.events_per_actor = (np.bincount(self.actor_i, self.y, n)
                                 + np.bincount(self.actor_j, self.y, n))
        self.events_per_interval = np.bincount(self.qhi, self.y, self.n_intervals)

    # -- sizes -----------------------------------------------------------
    @property
    def n_segments(self) -> int:
        return len(self.lo)

    @property
    def n_stats(self) -> int:
        return self.S.shape[1]

    @property
    def n_intervals(self) -> int:
        return self.baseline.n_intervals

    @property
    def n_events(self) -> int:
        return int(self.y.sum())

    @property
    def window_end(self) -> float:
        return self.baseline.window_end

    @property
    def stat_names(self) -> list:
        return [s.name for s in self.stats]

    # -- baseline integrals ----------------------------------------------
    def baseline_integral(self, gamma) -> np.ndarray:
        """``int_lo^hi exp(f(u, gamma)) du`` for every segment."""
        eg = np.exp(np.clip(np.asarray(gamma, dtype=float), -700, 700))
        cum = np.concatenate([[0.0], np.cumsum(eg * self.baseline.lengths)])
        middle = np.where(self._same, 0.0, cum[self.qhi] - cum[np.minimum(self.qlo + 1, self.qhi)])
        return (eg[self.qlo] * (self._len_same + self._len_first)
                + middle + np.where(self._same, 0.0, eg[self.qhi] * self._len_last))

    def interval_aggregate(self, weights, groups: Optional[np.ndarray] = None,
                           n_groups: int = 1) -> np.ndarray:
        """``sum_seg weights * overlap(seg, q)`` per baseline interval.

        With ``groups`` (an int label per segment) the result has shape
        ``(n_groups, Q)``.
        """
        Q = self.n_intervals
        w = np.asarray(weights, dtype=float)
        g = np.zeros(len(w), np.int64) if groups is None else np.asarray(groups, np.int64)
        G = 1 if groups is None else n_groups
        flat_lo = g * (Q + 1) + self.qlo
        flat_hi = g * (Q + 1) + self.qhi
        # full coverage of intervals strictly between qlo and qhi via a difference array
        inner = self.qhi > self.qlo + 1
        diff = (np.bincount(flat_lo[inner] + 1, w[inner], G * (Q + 1))
                - np.bincount(flat_hi[inner], w[inner], G * (Q + 1)))
        cover = np.cumsum(diff.reshape(G, Q + 1), axis=1)[:, :Q] * self.baseline.lengths
        flat_lo_q = g * Q + self.qlo
        flat_hi_q = g * Q + self.qhi
        part = (np.bincount(flat_lo_q, w * (self._len_same + self._len_first), G * Q)
                + np.bincount(flat_hi_q, w * self._len_last, G * Q)).reshape(G, Q)
        out = cover + part
        return out[0] if groups is None else out

    def select(self, columns) -> "LikelihoodGrid":
        """Grid restricted to a subset of statistic columns (by name or index)."""
        idx = []
        names = self.stat_names
        for c in columns:
            idx.append(names.index(str(c)) if not isinstance(c, (int, np.integer)) else int(c))
        out = LikelihoodGrid(self.submodel, tuple(self.stats[k] for k in idx), self.n_actors,
                             self.baseline, self.actor_i, self.actor_j, self.lo, self.hi, self.y,
                             self.S[:, idx], self.log_offset, self.grid_times, self.n_conditioned)
        return out

    def rescaled(self, factor: float) -> "LikelihoodGrid":
        """Same data with the time axis multiplied by ``factor``.

        Only valid for statistics that do not depend on elapsed time.
        """
        if any(s.kind == "duration" for s in self.stats):
            raise ValueError("the elapsed-time statistic is not scale invariant")
        grid = BaselineGrid(tuple(np.asarray(self.baseline.points) * factor))
        return LikelihoodGrid(self.submodel, self.stats, self.n_actors, grid, self.actor_i,
                              self.actor_j, self.lo * factor, self.hi * factor, self.y, self.S,
                              self.log_offset + self.n_events * np.log(factor),
                              self.grid_times * factor, self.n_conditioned)


def _global_times(stream: EventStream, baseline: BaselineGrid) -> np.ndarray:
    t = np.fromiter((r.t for r in stream.transitions), float, len(stream.transitions))
    pts = np.concatenate([[0.0], t, baseline.array, [stream.window_end]])
    return np.unique(pts[pts <= stream.window_end])


class _Segments:
    """Open/closed segment bookkeeping for one sub-model."""

    def __init__(self, n_pairs, n_stats):
        self.open = np.zeros(n_pairs, dtype=bool)
        self.start = np.zeros(n_pairs)
        self.S = np.zeros((n_pairs, n_stats))
        self.chunks = []        # (pairs, lo, hi, y, S)
        self.n_conditioned = 0

    def close(self, pairs, t, y):
        if len(pairs) == 0:
            return
        lo = self.start[pairs]
        y_arr = np.full(len(pairs), float(y))
        keep = lo < t
        if y:
            self.n_conditioned += int((~keep).sum())
        if keep.any():
            p = pairs[keep]
            self.chunks.append((p, lo[keep], np.full(len(p), t), y_arr[keep], self.S[p].copy()))
        self.open[pairs] = False

    def open_at(self, pairs, t, S):
        if len(pairs) == 0:
            return
        self.open[pairs] = True
        self.start[pairs] = t
        self.S[pairs] = S

    def collect(self, n_stats):
        if not self.chunks:
            return (np.zeros(0, np.int64), np.zeros(0), np.zeros(0), np.zeros(0),
                    np.zeros((0, n_stats)))
        cols = list(zip(*self.chunks))
        pairs = np.concatenate(cols[0])
        lo = np.concatenate(cols[1])
        hi = np.concatenate(cols[2])
        y = np.concatenate(cols[3])
        S = np.concatenate(cols[4])
        # pair-major, time-minor order keeps sums reproducible
        order = np.lexsort((lo, pairs))
        return pairs[order], lo[order], hi[order], y[order], S[order]


def build_grid(stream: EventStream, spec: ModelSpec, covariates=None) -> dict:
    """Replay ``stream`` once and build the segment tables of every sub-model.

    Returns
    -------
    dict
        ``{"incidence": LikelihoodGrid, "duration": LikelihoodGrid}``; only
        the incidence entry for relational-event (``rem``) specs.
    """
    if spec.incidence_grid is None:
        spec = spec.with_grid(BaselineGrid.uniform(stream.window_end, 1))
    rem = spec.rem or stream.instantaneous
    n = stream.n_actors
    K = n * (n - 1) // 2
    ii, jj = pair_arrays(n)
    state = StatisticsState(n, spec, covariates, instantaneous=rem)
    models = (INCIDENCE,) if rem else (INCIDENCE, DURATION)
    segs = {m: _Segments(K, len(spec.stats(m))) for m in models}
    dur_cols = [k for k, s in enumerate(spec.duration) if s.kind == "duration"]
    exclusive = spec.policy is RiskSetPolicy.EXCLUSIVE
    tied = np.zeros(K, dtype=bool)
    busy = np.zeros(n, dtype=np.int64)
    last_start = np.zeros(K)

    def at_risk(model, pairs):
        if model == DURATION:
            return tied[pairs]
        if rem:
            return np.ones(len(pairs), dtype=bool)
        ok = ~tied[pairs]
        if exclusive:
            ok &= (busy[ii[pairs]] == 0) & (busy[jj[pairs]] == 0)
        return ok

    def current_stats(model, pairs, t):
        S = state.cache[model][pairs]
        if model == DURATION and dur_cols:
            S = S.copy()
            S[:, dur_cols] = np.where(tied[pairs], np.log1p(t - last_start[pairs]), 0.0)[:, None]
        return S

    def refresh(pairs, t):
        for m in models:
            sg = segs[m]
            risk = at_risk(m, pairs)
            S = current_stats(m, pairs, t)
            was = sg.open[pairs]
            moved = np.any(S != sg.S[pairs], axis=1) if S.shape[1] else np.zeros(len(pairs), bool)
            sg.close(pairs[was & (~risk | moved)], t, 0)
            fresh = risk & ~sg.open[pairs]
            sg.open_at(pairs[fresh], t, S[fresh])

    all_pairs = np.arange(K)
    refresh(all_pairs, 0.0)

    refresh_points = []
    if dur_cols:
        refresh_points = [c for c in spec.grid(DURATION).points[1:-1]]
    rp = 0
    trans = stream.transitions
    k = 0
    T = stream.window_end
    while k < len(trans):
        t = trans[k].t
        while dur_cols and rp < len(refresh_points) and refresh_points[rp] < t:
            _refresh_duration(segs[DURATION], tied, last_start, refresh_points[rp], dur_cols)
            rp += 1
        group = []
        while k < len(trans) and trans[k].t == t:
            group.append(trans[k])
            k += 1
        # events close the segment they end, using the pre-t history
        for rec in group:
            m = INCIDENCE if rec.kind is TransitionKind.FORMATION else DURATION
            p = np.array([pair_index(rec.i, rec.j, n)])
            sg = segs[m]
            if sg.open[p[0]]:
                sg.close(p, t, 1)
            else:
                sg.n_conditioned += 1
        affected = set()
        for rec in group:
            p = pair_index(rec.i, rec.j, n)
            changed = state.apply_transition(rec)
            affected.add(p)
            affected.update(pair_index(a, b, n) for (a, b), _, _ in changed)
            if not rem:
                if rec.kind is TransitionKind.FORMATION:
                    tied[p] = True
                    busy[rec.i] += 1
                    busy[rec.j] += 1
                    last_start[p] = rec.t
                else:
                    tied[p] = False
                    busy[rec.i] -= 1
                    busy[rec.j] -= 1
        affected = np.array(sorted(affected), dtype=np.int64)
        if exclusive and not rem:
            actors = np.unique([a for rec in group for a in (rec.i, rec.j)])
            extra = np.flatnonzero(np.isin(ii, actors) | np.isin(jj, actors))
            affected = np.union1d(affected, extra)
        refresh(affected, t)
        if dur_cols:
            while rp < len(refresh_points) and refresh_points[rp] <= t:
                rp += 1
            _refresh_duration(segs[DURATION], tied, last_start, t, dur_cols)
    while dur_cols and rp < len(refresh_points):
        _refresh_duration(segs[DURATION], tied, last_start, refresh_points[rp], dur_cols)
        rp += 1
    out = {}
    for m in models:
        sg = segs[m]
        sg.close(np.flatnonzero(sg.open), T, 0)
        pairs, lo, hi, y, S = sg.collect(len(spec.stats(m)))
        baseline = spec.grid(m)
        if abs(baseline.window_end - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"{m} baseline grid ends at {baseline.window_end}, window at {T}")
        gtimes = _global_times(stream, baseline)
        ev_t = hi[y > 0]
        prev = gtimes[np.searchsorted(gtimes, ev_t, side="left") - 1] if len(ev_t) else ev_t
        log_offset = float(np.sum(np.log(ev_t - prev))) if len(ev_t) else 0.0
        out[m] = LikelihoodGrid(m, spec.stats(m), n, baseline, ii[pairs], jj[pairs], lo, hi, y, S,
                                log_offset, gtimes, sg.n_conditioned)
    return out


def _refresh_duration(sg: _Segments, tied, last_start, t, dur_cols):
    pairs = np.flatnonzero(sg.open)
    if len(pairs) == 0:
        return
    new = np.log1p(t - last_start[pairs])
    moved = sg.S[pairs][:, dur_cols[0]] != new
    p = pairs[moved]
    if len(p) == 0:
        return
    S = sg.S[p].copy()
    S[:, dur_cols] = new[moved][:, None]
    sg.close(p, t, 0)
    sg.open_at(p, t, S)
