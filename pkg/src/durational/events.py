"""Durational event streams: parsing, the start/end transition view, pair
state replay and risk sets.

A durational event ``(i, j, begin, end)`` is stored with ``i < j``. Its dual
representation is a pair of :class:`TransitionRecord` objects, a formation
(0 -> 1) at ``begin`` and a dissolution (1 -> 0) at ``end``. Events still
running at the window end have ``end=None`` and emit no dissolution.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ActorIdGap,
    ExclusiveEngagementViolation,
    MalformedRow,
    NegativeDuration,
    OverlappingEvents,
    SelfLoop,
    TimeOutOfWindow,
)

EVENT_HEADER = ["i", "j", "begin", "end"]


class TransitionKind(enum.IntEnum):
    # values double as the start indicator r and as the tie-break sort key
    DISSOLUTION = 0
    FORMATION = 1


class RiskSetPolicy(enum.Enum):
    UNRESTRICTED = "unrestricted"
    EXCLUSIVE = "exclusive"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "unrestricted": cls.UNRESTRICTED,
            "exclusive": cls.EXCLUSIVE,
            "exclusiveengagement": cls.EXCLUSIVE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown risk-set policy {value!r}") from None


@dataclass(frozen=True)
class DurationalEvent:
    i: int
    j: int
    begin: float
    end: Optional[float] = None  # None == censored at the window end

    @property
    def censored(self) -> bool:
        return self.end is None

    @property
    def pair(self) -> tuple:
        return (self.i, self.j)


@dataclass(frozen=True)
class TransitionRecord:
    i: int
    j: int
    t: float
    kind: TransitionKind

    @property
    def pair(self) -> tuple:
        return (self.i, self.j)


def canonical(i: int, j: int) -> tuple:
    return (i, j) if i < j else (j, i)


def pair_index(i: int, j: int, n: int) -> int:
    """Position of the pair ``{i, j}`` in ``np.triu_indices(n, 1)`` order."""
    if i > j:
        i, j = j, i
    return i * (2 * n - i - 1) // 2 + (j - i - 1)


def pair_arrays(n: int):
    """Row and column actors of every pair, in pair-index order."""
    ii, jj = np.triu_indices(n, 1)
    return ii.astype(np.int64), jj.astype(np.int64)


def to_transitions(events: Iterable[DurationalEvent]) -> list:
    """Dual start/end representation of ``events``, sorted by time.

    Ties at equal timestamps put dissolutions before formations, then order
    by pair, then by input position, so a pair can end and restart at the
    same instant without ever being tied twice.
    """
    keyed = []
    for pos, ev in enumerate(events):
        keyed.append(((ev.begin, TransitionKind.FORMATION, ev.i, ev.j, pos),
                      TransitionRecord(ev.i, ev.j, ev.begin, TransitionKind.FORMATION)))
        if ev.end is not None:
            keyed.append(((ev.end, TransitionKind.DISSOLUTION, ev.i, ev.j, pos),
                          TransitionRecord(ev.i, ev.j, ev.end, TransitionKind.DISSOLUTION)))
    keyed.sort(key=lambda kv: kv[0])
    return [rec for _, rec in keyed]


def from_transitions(transitions: Iterable[TransitionRecord]) -> list:
    """Re-pair transitions into events, ordered by formation time.

    Unmatched formations come back censored.
    """
    open_at = {}
    out = []
    for rec in transitions:
        key = (rec.i, rec.j)
        if rec.kind is TransitionKind.FORMATION:
            if key in open_at:
                raise OverlappingEvents(f"pair {key} formed twice at t={rec.t}")
            open_at[key] = len(out)
            out.append([rec.i, rec.j, rec.t, None])
        else:
            if key not in open_at:
                raise OverlappingEvents(f"pair {key} dissolved while not tied at t={rec.t}")
            out[open_at.pop(key)][3] = rec.t
    return [DurationalEvent(*row) for row in out]


@dataclass(frozen=True)
class EventStream:
    """Validated, canonicalised durational events on the window ``[0, T]``.

    ``instantaneous`` marks relational-event (REM) data where each row is a
    point event; such streams carry formations only and never hold ties.
    """

    events: tuple
    n_actors: int
    window_end: float
    instantaneous: bool = False
    actor_labels: Optional[tuple] = None
    transitions: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        _validate_events(self.events, self.n_actors, self.window_end, self.instantaneous)
        object.__setattr__(self, "transitions", tuple(to_transitions(self.events)))

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def n_censored(self) -> int:
        return sum(ev.end is None for ev in self.events) if not self.instantaneous else 0

    def transition_arrays(self):
        """``(i, j, t, kind)`` numpy arrays of the sorted transitions."""
        if not self.transitions:
            return (np.zeros(0, np.int64), np.zeros(0, np.int64),
                    np.zeros(0), np.zeros(0, np.int8))
        rec = self.transitions
        return (np.fromiter((r.i for r in rec), np.int64, len(rec)),
                np.fromiter((r.j for r in rec), np.int64, len(rec)),
                np.fromiter((r.t for r in rec), float, len(rec)),
                np.fromiter((int(r.kind) for r in rec), np.int8, len(rec)))

    def summary(self) -> dict:
        per_actor = np.zeros(self.n_actors, dtype=int)
        for ev in self.events:
            per_actor[ev.i] += 1
            per_actor[ev.j] += 1
        return {
            "n_events": self.n_events,
            "n_actors": self.n_actors,
            "n_censored": self.n_censored,
            "n_transitions": len(self.transitions),
            "window_end": self.window_end,
            "n_inactive_actors": int((per_actor == 0).sum()),
        }

    def describe(self, label="interactions") -> str:
        s = self.summary()
        text = f"{s['n_events']:,} {label} among N={s['n_actors']:,} actors"
        if s["n_censored"]:
            text += f" ({s['n_censored']:,} censored at T={self.window_end:g})"
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(EVENT_HEADER)
            for ev in self.events:
                end = ev.begin if self.instantaneous else ev.end
                w.writerow([ev.i, ev.j, repr(float(ev.begin)),
                            "" if end is None else repr(float(end))])


def _validate_events(events, n_actors, window_end, instantaneous):
    last_end = {}
    for k, ev in enumerate(events):
        if ev.i >= ev.j:
            raise ValueError(f"event {k} is not canonical (i < j required): {ev}")
        if ev.i < 0 or ev.j >= n_actors:
            raise ActorIdGap(f"event {k} references actor outside 0..{n_actors - 1}")
        if not 0 <= ev.begin <= window_end:
            raise TimeOutOfWindow(f"event {k} begins outside [0, {window_end}]")
        if instantaneous:
            continue
        if ev.end is not None:
            if not ev.begin < ev.end:
                raise NegativeDuration(k, "begin must be strictly before end")
            if ev.end > window_end:
                raise TimeOutOfWindow(f"event {k} ends after window end {window_end}")
    if instantaneous:
        return
    for ev in sorted(events, key=lambda e: (e.i, e.j, e.begin)):
        key = (ev.i, ev.j)
        prev = last_end.get(key, -math.inf)
        if prev is None or ev.begin < prev:
            raise OverlappingEvents(f"pair {key} has overlapping events near t={ev.begin}")
        last_end[key] = ev.end


def make_stream(rows: Sequence, n_actors: Optional[int] = None,
                window_end: Optional[float] = None, *, remap: bool = False,
                anchor: bool = False, instantaneous: bool = False) -> EventStream:
    """Build an :class:`EventStream` from raw ``(i, j, begin, end)`` rows.

    Pairs are canonicalised to ``i < j``. With ``anchor=True`` the time axis
    is shifted so the earliest event begins at 0 (the first formation is
    then conditioned on rather than modelled).
    """
    rows = [(int(i), int(j), float(b), None if e is None else float(e))
            for i, j, b, e in rows]
    labels = None
    ids = sorted({a for r in rows for a in r[:2]})
    if remap:
        labels = tuple(ids)
        lookup = {a: k for k, a in enumerate(ids)}
        rows = [(lookup[i], lookup[j], b, e) for i, j, b, e in rows]
        if n_actors is None:
            n_actors = len(ids)
    elif n_actors is None:
        n_actors = ids[-1] + 1 if ids else 0
        if ids and ids != list(range(n_actors)):
            missing = sorted(set(range(n_actors)) - set(ids))[:5]
            raise ActorIdGap(f"actor ids are not dense in 0..{n_actors - 1} "
                             f"(missing e.g. {missing}); pass n_actors or remap=True")
    lo, hi = (0, len(ids) - 1) if remap else (ids[0], ids[-1]) if ids else (0, -1)
    if ids and (lo < 0 or hi >= n_actors):
        raise ActorIdGap(f"actor ids must lie in 0..{n_actors - 1}")
    if instantaneous:
        rows = [(i, j, b, None) for i, j, b, _ in rows]
    shift = 0.0
    if anchor and rows:
        shift = min(r[2] for r in rows)
    if window_end is None:
        times = [t for r in rows for t in r[2:] if t is not None]
        window_end = max(times) if times else 0.0
    window_end = float(window_end) - shift
    events = []
    for i, j, b, e in rows:
        i, j = canonical(i, j)
        events.append(DurationalEvent(i, j, b - shift, None if e is None else e - shift))
    events.sort(key=lambda ev: (ev.begin, ev.i, ev.j))
    return EventStream(tuple(events), n_actors, window_end, instantaneous, labels)


def parse_events(path, window_end: Optional[float] = None, n_actors: Optional[int] = None,
                 *, remap: bool = False, anchor: bool = True,
                 instantaneous: bool = False) -> EventStream:
    """Read an events CSV with header ``i,j,begin,end``.

    An empty ``end`` field means the event is censored (still ongoing at the
    window end). For instantaneous (REM) data ``end`` may be empty or equal
    to ``begin`` and is ignored.

    Raises
    ------
    MalformedRow, NegativeDuration, SelfLoop
        With the offending 1-based line number.
    ActorIdGap
        If actor ids are not dense and neither ``n_actors`` nor ``remap`` is
        given.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedRow(1, "missing header")
        if [h.strip() for h in header] != EVENT_HEADER:
            raise MalformedRow(1, f"header must be {','.join(EVENT_HEADER)}, got {','.join(header)}")
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 4:
                raise MalformedRow(line, f"expected 4 fields, got {len(rec)}")
            try:
                i, j = int(rec[0]), int(rec[1])
                b = float(rec[2])
                e = float(rec[3]) if rec[3].strip() else None
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None
            if i == j:
                raise SelfLoop(line, f"actor {i} interacts with itself")
            if not math.isfinite(b) or b < 0:
                raise MalformedRow(line, "begin must be a finite non-negative time")
            if not instantaneous and e is not None and not b < e:
                raise NegativeDuration(line, f"begin {b} is not before end {e}")
            rows.append((i, j, b, e))
    return make_stream(rows, n_actors, window_end, remap=remap, anchor=anchor,
                       instantaneous=instantaneous)


# --- pair state replay -------------------------------------------------------

@dataclass
class PairStateTable:
    """Per-pair history summaries, stored as dense symmetric ``N x N`` arrays."""

    n_actors: int
    currently_tied: np.ndarray = None
    ever_tied: np.ndarray = None
    n_past: np.ndarray = None
    last_start: np.ndarray = None

    def __post_init__(self):
        n = self.n_actors
        if self.currently_tied is None:
            self.currently_tied = np.zeros((n, n), dtype=bool)
            self.ever_tied = np.zeros((n, n), dtype=bool)
            self.n_past = np.zeros((n, n), dtype=np.int64)
            self.last_start = np.full((n, n), np.nan)

    def apply(self, rec: TransitionRecord, instantaneous: bool = False) -> None:
        i, j = rec.i, rec.j
        if rec.kind is TransitionKind.FORMATION:
            if not instantaneous:
                self.currently_tied[i, j] = self.currently_tied[j, i] = True
            self.ever_tied[i, j] = self.ever_tied[j, i] = True
            self.n_past[i, j] += 1
            self.n_past[j, i] += 1
            self.last_start[i, j] = self.last_start[j, i] = rec.t
        else:
            self.currently_tied[i, j] = self.currently_tied[j, i] = False

    def tied_pairs(self) -> set:
        ii, jj = np.nonzero(np.triu(self.currently_tied, 1))
        return set(zip(ii.tolist(), jj.tolist()))

    def busy_actors(self) -> np.ndarray:
        return self.currently_tied.any(axis=1)


def pair_state_at(stream: EventStream, t: float) -> PairStateTable:
    """State after every transition strictly before ``t``."""
    if not 0 <= t <= stream.window_end:
        raise TimeOutOfWindow(f"t={t} outside [0, {stream.window_end}]")
    table = PairStateTable(stream.n_actors)
    for rec in stream.transitions:
        if rec.t >= t:
            break
        table.apply(rec, stream.instantaneous)
    return table


def risk_set(state: PairStateTable, policy: RiskSetPolicy, kind: TransitionKind) -> set:
    """Pairs that may experience a transition of type ``kind``."""
    policy = RiskSetPolicy.parse(policy)
    if kind is TransitionKind.DISSOLUTION:
        return state.tied_pairs()
    n = state.n_actors
    ok = ~state.currently_tied
    if policy is RiskSetPolicy.EXCLUSIVE:
        busy = state.busy_actors()
        ok &= ~busy[:, None] & ~busy[None, :]
    ii, jj = np.nonzero(np.triu(ok, 1))
    return set(zip(ii.tolist(), jj.tolist()))


def check_exclusive(stream: EventStream, raise_on_violation: bool = True) -> bool:
    """True if no actor is ever in two simultaneous events."""
    partners = np.zeros(stream.n_actors, dtype=int)
    for rec in stream.transitions:
        step = 1 if rec.kind is TransitionKind.FORMATION else -1
        partners[rec.i] += step
        partners[rec.j] += step
        if partners[rec.i] > 1 or partners[rec.j] > 1:
            if raise_on_violation:
                raise ExclusiveEngagementViolation(
                    f"actor busy twice at t={rec.t} (pair {rec.pair})")
            return False
    return True


# --- covariates -------------------------------------------------------------

@dataclass
class CovariateTable:
    """Exogenous actor (monadic) and pair (dyadic) covariates."""

    n_actors: int
    monadic: dict = field(default_factory=dict)
    dyadic: dict = field(default_factory=dict)

    def add_monadic(self, name, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_actors,):
            raise ValueError(f"covariate {name!r} needs {self.n_actors} values")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"covariate {name!r} has missing values")
        self.monadic[name] = values

    def add_dyadic(self, name, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (self.n_actors, self.n_actors):
            raise ValueError(f"dyadic covariate {name!r} must be {self.n_actors}x{self.n_actors}")
        m = np.triu(m, 1)
        self.dyadic[name] = m + m.T

    def monadic_values(self, name):
        try:
            return self.monadic[name]
        except KeyError:
            raise KeyError(f"no monadic covariate named {name!r}") from None

    def dyadic_values(self, name):
        try:
            return self.dyadic[name]
        except KeyError:
            raise KeyError(f"no dyadic covariate named {name!r}") from None


def parse_covariates(paths, n_actors: int, actor_labels=None) -> CovariateTable:
    """Load covariate CSVs. Each file is monadic (``actor,name,value``) or
    dyadic (``i,j,name,value``; absent pairs are 0)."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    lookup = None
    if actor_labels is not None:
        lookup = {a: k for k, a in enumerate(actor_labels)}

    def actor(raw, line):
        a = int(raw)
        if lookup is not None:
            if a not in lookup:
                return None
            return lookup[a]
        if not 0 <= a < n_actors:
            raise MalformedRow(line, f"actor {a} outside 0..{n_actors - 1}")
        return a

    table = CovariateTable(n_actors)
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if header == ["actor", "name", "value"]:
                acc = {}
                for line, rec in enumerate(reader, start=2):
                    if not rec:
                        continue
                    try:
                        a = actor(rec[0], line)
                        val = float(rec[2])
                    except (ValueError, IndexError) as exc:
                        raise MalformedRow(line, str(exc)) from None
                    if a is None:
                        continue
                    acc.setdefault(rec[1].strip(), np.full(n_actors, np.nan))[a] = val
                for name, values in acc.items():
                    if np.isnan(values).any():
                        missing = np.flatnonzero(np.isnan(values))[:5].tolist()
                        raise ValueError(f"covariate {name!r} missing for actors {missing}")
                    table.add_monadic(name, values)
            elif header == ["i", "j", "name", "value"]:
                acc = {}
                for line, rec in enumerate(reader, start=2):
                    if not rec:
                        continue
                    try:
                        a, b = actor(rec[0], line), actor(rec[1], line)
                        val = float(rec[3])
                    except (ValueError, IndexError) as exc:
                        raise MalformedRow(line, str(exc)) from None
                    if a is None or b is None:
                        continue
                    m = acc.setdefault(rec[2].strip(), np.zeros((n_actors, n_actors)))
                    m[a, b] = m[b, a] = val
                for name, m in acc.items():
                    table.dyadic[name] = m
            else:
                raise MalformedRow(1, f"unrecognised covariate header {','.join(header)}")
    return table
