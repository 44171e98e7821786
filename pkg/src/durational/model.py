"""Model definition: statistic lists, baseline change-point grids and the
risk-set policy for the incidence (0 -> 1) and duration (1 -> 0) sub-models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InadmissibleStatistic, TimeOutOfWindow
from .events import RiskSetPolicy

INCIDENCE = "incidence"
DURATION = "duration"
SUBMODELS = (INCIDENCE, DURATION)

ENDOGENOUS = ("ccp", "gcp", "ni", "duration")
COVARIATE_KINDS = ("dyad", "match", "absdiff")

_LABELS = {
    "ccp": "Current Common Partner",
    "gcp": "General Common Partner",
    "ni": "Number Interaction",
    "duration": "Current Interaction",
}
_ALIASES = {
    "currentcommonpartner": "ccp",
    "generalcommonpartner": "gcp",
    "numberinteraction": "ni",
    "currentinteractionduration": "duration",
    "currentinteraction": "duration",
    "dyadiccovariate": "dyad",
    "categoricalmatch": "match",
    "absolutedifference": "absdiff",
    "abs": "absdiff",
}
# statistics reported on the log(count + 1) scale
LOG_COUNT = frozenset({"ccp", "gcp", "ni", "duration"})


@dataclass(frozen=True)
class Statistic:
    kind: str
    covariate: Optional[str] = None

    def __post_init__(self):
        if self.kind in COVARIATE_KINDS and not self.covariate:
            raise ValueError(f"statistic {self.kind!r} needs a covariate name")
        if self.kind in ENDOGENOUS and self.covariate:
            raise ValueError(f"statistic {self.kind!r} takes no covariate")
        if self.kind not in ENDOGENOUS + COVARIATE_KINDS:
            raise ValueError(f"unknown statistic kind {self.kind!r}")

    @classmethod
    def parse(cls, text) -> "Statistic":
        if isinstance(text, cls):
            return text
        kind, _, cov = str(text).strip().partition(":")
        kind = kind.strip().lower().replace("_", "").replace(" ", "")
        kind = _ALIASES.get(kind, kind)
        return cls(kind, cov.strip() or None)

    @property
    def name(self) -> str:
        return self.kind if self.covariate is None else f"{self.kind}:{self.covariate}"

    @property
    def label(self) -> str:
        if self.kind in _LABELS:
            return _LABELS[self.kind]
        return {"dyad": "Dyadic", "match": "Match", "absdiff": "Abs. Difference"}[self.kind] \
            + f" ({self.covariate})"

    @property
    def log_count(self) -> bool:
        return self.kind in LOG_COUNT

    def __str__(self):
        return self.name


def parse_statistics(items) -> tuple:
    return tuple(Statistic.parse(s) for s in (items or ()))


@dataclass(frozen=True)
class BaselineGrid:
    """Change points ``0 = c_0 < c_1 < ... < c_Q = T`` of the baseline step
    function. Interval ``q`` (0-based) is ``[c_q, c_{q+1})``."""

    points: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 2:
            raise ValueError("a baseline grid needs at least the two points 0 and T")
        if pts[0] != 0.0:
            raise ValueError("a baseline grid must start at 0")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("change points must be strictly increasing")
        object.__setattr__(self, "points", tuple(pts.tolist()))

    @classmethod
    def uniform(cls, window_end: float, n_intervals: int) -> "BaselineGrid":
        return cls(tuple(np.linspace(0.0, window_end, int(n_intervals) + 1)))

    @classmethod
    def fixed_width(cls, window_end: float, width: float) -> "BaselineGrid":
        pts = np.arange(0.0, window_end, width)
        return cls(tuple(pts.tolist()) + (float(window_end),))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points)

    @property
    def n_intervals(self) -> int:
        return len(self.points) - 1

    @property
    def window_end(self) -> float:
        return self.points[-1]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.array)

    def interval_of(self, t):
        """Index of the interval ``[c_q, c_{q+1})`` containing ``t``."""
        c = self.array
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > c[-1]):
            raise TimeOutOfWindow(f"time outside [0, {c[-1]}]")
        q = np.searchsorted(c, t_arr, side="right") - 1
        q = np.minimum(q, self.n_intervals - 1)
        return int(q) if np.ndim(q) == 0 else q

    def interval_left_of(self, t):
        """Interval holding the exposure just before ``t`` (``c_q < t <= c_{q+1}``)."""
        c = self.array
        q = np.searchsorted(c, np.asarray(t, dtype=float), side="left") - 1
        q = np.clip(q, 0, self.n_intervals - 1)
        return int(q) if np.ndim(q) == 0 else q


@dataclass(frozen=True)
class ModelSpec:
    """Statistic lists per sub-model, baseline grids and the risk-set policy.

    ``rem=True`` disables the duration process: every event is instantaneous
    and the incidence model is a relational event model.
    """

    incidence: tuple = ()
    duration: tuple = ()
    incidence_grid: Optional[BaselineGrid] = None
    duration_grid: Optional[BaselineGrid] = None
    policy: RiskSetPolicy = RiskSetPolicy.UNRESTRICTED
    rem: bool = False

    def __post_init__(self):
        object.__setattr__(self, "incidence", parse_statistics(self.incidence))
        object.__setattr__(self, "duration", parse_statistics(self.duration))
        object.__setattr__(self, "policy", RiskSetPolicy.parse(self.policy))
        if self.duration_grid is None and self.incidence_grid is not None:
            object.__setattr__(self, "duration_grid", self.incidence_grid)
        for sub in SUBMODELS:
            stats = self.stats(sub)
            if len({s.name for s in stats}) != len(stats):
                raise InadmissibleStatistic(f"duplicate statistic in {sub} model")
            for s in stats:
                check_admissible(s, sub, self.policy, self.rem)
        if self.rem and self.duration:
            raise InadmissibleStatistic("a relational event model has no duration sub-model")

    def stats(self, submodel: str) -> tuple:
        return self.incidence if submodel == INCIDENCE else self.duration

    def grid(self, submodel: str) -> BaselineGrid:
        g = self.incidence_grid if submodel == INCIDENCE else self.duration_grid
        if g is None:
            raise ValueError("model spec has no baseline grid; use with_grid()")
        return g

    @property
    def submodels(self) -> tuple:
        return (INCIDENCE,) if self.rem else SUBMODELS

    def with_grid(self, incidence_grid, duration_grid=None) -> "ModelSpec":
        return ModelSpec(self.incidence, self.duration, incidence_grid,
                         duration_grid or incidence_grid, self.policy, self.rem)

    def with_stats(self, incidence=None, duration=None) -> "ModelSpec":
        return ModelSpec(self.incidence if incidence is None else incidence,
                         self.duration if duration is None else duration,
                         self.incidence_grid, self.duration_grid, self.policy, self.rem)

    def all_statistics(self) -> tuple:
        seen = []
        for s in self.incidence + self.duration:
            if s not in seen:
                seen.append(s)
        return tuple(seen)


def check_admissible(stat: Statistic, submodel: str, policy=RiskSetPolicy.UNRESTRICTED,
                     rem: bool = False) -> None:
    policy = RiskSetPolicy.parse(policy)
    if stat.kind == "duration" and submodel != DURATION:
        raise InadmissibleStatistic("the current-interaction duration statistic is only "
                                    "defined for the duration sub-model")
    if stat.kind == "ccp" and policy is RiskSetPolicy.EXCLUSIVE:
        raise InadmissibleStatistic("current common partner is identically zero when actors "
                                    "hold at most one interaction at a time")
    if stat.kind == "ccp" and rem:
        raise InadmissibleStatistic("instantaneous events never leave current partners")
