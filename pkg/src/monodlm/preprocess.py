"""Raw results to model-ready rating periods.

Games are grouped into rating periods by date, then either game-centered
(multi-competitor mode) or differenced (head-to-head mode).
"""

from __future__ import annotations

import bisect
import datetime as dt
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MULTI = "multi_competitor"
HEAD_TO_HEAD = "head_to_head"
MODES = (MULTI, HEAD_TO_HEAD)

# months per period for calendar schemes
SCHEMES = {"annual": 12, "biannual": 6, "quarterly": 3, "bimonthly": 2,
           "monthly": 1}
PRESCALE_POLICIES = ("none", "log_then_center", "unit_variance_per_game")


class DataError(ValueError):
    """Input data cannot be turned into a valid dataset."""


@dataclass(frozen=True)
class RawResult:
    event_time: dt.date
    game_id: str
    athlete_id: str
    score: float


@dataclass(frozen=True, eq=False)
class Game:
    """One game with athletes as indices into the dataset's roster.

    ``raw_scores`` keeps the sport-unit scores in athlete order.  ``scores``
    holds the model observations: centered scores in multi-competitor mode, a
    single score difference (first minus second athlete) in head-to-head mode.
    """

    game_id: str
    athletes: np.ndarray
    raw_scores: np.ndarray
    scores: np.ndarray
    mode: str = MULTI

    @property
    def size(self) -> int:
        return len(self.athletes)

    @property
    def n_obs(self) -> int:
        return len(self.scores)

    @property
    def centered_scores(self) -> np.ndarray:
        if self.mode != MULTI:
            raise AttributeError("head-to-head games carry a score difference")
        return self.scores

    @property
    def score_diff(self) -> float:
        if self.mode != HEAD_TO_HEAD:
            raise AttributeError("multi-competitor games carry centered scores")
        return float(self.scores[0])

    def design_rows(self) -> np.ndarray:
        """Dense design rows restricted to this game's athletes.

        Row ``i`` of a centered game is ``e_i - 1/k``; a head-to-head game has
        the single row ``(+1, -1)``.
        """
        k = self.size
        if self.mode == HEAD_TO_HEAD:
            return np.array([[1.0, -1.0]])
        return np.eye(k) - 1.0 / k


@dataclass(frozen=True, eq=False)
class RatingPeriod:
    t: int
    games: tuple[Game, ...]
    label: str = ""

    @property
    def n_obs(self) -> int:
        return sum(g.n_obs for g in self.games)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rating periods plus the athlete roster.

    ``first_key`` anchors period numbering for calendar schemes so that new
    results can be placed after the last period.
    """

    periods: tuple[RatingPeriod, ...]
    athlete_ids: tuple[str, ...]
    mode: str = MULTI
    scheme: str | tuple = "annual"
    first_key: int = 0
    prescale: str = "none"
    dropped_games: int = field(default=0, compare=False)
    centered: bool = True

    @property
    def p(self) -> int:
        return len(self.athlete_ids)

    @property
    def T(self) -> int:
        return len(self.periods)

    @property
    def n_obs(self) -> int:
        return sum(per.n_obs for per in self.periods)

    def athlete_index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.athlete_ids)}

    def prefix(self, n_periods: int) -> "Dataset":
        return replace(self, periods=self.periods[:n_periods])

    def observations(self) -> np.ndarray:
        """All model observations concatenated in period, game order."""
        parts = [g.scores for per in self.periods for g in per.games]
        return np.concatenate(parts) if parts else np.zeros(0)


def period_key(date: dt.date, scheme) -> int:
    """Integer bucket of ``date``; consecutive periods have consecutive keys."""
    if isinstance(scheme, str):
        try:
            months = SCHEMES[scheme]
        except KeyError:
            raise DataError(f"unknown period scheme {scheme!r}; choose one of "
                            f"{sorted(SCHEMES)} or give breakpoints") from None
        return (date.year * 12 + date.month - 1) // months
    return bisect.bisect_right(list(scheme), date)


def period_label(key: int, scheme) -> str:
    if isinstance(scheme, str):
        months = SCHEMES[scheme]
        start = key * months
        return f"{start // 12:04d}-{start % 12 + 1:02d}"
    bps = list(scheme)
    return "start" if key == 0 else bps[key - 1].isoformat()


def _normalize_scheme(scheme):
    if isinstance(scheme, str):
        if scheme not in SCHEMES:
            raise DataError(f"unknown period scheme {scheme!r}")
        return scheme
    bps = tuple(d if isinstance(d, dt.date) else dt.date.fromisoformat(str(d))
                for d in scheme)
    if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
        raise DataError("period breakpoints must be strictly increasing")
    return bps


@dataclass
class _RawGame:
    game_id: str
    date: dt.date
    athletes: list[int]
    scores: list[float]


def center_games(raw_games: Iterable[_RawGame], drop_log=None,
                 center: bool = True) -> list[Game]:
    """Subtract each game's mean score; drops single-athlete games.

    With ``center=False`` the raw scores are kept as observations, for data
    whose model-scale scores are already mean-zero within each game (such as
    simulated data).
    """
    out = []
    for rg in raw_games:
        if len(rg.athletes) < 2:
            log.warning("dropping game %s with a single athlete", rg.game_id)
            if drop_log is not None:
                drop_log.append(rg.game_id)
            continue
        y = np.asarray(rg.scores, dtype=float)
        out.append(Game(rg.game_id, np.asarray(rg.athletes, dtype=np.intp),
                        y, y - y.mean() if center else y.copy(), MULTI))
    return out


def diff_scores(raw_games: Iterable[_RawGame]) -> list[Game]:
    """Score differences ``first - second`` for head-to-head games."""
    out = []
    for rg in raw_games:
        if len(rg.athletes) != 2:
            raise DataError(f"head-to-head game {rg.game_id} has "
                            f"{len(rg.athletes)} athletes, expected 2")
        y = np.asarray(rg.scores, dtype=float)
        out.append(Game(rg.game_id, np.asarray(rg.athletes, dtype=np.intp),
                        y, np.array([y[0] - y[1]]), HEAD_TO_HEAD))
    return out


def _group_games(results: Sequence[RawResult], index: dict[str, int],
                 ) -> list[_RawGame]:
    games: dict[str, _RawGame] = {}
    for row, r in enumerate(results, start=1):
        if not isinstance(r.event_time, dt.date):
            raise DataError(f"row {row}: unparseable date {r.event_time!r}")
        if not math.isfinite(r.score):
            raise DataError(f"row {row}: non-finite score {r.score!r}")
        g = games.get(r.game_id)
        if g is None:
            g = games[r.game_id] = _RawGame(r.game_id, r.event_time, [], [])
        elif r.event_time != g.date:
            raise DataError(f"row {row}: game {r.game_id} has conflicting "
                            f"dates {g.date} and {r.event_time}")
        a = index.setdefault(r.athlete_id, len(index))
        if a in g.athletes:
            raise DataError(f"row {row}: athlete {r.athlete_id} appears twice "
                            f"in game {r.game_id}")
        g.athletes.append(a)
        g.scores.append(float(r.score))
    return list(games.values())


def assign_rating_periods(results: Sequence[RawResult], scheme="biannual",
                          mode: str = MULTI, prescale: str = "none",
                          first_key: int | None = None,
                          athlete_ids: Sequence[str] = (),
                          center: bool = True) -> Dataset:
    """Group results into games and rating periods and build observations.

    Parameters
    ----------
    results : sequence of RawResult
    scheme : str or sequence of dates
        A calendar scheme name (annual, biannual, quarterly, bimonthly,
        monthly) or explicit period breakpoints.
    mode : {"multi_competitor", "head_to_head"}
    prescale : str
        Score pre-scaling policy, see :func:`pre_scale`.
    first_key : int, optional
        Period key of period 1; defaults to the key of the earliest result.
        Used to continue an existing dataset's numbering.
    athlete_ids : sequence of str
        Existing roster; new athletes are appended in first-appearance order.
    center : bool
        Game-center multi-competitor scores (the default).

    Empty periods between the first and last game are kept.
    """
    if mode not in MODES:
        raise DataError(f"unknown mode {mode!r}")
    if not results:
        raise DataError("no results to assign")
    scheme = _normalize_scheme(scheme)
    index = {a: i for i, a in enumerate(athlete_ids)}
    raw_games = _group_games(results, index)
    keys = [period_key(g.date, scheme) for g in raw_games]
    if first_key is None:
        first_key = min(keys)
    if min(keys) < first_key:
        raise DataError("results fall before the first rating period")
    n_periods = max(keys) - first_key + 1
    buckets: list[list[_RawGame]] = [[] for _ in range(n_periods)]
    # stable within a period: by date, then input order
    order = sorted(range(len(raw_games)), key=lambda i: raw_games[i].date)
    for i in order:
        buckets[keys[i] - first_key].append(raw_games[i])
    dropped: list[str] = []
    periods = []
    for j, bucket in enumerate(buckets):
        games = diff_scores(bucket) if mode == HEAD_TO_HEAD \
            else center_games(bucket, dropped, center)
        periods.append(RatingPeriod(j + 1, tuple(games),
                                    period_label(first_key + j, scheme)))
    ids = [None] * len(index)
    for a, i in index.items():
        ids[i] = a
    ds = Dataset(tuple(periods), tuple(ids), mode, scheme, first_key,
                 "none", len(dropped), center)
    return pre_scale(ds, prescale)


def _rescale_game(g: Game, policy: str) -> Game:
    y = g.raw_scores
    if policy == "log_then_center":
        if np.any(y <= 0):
            raise DataError(f"game {g.game_id}: log pre-scaling needs "
                            "positive scores")
        ly = np.log(y)
        obs = np.array([ly[0] - ly[1]]) if g.mode == HEAD_TO_HEAD \
            else ly - ly.mean()
        return replace(g, scores=obs)
    if policy == "unit_variance_per_game":
        if g.mode == HEAD_TO_HEAD or g.size < 3:
            return g
        sd = np.std(g.scores, ddof=1)
        return replace(g, scores=g.scores / sd) if sd > 0 else g
    raise DataError(f"unknown pre-scaling policy {policy!r}")


def pre_scale(ds: Dataset, policy: str = "none") -> Dataset:
    """Apply a per-game score pre-scaling policy.

    ``log_then_center`` logs raw scores then centers them; ``unit_variance_per_game``
    divides centered scores by their sample standard deviation (games with
    fewer than three athletes are left alone).  Policies replace any earlier one.
    """
    if policy not in PRESCALE_POLICIES:
        raise DataError(f"unknown pre-scaling policy {policy!r}")
    if policy == ds.prescale:
        return ds
    if policy != "none" and not ds.centered:
        raise DataError("pre-scaling applies to game-centered data only")
    periods = []
    for per in ds.periods:
        if policy == "none":
            games = tuple(_restore(g) for g in per.games)
        else:
            games = tuple(_rescale_game(_restore(g), policy) for g in per.games)
        periods.append(replace(per, games=games))
    return replace(ds, periods=tuple(periods), prescale=policy)


def _restore(g: Game) -> Game:
    y = g.raw_scores
    obs = np.array([y[0] - y[1]]) if g.mode == HEAD_TO_HEAD else y - y.mean()
    return replace(g, scores=obs)


def train_periods(T: int, train_fraction: float) -> int:
    """Number of leading periods used to learn ``w`` and the transformation."""
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must lie in (0, 1]")
    return max(1, min(T, math.floor(train_fraction * T + 1e-9)))
