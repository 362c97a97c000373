"""One-step-ahead test predictions and rank-based evaluation metrics.

Predictions for period ``t`` use the filtered state after period ``t - 1``
only; the data of period ``t`` are filtered in before predicting ``t + 1``.
Because a fitted model already holds the filtered trajectory of every period
it was run on, the rolling protocol reduces to reading the stored states.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import dlm_filter as dlm
from .fitting import FittedModel, transform_periods
from .preprocess import HEAD_TO_HEAD, Dataset

log = logging.getLogger(__name__)

LOWER_IS_BETTER = "lower_is_better"
HIGHER_IS_BETTER = "higher_is_better"
ORIENTATIONS = (LOWER_IS_BETTER, HIGHER_IS_BETTER)


def rank_scores(scores, orientation: str = HIGHER_IS_BETTER) -> np.ndarray:
    """Ranks with 1 for the best score and average ranks for ties."""
    if orientation not in ORIENTATIONS:
        raise ValueError(f"unknown orientation {orientation!r}")
    s = np.asarray(scores, dtype=float)
    return stats.rankdata(s if orientation == LOWER_IS_BETTER else -s)


@dataclass(frozen=True, eq=False)
class GamePrediction:
    """Predicted and observed outcome of one test game.

    ``predicted_scores`` are the model-scale predictive means of the game's
    athletes (centered within the game); ``observed_scores`` are the raw
    scores.  ``predicted_diff`` and ``observed_diff`` are the first-minus-second
    margins of head-to-head games and NaN otherwise.  ``unseen`` flags athletes
    with no state before period ``t``; they are predicted at the prior mean 0.
    """

    t: int
    game_id: str
    athlete_ids: tuple[str, ...]
    predicted_scores: np.ndarray
    observed_scores: np.ndarray
    predicted_ranks: np.ndarray
    observed_ranks: np.ndarray
    predicted_diff: float = math.nan
    observed_diff: float = math.nan
    unseen: tuple[bool, ...] = ()

    @property
    def n_tg(self) -> int:
        return len(self.athlete_ids)


def _check_alignment(model: FittedModel, ds: Dataset) -> None:
    if ds.mode != model.mode:
        raise ValueError(f"model mode {model.mode} does not match data mode "
                         f"{ds.mode}")
    if model.T < ds.T - 1:
        raise ValueError(f"model covers {model.T} periods; predicting the "
                         f"last of {ds.T} needs at least {ds.T - 1}")


def _test_range(model: FittedModel, ds: Dataset, test_periods):
    if test_periods is None:
        return range(model.T_train + 1, ds.T + 1)
    return [int(t) for t in test_periods]


def predict_test_games(model: FittedModel, ds: Dataset, test_periods=None,
                       orientation: str = HIGHER_IS_BETTER,
                       ) -> list[GamePrediction]:
    """Rolling one-step predictions for every game of the test periods.

    Parameters
    ----------
    model : FittedModel
        Model run through at least the period before the last test period;
        its filtered states must come from ``ds`` (same roster order).
    ds : Dataset
    test_periods : iterable of int, optional
        1-based periods to predict; defaults to those after the training prefix.
    orientation : {"higher_is_better", "lower_is_better"}
    """
    _check_alignment(model, ds)
    fr = model.filter_result
    out = []
    for t in _test_range(model, ds, test_periods):
        prior = fr.prior_of(t)
        p_known = prior.p
        for g in ds.periods[t - 1].games:
            known = g.athletes < p_known
            m = np.where(known, prior.m[np.minimum(g.athletes, p_known - 1)],
                         0.0)
            pred = m - m.mean()
            ids = tuple(ds.athlete_ids[i] for i in g.athletes)
            if g.mode == HEAD_TO_HEAD:
                pdiff, odiff = float(m[0] - m[1]), float(g.scores[0])
            else:
                pdiff = odiff = math.nan
            out.append(GamePrediction(
                t, g.game_id, ids, pred, g.raw_scores.copy(),
                rank_scores(pred, orientation),
                rank_scores(g.raw_scores, orientation), pdiff, odiff,
                tuple(bool(not k) for k in known)))
    n_unseen = sum(any(p.unseen) for p in out)
    if n_unseen:
        log.info("%d test games include athletes with no prior state", n_unseen)
    return out


def _spearman(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den


def game_spearman(pred: GamePrediction) -> float:
    """Spearman correlation of one game; NaN when observed ranks all tie.

    Constant predicted ranks (no information) score 0.
    """
    obs = pred.observed_ranks
    if np.all(obs == obs[0]):
        return math.nan
    pr = pred.predicted_ranks
    if np.all(pr == pr[0]):
        return 0.0
    return _spearman(np.asarray(pr, float), np.asarray(obs, float))


def weighted_spearman_details(preds) -> dict:
    """Weighted Spearman plus the number of games used and excluded."""
    num = den = 0.0
    used = excluded = 0
    for p in preds:
        if p.n_tg < 2:
            raise ValueError(f"game {p.game_id} has fewer than 2 athletes")
        rho = game_spearman(p)
        if math.isnan(rho):
            excluded += 1
            continue
        num += (p.n_tg - 1) * rho
        den += p.n_tg - 1
        used += 1
    if excluded:
        log.info("excluded %d games with all-tied observed ranks", excluded)
    value = num / den if den else math.nan
    return {"weighted_spearman": value, "games_used": used,
            "games_excluded": excluded}


def weighted_spearman(preds) -> float:
    """Game-size-weighted mean of per-game Spearman correlations.

    Each game is weighted by ``n_tg - 1``.  Games whose observed ranks are all
    tied are excluded.  Returns NaN when no game remains.
    """
    return weighted_spearman_details(preds)["weighted_spearman"]


def win_accuracy(preds) -> float:
    """Fraction of head-to-head games whose winner was predicted correctly.

    Zero predicted or observed margins earn half credit.
    """
    preds = list(preds)
    if not preds:
        return math.nan
    credit = 0.0
    for p in preds:
        if math.isnan(p.predicted_diff) or math.isnan(p.observed_diff):
            raise ValueError(f"game {p.game_id} is not a head-to-head game")
        sp, so = np.sign(p.predicted_diff), np.sign(p.observed_diff)
        credit += 0.5 if sp == 0 or so == 0 else float(sp == so)
    return credit / len(preds)


@dataclass(frozen=True, eq=False)
class ResidualTable:
    """Sorted standardized residuals paired with normal plotting quantiles."""

    residuals: np.ndarray
    standardized: np.ndarray
    quantiles: np.ndarray

    @property
    def qq_correlation(self) -> float:
        if self.standardized.size < 2 or np.ptp(self.standardized) == 0:
            return math.nan
        return float(np.corrcoef(self.standardized, self.quantiles)[0, 1])


def normal_plotting_quantiles(n: int) -> np.ndarray:
    return stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)


def qq_table(standardized, residuals=None) -> ResidualTable:
    z = np.asarray(standardized, dtype=float)
    order = np.argsort(z, kind="stable")
    e = z if residuals is None else np.asarray(residuals, dtype=float)
    return ResidualTable(e[order], z[order], normal_plotting_quantiles(z.size))


def standardized_residuals(model: FittedModel, ds: Dataset,
                           test_periods=None) -> ResidualTable:
    """One-step residuals ``psi - X m_{t-1}`` scaled by their predictive scale.

    The scale of an observation is ``sqrt((b/a) S_ii)`` with
    ``S = I + X (V + w I) X^T`` evaluated at the state before period ``t``.
    """
    _check_alignment(model, ds)
    fr = model.filter_result
    resid, zs = [], []
    for t in _test_range(model, ds, test_periods):
        per = ds.periods[t - 1]
        if not per.games:
            continue
        prior = fr.prior_of(t).extended(ds.p, model.h.v0)
        design = dlm.build_design(per)
        psi = transform_periods(Dataset((per,), ds.athlete_ids, ds.mode),
                                model.transform)[0][0]
        _, st = dlm.filter_step(prior, design, psi, model.w_hat, model.h)
        e = psi - st.mean
        resid.append(e)
        zs.append(e / np.sqrt(st.scale_factor * st.S_diag))
    if not resid:
        return qq_table(np.zeros(0))
    return qq_table(np.concatenate(zs), np.concatenate(resid))


def evaluate(model: FittedModel, ds: Dataset, test_periods=None,
             orientation: str = HIGHER_IS_BETTER) -> tuple[dict, ResidualTable]:
    """Mode-appropriate metrics plus the residual Q-Q table."""
    preds = predict_test_games(model, ds, test_periods, orientation)
    table = standardized_residuals(model, ds, test_periods)
    metrics = {"mode": model.mode, "orientation": orientation,
               "test_periods": [int(t) for t in
                                _test_range(model, ds, test_periods)],
               "n_test_games": len(preds),
               "games_with_unseen_athletes": sum(any(p.unseen) for p in preds),
               "n_residuals": int(table.standardized.size),
               "qq_correlation": table.qq_correlation}
    if model.mode == HEAD_TO_HEAD:
        metrics["win_accuracy"] = win_accuracy(preds)
    else:
        metrics.update(weighted_spearman_details(preds))
    return metrics, table
