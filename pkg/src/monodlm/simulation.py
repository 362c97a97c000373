"""Synthetic data from the model itself, and parameter-recovery experiments.

Scores are generated on the model scale and mapped to the observed scale with
an inverse Yeo-Johnson transformation, so a fitted transformation can be
compared against a known truth.  All randomness comes from a PCG64 generator
seeded per dataset.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import optimize

from .fitting import FitWarning, fit_map
from .preprocess import (HEAD_TO_HEAD, MULTI, SCHEMES, Dataset, RawResult,
                         assign_rating_periods)
from .spline_basis import TransformParams, transform

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64"
MAX_RESAMPLE = 100
PROJECTION_GRID = 512


def yeo_johnson(y, lam: float):
    """Yeo-Johnson power transformation, elementwise."""
    y = np.asarray(y, dtype=float)
    if lam == 1:
        return y.copy() if y.ndim else float(y)
    out = np.empty_like(y)
    pos = y >= 0
    yp, yn = y[pos], -y[~pos]
    if lam != 0:
        out[pos] = ((yp + 1) ** lam - 1) / lam
    else:
        out[pos] = np.log1p(yp)
    if lam != 2:
        out[~pos] = -((yn + 1) ** (2 - lam) - 1) / (2 - lam)
    else:
        out[~pos] = -np.log1p(yn)
    return out if out.ndim else float(out)


def _yj_range(lam: float) -> tuple[float, float]:
    lo = 1.0 / (2 - lam) if lam > 2 else -math.inf
    hi = -1.0 / lam if lam < 0 else math.inf
    return lo, hi


def inverse_yeo_johnson(psi, lam: float):
    """Exact inverse of :func:`yeo_johnson`.

    Raises
    ------
    ValueError
        If a value lies outside the range of the forward map for ``lam``.
    """
    psi = np.asarray(psi, dtype=float)
    lo, hi = _yj_range(lam)
    if np.any(psi <= lo) or np.any(psi >= hi):
        raise ValueError(f"values outside the Yeo-Johnson range ({lo}, {hi}) "
                         f"for lambda={lam}")
    if lam == 1:
        return psi.copy() if psi.ndim else float(psi)
    out = np.empty_like(psi)
    pos = psi >= 0
    zp, zn = psi[pos], -psi[~pos]
    if lam != 0:
        out[pos] = (lam * zp + 1) ** (1 / lam) - 1
    else:
        out[pos] = np.expm1(zp)
    if lam != 2:
        out[~pos] = 1 - ((2 - lam) * zn + 1) ** (1 / (2 - lam))
    else:
        out[~pos] = -np.expm1(zn)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SimConfig:
    p: int = 100
    T: int = 20
    n_tg: int = 10
    games_per_period: int = 25
    v0: float = 10.0
    sigma2: float = 100.0
    w: float = 0.5
    yj_lambda: float = 1.0
    seed: int = 0
    mode: str = MULTI
    scheme: str = "annual"
    start_year: int = 2000
    center: bool = False

    def __post_init__(self):
        if self.n_tg < 2 or self.n_tg > self.p:
            raise ValueError("players per game must lie in [2, p]")
        if self.mode == HEAD_TO_HEAD and self.n_tg != 2:
            raise ValueError("head-to-head simulation needs n_tg = 2")
        if not (self.v0 > 0 and self.sigma2 > 0 and self.w >= 0):
            raise ValueError("variances must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown period scheme {self.scheme!r}")

    def to_dict(self) -> dict:
        return dict(asdict(self), rng=RNG_ALGORITHM)


@dataclass(frozen=True, eq=False)
class SimResult:
    """Simulated dataset and its ground truth.

    ``theta`` has shape ``(T, p)`` and is indexed by the simulator's athlete
    numbering (ids ``A000``, ``A001``, ...); use :meth:`theta_in_dataset_order`
    to align with the dataset roster.
    """

    config: SimConfig
    dataset: Dataset
    results: list[RawResult]
    theta: np.ndarray
    psi: list[np.ndarray] = field(repr=False)
    resampled_games: int = 0

    def theta_in_dataset_order(self) -> np.ndarray:
        cols = [int(a[1:]) for a in self.dataset.athlete_ids]
        return self.theta[:, cols]

    def ground_truth(self) -> dict:
        return {"config": self.config.to_dict(),
                "athlete_ids": [f"A{i:03d}" for i in range(self.config.p)],
                "theta": self.theta.tolist(),
                "resampled_games": self.resampled_games}


def period_start(cfg: SimConfig, t: int) -> dt.date:
    months = SCHEMES[cfg.scheme]
    m = (t - 1) * months
    return dt.date(cfg.start_year + m // 12, m % 12 + 1, 1)


def simulate_dataset(cfg: SimConfig) -> SimResult:
    """Draw abilities, model-scale scores and observed scores.

    Abilities start at ``N(0, sigma2 v0)`` and take random-walk steps with
    variance ``sigma2 w``.  Each game samples ``n_tg`` distinct athletes; their
    model-scale scores are ``N(theta - mean(theta in game), sigma2)`` and the
    observed scores are the inverse Yeo-Johnson map of those.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    sd = math.sqrt(cfg.sigma2)
    theta = np.empty((cfg.T, cfg.p))
    theta[0] = rng.normal(0.0, sd * math.sqrt(cfg.v0), cfg.p)
    for t in range(1, cfg.T):
        theta[t] = theta[t - 1] + rng.normal(0.0, sd * math.sqrt(cfg.w), cfg.p)
    results = []
    psis = []
    resampled = 0
    for t in range(1, cfg.T + 1):
        day0 = period_start(cfg, t)
        period_psi = []
        for g in range(cfg.games_per_period):
            who = rng.choice(cfg.p, cfg.n_tg, replace=False)
            th = theta[t - 1, who]
            if cfg.mode == HEAD_TO_HEAD:
                loc = np.array([th[0] - th[1]])
            else:
                loc = th - th.mean()
            for attempt in range(MAX_RESAMPLE + 1):
                psi = loc + rng.normal(0.0, sd, loc.size)
                try:
                    y = inverse_yeo_johnson(psi, cfg.yj_lambda)
                    break
                except ValueError:
                    resampled += 1
            else:
                raise RuntimeError(f"could not draw valid scores for period "
                                   f"{t}, game {g}")
            period_psi.append(psi)
            day = day0 + dt.timedelta(days=g % 28)
            gid = f"P{t:03d}G{g:04d}"
            if cfg.mode == HEAD_TO_HEAD:
                scores = (float(y[0]), 0.0)
            else:
                scores = y
            for a, s in zip(who, scores):
                results.append(RawResult(day, gid, f"A{a:03d}", float(s)))
        psis.append(np.concatenate(period_psi))
    if resampled:
        log.info("resampled noise %d times for out-of-range scores", resampled)
    ds = assign_rating_periods(results, cfg.scheme, cfg.mode,
                               center=cfg.center)
    return SimResult(cfg, ds, results, theta, psis, resampled)


def project_to_yeo_johnson(tp: TransformParams, fit_shift: bool = False,
                           lam_bounds=(-1.0, 3.0),
                           n_grid: int = PROJECTION_GRID) -> dict:
    """Best Yeo-Johnson approximation of a learned transformation.

    Minimizes ``sum (tau(u) - s * YJ(u + delta; lam) - c)^2`` over a uniform
    grid spanning the knot boundary.  ``s`` and ``c`` enter linearly and are
    profiled out; ``delta`` is fixed at 0 unless ``fit_shift`` is set (useful
    when the scores were game-centered before fitting, which moves the origin
    of the Yeo-Johnson map).  Returns ``lambda``, ``scale``, ``offset``,
    ``shift`` and the RMS error of the approximation.
    """
    k = tp.knots
    u = np.linspace(k.lo, k.hi, n_grid)
    target = transform(tp, u)
    width = k.hi - k.lo

    def profile(lam, delta):
        basis = np.column_stack([yeo_johnson(u + delta, lam), np.ones_like(u)])
        coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
        resid = target - basis @ coef
        return float(resid @ resid), coef

    starts = np.linspace(lam_bounds[0], lam_bounds[1], 9)
    if fit_shift:
        best = None
        for lam0 in starts:
            for d0 in (-0.25 * width, 0.0, 0.25 * width):
                r = optimize.minimize(lambda x: profile(*x)[0], [lam0, d0],
                                      method="Nelder-Mead",
                                      options={"xatol": 1e-8, "fatol": 1e-12,
                                               "maxiter": 4000})
                if best is None or r.fun < best.fun:
                    best = r
        lam, delta = best.x
    else:
        losses = [profile(l, 0.0)[0] for l in starts]
        i = int(np.argmin(losses))
        lo_b = starts[max(i - 1, 0)]
        hi_b = starts[min(i + 1, len(starts) - 1)]
        r = optimize.minimize_scalar(lambda l: profile(l, 0.0)[0],
                                     bounds=(lo_b, hi_b), method="bounded",
                                     options={"xatol": 1e-10})
        lam, delta = r.x, 0.0
    sse, (scale, offset) = profile(lam, delta)
    return {"lambda": float(lam), "scale": float(scale),
            "offset": float(offset), "shift": float(delta),
            "rms": math.sqrt(sse / n_grid)}


@dataclass(frozen=True)
class Replication:
    """Outcome of one simulate-and-fit run of a recovery cell."""

    cell: int
    rep: int
    seed: int
    lambda_true: float
    lambda_hat: float = math.nan
    lambda_error: float = math.nan
    w_hat: float = math.nan
    sigma_hat: float = math.nan
    projection_scale: float = math.nan
    projection_rms: float = math.nan
    converged: bool = False
    error: str | None = None


def run_replication(cfg: SimConfig, cell: int = 0, rep: int = 0,
                    fit_kwargs: dict | None = None) -> Replication:
    """Simulate one dataset, fit it and project the learned transformation.

    Failures are caught and recorded in the ``error`` field.
    """
    try:
        sim = simulate_dataset(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FitWarning)
            model = fit_map(sim.dataset, **(fit_kwargs or {}))
        proj = project_to_yeo_johnson(model.transform)
    except Exception as exc:  # recorded, not fatal
        log.warning("cell %d rep %d failed: %s", cell, rep, exc)
        return Replication(cell, rep, cfg.seed, cfg.yj_lambda,
                           error=f"{type(exc).__name__}: {exc}")
    return Replication(cell, rep, cfg.seed, cfg.yj_lambda, proj["lambda"],
                       abs(proj["lambda"] - cfg.yj_lambda), model.w_hat,
                       model.sigma_hat, proj["scale"], proj["rms"],
                       bool(model.diagnostics["converged"]))


def _run_packed(args):
    return run_replication(*args)


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": math.nan, "median": math.nan, "q25": math.nan,
                "q75": math.nan}
    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"mean": float(v.mean()), "median": float(med), "q25": float(q25),
            "q75": float(q75)}


def recovery_experiment(cells, replications: int,
                        fit_kwargs: dict | None = None, n_jobs: int = 1,
                        ) -> tuple[list[dict], list[Replication]]:
    """Parameter recovery over a grid of simulation configurations.

    Replication ``r`` of a cell uses seed ``cell.seed + r``.  Returns one
    summary row per cell (median and IQR of the projected-lambda error, mean
    ``w_hat`` and ``sigma_hat``, failure count) and the per-replication
    records.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("recovery grid is empty")
    if replications < 1:
        raise ValueError("need at least one replication")
    jobs = [(replace(cfg, seed=cfg.seed + r), i, r, fit_kwargs)
            for i, cfg in enumerate(cells) for r in range(replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            reps = list(ex.map(_run_packed, jobs))
    else:
        reps = [_run_packed(j) for j in jobs]
    table = []
    for i, cfg in enumerate(cells):
        ok = [r for r in reps if r.cell == i and r.error is None]
        err = _summary([r.lambda_error for r in ok])
        row = {"cell": i, "p": cfg.p, "T": cfg.T, "n_tg": cfg.n_tg,
               "games_per_period": cfg.games_per_period,
               "sigma2": cfg.sigma2, "w": cfg.w, "v0": cfg.v0,
               "yj_lambda": cfg.yj_lambda, "replications": replications,
               "failures": replications - len(ok),
               "nonconverged": sum(not r.converged for r in ok),
               "lambda_error_median": err["median"],
               "lambda_error_iqr": err["q75"] - err["q25"],
               "lambda_hat_mean": _summary([r.lambda_hat for r in ok])["mean"],
               "w_hat_mean": _summary([r.w_hat for r in ok])["mean"],
               "sigma_hat_mean": _summary([r.sigma_hat for r in ok])["mean"]}
        table.append(row)
    return table, reps


def write_recovery_csv(table: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(table[0]))
        wr.writeheader()
        for row in table:
            wr.writerow({k: repr(v) if isinstance(v, float) else v
                         for k, v in row.items()})


def write_replications_json(reps: list[Replication], path) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in reps], fh, indent=1, sort_keys=True)
