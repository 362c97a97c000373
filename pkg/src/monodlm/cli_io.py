"""Command-line interface, CSV ingestion and model files.

Model files are JSON with keys sorted and floats written in their shortest
round-trip form, so loading and saving again reproduces the file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dlm_filter as dlm
from .dlm_filter import FilterResult, FilterState, Hyperparams, SmoothedState
from .evaluation import HIGHER_IS_BETTER, ORIENTATIONS, evaluate, rank_scores
from .fitting import (FitWarning, FittedModel, fast_update, fit_map, refilter,
                      write_trace_csv)
from .preprocess import (MODES, MULTI, PRESCALE_POLICIES, DataError, RawResult,
                         assign_rating_periods)
from .simulation import SimConfig, simulate_dataset
from .spline_basis import (KnotError, TransformParams, transform,
                           transform_jacobian)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
CSV_COLUMNS = ("date", "game_id", "athlete_id", "score")
INSPECT_POINTS = 512

EXIT_OK, EXIT_DATA, EXIT_FIT_WARNING, EXIT_INTERNAL = 0, 2, 3, 4


class ModelFileError(ValueError):
    """A model file is unreadable, from another format version, or invalid."""


class ConfigError(ValueError):
    """A run configuration is invalid."""


# ---------------------------------------------------------------- CSV input

def _parse_date(text: str) -> dt.date:
    text = text.strip()
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        return dt.datetime.fromisoformat(text).date()


def _parse_score(text: str) -> float:
    text = text.strip()
    if ":" in text:
        raise ValueError(f"{text!r} looks like a clock time; convert times "
                         "to seconds (a decimal number) before loading")
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"score {text!r} is not finite")
    return value


def load_results_csv(path, require_score: bool = True) -> list[RawResult]:
    """Read ``date,game_id,athlete_id,score`` rows.

    Columns may appear in any order; extra columns are ignored.  With
    ``require_score=False`` an empty score is read as NaN (used for games
    still to be played).

    Raises
    ------
    DataError
        On an empty file, missing columns, unparseable fields (reported by
        line and column) or an athlete listed twice in one game.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: header lacks column(s) {missing}; "
                            f"expected {','.join(CSV_COLUMNS)}")
        col = {c: header.index(c) for c in CSV_COLUMNS}
        rows: list[RawResult] = []
        errors: list[str] = []
        seen: dict[tuple[str, str], int] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) < len(header):
                errors.append(f"line {line}: expected {len(header)} fields, "
                              f"got {len(row)}")
                continue
            try:
                date = _parse_date(row[col["date"]])
            except ValueError:
                errors.append(f"line {line}, column {col['date'] + 1} (date): "
                              f"{row[col['date']]!r} is not an ISO-8601 date")
                continue
            gid = row[col["game_id"]].strip()
            aid = row[col["athlete_id"]].strip()
            for name, value in (("game_id", gid), ("athlete_id", aid)):
                if not value:
                    errors.append(f"line {line}, column {col[name] + 1} "
                                  f"({name}): empty")
            raw = row[col["score"]]
            if not raw.strip() and not require_score:
                score = math.nan
            else:
                try:
                    score = _parse_score(raw)
                except ValueError as exc:
                    errors.append(f"line {line}, column {col['score'] + 1} "
                                  f"(score): {exc}")
                    continue
            if not gid or not aid:
                continue
            if (gid, aid) in seen:
                errors.append(f"line {line}: athlete {aid} appears twice in "
                              f"game {gid} (first on line {seen[gid, aid]})")
                continue
            seen[gid, aid] = line
            rows.append(RawResult(date, gid, aid, score))
    if errors:
        shown = "\n  ".join(errors[:20])
        more = f"\n  ... and {len(errors) - 20} more" if len(errors) > 20 else ""
        raise DataError(f"{path}: {len(errors)} bad row(s):\n  {shown}{more}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in results:
            wr.writerow([r.event_time.isoformat(), r.game_id, r.athlete_id,
                         repr(float(r.score))])


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                         else v for v in row])


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _jsonable(x):
    """Plain Python values; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


# ---------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    mode: str = MULTI
    period_scheme: str | tuple = "biannual"
    orientation: str = HIGHER_IS_BETTER
    degree: int = 3
    n_interior: int = 3
    hyperparams: dict = field(default_factory=dict)
    train_fraction: float = 2 / 3
    prescale: str = "none"
    center: bool = True
    max_iter: int | None = None
    x_tol: float = 1e-6
    f_tol: float = 1e-8
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {ORIENTATIONS}")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if self.prescale not in PRESCALE_POLICIES:
            raise ConfigError(f"prescale must be one of {PRESCALE_POLICIES}")
        if not isinstance(self.period_scheme, str):
            object.__setattr__(self, "period_scheme",
                               tuple(str(d) for d in self.period_scheme))
        try:
            self.hyperparameters()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad hyperparams: {exc}") from None

    def hyperparameters(self) -> Hyperparams:
        return Hyperparams.from_dict(self.hyperparams)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if not isinstance(self.period_scheme, str):
            d["period_scheme"] = list(self.period_scheme)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)


def build_dataset(results, cfg: RunConfig, **kw):
    return assign_rating_periods(results, cfg.period_scheme, cfg.mode,
                                 cfg.prescale, center=cfg.center, **kw)


# ---------------------------------------------------------------- model files

def _scheme_to_json(scheme):
    return scheme if isinstance(scheme, str) else \
        [d.isoformat() for d in scheme]


def _scheme_from_json(scheme):
    return scheme if isinstance(scheme, str) else \
        tuple(dt.date.fromisoformat(d) for d in scheme)


def model_to_dict(model: FittedModel, config: RunConfig) -> dict:
    if model.h.exact_mode:
        raise ModelFileError("exact_mode models keep full covariance matrices "
                             "and cannot be saved; refit without exact_mode")
    periods = []
    for s, sm, label in zip(model.filter_result.states, model.smoothed,
                            model.period_labels):
        periods.append({"t": s.t, "label": label, "a": s.a, "b": s.b,
                        "filtered": {"m": s.m, "V": s.V},
                        "smoothed": {"m": sm.m_s, "V": sm.V_s}})
    diag = {k: v for k, v in model.diagnostics.items() if k != "trace"}
    a_T, b_T = model.sigma2_posterior
    d = {"format_version": FORMAT_VERSION,
         "run_config": config.to_dict(),
         "mode": model.mode,
         "scheme": _scheme_to_json(model.scheme),
         "first_key": model.first_key,
         "prescale": model.prescale,
         "centered": model.centered,
         "T_train": model.T_train,
         "prior_variant": model.prior_variant,
         "hyperparams": model.h.to_dict(),
         "transform": model.transform.to_dict(),
         "w_hat": model.w_hat,
         "a_T": a_T, "b_T": b_T,
         "log_density": model.filter_result.log_density,
         "athlete_ids": list(model.athlete_ids),
         "periods": periods,
         "diagnostics": diag}
    return _jsonable(d)


def save_model(model: FittedModel, path, config: RunConfig | None = None,
               ) -> None:
    _dump_json(model_to_dict(model, config or RunConfig(mode=model.mode)),
               path)


def _arr(x, p, what):
    a = np.asarray(x, dtype=float)
    if a.shape != (p,):
        raise ModelFileError(f"{what}: expected {p} values, got {a.shape}")
    return a


def model_from_dict(d: dict) -> tuple[FittedModel, RunConfig]:
    if not isinstance(d, dict) or "format_version" not in d:
        raise ModelFileError("not a model file (no format_version)")
    if d["format_version"] != FORMAT_VERSION:
        raise ModelFileError(f"model file format {d['format_version']} is not "
                             f"supported (expected {FORMAT_VERSION})")
    try:
        config = RunConfig.from_dict(d["run_config"])
        h = Hyperparams.from_dict(d["hyperparams"])
        tp = TransformParams.from_dict(d["transform"])
        ids = tuple(d["athlete_ids"])
        p = len(ids)
        w = float(d["w_hat"])
        if not w > 0:
            raise ModelFileError("w_hat must be positive")
        states, smoothed, labels = [], [], []
        a_T, b_T = float(d["a_T"]), float(d["b_T"])
        for i, per in enumerate(d["periods"], start=1):
            if per["t"] != i:
                raise ModelFileError(f"period {i} is numbered {per['t']}")
            a, b = float(per["a"]), float(per["b"])
            if not (a > 0 and b > 0):
                raise ModelFileError(f"period {i}: a and b must be positive")
            V = _arr(per["filtered"]["V"], p, f"period {i} filtered V")
            Vs = _arr(per["smoothed"]["V"], p, f"period {i} smoothed V")
            if np.any(V <= 0) or np.any(Vs <= 0):
                raise ModelFileError(f"period {i}: variances must be positive")
            states.append(FilterState(i, _arr(per["filtered"]["m"], p,
                                              f"period {i} filtered m"),
                                      V, a, b))
            smoothed.append(SmoothedState(i, _arr(per["smoothed"]["m"], p,
                                                  f"period {i} smoothed m"),
                                          Vs, a_T, b_T))
            labels.append(str(per["label"]))
        if states and (states[-1].a, states[-1].b) != (a_T, b_T):
            raise ModelFileError("(a_T, b_T) disagree with the last period")
        fres = FilterResult(dlm.init_state(p, h), tuple(states),
                            float(d["log_density"]), w)
        model = FittedModel(
            w, tp, h, fres, tuple(smoothed), ids, d["mode"],
            _scheme_from_json(d["scheme"]), int(d["first_key"]),
            d["prescale"], tuple(labels), int(d["T_train"]),
            d["prior_variant"], dict(d["diagnostics"]), bool(d["centered"]))
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"invalid model file: {type(exc).__name__}: "
                             f"{exc}") from None
    if model.mode not in MODES:
        raise ModelFileError(f"unknown mode {model.mode!r}")
    return model, config


def load_model(path) -> tuple[FittedModel, RunConfig]:
    """Read a model file written by :func:`save_model`.

    Raises
    ------
    ModelFileError
        If the file is truncated or not JSON, has another format version, or
        violates a model invariant.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: malformed JSON at line {exc.lineno}, "
                             f"column {exc.colno}: {exc.msg}") from None
    return model_from_dict(d)


# ---------------------------------------------------------------- operations

def update_model(model: FittedModel, results, config: RunConfig) -> FittedModel:
    """Append the periods covered by ``results`` with :func:`fast_update`.

    Results must fall after the model's last period; empty periods in
    between are filtered as prediction-only steps.
    """
    if config.mode != model.mode:
        raise ModelFileError(f"data mode {config.mode} does not match model "
                             f"mode {model.mode}")
    try:
        new = assign_rating_periods(
            results, model.scheme, model.mode, model.prescale,
            first_key=model.first_key + model.T,
            athlete_ids=model.athlete_ids, center=model.centered)
    except DataError as exc:
        raise DataError(f"new results must follow period {model.T} "
                        f"({model.period_labels[-1]}): {exc}") from None
    for per in new.periods:
        per = dataclasses.replace(per, t=model.T + 1)
        model = fast_update(model, per, new.athlete_ids)
    return model


def dataset_for_model(model: FittedModel, results):
    """Dataset on the model's period grid and roster order."""
    return assign_rating_periods(results, model.scheme, model.mode,
                                 model.prescale, first_key=model.first_key,
                                 athlete_ids=model.athlete_ids,
                                 center=model.centered)


def rating_table(model: FittedModel, period: int | None = None,
                 smoothed: bool = False, credible_mass: float = 0.9,
                 orientation: str = HIGHER_IS_BETTER) -> list[tuple]:
    """Rows ``(rank, athlete_id, mean, sd, lower, upper)`` sorted best first."""
    T = model.T
    t = T if period is None else period
    if not 1 <= t <= T:
        raise DataError(f"period must lie in 1..{T}")
    if smoothed:
        st = model.smoothed[t - 1]
        summ = dlm.posterior_summary(st, credible_mass, st.a, st.b)
    else:
        summ = dlm.posterior_summary(model.filter_result.states[t - 1],
                                     credible_mass)
    ranks = rank_scores(summ.mean, orientation)
    order = np.lexsort((np.arange(len(ranks)), ranks))
    return [(float(ranks[i]), model.athlete_ids[i], float(summ.mean[i]),
             float(summ.sd[i]), float(summ.lower[i]), float(summ.upper[i]))
            for i in order]


def predict_games(model: FittedModel, results,
                  orientation: str = HIGHER_IS_BETTER) -> list[tuple]:
    """Predictive means and ranks for upcoming games from the last state."""
    state = model.filter_result.final
    index = {a: i for i, a in enumerate(model.athlete_ids)}
    games: dict[str, list[RawResult]] = {}
    for r in results:
        games.setdefault(r.game_id, []).append(r)
    rows = []
    for gid, rs in games.items():
        known = [r.athlete_id in index for r in rs]
        m = np.array([state.m[index[r.athlete_id]] if k else 0.0
                      for r, k in zip(rs, known)])
        pred = m - m.mean()
        ranks = rank_scores(pred, orientation)
        for r, k, mu, rk in zip(rs, known, pred, ranks):
            rows.append((gid, r.athlete_id, float(mu), float(rk), int(k)))
    return rows


def inspect_transform(tp: TransformParams, n: int = INSPECT_POINTS):
    y = np.linspace(tp.knots.lo, tp.knots.hi, n)
    return y, transform(tp, y), transform_jacobian(tp, y)


# ---------------------------------------------------------------- CLI

def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) \
        else RunConfig()
    over = {}
    for name in ("mode", "orientation", "prescale", "degree", "n_interior",
                 "train_fraction", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "period_scheme", None) is not None:
        over["period_scheme"] = args.period_scheme
    if getattr(args, "no_center", False):
        over["center"] = False
    return dataclasses.replace(cfg, **over) if over else cfg


def _cmd_fit(args) -> int:
    cfg = _config_from_args(args)
    ds = build_dataset(load_results_csv(args.data), cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FitWarning)
        model = fit_map(ds, cfg.hyperparameters(), n_interior=cfg.n_interior,
                        degree=cfg.degree, train_fraction=cfg.train_fraction,
                        max_iter=cfg.max_iter, x_tol=cfg.x_tol,
                        f_tol=cfg.f_tol, restarts=cfg.restarts)
    save_model(model, args.out, cfg)
    report = {"w_hat": model.w_hat, "sigma_hat": model.sigma_hat,
              "lambda0": model.transform.lambda0,
              "lambda": model.transform.lam, "periods": ds.T,
              "train_periods": model.T_train, "athletes": ds.p,
              "observations": ds.n_obs, "dropped_games": ds.dropped_games,
              "diagnostics": {k: v for k, v in model.diagnostics.items()
                              if k != "trace"}}
    if args.report:
        _dump_json(_jsonable(report), args.report)
    if args.trace:
        names = ["log_w"] + [f"log_lambda_{b + 1}"
                             for b in range(model.transform.lam.size)]
        write_trace_csv(model.diagnostics["trace"], args.trace, names)
    if any(issubclass(w.category, FitWarning) for w in caught):
        print(f"warning: {caught[-1].message}", file=sys.stderr)
        return EXIT_FIT_WARNING
    return EXIT_OK


def _cmd_update(args) -> int:
    model, cfg = load_model(args.model)
    if args.mode is not None and args.mode != model.mode:
        raise ModelFileError(f"data mode {args.mode} does not match model "
                             f"mode {model.mode}")
    model = update_model(model, load_results_csv(args.data), cfg)
    save_model(model, args.out, cfg)
    return EXIT_OK


def _cmd_rate(args) -> int:
    model, cfg = load_model(args.model)
    orient = args.orientation or cfg.orientation
    rows = rating_table(model, args.period, args.smoothed, args.mass, orient)
    _write_table(args.out, ("rank", "athlete_id", "mean", "sd", "lower",
                            "upper"), rows)
    return EXIT_OK


def _cmd_predict(args) -> int:
    model, cfg = load_model(args.model)
    rows = predict_games(model, load_results_csv(args.data, False),
                         args.orientation or cfg.orientation)
    _write_table(args.out, ("game_id", "athlete_id", "predicted_mean",
                            "predicted_rank", "tracked"), rows)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    model, cfg = load_model(args.model)
    if args.mode is not None and args.mode != model.mode:
        raise ModelFileError(f"data mode {args.mode} does not match model "
                             f"mode {model.mode}")
    ds = dataset_for_model(model, load_results_csv(args.data))
    model = refilter(model, ds)
    metrics, table = evaluate(model, ds,
                              orientation=args.orientation or cfg.orientation)
    _dump_json(_jsonable(metrics), args.out)
    if args.qq:
        _write_table(args.qq, ("residual", "standardized", "normal_quantile"),
                     zip(table.residuals, table.standardized, table.quantiles))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") \
                from None
        base.pop("rng", None)
    for name in ("p", "T", "n_tg", "games_per_period", "v0", "sigma2", "w",
                 "yj_lambda", "seed", "mode", "scheme"):
        v = getattr(args, name, None)
        if v is not None:
            base[name] = v
    try:
        cfg = SimConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulation config: {exc}") from None
    sim = simulate_dataset(cfg)
    write_results_csv(sim.results, args.out)
    if args.truth:
        _dump_json(_jsonable(sim.ground_truth()), args.truth)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    model, _ = load_model(args.model)
    y, tau, dtau = inspect_transform(model.transform, args.points)
    _write_table(args.out, ("y", "tau", "dtau_dy"), zip(y, tau, dtau))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="monodlm", description="Dynamic ratings with a learned monotone "
        "score transformation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--period-scheme", dest="period_scheme")
        p.add_argument("--orientation", choices=ORIENTATIONS)
        p.add_argument("--prescale", choices=PRESCALE_POLICIES)
        p.add_argument("--degree", type=int)
        p.add_argument("--n-interior", dest="n_interior", type=int)
        p.add_argument("--train-fraction", dest="train_fraction", type=float)
        p.add_argument("--no-center", dest="no_center", action="store_true",
                       help="keep multi-competitor scores uncentered")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", help="estimate w and the transformation")
    run_options(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", help="fit report JSON")
    p.add_argument("--trace", help="optimizer trace CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("update", help="append new periods to a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_update)

    p = sub.add_parser("rate", help="ranked ability table")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--period", type=int)
    p.add_argument("--smoothed", action="store_true")
    p.add_argument("--mass", type=float, default=0.9,
                   help="credible interval mass")
    p.add_argument("--orientation", choices=ORIENTATIONS)
    p.set_defaults(func=_cmd_rate)

    p = sub.add_parser("predict", help="predict upcoming games")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--orientation", choices=ORIENTATIONS)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="test-set metrics and residuals")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True, help="metrics JSON")
    p.add_argument("--qq", help="Q-Q table CSV")
    p.add_argument("--orientation", choices=ORIENTATIONS)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--config", help="SimConfig JSON file")
    for name, typ in (("p", int), ("T", int), ("n-tg", int),
                      ("games-per-period", int), ("v0", float),
                      ("sigma2", float), ("w", float), ("yj-lambda", float),
                      ("seed", int)):
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--scheme")
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--truth", help="ground-truth JSON")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("transform-inspect",
                       help="tabulate the learned transformation")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=INSPECT_POINTS)
    p.set_defaults(func=_cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, KnotError, ModelFileError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # last resort, reported as internal
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
