"""MAP estimation of the innovation ratio ``w`` and the transformation weights.

Step 1 maximizes the marginal posterior of ``(w, lambda)`` on a training prefix
of rating periods, with abilities and ``sigma^2`` integrated out by the
filter.  Step 2 reruns the filter and smoother on all periods with the
estimates held fixed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from . import dlm_filter as dlm
from .dlm_filter import FilterResult, Hyperparams, SmoothedState
from .preprocess import Dataset, RatingPeriod, train_periods
from .spline_basis import (KnotConfig, TransformParams, eval_ispline_basis,
                           eval_mspline_basis, identity_lambda,
                           make_knot_config)

JACOBIAN_FLOOR = 1e-12
PRIOR_VARIANTS = ("truncated_normal", "dirichlet")


class FitWarning(UserWarning):
    """The optimizer stopped without meeting its convergence tolerances."""


def log_mvt_density(x, df: float, loc, scale) -> float:
    """Log density of a multivariate Student-t distribution.

    ``scale`` may be a scalar (1-D case) or an SPD matrix.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    loc = np.broadcast_to(np.asarray(loc, dtype=float), x.shape)
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    n = x.size
    if scale.shape != (n, n):
        raise ValueError("scale matrix does not match the dimension of x")
    try:
        L = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise ValueError("scale matrix is not positive definite") from None
    z = np.linalg.solve(L, x - loc)
    Q = float(z @ z)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return (gammaln((df + n) / 2) - gammaln(df / 2) - 0.5 * n * math.log(df * math.pi)
            - 0.5 * logdet - 0.5 * (df + n) * math.log1p(Q / df))


def log_prior_w(w: float, h: Hyperparams) -> float:
    """Half-normal log prior, up to a constant."""
    if not w > 0:
        return -math.inf
    return -0.5 * (w / h.s_w) ** 2


def log_prior_lambda(lam, h: Hyperparams, variant: str = "truncated_normal",
                     c: float | None = None) -> float:
    """Log prior of the transformation weights, up to a constant.

    ``truncated_normal``: independent normals at ``alpha`` with scale
    ``s_lambda`` truncated at 0.  ``dirichlet``: ``lam / c`` follows a
    Dirichlet law with parameters proportional to ``alpha`` and summing to
    ``alpha_sum``; ``lam`` must then sum to ``c``.
    """
    lam = np.asarray(lam, dtype=float)
    if h.alpha is None:
        raise ValueError("alpha is unresolved; call resolve_hyperparams first")
    alpha = np.asarray(h.alpha)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        return -math.inf
    if variant == "truncated_normal":
        return float(-0.5 * np.sum(((lam - alpha) / h.s_lambda) ** 2))
    if variant == "dirichlet":
        if c is None:
            raise ValueError("the Dirichlet prior needs the range constant c")
        if abs(lam.sum() - c) > 1e-9 * c:
            return -math.inf
        conc = h.alpha_sum * alpha / alpha.sum()
        shape = conc - 1.0
        keep = shape != 0
        with np.errstate(divide="ignore"):
            return float(np.sum(shape[keep] * np.log(lam[keep] / c)))
    raise ValueError(f"unknown prior variant {variant!r}")


def resolve_hyperparams(h: Hyperparams, identity: TransformParams) -> Hyperparams:
    """Fill ``alpha`` (identity weights) and ``s_lambda`` (``10 c / B``)."""
    alpha = h.alpha if h.alpha is not None else tuple(identity.lam)
    if len(alpha) != identity.knots.basis_size:
        raise ValueError("alpha length differs from the spline basis size")
    s_lambda = h.s_lambda if h.s_lambda is not None \
        else 10.0 * identity.range_c / identity.knots.basis_size
    return replace(h, alpha=alpha, s_lambda=s_lambda)


class _BasisCache:
    """Spline bases of a fixed set of observations, split by period."""

    def __init__(self, ds: Dataset, knots: KnotConfig):
        self.knots = knots
        per_period = [np.concatenate([g.scores for g in per.games])
                      if per.games else np.zeros(0) for per in ds.periods]
        self.sizes = [v.size for v in per_period]
        y = np.concatenate(per_period) if per_period else np.zeros(0)
        self.y = y
        self.n_clamped = int(np.sum((y < knots.lo) | (y > knots.hi)))
        self.I = eval_ispline_basis(knots, y).reshape(y.size, knots.basis_size)
        self.M = eval_mspline_basis(knots, y).reshape(y.size, knots.basis_size)
        self.splits = np.cumsum(self.sizes)[:-1]

    def psis(self, lambda0: float, lam: np.ndarray) -> list[np.ndarray]:
        if not self.sizes:
            return []
        return np.split(lambda0 + self.I @ lam, self.splits)

    def log_jacobian(self, lam: np.ndarray) -> tuple[float, int]:
        d = self.M @ lam
        floored = d < JACOBIAN_FLOOR
        return float(np.sum(np.log(np.maximum(d, JACOBIAN_FLOOR)))), \
            int(floored.sum())


@dataclass(eq=False)
class ObjectiveSpec:
    """Everything the marginal posterior of ``(w, lambda)`` depends on.

    ``train_dataset`` is already cut to the first ``T_train`` periods.
    """

    train_dataset: Dataset
    knots: KnotConfig
    h: Hyperparams
    lambda0: float
    range_c: float
    prior_variant: str = "truncated_normal"
    T_train: int | None = None
    _designs: list = field(init=False, repr=False)
    _basis: _BasisCache = field(init=False, repr=False)

    def __post_init__(self):
        if self.prior_variant not in PRIOR_VARIANTS:
            raise ValueError(f"unknown prior variant {self.prior_variant!r}")
        if self.T_train is None:
            self.T_train = self.train_dataset.T
        if self.T_train > self.train_dataset.T:
            raise ValueError("T_train exceeds the number of periods supplied")
        if self.T_train < self.train_dataset.T:
            self.train_dataset = self.train_dataset.prefix(self.T_train)
        self._designs = dlm.build_designs(self.train_dataset)
        self._basis = _BasisCache(self.train_dataset, self.knots)


@dataclass(frozen=True)
class ObjectiveTerms:
    log_jacobian: float
    log_prior_w: float
    log_prior_lambda: float
    log_predictive: float
    n_floored: int
    error: str | None = None

    @property
    def total(self) -> float:
        if self.error is not None:
            return -math.inf
        return (self.log_jacobian + self.log_prior_w + self.log_prior_lambda
                + self.log_predictive)


def objective_terms(w: float, lam, spec: ObjectiveSpec) -> ObjectiveTerms:
    lam = np.asarray(lam, dtype=float)
    lpw = log_prior_w(w, spec.h)
    lpl = log_prior_lambda(lam, spec.h, spec.prior_variant, spec.range_c)
    if not (math.isfinite(lpw) and math.isfinite(lpl)):
        return ObjectiveTerms(0.0, lpw, lpl, 0.0, 0, "outside prior support")
    logj, floored = spec._basis.log_jacobian(lam)
    psis = spec._basis.psis(spec.lambda0, lam)
    try:
        res = dlm.run_filter(spec._designs, psis, w, spec.h,
                             spec.train_dataset.p)
    except dlm.FilterError as exc:
        return ObjectiveTerms(logj, lpw, lpl, 0.0, floored, str(exc))
    return ObjectiveTerms(logj, lpw, lpl, res.log_density, floored)


def log_marginal_posterior(w: float, lam, spec: ObjectiveSpec) -> float:
    """Unnormalized log marginal posterior of ``(w, lambda)``.

    Sum of the forward-map log Jacobian ``sum log tau'(y)`` over training
    observations, the log priors, and the filter's one-step log predictive
    densities.  Filter failures give ``-inf``.
    """
    return objective_terms(w, lam, spec).total


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)


def nelder_mead(f: Callable, x0, max_iter: int | None = None,
                x_tol: float = 1e-6, f_tol: float = 1e-8) -> OptimizeResult:
    """Minimize ``f`` with the Nelder-Mead simplex method.

    Coefficients are 1 (reflection), 2 (expansion), 0.5 (contraction) and 0.5
    (shrink).  The initial simplex perturbs each coordinate of ``x0`` by 5%
    (0.05 when the coordinate is zero).  Stops when the simplex diameter
    (max-norm distance to the best vertex) falls below ``x_tol``, when the
    spread of function values falls below ``f_tol``, or after ``max_iter``
    iterations (default ``200 * len(x0)``).  Non-finite values count as
    ``+inf``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if max_iter is None:
        max_iter = 200 * n
    nfev = 0

    def fe(x):
        nonlocal nfev
        nfev += 1
        v = float(f(x))
        return v if math.isfinite(v) else math.inf

    f0 = fe(x0)
    if not math.isfinite(f0):
        raise ValueError("objective is not finite at the starting point")
    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        sim[i + 1] = x0
        sim[i + 1, i] += 0.05 * x0[i] if x0[i] != 0 else 0.05
    fs = np.empty(n + 1)
    fs[0] = f0
    for i in range(1, n + 1):
        fs[i] = fe(sim[i])
    trace = []
    converged = False
    it = 0
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        trace.append((it, float(fs[0]), sim[0].copy()))
        if (np.max(np.abs(sim[1:] - sim[0])) < x_tol
                or fs[-1] - fs[0] < f_tol):
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = fe(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe_ = fe(xe)
            if fe_ < fr:
                sim[-1], fs[-1] = xe, fe_
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = fe(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (sim[-1] - centroid)
                fc = fe(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = fe(sim[i])
    return OptimizeResult(sim[0].copy(), float(fs[0]), it, nfev, converged,
                          trace)


def write_trace_csv(trace, path, names: Sequence[str] | None = None) -> None:
    """Write an optimizer trace as ``iteration,objective,<params...>``."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if trace:
            k = len(trace[0][2])
            names = list(names) if names else [f"x{i}" for i in range(k)]
            wr.writerow(["iteration", "objective", *names])
            for it, fval, x in trace:
                wr.writerow([it, repr(fval), *(repr(float(v)) for v in x)])


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Estimates ``(w_hat, lambda_hat)`` plus step-2 trajectories.

    ``filter_result`` and ``smoothed`` cover every period of the data the
    model was last run on.  Roster and period metadata are kept so that new
    periods can be appended.
    """

    w_hat: float
    transform: TransformParams
    h: Hyperparams
    filter_result: FilterResult
    smoothed: tuple[SmoothedState, ...]
    athlete_ids: tuple[str, ...]
    mode: str
    scheme: object
    first_key: int
    prescale: str
    period_labels: tuple[str, ...]
    T_train: int
    prior_variant: str = "truncated_normal"
    diagnostics: dict = field(default_factory=dict)
    centered: bool = True

    @property
    def filter_trajectory(self) -> tuple[dlm.FilterState, ...]:
        return self.filter_result.states

    @property
    def T(self) -> int:
        return len(self.filter_result.states)

    @property
    def sigma2_posterior(self) -> tuple[float, float]:
        s = self.filter_result.final
        return s.a, s.b

    @property
    def sigma_hat(self) -> float:
        """Posterior mean of ``sigma`` approximated by ``sqrt(E[sigma^2])``."""
        a, b = self.sigma2_posterior
        return math.sqrt(b / (a - 1)) if a > 1 else math.nan


def transform_periods(ds: Dataset, tp: TransformParams) -> tuple[list, int]:
    """Transformed observations per period and the count of clamped values."""
    cache_lo, cache_hi = tp.knots.lo, tp.knots.hi
    out = []
    clamped = 0
    for per in ds.periods:
        y = np.concatenate([g.scores for g in per.games]) if per.games \
            else np.zeros(0)
        clamped += int(np.sum((y < cache_lo) | (y > cache_hi)))
        out.append(tp.lambda0 + eval_ispline_basis(tp.knots, y).reshape(
            y.size, tp.knots.basis_size) @ tp.lam)
    return out, clamped


def _step2(ds: Dataset, tp: TransformParams, w: float, h: Hyperparams):
    psis, clamped = transform_periods(ds, tp)
    res = dlm.run_filter(dlm.build_designs(ds), psis, w, h, ds.p)
    return res, tuple(dlm.rts_smooth(res, w)), clamped


def fit_map(ds: Dataset, h: Hyperparams | None = None, *,
            knots: KnotConfig | None = None, n_interior: int = 3,
            degree: int = 3, train_fraction: float = 2 / 3,
            prior_variant: str = "truncated_normal",
            optimizer: Callable | str = "nelder-mead",
            max_iter: int | None = None, x_tol: float = 1e-6,
            f_tol: float = 1e-8, restarts: int = 3,
            w_start: float | None = None) -> FittedModel:
    """Two-step fit: MAP ``(w, lambda)`` on the training prefix, then filter
    and smooth all periods.

    The search runs over ``(log w, log lambda_1, ..., log lambda_B)`` starting
    from ``w = 0.1 s_w`` and the identity weights.  The returned point is the
    mode of the density in the original parameters; no change-of-variables
    term is added.  ``optimizer`` may be a callable with the signature of
    :func:`nelder_mead`.  A run that hits ``max_iter`` is restarted from its
    best point with a fresh simplex, at most ``restarts`` times.
    Nonconvergence after that emits :class:`FitWarning` and sets
    ``diagnostics["converged"] = False``.
    """
    h = Hyperparams() if h is None else h
    if ds.T < 2:
        raise ValueError("fitting needs at least two rating periods")
    if prior_variant != "truncated_normal":
        raise ValueError("only the truncated-normal prior can be optimized; "
                         "the Dirichlet prior is available for scoring only")
    T_train = train_periods(ds.T, train_fraction)
    train = ds.prefix(T_train)
    if knots is None:
        knots = make_knot_config(train.observations(), n_interior, degree)
    ident = identity_lambda(knots)
    h = resolve_hyperparams(h, ident)
    spec = ObjectiveSpec(train, knots, h, ident.lambda0, ident.range_c,
                         prior_variant, T_train)

    def neg_obj(x):
        return -log_marginal_posterior(math.exp(x[0]), np.exp(x[1:]), spec)

    lam_start = np.maximum(ident.lam, 1e-8 * ident.range_c / knots.basis_size)
    w0 = 0.1 * h.s_w if w_start is None else w_start
    x0 = np.concatenate([[math.log(w0)], np.log(lam_start)])
    opt = nelder_mead if optimizer == "nelder-mead" else optimizer
    if not callable(opt):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    res = opt(neg_obj, x0, max_iter=max_iter, x_tol=x_tol, f_tol=f_tol)
    trace, nit, nfev = list(res.trace), res.nit, res.nfev
    for _ in range(restarts):
        if res.converged:
            break
        res = opt(neg_obj, res.x, max_iter=max_iter, x_tol=x_tol, f_tol=f_tol)
        trace += [(nit + it, fv, x) for it, fv, x in res.trace]
        nit += res.nit
        nfev += res.nfev
    w_hat = math.exp(res.x[0])
    tp = ident.with_weights(np.exp(res.x[1:]))
    terms = objective_terms(w_hat, tp.lam, spec)
    if not res.converged:
        warnings.warn(f"optimizer stopped after {nit} iterations without "
                      "converging; returning the best point found", FitWarning)
    fres, smoothed, clamped = _step2(ds, tp, w_hat, h)
    diagnostics = {
        "converged": bool(res.converged),
        "iterations": int(nit),
        "evaluations": int(nfev),
        "objective": float(terms.total),
        "objective_start": float(-trace[0][1]),
        "log_jacobian": float(terms.log_jacobian),
        "log_predictive": float(terms.log_predictive),
        "jacobian_floor_count": int(terms.n_floored),
        "clamped_train": int(spec._basis.n_clamped),
        "clamped_total": int(clamped),
        "trace": [(it, -fv, [float(v) for v in x]) for it, fv, x in trace],
    }
    return FittedModel(w_hat, tp, h, fres, smoothed, ds.athlete_ids, ds.mode,
                       ds.scheme, ds.first_key, ds.prescale,
                       tuple(per.label for per in ds.periods), T_train,
                       prior_variant, diagnostics, ds.centered)


def refilter(model: FittedModel, ds: Dataset) -> FittedModel:
    """Rerun step 2 on ``ds`` with the model's ``w_hat`` and transformation."""
    if ds.mode != model.mode:
        raise ValueError(f"model mode {model.mode} does not match data mode "
                         f"{ds.mode}")
    fres, smoothed, clamped = _step2(ds, model.transform, model.w_hat, model.h)
    diag = dict(model.diagnostics, clamped_total=clamped)
    return replace(model, filter_result=fres, smoothed=smoothed,
                   athlete_ids=ds.athlete_ids,
                   period_labels=tuple(per.label for per in ds.periods),
                   diagnostics=diag, centered=ds.centered)


def fast_update(model: FittedModel, new_period: RatingPeriod,
                athlete_ids: Sequence[str] | None = None) -> FittedModel:
    """Append one period to the filter without re-estimating ``(w, lambda)``.

    ``athlete_ids`` is the roster the new period's athlete indices refer to;
    it must extend the model's roster.  New athletes enter at the prior
    ``(0, v0)``.  The smoothed trajectory is recomputed.
    """
    roster = tuple(model.athlete_ids if athlete_ids is None else athlete_ids)
    if roster[:len(model.athlete_ids)] != tuple(model.athlete_ids):
        raise ValueError("new roster must extend the model's roster")
    if new_period.t != model.T + 1:
        raise ValueError(f"new period index {new_period.t} does not follow "
                         f"the model's last period {model.T}")
    if any(g.mode != model.mode for g in new_period.games):
        raise ValueError("game mode does not match the model")
    p = len(roster)
    fr = model.filter_result
    initial = fr.initial.extended(p, model.h.v0)
    states = [s.extended(p, model.h.v0) for s in fr.states]
    design = dlm.build_design(new_period)
    one = Dataset((new_period,), roster, model.mode)
    psis, clamped = transform_periods(one, model.transform)
    prev = states[-1] if states else initial
    s, st = dlm.filter_step(prev, design, psis[0], model.w_hat, model.h)
    states.append(s)
    fres = FilterResult(initial, tuple(states),
                        fr.log_density + st.log_density, fr.w)
    diag = dict(model.diagnostics)
    diag["clamped_total"] = diag.get("clamped_total", 0) + clamped
    return replace(model, filter_result=fres,
                   smoothed=tuple(dlm.rts_smooth(fres, model.w_hat)),
                   athlete_ids=roster,
                   period_labels=model.period_labels + (new_period.label,),
                   diagnostics=diag)
