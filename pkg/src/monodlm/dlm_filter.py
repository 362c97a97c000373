"""Kalman filter with unknown constant observation variance, and RTS smoother.

Abilities follow a random walk, ``theta_t ~ N(theta_{t-1}, sigma^2 w I)``, and
transformed observations satisfy ``psi_t ~ N(X_t theta_t, sigma^2 I)``.  With an
inverse-gamma prior on ``sigma^2`` the filter carries a normal/inverse-gamma
posterior ``theta_t | sigma^2 ~ N(m_t, sigma^2 V_t)``, ``sigma^2 ~ IG(a_t, b_t)``.

Two storage modes exist.  By default ``V`` is kept diagonal (off-diagonal
entries cleared after each period) and its diagonal is capped at ``v0``; states
then hold ``V`` as a 1-D array.  With ``Hyperparams.exact_mode`` the full
matrix recursions run without approximation and ``V`` is a 2-D array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, stats
from scipy.linalg import lapack
from scipy.special import gammaln

from .preprocess import Dataset, RatingPeriod

JITTERS = (0.0, 1e-10, 1e-8)


class FilterError(RuntimeError):
    """Numerical failure inside the filter (non-PSD matrices)."""

    def __init__(self, msg, period=None):
        super().__init__(msg if period is None else f"period {period}: {msg}")
        self.period = period


@dataclass(frozen=True)
class Hyperparams:
    """Prior settings.

    ``s_lambda`` and ``alpha`` may be left as ``None`` and filled in from the
    knot configuration by :meth:`resolve` (``alpha`` becomes the identity
    weights and ``s_lambda`` becomes ``10 c / B``).  ``alpha_sum`` rescales
    ``alpha`` for the Dirichlet prior only.
    """

    v0: float = 10.0
    a0: float = 0.1
    b0: float = 0.1
    s_w: float = 1.0
    s_lambda: float | None = None
    alpha: tuple[float, ...] | None = None
    alpha_sum: float = 1.0
    exact_mode: bool = False

    def __post_init__(self):
        for name in ("v0", "a0", "b0", "s_w", "alpha_sum"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.s_lambda is not None and not self.s_lambda > 0:
            raise ValueError("s_lambda must be positive")
        if self.alpha is not None:
            object.__setattr__(self, "alpha",
                               tuple(float(a) for a in self.alpha))
            if any(a < 0 for a in self.alpha):
                raise ValueError("alpha must be nonnegative")

    def to_dict(self) -> dict:
        return {"v0": self.v0, "a0": self.a0, "b0": self.b0, "s_w": self.s_w,
                "s_lambda": self.s_lambda,
                "alpha": None if self.alpha is None else list(self.alpha),
                "alpha_sum": self.alpha_sum, "exact_mode": self.exact_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        if d.get("alpha") is not None:
            d["alpha"] = tuple(d["alpha"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FilterState:
    """Filtered posterior after period ``t``.

    ``V`` is the scale-free covariance factor: 1-D (its diagonal) when the
    diagonal approximation is active, else a full 2-D matrix.
    """

    t: int
    m: np.ndarray
    V: np.ndarray
    a: float
    b: float

    @property
    def p(self) -> int:
        return self.m.size

    @property
    def V_diag(self) -> np.ndarray:
        return self.V if self.V.ndim == 1 else np.diag(self.V).copy()

    @property
    def V_matrix(self) -> np.ndarray:
        return np.diag(self.V) if self.V.ndim == 1 else self.V

    def extended(self, p: int, v0: float) -> "FilterState":
        """Pad the roster to ``p`` athletes at the prior ``(0, v0)``."""
        extra = p - self.p
        if extra <= 0:
            return self
        m = np.concatenate([self.m, np.zeros(extra)])
        if self.V.ndim == 1:
            V = np.concatenate([self.V, np.full(extra, float(v0))])
        else:
            V = linalg.block_diag(self.V, v0 * np.eye(extra))
        return FilterState(self.t, m, V, self.a, self.b)


@dataclass(frozen=True, eq=False)
class SmoothedState:
    t: int
    m_s: np.ndarray
    V_s: np.ndarray
    a: float
    b: float

    @property
    def V_diag(self) -> np.ndarray:
        return self.V_s if self.V_s.ndim == 1 else np.diag(self.V_s).copy()


@dataclass(frozen=True, eq=False)
class PredictiveStats:
    """One-step-ahead predictive summary of a period's observations.

    The predictive law is multivariate t with ``df`` degrees of freedom,
    location ``mean`` and scale ``scale_factor * S`` where
    ``S = I + X (V + w I) X^T``.  ``S_diag`` is always present; the full ``S``
    only when requested.
    """

    t: int
    mean: np.ndarray
    S_diag: np.ndarray
    df: float
    scale_factor: float
    log_density: float
    S: np.ndarray | None = None

    @property
    def scale_matrix(self) -> np.ndarray | None:
        return None if self.S is None else self.scale_factor * self.S


@dataclass(frozen=True, eq=False)
class PeriodDesign:
    """Design of one period restricted to its active athletes.

    ``X`` has one row per observation and one column per entry of ``active``
    (sorted athlete indices); ``G = X^T X``.
    """

    t: int
    active: np.ndarray
    X: np.ndarray
    G: np.ndarray
    game_slices: tuple[slice, ...] = ()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def full_matrix(self, p: int) -> np.ndarray:
        Xf = np.zeros((self.n, p))
        Xf[:, self.active] = self.X
        return Xf


def build_design(period: RatingPeriod) -> PeriodDesign:
    games = period.games
    if not games:
        return PeriodDesign(period.t, np.zeros(0, dtype=np.intp),
                            np.zeros((0, 0)), np.zeros((0, 0)))
    active = np.unique(np.concatenate([g.athletes for g in games]))
    col = np.searchsorted(active, np.concatenate([g.athletes for g in games]))
    n = sum(g.n_obs for g in games)
    X = np.zeros((n, active.size))
    slices = []
    row = pos = 0
    for g in games:
        rows = g.design_rows()
        cols = col[pos:pos + g.size]
        X[row:row + rows.shape[0], cols] = rows
        slices.append(slice(row, row + rows.shape[0]))
        row += rows.shape[0]
        pos += g.size
    return PeriodDesign(period.t, active, X, X.T @ X, tuple(slices))


def build_designs(ds: Dataset) -> list[PeriodDesign]:
    return [build_design(per) for per in ds.periods]


def _cholesky(A: np.ndarray, period=None) -> np.ndarray:
    eye = None
    for jitter in JITTERS:
        try:
            if jitter:
                if eye is None:
                    eye = np.eye(A.shape[0])
                return linalg.cholesky(A + jitter * eye, lower=True)
            return linalg.cholesky(A, lower=True)
        except linalg.LinAlgError:
            continue
    raise FilterError("matrix not positive definite even with jitter", period)


def init_state(p: int, h: Hyperparams) -> FilterState:
    """Prior state ``m = 0``, ``V = v0 I``, ``a = a0``, ``b = b0``."""
    if p < 1:
        raise ValueError("need at least one athlete")
    V = np.full(p, float(h.v0)) if not h.exact_mode else h.v0 * np.eye(p)
    return FilterState(0, np.zeros(p), V, float(h.a0), float(h.b0))


def log_t_density(Q: float, logdet_S: float, n: int, df: float,
                  scale_factor: float) -> float:
    """Multivariate t log density given ``Q = e^T S^{-1} e`` and ``log|S|``.

    The scale matrix is ``scale_factor * S``.
    """
    return (gammaln((df + n) / 2.0) - gammaln(df / 2.0)
            - 0.5 * n * math.log(df * math.pi)
            - 0.5 * (n * math.log(scale_factor) + logdet_S)
            - 0.5 * (df + n) * math.log1p(Q / (scale_factor * df)))


def filter_step(s: FilterState, design: PeriodDesign, psi, w: float,
                h: Hyperparams, full_scale: bool = False,
                ) -> tuple[FilterState, PredictiveStats]:
    """Advance the filter through one rating period.

    Parameters
    ----------
    s : FilterState
        Posterior after the previous period.
    design : PeriodDesign
    psi : array
        Transformed observations of the period, in design row order.
    w : float
        Innovation variance ratio.
    h : Hyperparams
    full_scale : bool
        Also return the full predictive matrix ``S`` (diagonal mode only;
        exact mode always returns it).
    """
    psi = np.asarray(psi, dtype=float)
    t = design.t
    if psi.shape != (design.n,):
        raise ValueError(f"period {t}: expected {design.n} observations")
    if not np.all(np.isfinite(psi)):
        raise FilterError("non-finite transformed observation", t)
    if s.V.ndim == 2:
        return _exact_step(s, design, psi, w, h)
    return _diag_step(s, design, psi, w, h, full_scale)


def _diag_step(s, design, psi, w, h, full_scale):
    t = design.t
    D = s.V + w
    V_new = np.minimum(D, h.v0)
    n = design.n
    if n == 0:
        stats_ = PredictiveStats(t, np.zeros(0), np.zeros(0), 2 * s.a,
                                 s.b / s.a, 0.0, np.zeros((0, 0)))
        return FilterState(t, s.m, V_new, s.a, s.b), stats_
    idx = design.active
    X = design.X
    Da = D[idx]
    ma = s.m[idx]
    mu = X @ ma
    e = psi - mu
    A = design.G + np.diag(1.0 / Da)
    L = _cholesky(A, t)
    Linv, info = lapack.dtrtri(L, lower=1)
    if info != 0:
        raise FilterError("singular Cholesky factor", t)
    r = X.T @ e
    z = Linv @ r
    u = Linv.T @ z
    # innovation quadratic form e^T (I + X D X^T)^{-1} e by the Woodbury identity
    Q = float(e @ e - z @ z)
    logdet_S = float(np.sum(np.log(Da)) + 2.0 * np.sum(np.log(np.diag(L))))
    post_var = np.einsum("ij,ij->j", Linv, Linv)
    if np.any(post_var <= 0):
        raise FilterError("non-positive posterior variance", t)
    m_new = s.m.copy()
    m_new[idx] = ma + u
    V_new[idx] = np.minimum(post_var, h.v0)
    df = 2.0 * s.a
    sf = s.b / s.a
    S_diag = 1.0 + (X * X) @ Da
    S = (np.eye(n) + (X * Da) @ X.T) if full_scale else None
    stats_ = PredictiveStats(t, mu, S_diag, df, sf,
                             log_t_density(Q, logdet_S, n, df, sf), S)
    return FilterState(t, m_new, V_new, s.a + 0.5 * n, s.b + 0.5 * Q), stats_


def _exact_step(s, design, psi, w, h):
    t = design.t
    p = s.p
    P = s.V + w * np.eye(p)
    n = design.n
    if n == 0:
        stats_ = PredictiveStats(t, np.zeros(0), np.zeros(0), 2 * s.a,
                                 s.b / s.a, 0.0, np.zeros((0, 0)))
        return FilterState(t, s.m, P, s.a, s.b), stats_
    X = design.full_matrix(p)
    mu = X @ s.m
    e = psi - mu
    PXt = P @ X.T
    S = np.eye(n) + X @ PXt
    S = 0.5 * (S + S.T)
    L = _cholesky(S, t)
    Sinv_e = linalg.cho_solve((L, True), e)
    Q = float(e @ Sinv_e)
    logdet_S = 2.0 * float(np.sum(np.log(np.diag(L))))
    m_new = s.m + PXt @ Sinv_e
    V_new = P - PXt @ linalg.cho_solve((L, True), PXt.T)
    V_new = 0.5 * (V_new + V_new.T)
    if np.any(np.diag(V_new) <= 0):
        raise FilterError("posterior covariance is not positive definite", t)
    df = 2.0 * s.a
    sf = s.b / s.a
    stats_ = PredictiveStats(t, mu, np.diag(S).copy(), df, sf,
                             log_t_density(Q, logdet_S, n, df, sf), S)
    return FilterState(t, m_new, V_new, s.a + 0.5 * n, s.b + 0.5 * Q), stats_


def b_update_precision_form(prev: FilterState, new: FilterState,
                            design: PeriodDesign, psi, w: float) -> float:
    """``b_t`` through the precision form; cross-check for exact mode.

    ``b_{t-1} + (m_{t-1}^T P^{-1} m_{t-1} + psi^T psi - m_t^T V_t^{-1} m_t) / 2``
    with ``P = V_{t-1} + w I``.
    """
    psi = np.asarray(psi, dtype=float)
    P = prev.V_matrix + w * np.eye(prev.p)
    q_prev = prev.m @ np.linalg.solve(P, prev.m)
    q_new = new.m @ np.linalg.solve(new.V_matrix, new.m)
    return prev.b + 0.5 * (q_prev + psi @ psi - q_new)


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Filtered states for periods ``1..T`` and the summed log predictive density."""

    initial: FilterState
    states: tuple[FilterState, ...]
    log_density: float
    w: float
    stats: tuple[PredictiveStats, ...] = field(default=(), repr=False)

    @property
    def final(self) -> FilterState:
        return self.states[-1] if self.states else self.initial

    def prior_of(self, t: int) -> FilterState:
        """State conditioned on periods strictly before ``t`` (1-based)."""
        return self.initial if t == 1 else self.states[t - 2]


def run_filter(designs: Sequence[PeriodDesign], psis: Sequence, w: float,
               h: Hyperparams, p: int, initial: FilterState | None = None,
               keep_stats: bool = False) -> FilterResult:
    """Run :func:`filter_step` over all periods.

    ``psis[i]`` are the transformed observations for ``designs[i]``.
    """
    if not w > 0 and not (w == 0 and h.exact_mode):
        raise ValueError(f"w must be positive, got {w}")
    s = init_state(p, h) if initial is None else initial
    start = s
    states = []
    kept = []
    total = 0.0
    for design, psi in zip(designs, psis, strict=True):
        s, st = filter_step(s, design, psi, w, h)
        total += st.log_density
        states.append(s)
        if keep_stats:
            kept.append(st)
    return FilterResult(start, tuple(states), total, float(w), tuple(kept))


def rts_smooth(result: FilterResult, w: float) -> list[SmoothedState]:
    """Rauch-Tung-Striebel backward pass over a filter run made with ``w``."""
    if w != result.w:
        raise ValueError(f"smoother w={w} differs from filter w={result.w}")
    states = result.states
    if not states:
        return []
    last = states[-1]
    a, b = last.a, last.b
    out = [SmoothedState(last.t, last.m, last.V, a, b)]
    ms, Vs = last.m, last.V
    for s in reversed(states[:-1]):
        if s.V.ndim == 1:
            gain = s.V / (s.V + w)
            ms = s.m + gain * (ms - s.m)
            Vs = s.V + gain * gain * (Vs - s.V - w)
        else:
            P = s.V + w * np.eye(s.p)
            gain = np.linalg.solve(P, s.V).T
            ms = s.m + gain @ (ms - s.m)
            Vs = s.V + gain @ (Vs - P) @ gain.T
            Vs = 0.5 * (Vs + Vs.T)
        out.append(SmoothedState(s.t, ms, Vs, a, b))
    out.reverse()
    return out


@dataclass(frozen=True)
class AbilitySummary:
    mean: np.ndarray
    scale: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    finite_variance: bool


def posterior_summary(state, credible_mass: float = 0.9,
                      a: float | None = None, b: float | None = None,
                      ) -> AbilitySummary:
    """Marginal ability posteriors, Student-t with ``2a`` degrees of freedom.

    The scale of athlete ``i`` is ``sqrt((b / a) V_ii)``; ``sd`` is NaN when
    ``a <= 1`` because the variance is infinite.
    """
    if not 0 <= credible_mass < 1:
        raise ValueError("credible_mass must lie in [0, 1)")
    a = state.a if a is None else a
    b = state.b if b is None else b
    mean = state.m if isinstance(state, FilterState) else state.m_s
    scale = np.sqrt(b / a * state.V_diag)
    q = stats.t.ppf(0.5 + credible_mass / 2.0, df=2.0 * a) if credible_mass \
        else 0.0
    finite = a > 1
    sd = scale * math.sqrt(a / (a - 1)) if finite else np.full_like(scale,
                                                                    np.nan)
    return AbilitySummary(mean, scale, sd, mean - q * scale, mean + q * scale,
                          finite)
