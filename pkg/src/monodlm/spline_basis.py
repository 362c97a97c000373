"""M-spline and I-spline bases and the monotone spline transformation.

The I-spline family of degree ``d`` is the running integral of the M-spline
family of degree ``d`` (the integrand's degree names the family, so a cubic
family has ``d = 3``).  Both are built from clamped knot vectors and evaluated
with the Cox-de Boor recursion.  I-splines use the closed form
``I_b(y) = sum_{j > b} N_j(y)`` with ``N_j`` the B-splines of one order higher,
so no numerical quadrature is involved.

A monotone transformation is ``tau(y) = lambda0 + sum_b lambda_b I_b(y)`` with
nonnegative ``lambda_b``; its derivative is ``sum_b lambda_b M_b(y)``.
Inputs outside the boundary are clamped, so ``tau`` is flat out there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY_GRID_SIZE = 512


class KnotError(ValueError):
    """Raised when a knot configuration cannot be built from the data."""


@dataclass(frozen=True)
class KnotConfig:
    """Polynomial degree, interior knots and boundary of a spline family.

    Attributes
    ----------
    degree : int
        Degree of the M-spline integrand.
    interior_knots : tuple of float
        Strictly increasing knots strictly inside ``boundary``.
    boundary : tuple of float
        ``(lo, hi)`` with ``lo < hi``.
    """

    degree: int
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "interior_knots",
                           tuple(float(k) for k in self.interior_knots))
        object.__setattr__(self, "boundary",
                           (float(self.boundary[0]), float(self.boundary[1])))
        lo, hi = self.boundary
        if not self.degree >= 0:
            raise KnotError(f"degree must be >= 0, got {self.degree}")
        if not lo < hi:
            raise KnotError(f"boundary must satisfy lo < hi, got {self.boundary}")
        knots = np.asarray(self.interior_knots)
        if knots.size and (knots.min() <= lo or knots.max() >= hi):
            raise KnotError("interior knots must lie strictly inside the boundary")
        if np.any(np.diff(knots) < 0):
            raise KnotError("interior knots must be nondecreasing")

    @property
    def lo(self) -> float:
        return self.boundary[0]

    @property
    def hi(self) -> float:
        return self.boundary[1]

    @property
    def basis_size(self) -> int:
        return self.degree + len(self.interior_knots) + 1

    def augmented_knots(self, multiplicity: int) -> np.ndarray:
        lo, hi = self.boundary
        return np.concatenate([np.full(multiplicity, lo),
                               np.asarray(self.interior_knots, dtype=float),
                               np.full(multiplicity, hi)])

    def to_dict(self) -> dict:
        return {"degree": self.degree,
                "interior_knots": list(self.interior_knots),
                "boundary": list(self.boundary)}

    @classmethod
    def from_dict(cls, d: dict) -> "KnotConfig":
        return cls(int(d["degree"]), tuple(d["interior_knots"]),
                   tuple(d["boundary"]))


@dataclass(frozen=True, eq=False)
class TransformParams:
    """Parameters of ``tau(y) = lambda0 + sum_b lam[b] * I_b(y)``.

    ``range_c`` is the range constant ``c``; it only constrains ``lam`` when
    the constrained (Dirichlet) prior is in use.
    """

    lambda0: float
    lam: np.ndarray
    range_c: float
    knots: KnotConfig = field(repr=False)

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        if lam.shape != (self.knots.basis_size,):
            raise ValueError(f"expected {self.knots.basis_size} weights, "
                             f"got shape {lam.shape}")
        if np.any(lam < 0):
            raise ValueError("transform weights must be nonnegative")
        if not self.range_c > 0:
            raise ValueError("range constant c must be positive")

    def with_weights(self, lam) -> "TransformParams":
        return TransformParams(self.lambda0, lam, self.range_c, self.knots)

    def satisfies_sum_constraint(self, rtol: float = 1e-9) -> bool:
        return abs(self.lam.sum() - self.range_c) <= rtol * self.range_c

    def to_dict(self) -> dict:
        return {"lambda0": float(self.lambda0),
                "lambda": [float(v) for v in self.lam],
                "range_c": float(self.range_c),
                "knots": self.knots.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformParams":
        return cls(float(d["lambda0"]), np.array(d["lambda"], dtype=float),
                   float(d["range_c"]), KnotConfig.from_dict(d["knots"]))


def make_knot_config(values, n_interior: int = 3, degree: int = 3) -> KnotConfig:
    """Place interior knots at evenly spaced quantiles of ``values``.

    The boundary is ``(min, max)`` of the data widened by ``1e-9 * range`` on
    each side so every data point is strictly interior.  With the defaults the
    interior knots are the quartiles.

    Raises
    ------
    KnotError
        If ``values`` is empty, constant, or its quantiles collapse onto each
        other or onto the data extremes.
    """
    y = np.asarray(values, dtype=float).ravel()
    if y.size == 0:
        raise KnotError("cannot place knots on an empty sample")
    if n_interior < 1:
        raise KnotError(f"n_interior must be >= 1, got {n_interior}")
    if degree < 1:
        raise KnotError(f"degree must be >= 1, got {degree}")
    if not np.all(np.isfinite(y)):
        raise KnotError("knot sample contains non-finite values")
    ymin, ymax = float(y.min()), float(y.max())
    if not ymin < ymax:
        raise KnotError(f"all {y.size} values equal {ymin}; quantile knots "
                        "collapse")
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.quantile(y, probs)
    if np.any(np.diff(knots) <= 0) or knots[0] <= ymin or knots[-1] >= ymax:
        raise KnotError(
            f"quantile knots {knots.tolist()} collapse for a sample with "
            f"{np.unique(y).size} distinct values; use fewer knots")
    pad = 1e-9 * (ymax - ymin)
    return KnotConfig(degree, tuple(knots), (ymin - pad, ymax + pad))


def _bspline_basis(x: np.ndarray, t: np.ndarray, order: int) -> np.ndarray:
    """Cox-de Boor B-spline basis, shape ``(len(x), len(t) - order)``.

    ``x`` must lie in ``[t[0], t[-1]]``; the right endpoint is assigned to the
    last nonempty knot interval.
    """
    nint = len(t) - 1
    # order-1 boxes: locate the half-open knot interval of each x
    idx = np.searchsorted(t, x, side="right") - 1
    last = np.flatnonzero(np.diff(t) > 0)[-1]
    idx = np.minimum(idx, last)
    N = np.zeros((x.size, nint))
    N[np.arange(x.size), idx] = 1.0
    xc = x[:, None]
    for k in range(2, order + 1):
        n = nint - k + 1
        left_den = t[k - 1:k - 1 + n] - t[:n]
        right_den = t[k:k + n] - t[1:1 + n]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (xc - t[:n]) / left_den, 0.0)
            right = np.where(right_den > 0, (t[k:k + n] - xc) / right_den, 0.0)
        N = left * N[:, :n] + right * N[:, 1:n + 1]
    return N


def _prepare(k: KnotConfig, y):
    arr = np.asarray(y, dtype=float)
    scalar = arr.ndim == 0
    x = np.clip(arr.ravel(), k.lo, k.hi)
    return x, scalar, arr.shape


def eval_mspline_basis(k: KnotConfig, y) -> np.ndarray:
    """M-spline basis values, shape ``(B,)`` for scalar ``y`` else ``(n, B)``.

    Each ``M_b`` is nonnegative and integrates to one over the boundary.
    """
    x, scalar, shape = _prepare(k, y)
    order = k.degree + 1
    t = k.augmented_knots(order)
    N = _bspline_basis(x, t, order)
    width = t[order:] - t[:-order]
    M = N * (order / width)
    return M[0] if scalar else M.reshape(shape + (k.basis_size,))


def eval_ispline_basis(k: KnotConfig, y) -> np.ndarray:
    """I-spline basis values in ``[0, 1]``, same shape rules as the M-splines.

    ``I_b(lo) = 0`` and ``I_b(hi) = 1`` for every ``b``.
    """
    x, scalar, shape = _prepare(k, y)
    order = k.degree + 2
    N = _bspline_basis(x, k.augmented_knots(order), order)
    # reverse cumulative sum over the higher-order B-splines, dropping the first
    I = np.cumsum(N[:, ::-1], axis=1)[:, ::-1][:, 1:]
    np.clip(I, 0.0, 1.0, out=I)
    return I[0] if scalar else I.reshape(shape + (k.basis_size,))


def transform(p: TransformParams, y):
    """Evaluate the monotone transformation at ``y`` (scalar or array)."""
    return p.lambda0 + eval_ispline_basis(p.knots, y) @ p.lam


def transform_jacobian(p: TransformParams, y):
    """Derivative ``d tau / d y``; at clamped points it is the boundary value."""
    return eval_mspline_basis(p.knots, y) @ p.lam


def _nonneg_lstsq(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least squares with ``x >= 0`` by clipping negatives and refitting."""
    active = np.ones(A.shape[1], dtype=bool)
    x = np.zeros(A.shape[1])
    while active.any():
        sol, *_ = np.linalg.lstsq(A[:, active], b, rcond=None)
        if np.all(sol >= 0):
            x[:] = 0.0
            x[active] = sol
            break
        # drop the most negative coefficient and refit
        cols = np.flatnonzero(active)
        active[cols[np.argmin(sol)]] = False
    return x


def identity_lambda(k: KnotConfig, c: float | None = None,
                    lambda0: float | None = None) -> TransformParams:
    """Nonnegative weights that make the transformation closest to ``y``.

    Fitted by least squares on a 512-point uniform grid over the boundary with
    the intercept held at ``lambda0`` (default ``lo``, which makes the fit
    exact).  ``c`` defaults to the boundary width.
    """
    if lambda0 is None:
        lambda0 = k.lo
    if c is None:
        c = k.hi - k.lo
    grid = np.linspace(k.lo, k.hi, IDENTITY_GRID_SIZE)
    lam = _nonneg_lstsq(eval_ispline_basis(k, grid), grid - lambda0)
    return TransformParams(float(lambda0), lam, float(c), k)
