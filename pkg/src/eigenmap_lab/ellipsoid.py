"""Algebra of the ellipsoid {x : sum_i lambda_i x_i^2 = 1}.

All point-wise functions accept a single point of shape ``(m,)`` or a batch of
shape ``(..., m)`` and broadcast over the leading axes.  The same weight vector
plays the role of ``lambda`` (interior problem) and ``sigma`` (free-boundary
problem).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROOT_TOL = 1e-14
DEGENERATE_NORM = 1e-300
ON_ELLIPSOID_TOL = 1e-8


@dataclass(frozen=True)
class EllipsoidSpec:
    """Positive weights of the ellipsoid and the derived elongation."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float).ravel()
        if lam.size < 2:
            raise ValueError("an ellipsoid needs m >= 2 weights")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("ellipsoid weights must be finite and > 0")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def m(self) -> int:
        return self.lambdas.size

    @property
    def sigma(self) -> np.ndarray:
        return self.lambdas

    @property
    def elongation(self) -> float:
        return float(max(self.lambdas.max(), 1.0 / self.lambdas.min()))

    def padded(self, extra) -> "EllipsoidSpec":
        """Append weights for extra (identically zero) coordinates."""
        return EllipsoidSpec(np.concatenate([self.lambdas, np.ravel(extra)]))

    @classmethod
    def sphere(cls, m: int) -> "EllipsoidSpec":
        return cls(np.ones(m))


def as_spec(E) -> EllipsoidSpec:
    return E if isinstance(E, EllipsoidSpec) else EllipsoidSpec(E)


def _points(x, E: EllipsoidSpec) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != E.m:
        raise ValueError(f"point dimension {x.shape[-1]} does not match m = {E.m}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point coordinates")
    return x


def gradient_bound_constant(alpha: float) -> float:
    """K(alpha) = 5 * 2**(2 alpha^2 + 1) bounding |Ds V|^2 against |V|^2."""
    return 5.0 * 2.0 ** (2 * alpha**2 + 1)


def hessian_bound_constant(alpha: float) -> float:
    """Explicit constant C with sum_i (D^2 s_i(V, V))^2 <= C |V|^4."""
    a2 = alpha**2
    return 64 * 2.0 ** (2 * a2) + 16 * 2.0 ** (3 * a2) + 256 * a2 * 2.0 ** (3 * a2) + 64 * a2 * 2.0 ** (3 * a2)


def in_reflection_regime(x, E) -> np.ndarray:
    """1/2 <= |x|_sigma^2 <= 1: inside the ellipsoid and away from the origin.

    The gradient and Hessian bounds of :func:`gradient_bound_constant` and
    :func:`hessian_bound_constant` rely on t(x) >= 0, i.e. on x lying in the
    solid ellipsoid; outside it s contracts like an inversion and the lower
    gradient bound fails for |x| large.
    """
    q = lambda_norm(x, E) ** 2
    return (q >= 0.5) & (q <= 1.0 + 1e-12)


def lambda_norm(x, E) -> np.ndarray:
    """sqrt(sum_i lambda_i x_i^2)."""
    E = as_spec(E)
    x = _points(x, E)
    return np.sqrt(np.sum(E.lambdas * x * x, axis=-1))


def _g(t, x2, sig):
    # g(t) = sum_i sigma_i e^{2 sigma_i t} x_i^2 and its t-derivative
    e = np.exp(2.0 * sig * t[..., None]) * x2
    return np.sum(sig * e, axis=-1), np.sum(2.0 * sig * sig * e, axis=-1)


def solve_t(x, E, tol: float = ROOT_TOL, max_iter: int = 200) -> np.ndarray:
    """Unique root t of sum_i sigma_i e^{2 sigma_i t} x_i^2 = 1."""
    E = as_spec(E)
    x = _points(x, E)
    sig = E.sigma
    if np.any(np.linalg.norm(x, axis=-1) < DEGENERATE_NORM):
        raise ValueError("t(x) is undefined at x = 0")
    x2 = x * x
    t0 = -np.log(np.sqrt(np.sum(sig * x2, axis=-1)))
    lo = np.array(t0 - 1.0, dtype=float)
    hi = np.array(t0 + 1.0, dtype=float)
    step = np.ones_like(lo)
    # geometric bracket expansion; g is increasing from 0 to infinity
    for _ in range(200):
        glo, _ = _g(lo, x2, sig)
        bad = glo > 1.0
        if not bad.any():
            break
        lo = np.where(bad, lo - step, lo)
        step = np.where(bad, 2 * step, step)
    step = np.ones_like(hi)
    for _ in range(200):
        ghi, _ = _g(hi, x2, sig)
        bad = ghi < 1.0
        if not bad.any():
            break
        hi = np.where(bad, hi + step, hi)
        step = np.where(bad, 2 * step, step)

    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        g, dg = _g(t, x2, sig)
        r = g - 1.0
        if np.all(np.abs(r) <= tol):
            break
        lo = np.where(r < 0, t, lo)
        hi = np.where(r > 0, t, hi)
        tn = t - r / dg
        inside = (tn > lo) & (tn < hi)
        tn = np.where(inside, tn, 0.5 * (lo + hi))
        t = np.where(np.abs(r) <= tol, t, tn)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(t))):
            break
    return t


def proj_p(x, E) -> np.ndarray:
    """p(x) = e^{sigma t(x)} x, the point of the ellipsoid on the t-curve of x."""
    E = as_spec(E)
    x = _points(x, E)
    t = solve_t(x, E)
    return np.exp(E.sigma * t[..., None]) * x


def invol_s(x, E) -> np.ndarray:
    """s(x) = e^{2 sigma t(x)} x, the involution fixing the ellipsoid."""
    E = as_spec(E)
    x = _points(x, E)
    t = solve_t(x, E)
    return np.exp(2.0 * E.sigma * t[..., None]) * x


def jac_s(x, E, degenerate_tol: float = 1e-300) -> np.ndarray:
    """Jacobian Ds(x) = diag(e^{2 sigma t}) - 2 (sigma s)(sigma s)^T / (sigma s . sigma x)."""
    E = as_spec(E)
    x = _points(x, E)
    sig = E.sigma
    t = solve_t(x, E)
    e2 = np.exp(2.0 * sig * t[..., None])
    ss = sig * e2 * x
    den = np.sum(ss * sig * x, axis=-1)
    if np.any(den <= degenerate_tol):
        raise ValueError("degenerate denominator in Ds(x)")
    J = -2.0 * ss[..., :, None] * ss[..., None, :] / den[..., None, None]
    idx = np.arange(E.m)
    J[..., idx, idx] += e2
    return J


def hess_s_contract(x, E, V) -> np.ndarray:
    """Components sum_{j,l} d_j d_l s_i(x) V_j . V_l.

    ``V`` has shape ``(..., m, d)``: one d-vector (usually a gradient in the
    plane) per coordinate.  Closed form obtained by differentiating Ds with
    dt/dx_j = -sigma_j s_j / W, W = sum_k sigma_k^2 e^{2 sigma_k t} x_k^2 and
    W~ = sum_k sigma_k^3 e^{2 sigma_k t} x_k^2::

        -(4/W) sigma_i e^{2 sigma_i t} (a . V_i)
        -(2/W) sigma_i s_i sum_j sigma_j e^{2 sigma_j t} |V_j|^2
        +(8/W^2) sigma_i s_i (a . b)
        +(4/W^2) (sigma_i - W~/W) sigma_i s_i |a|^2

    with a = sum_j sigma_j s_j V_j and b = sum_j sigma_j^2 s_j V_j.
    """
    E = as_spec(E)
    x = _points(x, E)
    V = np.asarray(V, dtype=float)
    sig = E.sigma
    t = solve_t(x, E)
    e2 = np.exp(2.0 * sig * t[..., None])
    s = e2 * x
    W = np.sum(sig * sig * e2 * x * x, axis=-1)[..., None]
    Wt = np.sum(sig**3 * e2 * x * x, axis=-1)[..., None]
    a = np.sum((sig * s)[..., None] * V, axis=-2)
    b = np.sum((sig * sig * s)[..., None] * V, axis=-2)
    aV = np.sum(a[..., None, :] * V, axis=-1)
    vsq = np.sum(sig * e2 * np.sum(V * V, axis=-1), axis=-1)[..., None]
    ab = np.sum(a * b, axis=-1)[..., None]
    aa = np.sum(a * a, axis=-1)[..., None]
    return (
        -4.0 / W * sig * e2 * aV
        - 2.0 / W * sig * s * vsq
        + 8.0 / W**2 * sig * s * ab
        + 4.0 / W**2 * (sig - Wt / W) * sig * s * aa
    )


def hess_s_contract_printed(x, E, V) -> np.ndarray:
    """The four-term formula exactly as it is usually printed.

    Differs from :func:`hess_s_contract` by a missing ``sigma_j`` in the
    second term and the sign of ``W~/W`` in the last term; kept only so the
    discrepancy can be measured against finite differences.
    """
    E = as_spec(E)
    x = _points(x, E)
    V = np.asarray(V, dtype=float)
    sig = E.sigma
    t = solve_t(x, E)
    e2 = np.exp(2.0 * sig * t[..., None])
    s = e2 * x
    W = np.sum(sig * sig * e2 * x * x, axis=-1)[..., None]
    Wt = np.sum(sig**3 * e2 * x * x, axis=-1)[..., None]
    a = np.sum((sig * s)[..., None] * V, axis=-2)
    b = np.sum((sig * sig * s)[..., None] * V, axis=-2)
    aV = np.sum(a[..., None, :] * V, axis=-1)
    vsq = np.sum(e2 * np.sum(V * V, axis=-1), axis=-1)[..., None]
    ab = np.sum(a * b, axis=-1)[..., None]
    aa = np.sum(a * a, axis=-1)[..., None]
    return (
        -4.0 / W * sig * e2 * aV
        - 2.0 / W * sig * s * vsq
        + 8.0 / W**2 * sig * s * ab
        + 4.0 / W**2 * (sig + Wt / W) * sig * s * aa
    )


def _check_on(x, E, tol):
    r = np.abs(np.sum(E.lambdas * x * x, axis=-1) - 1.0)
    if np.any(r > tol):
        raise ValueError(f"point off the ellipsoid by {r.max():.3e}")


def normal_nu(x, E, tol: float = ON_ELLIPSOID_TOL) -> np.ndarray:
    """Unit normal Lambda x / |Lambda x| at a point of the ellipsoid."""
    E = as_spec(E)
    x = _points(x, E)
    _check_on(x, E, tol)
    n = E.lambdas * x
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def tangent_project(x, E, v, tol: float = ON_ELLIPSOID_TOL) -> np.ndarray:
    """Dp(x) v = v - (v . sigma x / |sigma x|^2) sigma x for x on the ellipsoid."""
    E = as_spec(E)
    x = _points(x, E)
    _check_on(x, E, tol)
    n = E.lambdas * x
    v = np.asarray(v, dtype=float)
    return v - (np.sum(v * n, axis=-1) / np.sum(n * n, axis=-1))[..., None] * n
