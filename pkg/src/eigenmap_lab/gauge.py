"""Discrete Uhlenbeck gauge, the (A, B) conservation-law decomposition and the d-bar frame.

Sign conventions: every potential handed to this module satisfies
``div grad Phi = Omega . grad Phi`` (use :func:`eigenmap.riviere_potential`
to convert a solved map).  With that convention the gauged potential of
``uhlenbeck_gauge`` gives ``d_zbar alpha = omega alpha`` for
``alpha = P^T d_z Phi`` and ``omega = i d_zbar xi``.

Element frames: a nodal SO(m) field is interpolated on each triangle as
``P(x) = P_a exp(Y(x))`` with ``Y`` linear in the barycentric coordinates
and ``Y(b) = log(P_a^T P_b)``, ``Y(c) = log(P_a^T P_c)``.  The element frame
is the value at the centroid and the connection ``P^T grad P`` is the
series ``dexp_{-Y}(grad Y)`` evaluated there, so both stay exactly in
SO(m) and so(m).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_antisymmetric, check_is_fitted, check_map_field, check_mesh
from .meshpde import fem
from .meshpde.cauchy import element_kernel
from .meshpde.mesh import DiskMesh

GAUGE_TOL = 1e-10
FP_TOL = 1e-12
EPS0 = 0.05
EPS1 = 0.05
GAUGE_SLACK = 0.1
CONTRACTION_CAP = 0.5
DBAR_CONTRACTION = 0.25
DBAR_SLACK = 0.2
SERIES_TERMS = 60


# ------------------------------------------------------------------ so(m) helpers
def _skew(X):
    return 0.5 * (X - np.swapaxes(X, -1, -2))


def rot_log(Q) -> np.ndarray:
    """Principal logarithm of rotations close to the identity (batched).

    Uses the Cayley transform C = (Q - I)(Q + I)^{-1} and
    log Q = 2 artanh C = 2 (C + C^3/3 + C^5/5 + ...).
    """
    Q = np.asarray(Q, float)
    m = Q.shape[-1]
    eye = np.eye(m)
    C = np.linalg.solve(np.swapaxes(Q + eye, -1, -2), np.swapaxes(Q - eye, -1, -2))
    C = np.swapaxes(C, -1, -2)
    C = _skew(C)
    radius = np.sqrt(np.sum(C * C, axis=(-2, -1)))  # Frobenius bounds the spectral radius
    if np.max(radius, initial=0.0) >= 0.95:
        radius = np.linalg.norm(C, 2, axis=(-2, -1)) if C.ndim > 2 else np.linalg.norm(C, 2)
    if np.max(radius, initial=0.0) >= 0.95:
        # far from the identity: fall back to a dense logarithm (element by element)
        flat = Q.reshape(-1, m, m)
        out = np.stack([np.real(sla.logm(q)) for q in flat]).reshape(Q.shape)
        return _skew(out)
    C2 = C @ C
    term = C.copy()
    out = C.copy()
    for k in range(1, SERIES_TERMS):
        term = term @ C2
        add = term / (2 * k + 1)
        out = out + add
        if np.abs(add).max(initial=0.0) < 1e-18:
            break
    return _skew(2.0 * out)


def rot_exp(X) -> np.ndarray:
    """Exponential of (batched) skew matrices: scaling and squaring of a Taylor polynomial."""
    X = _skew(np.asarray(X, float))
    m = X.shape[-1]
    nrm = np.sqrt(np.max(np.sum(X * X, axis=(-2, -1)), initial=0.0))
    s = max(0, int(np.ceil(np.log2(nrm / 0.25)))) if nrm > 0 else 0
    Y = X / 2.0**s
    E = np.eye(m) + Y
    term = Y
    for k in range(2, 14):  # |Y| <= 1/4: remainder below 4^-14 / 14!
        term = term @ Y / k
        E = E + term
    for _ in range(s):
        E = E @ E
    # one Newton-Schulz polar sweep restores orthogonality to round-off
    return 1.5 * E - 0.5 * E @ np.swapaxes(E, -1, -2) @ E


def _per_dir(L, F, R=None):
    """L F_d R for each direction d of F (T, m, m, 2); L, R are (T, m, m) or None."""
    T, m = F.shape[0], F.shape[1]
    out = F
    if L is not None:
        out = (L @ out.reshape(T, m, 2 * m)).reshape(T, m, m, 2)
    if R is not None:
        rows = np.swapaxes(out, 2, 3).reshape(T, 2 * m, m)
        out = np.swapaxes((rows @ R).reshape(T, m, 2, m), 2, 3)
    return np.ascontiguousarray(out)


def _comm(X, Y):
    """[X, Y] for X (T, m, m) and Y (T, m, m, 2)."""
    return _per_dir(X, Y) - _per_dir(None, Y, X)


def element_frames(mesh: DiskMesh, P):
    """Element frame P_T (T, m, m) and connection P^T grad P (T, m, m, 2)."""
    P = np.asarray(P, float)
    tri = mesh.triangles
    Pa, Pb, Pc = P[tri[:, 0]], P[tri[:, 1]], P[tri[:, 2]]
    Xb = rot_log(np.swapaxes(Pa, -1, -2) @ Pb)
    Xc = rot_log(np.swapaxes(Pa, -1, -2) @ Pc)
    M = (Xb + Xc) / 3.0
    G = mesh.basis_gradients
    dY = Xb[..., None] * G[:, None, None, 1, :] + Xc[..., None] * G[:, None, None, 2, :]
    conn = dY.copy()
    term = dY
    fact = 1.0
    for k in range(1, 12):
        term = _comm(M, term)
        fact *= -(k + 1)
        add = term / fact
        conn = conn + add
        if np.abs(add).max(initial=0.0) < 1e-18:
            break
    conn = 0.5 * (conn - np.swapaxes(conn, 1, 2))
    PT = Pa @ rot_exp(M)
    return PT, conn


def gauged_potential(mesh: DiskMesh, Omega, P):
    """Omega^P = P_T^T Omega P_T - P^T grad P per element."""
    PT, conn = element_frames(mesh, P)
    rot = _per_dir(np.swapaxes(PT, 1, 2), Omega, PT)
    out = rot - conn
    return 0.5 * (out - np.swapaxes(out, 1, 2)), PT, conn


def _l2sq(mesh, F):
    return float(np.sum(mesh.areas * np.sum(F.reshape(len(F), -1) ** 2, axis=1)))


# ------------------------------------------------------------------ Uhlenbeck gauge
@dataclass
class GaugeFrame:
    """Nodal SO(m) frame, so(m) potential and diagnostics of the gauge equation."""

    mesh: DiskMesh
    P: np.ndarray  # (N, m, m)
    xi: np.ndarray  # (N, m, m)
    P_elem: np.ndarray  # (T, m, m)
    connection: np.ndarray  # (T, m, m, 2): P^T grad P
    gauged: np.ndarray  # (T, m, m, 2): P^T Omega P - P^T grad P
    defect: float
    relative_defect: float
    energy_P: float
    energy_xi: float
    omega_norm: float
    iterations: int
    converged: bool
    F_history: list = field(default_factory=list)
    message: str = ""
    coulomb_residual: float = 0.0  # ||grad A|| / ||Omega|| for the Neumann direction A at exit

    @property
    def m(self) -> int:
        return self.P.shape[1]

    @property
    def bound_ratio(self) -> float:
        """(||grad P|| + ||grad xi||) / ||Omega||, continuum bound 3."""
        if self.omega_norm == 0:
            return 0.0
        return (np.sqrt(self.energy_P) + np.sqrt(self.energy_xi)) / self.omega_norm

    @property
    def orthogonality_error(self) -> float:
        m = self.m
        return float(np.abs(np.swapaxes(self.P, 1, 2) @ self.P - np.eye(m)).max())

    def bound_holds(self, eps0: float = EPS0, slack: float = GAUGE_SLACK) -> bool | None:
        """None when the smallness gate is not met."""
        if self.omega_norm**2 > eps0:
            return None
        return self.bound_ratio <= 3.0 * (1.0 + slack)


def _coulomb_step(mesh, Og):
    A = fem.solve_neumann_load(mesh, fem.flux_load(mesh, Og), report=False)
    return _skew(A)


def uhlenbeck_gauge(mesh: DiskMesh, Omega, P0=None, tol: float = GAUGE_TOL, max_iter: int = 200, armijo: float = 1e-4,
                    ftol: float = 1e-12) -> GaugeFrame:
    """Minimise F(P) = int |P^T Omega P - P^T grad P|^2 over nodal SO(m) fields.

    The descent direction is the H^1 gradient: the so(m)-valued Neumann
    solution of int grad A . grad B = int <Omega^P, grad B>, retracted by
    P <- P exp(tau A).  At a critical point Omega^P is weakly divergence free
    with vanishing normal trace and xi is its Dirichlet stream function.
    """
    check_mesh(mesh, ("disk",))
    Omega = check_antisymmetric(np.asarray(Omega, float))
    if Omega.shape[0] != mesh.n_triangles:
        raise ValueError("Omega must have one entry per triangle")
    m = Omega.shape[1]
    N = mesh.n_vertices
    P = np.broadcast_to(np.eye(m), (N, m, m)).copy() if P0 is None else np.array(P0, float)
    omega_norm = np.sqrt(_l2sq(mesh, Omega))
    Og, PT, conn = gauged_potential(mesh, Omega, P)
    F = _l2sq(mesh, Og)
    hist = [F]
    converged, msg, it = False, "", 0
    scale = max(omega_norm, 1e-300)
    for it in range(1, max_iter + 1):
        A = _coulomb_step(mesh, Og)
        gA = fem.dirichlet_energy(mesh, A)
        if np.sqrt(gA) <= tol * scale or omega_norm == 0:
            converged = True
            break
        t, accepted = 1.0, False
        while t > 1e-6:
            Pn = P @ rot_exp(t * A)
            Ogn, PTn, connn = gauged_potential(mesh, Omega, Pn)
            Fn = _l2sq(mesh, Ogn)
            if Fn <= F - 2 * armijo * t * gA:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # the Neumann direction is the gradient of the continuum functional; once the
            # discrete functional stops decreasing along it we are at the discrete minimum
            converged = (F - Fn) <= ftol * F or Fn <= F
            msg = "stationary" if converged else "descent stall"
            break
        stalled = F - Fn <= ftol * F
        P, Og, PT, conn, F = Pn, Ogn, PTn, connn, Fn
        hist.append(F)
        if stalled:
            converged, msg = True, "stationary"
            break
    else:
        msg = "max_iter reached"
    if converged and not msg:
        msg = "converged"
    load = fem.flux_load(mesh, -fem.perp(Og))
    xi = _skew(fem.solve_dirichlet_load(mesh, load))
    gxi = fem.gradient(mesh, xi)
    defect = np.sqrt(_l2sq(mesh, fem.perp(gxi) - Og))
    return GaugeFrame(
        mesh, P, xi, PT, conn, Og, float(defect), float(defect / scale) if omega_norm > 0 else 0.0,
        _l2sq(mesh, conn), _l2sq(mesh, gxi), float(omega_norm), len(hist) - 1, converged, hist, msg,
        float(np.sqrt(fem.dirichlet_energy(mesh, _coulomb_step(mesh, Og))) / scale) if omega_norm > 0 else 0.0,
    )


class UhlenbeckGauge(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`uhlenbeck_gauge`.

    ``fit(mesh, Omega)`` computes the frame; ``transform(Omega)`` applies the
    fitted change of gauge to any potential on the same mesh.
    """

    def __init__(self, tol=GAUGE_TOL, max_iter=200, eps0=EPS0, slack=GAUGE_SLACK):
        self.tol = tol
        self.max_iter = max_iter
        self.eps0 = eps0
        self.slack = slack

    def fit(self, mesh, Omega):
        fr = uhlenbeck_gauge(mesh, Omega, tol=self.tol, max_iter=self.max_iter)
        self.frame_ = fr
        self.P_ = fr.P
        self.xi_ = fr.xi
        self.bound_ratio_ = fr.bound_ratio
        self.bound_holds_ = fr.bound_holds(self.eps0, self.slack)
        self.n_iter_ = fr.iterations
        return self

    def transform(self, Omega):
        check_is_fitted(self, "frame_")
        fr = self.frame_
        rot = _per_dir(np.swapaxes(fr.P_elem, 1, 2), np.asarray(Omega, float), fr.P_elem)
        return rot - fr.connection

    def fit_transform(self, mesh, Omega):
        return self.fit(mesh, Omega).frame_.gauged


# ------------------------------------------------------------------ (A, B) decomposition
@dataclass
class RiviereDecomp:
    A: np.ndarray  # (N, m, m)
    B: np.ndarray  # (N, m, m)
    A_hat: np.ndarray  # (N, m, m)
    iterations: int
    contraction_rates: list
    converged: bool
    bound_terms: dict
    K_meas: float
    residual: float | None
    message: str = ""

    @property
    def max_rate(self) -> float:
        return max(self.contraction_rates, default=0.0)


def pair_norm(mesh: DiskMesh, a, b) -> float:
    """||(a, b)||^2 = sum_ij ||a_ij||_inf^2 + int |grad a|^2 + int |grad b|^2."""
    sup = np.abs(a).max(axis=0)
    return float(np.sqrt(np.sum(sup**2) + fem.dirichlet_energy(mesh, a) + fem.dirichlet_energy(mesh, b)))


def riviere_fluxes(mesh: DiskMesh, frame: GaugeFrame, a_hat, b):
    """Right-hand sides (in divergence form) of the two elliptic problems of T.

    div grad R = div(grad^perp B P - (I + A_hat) grad^perp xi),  Neumann, mean zero
    div grad S = div((I + A_hat) grad xi P^T - grad^perp A_hat P^T),  S = 0 on the circle
    """
    m = frame.m
    PT = frame.P_elem
    I_a = np.eye(m) + mesh.element_average(a_hat)
    gxi = fem.gradient(mesh, frame.xi)
    ga = fem.gradient(mesh, a_hat)
    gb = fem.gradient(mesh, b)
    PTt = np.swapaxes(PT, 1, 2)
    FR = _per_dir(None, fem.perp(gb), PT) - _per_dir(I_a, fem.perp(gxi))
    FS = _per_dir(I_a, gxi, PTt) - _per_dir(None, fem.perp(ga), PTt)
    return FR, FS


def riviere_T(mesh: DiskMesh, frame: GaugeFrame, a_hat, b):
    FR, FS = riviere_fluxes(mesh, frame, a_hat, b)
    R = fem.solve_neumann_load(mesh, fem.flux_load(mesh, FR), report=False)
    S = fem.solve_dirichlet_load(mesh, fem.flux_load(mesh, FS))
    return R, S


def conservation_residual(mesh: DiskMesh, A, B, phi) -> float:
    """Weak residual of div(A grad Phi) = grad^perp B . grad Phi over interior tests, relative to ||grad Phi||."""
    g = fem.gradient(mesh, phi)
    AT = mesh.element_average(A)
    flux = np.einsum("tijd,tjd->tid", np.broadcast_to(AT[..., None], AT.shape + (2,)), g)
    src = np.einsum("tijd,tjd->ti", fem.perp(fem.gradient(mesh, B)), g)
    r = fem.flux_load(mesh, flux) + fem.element_load(mesh, src)
    rows = np.flatnonzero(mesh.interior_mask)
    free, lu = fem._dirichlet_factor(mesh, mesh.boundary_mask)
    rr = r[rows]
    val = float(np.sqrt(max(np.sum(rr * lu.solve(np.ascontiguousarray(rr))), 0.0)))
    scale = np.sqrt(max(fem.dirichlet_energy(mesh, phi), 1e-300))
    return val / scale


def riviere_AB(mesh: DiskMesh, Omega, frame: GaugeFrame, phi=None, tol: float = FP_TOL, max_iter: int = 200,
               contraction_cap: float = CONTRACTION_CAP, eps0: float = EPS0) -> RiviereDecomp:
    """Fixed point (A_hat, B) of the affine operator T, then A = (I + A_hat) P^T."""
    Omega = check_antisymmetric(np.asarray(Omega, float))
    m, N = frame.m, mesh.n_vertices
    omega_sq = _l2sq(mesh, Omega)
    a = np.zeros((N, m, m))
    b = np.zeros((N, m, m))
    rates, prev, conv, msg, it = [], None, False, "", 0
    for it in range(1, max_iter + 1):
        a_new, b_new = riviere_T(mesh, frame, a, b)
        step = pair_norm(mesh, a_new - a, b_new - b)
        if prev is not None and prev > 0 and step > 1e3 * np.finfo(float).eps * max(pair_norm(mesh, a_new, b_new), 1e-300):
            rates.append(step / prev)
        a, b, prev = a_new, b_new, step
        if rates and rates[-1] >= 1.0:
            msg = f"contraction failure (rate {rates[-1]:.3f}); smallness gate {omega_sq:.3g} vs {eps0:.3g}"
            break
        if step <= tol * max(pair_norm(mesh, a, b), 1e-300) or step == 0.0:
            conv = True
            break
    else:
        msg = "max_iter reached"
    if conv:
        msg = "converged"
    A = np.einsum("nik,njk->nij", np.eye(m) + a, frame.P)
    PA = np.einsum("nik,nkj->nij", frame.P, A)
    terms = {
        "sup_PA_minus_I": float(np.sum(np.abs(PA - np.eye(m)).max(axis=0) ** 2)),
        "grad_A": fem.dirichlet_energy(mesh, A),
        "grad_B": fem.dirichlet_energy(mesh, b),
    }
    K = sum(terms.values()) / omega_sq if omega_sq > 0 else 0.0
    res = conservation_residual(mesh, A, b, phi) if phi is not None else None
    if rates and max(rates) > contraction_cap:
        msg += f"; measured rate {max(rates):.3f} above cap {contraction_cap}"
    return RiviereDecomp(A, b, a, it, rates, conv, terms, float(K), res, msg)


class RiviereDecomposition(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`riviere_AB`.

    ``fit(mesh, Omega, phi=None)`` gauges ``Omega`` (unless ``frame`` is given)
    and solves for (A, B); ``transform(phi)`` returns the per-element current
    ``A grad phi`` whose divergence equals ``grad^perp B . grad phi`` for maps
    solving the system.
    """

    def __init__(self, tol=FP_TOL, max_iter=200, contraction_cap=CONTRACTION_CAP, eps0=EPS0):
        self.tol = tol
        self.max_iter = max_iter
        self.contraction_cap = contraction_cap
        self.eps0 = eps0

    def fit(self, mesh, Omega, phi=None, frame=None):
        frame = uhlenbeck_gauge(mesh, Omega) if frame is None else frame
        dec = riviere_AB(mesh, Omega, frame, phi, tol=self.tol, max_iter=self.max_iter,
                         contraction_cap=self.contraction_cap, eps0=self.eps0)
        self.mesh_ = mesh
        self.frame_ = frame
        self.decomposition_ = dec
        self.A_ = dec.A
        self.B_ = dec.B
        self.K_ = dec.K_meas
        self.contraction_ = max(dec.contraction_rates, default=0.0)
        self.n_iter_ = dec.iterations
        return self

    def transform(self, phi):
        check_is_fitted(self, "decomposition_")
        mesh = self.mesh_
        phi = check_map_field(mesh, phi, self.A_.shape[1])
        return np.einsum("tij,tjd->tid", mesh.element_average(self.A_), fem.gradient(mesh, phi))


# ------------------------------------------------------------------ d-bar frame
@dataclass
class DbarFrame:
    A: np.ndarray  # (N, m, m) complex
    distance: float  # ||A - I|| in the composite sup norm
    residual: float  # element L2 of d_zbar A - omega A
    baseline: float  # element L2 of d_zbar T(chi) - 1: discretisation floor of the Cauchy transform
    iterations: int
    contraction_rates: list
    converged: bool
    lorentz_norm: float
    message: str = ""

    @property
    def max_rate(self) -> float:
        return max(self.contraction_rates, default=0.0)

    @property
    def within_third(self) -> bool:
        return self.distance <= 1.0 / 3.0


def _kernel(mesh):
    hit = mesh._cache.get(("cauchy_nodes",))
    if hit is None:
        hit = element_kernel(mesh, mesh.vertices)
        mesh._cache[("cauchy_nodes",)] = hit
    return hit


def cauchy_baseline(mesh: DiskMesh) -> float:
    """||d_zbar T(chi_D) - 1|| in element L2, the discretisation floor of the transform."""
    C = _kernel(mesh)
    u = C @ np.ones(mesh.n_triangles)
    return fem.element_l2(mesh, fem.d_zbar(mesh, u) - 1.0)


def dbar_frame(mesh: DiskMesh, omega, tol: float = FP_TOL, max_iter: int = 200, eps1: float = EPS1) -> DbarFrame:
    """Picard iteration A <- I + T(omega A) with T the Cauchy transform (d_zbar T f = f)."""
    check_mesh(mesh, ("disk",))
    omega = np.asarray(omega, complex)
    if omega.ndim == 1:
        omega = omega[:, None, None]
    if omega.ndim != 3 or omega.shape[0] != mesh.n_triangles:
        raise ValueError("omega must have shape (T, m, m)")
    m = omega.shape[1]
    C = _kernel(mesh)
    L21 = fem.lorentz21(mesh, np.sqrt(np.sum(np.abs(omega) ** 2, axis=(1, 2))))
    eye = np.eye(m)
    A = np.broadcast_to(eye, (mesh.n_vertices, m, m)).astype(complex)
    rates, prev, conv, msg, it = [], None, False, "", 0
    for it in range(1, max_iter + 1):
        f = omega @ mesh.element_average(A)
        An = eye + (C @ f.reshape(mesh.n_triangles, -1)).reshape(A.shape)
        step = fem.matrix_sup_norm(An - A)
        if prev is not None and prev > 0 and step > 1e3 * np.finfo(float).eps:
            rates.append(step / prev)
        A, prev = An, step
        if rates and rates[-1] >= 1.0:
            msg = f"contraction failure (rate {rates[-1]:.3f}); L21 norm {L21:.3g} vs gate {eps1:.3g}"
            break
        if step <= tol:
            conv = True
            break
    else:
        msg = "max_iter reached"
    if conv:
        msg = "converged"
    res = fem.element_l2(mesh, fem.d_zbar(mesh, A) - omega @ mesh.element_average(A))
    return DbarFrame(A, fem.matrix_sup_norm(A - eye), res, cauchy_baseline(mesh), it, rates, conv, L21, msg)


def dbar_direct(mesh: DiskMesh, omega) -> np.ndarray:
    """Dense solve of the same discrete fixed-point equation (used as an oracle)."""
    omega = np.asarray(omega, complex)
    if omega.ndim == 1:
        omega = omega[:, None, None]
    m = omega.shape[1]
    N, T = mesh.n_vertices, mesh.n_triangles
    C = _kernel(mesh)
    avg = np.zeros((T, N))
    for k in range(3):
        avg[np.arange(T), mesh.triangles[:, k]] += 1.0 / 3.0
    Cavg = C @ (avg.astype(complex)[:, :, None, None] * omega[:, None, :, :]).reshape(T, -1)  # (N, N*m*m)
    # unknown A[n, k, j]; map: (C omega avg A)[n, i, j] = sum_{n', k} Cw[n, n', i, k] A[n', k, j]
    Cw = Cavg.reshape(N, N, m, m).transpose(0, 2, 1, 3).reshape(N * m, N * m)
    rhs = np.tile(np.eye(m), (N, 1))
    return np.linalg.solve(np.eye(N * m) - Cw, rhs).reshape(N, m, m)


class DbarFrameSolver(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`dbar_frame`.

    ``fit(mesh, omega)`` builds the frame A with d_zbar A = omega A;
    ``transform(alpha)`` returns A^{-1} alpha for a nodal (N, m) field.
    """

    def __init__(self, tol=FP_TOL, max_iter=200, eps1=EPS1):
        self.tol = tol
        self.max_iter = max_iter
        self.eps1 = eps1

    def fit(self, mesh, omega):
        fr = dbar_frame(mesh, omega, tol=self.tol, max_iter=self.max_iter, eps1=self.eps1)
        self.frame_ = fr
        self.A_ = fr.A
        self.distance_ = fr.distance
        self.contraction_ = max(fr.contraction_rates, default=0.0)
        self.n_iter_ = fr.iterations
        return self

    def transform(self, alpha):
        check_is_fitted(self, "frame_")
        alpha = np.asarray(alpha, complex)
        if alpha.shape != self.A_.shape[:2]:
            raise ValueError(f"alpha must have shape {self.A_.shape[:2]}")
        return np.linalg.solve(self.A_, alpha[..., None])[..., 0]


@dataclass
class HolomorphicFactor:
    alpha: np.ndarray  # (N, m) nodal, recovered from element values
    alpha_elem: np.ndarray  # (T, m)
    omega: np.ndarray  # (T, m, m)
    beta: np.ndarray  # (N, m)
    dbar_alpha: float
    dbar_beta: float
    alpha_equation_residual: float
    sup_ratio: float
    dbar: DbarFrame
    report: dict


def analysis_mask(mesh: DiskMesh, margin: float | None = None) -> np.ndarray:
    """Elements whose centroid is at distance >= margin (default 2h) from the circle."""
    margin = 2 * mesh.h if margin is None else margin
    return 1.0 - np.linalg.norm(mesh.centroids, axis=1) >= margin


def _zbar(F):
    return 0.5 * (F[..., 0] + 1j * F[..., 1])


def holomorphic_factor(sol, frame: GaugeFrame, dbar: DbarFrame | None = None, eps1: float = EPS1,
                       improve_factor: float = 10.0) -> HolomorphicFactor:
    """alpha = P^T d_z Phi, omega = i d_zbar xi, beta = A^{-1} alpha with A the d-bar frame.

    P1 maps carry no second derivatives, so d_zbar alpha is formed per element
    by the product rule d_zbar alpha = -(P^T d_zbar P) alpha + P^T d_zbar d_z Phi
    with d_zbar d_z Phi = Omega_zbar d_z Phi taken from the equation, which
    collapses to (Omega^P)_zbar alpha.  Likewise
    d_zbar beta = A^{-1} (d_zbar alpha - (d_zbar A) beta) with d_zbar A the
    derivative of the nodal frame.  ``frame`` must be the gauge of
    ``riviere_potential(sol)``.
    """
    mesh = sol.mesh
    phi = check_map_field(mesh, sol.phi)
    omega = 1j * fem.d_zbar(mesh, frame.xi)  # (T, m, m)
    if dbar is None:
        dbar = dbar_frame(mesh, omega, eps1=eps1)
    if dbar.distance >= 1.0:
        raise ValueError("d-bar frame outside the Neumann-series radius; A not safely invertible")
    a_el = np.einsum("tki,tk->ti", frame.P_elem, fem.d_z(mesh, phi))
    alpha = fem.recover_nodal(mesh, a_el)
    d_alpha_el = np.einsum("tij,tj->ti", _zbar(frame.gauged), a_el)
    A_el = mesh.element_average(dbar.A)
    b_el = np.linalg.solve(A_el, a_el[..., None])[..., 0]
    d_beta_el = np.linalg.solve(A_el, (d_alpha_el - np.einsum("tij,tj->ti", fem.d_zbar(mesh, dbar.A), b_el))[..., None])[..., 0]
    beta = np.linalg.solve(dbar.A, alpha[..., None])[..., 0]
    mask = analysis_mask(mesh)
    d_alpha = fem.element_l2(mesh, d_alpha_el, mask)
    d_beta = fem.element_l2(mesh, d_beta_el, mask)
    eq_res = fem.element_l2(mesh, d_alpha_el - np.einsum("tij,tj->ti", omega, a_el), mask)
    dens = np.sum(np.abs(alpha) ** 2, axis=1)
    total = float(np.sum(mesh.areas * np.sum(np.abs(a_el) ** 2, axis=1)))
    r = np.linalg.norm(mesh.vertices, axis=1)
    nodes = 1.0 - r >= 2 * mesh.h
    sup = float(np.max((1 - r[nodes]) ** 2 * dens[nodes]) / total) if total > 0 else 0.0
    report = {
        "dbar_alpha": d_alpha,
        "dbar_beta": d_beta,
        "improvement": d_alpha / d_beta if d_beta > 0 else (np.inf if d_alpha > 0 else 1.0),
        "improve_factor": improve_factor,
        "improved": bool(d_beta * improve_factor <= d_alpha),
        "alpha_equation_residual": eq_res,
        "dbar_alpha_recovered": fem.element_l2(mesh, fem.d_zbar(mesh, alpha), mask),
        "dbar_beta_recovered": fem.element_l2(mesh, fem.d_zbar(mesh, beta), mask),
        "sup_ratio": sup,
    }
    return HolomorphicFactor(alpha, a_el, omega, beta, d_alpha, d_beta, eq_res, sup, dbar, report)
