"""Harmonic eigenmaps into ellipsoids: solvers, derived fields, symmetrization.

Both problems minimise the discrete Dirichlet energy with the nodal
constraint ``|Phi_v|_Lambda = 1`` enforced by the projection ``p`` after every
step:

* interior problem on the disk: all vertices constrained, boundary vertices
  fixed to the data;
* free-boundary (Steklov) problem: flat-boundary vertices (or the whole
  circle on the disk) constrained, optional Dirichlet data on the arc, the
  interior kept exactly discrete-harmonic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator

from . import ellipsoid as ell
from ._validation import check_is_fitted, check_map_field, check_mesh, nodal_data
from .ellipsoid import EllipsoidSpec, as_spec
from .meshpde import fem
from .meshpde.mesh import DiskMesh

CONSTRAINT_TOL = 1e-9
SOLVE_TOL = 1e-10
MAX_ITERS = 100_000
EXT_TOL = 1e-2


@dataclass
class EigenmapSolution:
    """Result of a constrained solve; arrays must be treated as read-only."""

    mesh: DiskMesh
    spec: EllipsoidSpec
    phi: np.ndarray
    problem: str
    fixed: np.ndarray
    constrained: np.ndarray
    iterations: int
    converged: bool
    residual_interior: float
    residual_boundary: float
    energy_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    message: str = ""

    @property
    def m(self) -> int:
        return self.spec.m

    @cached_property
    def grad(self) -> np.ndarray:
        return fem.gradient(self.mesh, self.phi)

    @property
    def dirichlet_energy(self) -> float:
        """E(Phi) = 1/2 int |grad Phi|^2."""
        return 0.5 * fem.dirichlet_energy(self.mesh, self.phi)

    @property
    def energy(self) -> float:
        """int |grad Phi|^2, the quantity used by all smallness gates."""
        return fem.dirichlet_energy(self.mesh, self.phi)

    @property
    def constraint_error(self) -> float:
        c = self.constrained | (self.fixed if self.problem == "interior" else False)
        q = np.sum(self.spec.lambdas * self.phi[c] ** 2, axis=1)
        return float(np.abs(q - 1.0).max()) if q.size else 0.0

    @cached_property
    def fields(self) -> "DerivedFields":
        return derived_fields(self)

    @property
    def beta(self):
        return self.fields.beta

    @property
    def nu(self):
        return self.fields.nu

    @property
    def omega(self):
        return self.fields.omega

    @cached_property
    def steklov_density(self) -> np.ndarray:
        """e^u = d_nu Phi . Phi at the constrained boundary vertices (nan elsewhere)."""
        out = np.full(self.mesh.n_vertices, np.nan)
        if self.problem != "free_boundary":
            return out
        tag = "flat" if self.mesh.domain == "half_disk" else "circle"
        b = self.mesh.boundary_lumped(tag)
        flux = self.mesh.stiffness @ self.phi
        c = self.constrained
        out[c] = np.sum(flux[c] * self.phi[c], axis=1) / b[c]
        return out

    def padded(self, extra_lambdas) -> "EigenmapSolution":
        """Same map followed by identically-zero extra coordinates."""
        k = len(np.ravel(extra_lambdas))
        phi = np.hstack([self.phi, np.zeros((self.mesh.n_vertices, k))])
        return EigenmapSolution(
            self.mesh, self.spec.padded(extra_lambdas), phi, self.problem, self.fixed, self.constrained,
            self.iterations, self.converged, self.residual_interior, self.residual_boundary,
            list(self.energy_history), list(self.residual_history), self.message,
        )


# ------------------------------------------------------------------ helpers
def _tangent(phi_c, g_c, lam):
    n = lam * phi_c
    return g_c - (np.sum(g_c * n, axis=1) / np.sum(n * n, axis=1))[:, None] * n


def _project_rows(phi, rows, E):
    if rows.size:
        phi[rows] = ell.proj_p(phi[rows], E)
    return phi


def _energy(mesh, phi):
    return 0.5 * fem.dirichlet_energy(mesh, phi)


def _dual_norm(lu, g):
    if g.size == 0:
        return 0.0
    return float(np.sqrt(max(np.sum(g * lu.solve(np.ascontiguousarray(g))), 0.0)))


def _interior_factor(mesh):
    return fem._dirichlet_factor(mesh, mesh.boundary_mask)


def _residuals(mesh, E, phi, problem, constrained):
    """Dual-norm interior residual and boundary L2 residual of the discrete equations."""
    lam = E.lambdas
    flux = mesh.stiffness @ phi
    interior = np.flatnonzero(mesh.interior_mask)
    g = flux[interior]
    if problem == "interior":
        g = _tangent(phi[interior], g, lam)
    _, lu = _interior_factor(mesh)
    r_int = _dual_norm(lu, g)
    r_bnd = 0.0
    if problem == "free_boundary":
        tag = "flat" if mesh.domain == "half_disk" else "circle"
        b = mesh.boundary_lumped(tag)
        c = np.flatnonzero(constrained)
        if c.size:
            t = _tangent(phi[c], flux[c], lam) / b[c][:, None]
            r_bnd = float(np.sqrt(np.sum(b[c][:, None] * t * t)))
    return r_int, r_bnd


def _descent(mesh, E, phi, fixed, constrained, harmonic, tol, max_iter, preconditioner, armijo=1e-4):
    """Projected (optionally H1-preconditioned) gradient descent with Armijo backtracking."""
    lam = E.lambdas
    K = mesh.stiffness
    U = np.flatnonzero(~fixed)
    C = np.flatnonzero(constrained)
    cpos = np.searchsorted(U, C)  # rows of constrained vertices inside U
    free = ~fixed & ~constrained
    if preconditioner == "h1":
        A = K[U][:, U]
        if not fixed.any():
            A = A + mesh.mass[U][:, U]
        lu = spla.splu(A.tocsc())
        tau0, tau_max = 1.0, 4.0
    elif preconditioner == "l2":
        lu = None
        tau0, tau_max = mesh.h**2 / 4.0, np.inf
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    hfac = fem._dirichlet_factor(mesh, ~free) if (harmonic and free.any()) else None

    def harmonize(p):
        if hfac is None:
            return p
        fr, flu = hfac
        q = p.copy()
        q[fr] = 0.0
        p = p.copy()
        p[fr] = flu.solve(np.ascontiguousarray(-(K @ q)[fr]))
        return p

    phi = _project_rows(phi.copy(), C, E)
    phi = harmonize(phi)
    e0 = _energy(mesh, phi)
    energies, residuals = [e0], []
    tau = tau0
    converged, message, it = False, "", 0
    eps = np.finfo(float).eps
    for it in range(1, max_iter + 1):
        g = (K @ phi)[U]
        g[cpos] = _tangent(phi[C], g[cpos], lam)
        d = lu.solve(np.ascontiguousarray(g)) if lu is not None else g / mesh.lumped_mass[U][:, None]
        res = float(np.sqrt(max(np.sum(g * d), 0.0)))
        residuals.append(res)
        if res <= tol:
            converged = True
            break
        d[cpos] = _tangent(phi[C], d[cpos], lam)
        direction = -d
        slope = float(np.sum(g * direction))
        # energy resolution set by the nodal round-off of the projection
        noise = 64 * eps * float(np.sum(np.linalg.norm(phi, axis=1) * np.linalg.norm(K @ phi, axis=1)))
        if slope >= 0:
            direction, slope = -g, -float(np.sum(g * g))
        t = min(tau, tau_max)
        accepted = False
        while t > 1e-14 * tau0:
            trial = phi.copy()
            trial[U] += t * direction
            trial = _project_rows(trial, C, E)
            # energy change as 1/2 (b - a) K (b + a): no cancellation near the minimum
            step = trial - phi
            terms = step * (K @ (trial + phi))
            de = 0.5 * float(np.sum(terms))
            if de <= armijo * t * slope:
                accepted = True
                break
            # below the resolution of the energy (projection round-off): fall back to residual decrease
            if abs(de) <= noise:
                gt = (K @ trial)[U]
                gt[cpos] = _tangent(trial[C], gt[cpos], lam)
                dt = lu.solve(np.ascontiguousarray(gt)) if lu is not None else gt / mesh.lumped_mass[U][:, None]
                if float(np.sqrt(max(np.sum(gt * dt), 0.0))) < res:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            message = "step-size collapse"
            break
        phi = harmonize(trial)
        e0 = _energy(mesh, phi)
        energies.append(e0)
        tau = 2.0 * t
    else:
        message = "max_iters reached"
    if converged:
        message = "converged"
    return phi, it, converged, message, energies, residuals


def _trace_newton(mesh, E, phi, fixed, constrained, tol, max_iter, armijo=1e-4):
    """Riemannian Newton on the boundary trace; the interior is the exact discrete harmonic extension.

    The energy of the harmonic extension is 1/2 phi_B^T S phi_B with S the
    discrete Dirichlet-to-Neumann (Schur complement) matrix.  The Hessian
    along the constraint is S - diag(mu_v Lambda) (mu the nodal Lagrange
    multipliers), with its spectrum made positive before solving.
    """
    lam = E.lambdas
    m = E.m
    K = mesh.stiffness.tocsr()
    B = np.flatnonzero(fixed | constrained)
    I = np.flatnonzero(~(fixed | constrained))
    C_in_B = np.flatnonzero(constrained[B])
    KBB = K[B][:, B].toarray()
    if I.size:
        KIB = K[I][:, B]
        lu_I = spla.splu(K[I][:, I].tocsc())
        X = lu_I.solve(KIB.toarray())  # harmonic extension operator, (|I|, |B|)
        S = KBB - KIB.T @ X
    else:
        X = np.zeros((0, len(B)))
        S = KBB
    S = 0.5 * (S + S.T)
    SCC = S[np.ix_(C_in_B, C_in_B)]
    nC = len(C_in_B)
    eps = np.finfo(float).eps

    def extend(tr):
        out = np.empty((mesh.n_vertices, m))
        out[B] = tr
        out[I] = -X @ tr
        return out

    def tangent_unit(trC):
        n = lam * trC
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    tr = phi[B].copy()
    tr[C_in_B] = ell.proj_p(tr[C_in_B], E)
    e0 = 0.5 * float(np.sum(tr * (S @ tr)))
    energies, residuals = [e0], []
    converged, message, it = False, "", 0
    for it in range(1, max_iter + 1):
        flux = S @ tr
        fC = flux[C_in_B]
        g = _tangent(tr[C_in_B], fC, lam)
        n = tangent_unit(tr[C_in_B])
        mu = np.sum(fC * lam * tr[C_in_B], axis=1) / np.sum((lam * tr[C_in_B]) ** 2, axis=1)
        # Hessian in node-major ordering (v, k)
        H = np.kron(SCC, np.eye(m)) - np.diag(np.repeat(mu, m) * np.tile(lam, nC))
        Pm = np.zeros((nC * m, nC * m))
        Nn = np.zeros((nC * m, nC * m))
        for j in range(nC):
            sl = slice(j * m, (j + 1) * m)
            Pm[sl, sl] = np.eye(m) - np.outer(n[j], n[j])
            Nn[sl, sl] = np.outer(n[j], n[j])
        Ht = Pm @ H @ Pm
        scale = max(float(np.abs(np.diag(Ht)).max()), 1e-300)
        w, V = np.linalg.eigh(0.5 * (Ht + Ht.T) + scale * Nn)
        w = np.maximum(np.abs(w), 1e-10 * scale)
        gv = g.reshape(-1)
        sol = V @ ((V.T @ gv) / w)
        res = float(np.sqrt(max(gv @ sol, 0.0)))
        residuals.append(res)
        if res <= tol:
            converged = True
            break
        d = -(Pm @ sol).reshape(nC, m)
        slope = float(np.sum(g * d))
        noise = 64 * eps * float(np.sum(np.linalg.norm(tr, axis=1) * np.linalg.norm(flux, axis=1)))
        t, accepted = 1.0, False
        while t > 1e-14:
            trial = tr.copy()
            trial[C_in_B] = ell.proj_p(tr[C_in_B] + t * d, E)
            step = trial - tr
            terms = step * (S @ (trial + tr))
            de = 0.5 * float(np.sum(terms))
            if de <= armijo * t * slope:
                accepted = True
                break
            if abs(de) <= noise:
                gt = _tangent(trial[C_in_B], (S @ trial)[C_in_B], lam).reshape(-1)
                if float(np.sqrt(max(gt @ (V @ ((V.T @ gt) / w)), 0.0))) < res:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            message = "step-size collapse"
            break
        tr = trial
        e0 = 0.5 * float(np.sum(tr * (S @ tr)))
        energies.append(e0)
    else:
        message = "max_iters reached"
    if converged:
        message = "converged"
    return extend(tr), it, converged, message, energies, residuals


def _initial_guess(mesh, E, data, fixed, constrained, free_bc="dirichlet"):
    """Harmonic extension of the fixed data, then nodal projection."""
    phi = data.copy()
    if free_bc == "dirichlet":
        phi = fem.solve_dirichlet_load(mesh, np.zeros_like(phi), phi, fixed_mask=fixed)
    C = np.flatnonzero(constrained)
    small = np.linalg.norm(phi[C], axis=1) < 1e-8
    if small.any():
        raise ValueError("initial guess vanishes at constrained vertices; pass phi0")
    return _project_rows(phi, C, E)


# ------------------------------------------------------------------ solvers
def solve_interior(mesh: DiskMesh, E, boundary_data, phi0=None, tol: float = SOLVE_TOL, max_iter: int = MAX_ITERS,
                   preconditioner: str = "h1", constraint_tol: float = CONSTRAINT_TOL) -> EigenmapSolution:
    """Minimise the Dirichlet energy with |Phi|_Lambda = 1 at every vertex and Phi = data on the circle."""
    check_mesh(mesh, ("disk",))
    E = as_spec(E)
    bmask = mesh.boundary_mask
    data = nodal_data(mesh, boundary_data, bmask, E.m, "boundary_data")
    off = np.abs(np.sum(E.lambdas * data[bmask] ** 2, axis=1) - 1.0)
    if off.max() > constraint_tol:
        raise ValueError(f"boundary data off the ellipsoid by {off.max():.3e}")
    fixed = bmask.copy()
    constrained = ~bmask
    if phi0 is None:
        phi = _initial_guess(mesh, E, data, fixed, constrained)
    else:
        phi = check_map_field(mesh, phi0, E.m, "phi0").copy()
        phi[bmask] = data[bmask]
    phi, it, conv, msg, en, res = _descent(mesh, E, phi, fixed, constrained, False, tol, max_iter, preconditioner)
    r_int, r_bnd = _residuals(mesh, E, phi, "interior", constrained)
    return EigenmapSolution(mesh, E, phi, "interior", fixed, constrained, it, conv, r_int, r_bnd, en, res, msg)


def solve_free_boundary(mesh: DiskMesh, E, arc_data=None, phi0=None, tol: float = SOLVE_TOL, max_iter: int = MAX_ITERS,
                        preconditioner: str = "newton", constraint_tol: float = CONSTRAINT_TOL) -> EigenmapSolution:
    """Free-boundary harmonic map: harmonic inside, trace on E_sigma along the free boundary.

    On the half-disk the free boundary is the flat segment and ``arc_data``
    (Dirichlet values on the circle-tagged vertices, corners included) is
    required.  On the disk the whole circle is free and ``phi0`` is required.
    """
    check_mesh(mesh)
    E = as_spec(E)
    if mesh.domain == "half_disk":
        if arc_data is None:
            raise ValueError("half-disk free-boundary problem needs arc data")
        fixed = mesh.circle_mask.copy()
        constrained = mesh.flat_mask & ~fixed
        data = nodal_data(mesh, arc_data, fixed, E.m, "arc_data")
    else:
        fixed = np.zeros(mesh.n_vertices, bool)
        constrained = mesh.circle_mask.copy()
        data = np.zeros((mesh.n_vertices, E.m))
        if phi0 is None:
            raise ValueError("disk free-boundary problem needs an initial map phi0")
    if phi0 is None:
        # mixed extension: arc values, natural condition on the free segment
        phi = fem.solve_dirichlet_load(mesh, np.zeros_like(data), data, fixed_mask=fixed)
        C = np.flatnonzero(constrained)
        if np.any(np.linalg.norm(phi[C], axis=1) < 1e-8):
            raise ValueError("initial guess vanishes on the free boundary; pass phi0")
        phi = _project_rows(phi, C, E)
    else:
        phi = check_map_field(mesh, phi0, E.m, "phi0").copy()
        phi[fixed] = data[fixed]
        C = np.flatnonzero(constrained)
        phi = _project_rows(phi, C, E)
    if constrained.any():
        off = np.abs(np.sum(E.lambdas * phi[constrained] ** 2, axis=1) - 1.0)
        if off.max() > constraint_tol:
            raise ValueError("constrained boundary values could not be placed on the ellipsoid")
    if preconditioner == "newton":
        phi, it, conv, msg, en, res = _trace_newton(mesh, E, phi, fixed, constrained, tol, max_iter)
    else:
        phi, it, conv, msg, en, res = _descent(mesh, E, phi, fixed, constrained, True, tol, max_iter, preconditioner)
    r_int, r_bnd = _residuals(mesh, E, phi, "free_boundary", constrained)
    sol = EigenmapSolution(mesh, E, phi, "free_boundary", fixed, constrained, it, conv, r_int, r_bnd, en, res, msg)
    dens = sol.steklov_density[constrained]
    if dens.size and np.any(dens <= 0):
        sol.message += "; non-positive Steklov density"
    return sol


# ------------------------------------------------------------------ derived fields
@dataclass
class DerivedFields:
    """Element and nodal quantities built from a solved map.

    Gradients of the unit normal are taken tangentially,
    ``grad nu_T = (I - nu_T nu_T^T) grad(P1 interpolant of nu)`` with ``nu_T``
    the normalised centroid value, so that ``|Omega|^2 = 2 |grad nu|^2``
    holds element by element.
    """

    beta: np.ndarray  # (T,)
    nu: np.ndarray  # (N, m) nodal unit normal
    nu_elem: np.ndarray  # (T, m)
    grad_nu: np.ndarray  # (T, m, 2) tangential
    omega: np.ndarray  # (T, m, m, 2), Omega = nu grad nu^T - grad nu nu^T
    f: np.ndarray  # (N,) |Psi|_Lambda = |Lambda Phi|
    omega_sq: float
    grad_nu_sq: float

    @property
    def omega_identity_gap(self) -> float:
        den = 2.0 * self.grad_nu_sq
        return abs(self.omega_sq - den) / den if den > 0 else abs(self.omega_sq)


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def derived_fields(sol: EigenmapSolution) -> DerivedFields:
    mesh, lam, phi = sol.mesh, sol.spec.lambdas, sol.phi
    grad = sol.grad
    lphi_T = lam * mesh.element_average(phi)
    beta = np.sum(lam[:, None] * grad**2, axis=(1, 2)) / np.sum(lphi_T**2, axis=1)
    nu = _unit(lam * phi)
    nu_T = _unit(mesh.element_average(nu))
    gn = fem.gradient(mesh, nu)
    gn = gn - nu_T[:, :, None] * np.einsum("ti,tid->td", nu_T, gn)[:, None, :]
    omega = nu_T[:, :, None, None] * gn[:, None, :, :] - gn[:, :, None, :] * nu_T[:, None, :, None]
    a = mesh.areas
    omega_sq = float(np.sum(a * np.sum(omega**2, axis=(1, 2, 3))))
    grad_nu_sq = float(np.sum(a * np.sum(gn**2, axis=(1, 2))))
    f = np.linalg.norm(lam * phi, axis=1)
    return DerivedFields(beta, nu, nu_T, gn, omega, f, omega_sq, grad_nu_sq)


def riviere_potential(sol: EigenmapSolution) -> np.ndarray:
    """Potential of the equation div grad Phi = Omega_R . grad Phi, i.e. Omega_R = -Omega."""
    return -sol.fields.omega


def omega_apply(omega, grad) -> np.ndarray:
    """(Omega . grad Phi)_i = sum_j sum_d Omega_ij,d d_d Phi_j per element."""
    return np.einsum("tijd,tjd->ti", omega, grad)


def equation_consistency(sol: EigenmapSolution) -> dict:
    """Weak residuals of Delta Phi = beta Lambda Phi and Delta Phi = Omega . grad Phi."""
    mesh, lam = sol.mesh, sol.spec.lambdas
    _, lu = _interior_factor(mesh)
    rows = np.flatnonzero(mesh.interior_mask)
    flux = mesh.stiffness @ sol.phi
    mb = mesh.weighted_mass(sol.fields.beta)
    r1 = (flux - mb @ (lam * sol.phi))[rows]
    r2 = (flux - fem.element_load(mesh, omega_apply(sol.fields.omega, sol.grad)))[rows]
    scale = np.sqrt(max(sol.energy, 1e-300))
    return {"beta_form": _dual_norm(lu, r1) / scale, "omega_form": _dual_norm(lu, r2) / scale}


# ------------------------------------------------------------------ symmetrization
@dataclass
class SymmetrizedExtension:
    mesh: DiskMesh
    u_hat: np.ndarray
    residual: float
    bound_ratio: float
    min_sigma_norm_sq: float
    continuity_gap: float


def symmetrized_extension(sol: EigenmapSolution, allow_outside: bool = False) -> SymmetrizedExtension:
    """u on the upper half, s o u o rho on the lower half, rho(x, y) = (x, -y).

    The weak residual of Delta u_hat = F, with F = 0 on the upper half and
    F = -D^2 s(u o rho)(grad(u o rho), grad(u o rho)) on the lower half, is
    measured in the dual norm of interior test functions of the full disk.
    """
    if sol.mesh.domain != "half_disk":
        raise ValueError("symmetrization needs a half-disk solution")
    E, u, half = sol.spec, sol.phi, sol.mesh
    q = np.sum(E.sigma * u * u, axis=1)
    if q.min() < 0.5 and not allow_outside:
        raise ValueError(f"|u|_sigma^2 = {q.min():.3f} < 1/2: outside the validity regime of the reflection")
    full = half.reflected()
    upper = np.flatnonzero(half.vertices[:, 1] > 1e-12)
    u_hat = np.vstack([u, ell.invol_s(u[upper], E)])
    flat = half.flat_mask
    gap = float(np.abs(ell.invol_s(u[flat], E) - u[flat]).max()) if flat.any() else 0.0
    # lower elements are the mirror copies (second half of the triangle list)
    T = half.n_triangles
    grad_u = fem.gradient(half, u)  # (T, m, 2) on the upper copy
    grad_rho = grad_u * np.array([1.0, -1.0])  # gradient of u o rho on the mirror element
    u_T = half.element_average(u)
    F = np.zeros((full.n_triangles, E.m))
    F[T:] = -ell.hess_s_contract(u_T, E, grad_rho)
    flux = full.stiffness @ u_hat - fem.element_load(full, F)
    rows = np.flatnonzero(full.interior_mask)
    _, lu = _interior_factor(full)
    res = _dual_norm(lu, flux[rows]) / np.sqrt(max(fem.dirichlet_energy(full, u_hat), 1e-300))
    g_hat = fem.gradient(full, u_hat)[T:]
    lap_sq = np.sum(F[T:] ** 2, axis=1)
    grad4 = np.sum(g_hat**2, axis=(1, 2)) ** 2
    K3 = ell.gradient_bound_constant(E.elongation) ** 3
    ok = grad4 > 0
    ratio = float(np.max(lap_sq[ok] / (K3 * grad4[ok]))) if ok.any() else 0.0
    return SymmetrizedExtension(full, u_hat, float(res), ratio, float(q.min()), gap)


# ------------------------------------------------------------------ weighted identity
def weighted_identity_check(sol: EigenmapSolution) -> tuple[float, float, float]:
    """Both sides of 1/2 int f |Omega~|^2 + int |grad f|^2 / f = int beta |Lambda Psi|^2 / f.

    Psi = Lambda^{1/2} Phi (unit sphere valued), f = |Psi|_Lambda, nodal f
    differentiated as a P1 field; element quantities use the normalised
    centroid value of Psi and the tangential part of grad Psi.  The norm of
    Lambda Psi on the right is Euclidean, which is what the pointwise
    algebra produces.
    """
    mesh, lam = sol.mesh, sol.spec.lambdas
    psi = np.sqrt(lam) * sol.phi
    f = np.sqrt(np.sum(lam * psi * psi, axis=1))
    if f.min() < 1e-12:
        raise ValueError("|Psi|_Lambda vanishes somewhere")
    psi_T = _unit(mesh.element_average(psi))
    g = fem.gradient(mesh, psi)
    g = g - psi_T[:, :, None] * np.einsum("ti,tid->td", psi_T, g)[:, None, :]
    f_T = np.sqrt(np.sum(lam * psi_T**2, axis=1))
    lpsi = lam * psi_T
    ot = (lpsi[:, :, None, None] * g[:, None, :, :] - g[:, :, None, :] * lpsi[:, None, :, None]) / f_T[:, None, None, None] ** 2
    gf = fem.gradient(mesh, f)
    a = mesh.areas
    lhs = float(np.sum(a * (0.5 * f_T * np.sum(ot**2, axis=(1, 2, 3)) + np.sum(gf**2, axis=1) / f_T)))
    beta_T = np.sum(g**2, axis=(1, 2)) / f_T**2
    rhs = float(np.sum(a * beta_T * np.sum(lpsi**2, axis=1) / f_T))
    gap = abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs - rhs)
    return lhs, rhs, gap


# ------------------------------------------------------------------ estimators
def _locate(mesh: DiskMesh, points, chunk: int = 512):
    """Containing triangle and barycentric coordinates for each point."""
    pts = np.atleast_2d(np.asarray(points, float))
    P = mesh.vertices[mesh.triangles]
    tri = np.empty(len(pts), dtype=np.int64)
    bary = np.empty((len(pts), 3))
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    for s in range(0, len(pts), chunk):
        q = pts[s : s + chunk, None, :] - P[None, :, 0]
        l1 = (q[..., 0] * d2[:, 1] - q[..., 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * q[..., 1] - d1[:, 1] * q[..., 0]) / det
        l0 = 1.0 - l1 - l2
        worst = np.minimum(np.minimum(l0, l1), l2)
        k = np.argmax(worst, axis=1)
        if np.any(worst[np.arange(len(k)), k] < -1e-9):
            raise ValueError("point outside the mesh")
        r = np.arange(len(k))
        tri[s : s + chunk] = k
        bary[s : s + chunk] = np.stack([l0[r, k], l1[r, k], l2[r, k]], axis=1)
    return tri, bary


class _EigenmapEstimator(BaseEstimator):
    def predict(self, points) -> np.ndarray:
        """P1 interpolation of the fitted map at arbitrary points of the domain."""
        check_is_fitted(self, "solution_")
        tri, bary = _locate(self.solution_.mesh, points)
        vals = self.solution_.phi[self.solution_.mesh.triangles[tri]]
        return np.einsum("pk,pkm->pm", bary, vals)

    def _publish(self, sol):
        self.solution_ = sol
        self.phi_ = sol.phi
        self.energy_ = sol.energy
        self.n_iter_ = sol.iterations
        self.converged_ = sol.converged
        return self


class InteriorEigenmapSolver(_EigenmapEstimator):
    """Estimator wrapper around :func:`solve_interior`.

    ``fit(mesh, boundary_data)`` solves the constrained minimisation on a disk
    mesh; ``boundary_data`` is a callable of the circle vertices, a constant
    point, or an array with one row per boundary (or per mesh) vertex.
    """

    def __init__(self, lambdas=(1.0, 1.0), tol=SOLVE_TOL, max_iter=MAX_ITERS, preconditioner="h1", constraint_tol=CONSTRAINT_TOL):
        self.lambdas = lambdas
        self.tol = tol
        self.max_iter = max_iter
        self.preconditioner = preconditioner
        self.constraint_tol = constraint_tol

    def fit(self, mesh, boundary_data, phi0=None):
        sol = solve_interior(mesh, EllipsoidSpec(self.lambdas), boundary_data, phi0=phi0, tol=self.tol,
                             max_iter=self.max_iter, preconditioner=self.preconditioner, constraint_tol=self.constraint_tol)
        return self._publish(sol)


class FreeBoundaryEigenmapSolver(_EigenmapEstimator):
    """Estimator wrapper around :func:`solve_free_boundary`."""

    def __init__(self, sigma=(1.0, 1.0), tol=SOLVE_TOL, max_iter=MAX_ITERS, preconditioner="newton", constraint_tol=CONSTRAINT_TOL):
        self.sigma = sigma
        self.tol = tol
        self.max_iter = max_iter
        self.preconditioner = preconditioner
        self.constraint_tol = constraint_tol

    def fit(self, mesh, arc_data=None, phi0=None):
        sol = solve_free_boundary(mesh, EllipsoidSpec(self.sigma), arc_data=arc_data, phi0=phi0, tol=self.tol,
                                  max_iter=self.max_iter, preconditioner=self.preconditioner, constraint_tol=self.constraint_tol)
        self._publish(sol)
        self.steklov_density_ = sol.steklov_density
        return self
