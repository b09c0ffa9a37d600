"""P1 finite-element solvers on a :class:`DiskMesh`.

Sign convention: ``Delta = -div grad`` (positive Laplacian).  The weak form
of ``Delta u = f`` with outward normal derivative ``g`` is
``int grad u . grad v = int f v + int_boundary g v``.
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DiskMesh

LIN_TOL = 1e-10
EIG_TOL = 1e-8

_lock = threading.Lock()


# ---------------------------------------------------------------- derivatives
def gradient(mesh: DiskMesh, f) -> np.ndarray:
    """Per-element gradient of a nodal field; shape ``(T, *f.shape[1:], 2)``.

    Written in difference form, so constants have exactly zero gradient.
    """
    f = np.asarray(f)
    vals = f[mesh.triangles]  # (T, 3, ...)
    G = mesh.basis_gradients[:, 1:]  # (T, 2, 2); the first hat gradient is minus the sum
    T = len(vals)
    d = vals[:, 1:] - vals[:, :1]
    out = np.swapaxes(d.reshape(T, 2, -1), 1, 2) @ G.astype(vals.dtype)  # batched (K, 2) @ (2, 2)
    return out.reshape((T,) + f.shape[1:] + (2,))


def d_z(mesh: DiskMesh, f) -> np.ndarray:
    """f_z = (f_x - i f_y) / 2 per element."""
    g = gradient(mesh, f)
    return 0.5 * (g[..., 0] - 1j * g[..., 1])


def d_zbar(mesh: DiskMesh, f) -> np.ndarray:
    """f_zbar = (f_x + i f_y) / 2 per element."""
    g = gradient(mesh, f)
    return 0.5 * (g[..., 0] + 1j * g[..., 1])


def perp(g) -> np.ndarray:
    """Rotated gradient (-g_y, g_x) acting on the last axis."""
    g = np.asarray(g)
    return np.stack([-g[..., 1], g[..., 0]], axis=-1)


def dirichlet_energy(mesh: DiskMesh, f) -> float:
    """sum_T area |grad f|^2 (no factor 1/2)."""
    g = gradient(mesh, f)
    return float(np.sum(mesh.areas * np.sum(np.abs(g) ** 2, axis=tuple(range(1, g.ndim)))))


def element_l2(mesh: DiskMesh, g, mask=None) -> float:
    """L2 norm of piecewise-constant data (all trailing axes summed)."""
    g = np.asarray(g)
    w = mesh.areas if mask is None else mesh.areas * mask
    return float(np.sqrt(np.sum(w * np.sum(np.abs(g.reshape(len(g), -1)) ** 2, axis=1))))


def recover_nodal(mesh: DiskMesh, g) -> np.ndarray:
    """Area-weighted average of element data at the vertices."""
    g = np.asarray(g)
    flat = g.reshape(len(g), -1)
    w = mesh.areas[:, None] * flat
    out = np.zeros((mesh.n_vertices, flat.shape[1]), dtype=np.result_type(g, float))
    wsum = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], w)
        np.add.at(wsum, mesh.triangles[:, k], mesh.areas)
    return (out / wsum[:, None]).reshape((mesh.n_vertices,) + g.shape[1:])


# ---------------------------------------------------------------- loads
def element_load(mesh: DiskMesh, g) -> np.ndarray:
    """int g phi_i for piecewise-constant g; shape ``(N, *g.shape[1:])``."""
    g = np.asarray(g)
    w = (mesh.areas / 3.0).reshape((-1,) + (1,) * (g.ndim - 1)) * g
    out = np.zeros((mesh.n_vertices,) + g.shape[1:], dtype=w.dtype)
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], w)
    return out


def flux_load(mesh: DiskMesh, F) -> np.ndarray:
    """int F . grad phi_i for piecewise-constant vector data ``(T, ..., 2)``."""
    F = np.asarray(F)
    G = mesh.basis_gradients
    T = len(F)
    local = G.astype(F.dtype) @ np.swapaxes(F.reshape(T, -1, 2), 1, 2)  # (T, 3, K)
    local = (local * mesh.areas[:, None, None]).reshape((T, 3) + F.shape[1:-1])
    out = np.zeros((mesh.n_vertices,) + F.shape[1:-1], dtype=local.dtype)
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], local[:, k])
    return out


# ---------------------------------------------------------------- factorizations
def _cached(mesh: DiskMesh, key, build):
    with _lock:
        hit = mesh._cache.get(key)
        if hit is None:
            hit = build()
            mesh._cache[key] = hit
    return hit


def _dirichlet_factor(mesh: DiskMesh, fixed_mask=None):
    fixed = mesh.boundary_mask if fixed_mask is None else np.asarray(fixed_mask, bool)
    key = ("dirichlet", fixed.tobytes())

    def build():
        free = np.flatnonzero(~fixed)
        Kff = mesh.stiffness[free][:, free].tocsc()
        return free, spla.splu(Kff)

    return _cached(mesh, key, build)


def _neumann_factor(mesh: DiskMesh):
    def build():
        # pin vertex 0; a compatible load gives an exact solution up to constants
        K = mesh.stiffness.tolil()
        K[0, :] = 0.0
        K[0, 0] = 1.0
        return spla.splu(K.tocsc())

    return _cached(mesh, ("neumann",), build)


def _apply_solve(lu, b):
    b = np.asarray(b)
    shape = b.shape
    flat = b.reshape(shape[0], -1)
    if np.iscomplexobj(flat):
        out = lu.solve(np.ascontiguousarray(flat.real)) + 1j * lu.solve(np.ascontiguousarray(flat.imag))
    else:
        out = lu.solve(np.ascontiguousarray(flat))
    return out.reshape(shape)


def solve_dirichlet_load(mesh: DiskMesh, load, values=None, fixed_mask=None) -> np.ndarray:
    """Solve K u = load on free vertices with u = values on fixed vertices."""
    load = np.asarray(load)
    free, lu = _dirichlet_factor(mesh, fixed_mask)
    u = np.zeros(load.shape, dtype=np.result_type(load, float)) if values is None else np.array(values, dtype=np.result_type(load, values, float))
    fixed = np.ones(mesh.n_vertices, bool)
    fixed[free] = False
    if values is None:
        u[fixed] = 0.0
        rhs = load[free]
    else:
        u_fixed = u.copy()
        u_fixed[free] = 0.0
        rhs = load[free] - _matvec(mesh.stiffness, u_fixed)[free]
    u[free] = _apply_solve(lu, rhs)
    return u


def _matvec(A, x):
    x = np.asarray(x)
    return (A @ x.reshape(x.shape[0], -1)).reshape(x.shape)


def solve_neumann_load(mesh: DiskMesh, load, tol: float = 1e-8, report: bool = True) -> np.ndarray:
    """Mean-zero solution of K u = load; incompatible loads are projected."""
    load = np.array(load, dtype=np.result_type(load, float))
    Ml = mesh.lumped_mass
    total = np.tensordot(np.ones(mesh.n_vertices), load, axes=(0, 0))
    scale = np.tensordot(np.ones(mesh.n_vertices), np.abs(load), axes=(0, 0)) + 1e-300
    if report and np.any(np.abs(total) > tol * scale):
        warnings.warn("incompatible Neumann data; projected onto the compatible subspace", RuntimeWarning, stacklevel=3)
    corr = Ml.reshape((-1,) + (1,) * (load.ndim - 1)) * (total / mesh.area)
    load = load - corr
    b = load.copy()
    b[0] = 0.0
    u = _apply_solve(_neumann_factor(mesh), b)
    mean = np.tensordot(Ml, u, axes=(0, 0)) / mesh.area
    return u - mean


def solve_poisson(mesh: DiskMesh, rhs=None, bc: str = "dirichlet", data=None, return_info: bool = False):
    """Solve Delta u = rhs (Delta = -div grad) with a Dirichlet or Neumann condition.

    Parameters
    ----------
    rhs : nodal array ``(N, ...)``, element array ``(T, ...)`` or scalar.
    bc : ``"dirichlet"`` (``data`` = boundary values, nodal array or callable
        of the vertex array, default 0) or ``"neumann"`` (``data`` = outward
        normal derivative at boundary vertices, default 0; mean-zero output).
    """
    N, T = mesh.n_vertices, mesh.n_triangles
    if rhs is None:
        rhs = 0.0
    rhs = np.asarray(rhs, dtype=np.result_type(rhs, float))
    if rhs.ndim == 0:
        load = element_load(mesh, np.full(T, float(rhs)))
    elif rhs.shape[0] == N and N != T:
        load = _matvec(mesh.mass, rhs)
    elif rhs.shape[0] == T:
        load = element_load(mesh, rhs)
    else:
        raise ValueError("rhs must be nodal or per-element")
    if callable(data):
        data = np.asarray(data(mesh.vertices), dtype=float)
    if bc == "dirichlet":
        vals = None
        if data is not None:
            data = np.asarray(data, dtype=float)
            vals = np.zeros(load.shape, dtype=np.result_type(load, data))
            bm = mesh.boundary_mask
            vals[bm] = data[bm] if data.shape[0] == N else data
        u = solve_dirichlet_load(mesh, load, vals)
        res_rows = mesh.interior_mask
    elif bc == "neumann":
        if data is not None:
            load = load + _matvec(mesh.boundary_mass(), np.asarray(data, dtype=float))
        u = solve_neumann_load(mesh, load)
        res_rows = np.ones(N, bool)
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    if not return_info:
        return u
    r = _matvec(mesh.stiffness, u) - load
    if bc == "neumann":
        r = r - mesh.lumped_mass.reshape((-1,) + (1,) * (r.ndim - 1)) * (np.sum(r, axis=0) / mesh.area)
    # relative to the size of the terms that cancel, so zero loads are handled
    scale = max(np.linalg.norm(load[res_rows]), np.linalg.norm(_matvec(abs(mesh.stiffness), np.abs(u))[res_rows]), 1e-300)
    rel = float(np.linalg.norm(r[res_rows]) / scale)
    return u, {"residual": rel}


# ---------------------------------------------------------------- Hodge / Wente
@dataclass
class HodgeDecomposition:
    D: np.ndarray
    E: np.ndarray
    H: np.ndarray
    residual: np.ndarray
    norms: dict

    @property
    def pythagoras_defect(self) -> float:
        n = self.norms
        return abs(n["F"] - n["D"] - n["E"] - n["H"]) / max(n["F"], 1e-300)


def hodge_decompose(mesh: DiskMesh, F) -> HodgeDecomposition:
    """F = grad D + perp grad E + perp grad H, D = E = 0 on the boundary, H discrete harmonic.

    ``F`` is piecewise constant with shape ``(T, 2)`` or ``(T, ..., 2)``.
    The three parts are mutually L2-orthogonal by construction; what is left
    over is returned as ``residual``.
    """
    F = np.asarray(F, dtype=float)
    D = solve_dirichlet_load(mesh, flux_load(mesh, F))
    R = F - gradient(mesh, D)
    E = solve_dirichlet_load(mesh, flux_load(mesh, -perp(R)))
    # perp grad w . R = grad w . (-perp R)
    R2 = R - perp(gradient(mesh, E))
    H = solve_neumann_load(mesh, flux_load(mesh, -perp(R2)), report=False)
    res = R2 - perp(gradient(mesh, H))
    sq = lambda g: element_l2(mesh, g) ** 2  # noqa: E731
    norms = {"F": sq(F), "D": sq(gradient(mesh, D)), "E": sq(gradient(mesh, E)), "H": sq(gradient(mesh, H)), "residual": sq(res)}
    return HodgeDecomposition(D, E, H, res, norms)


@dataclass
class WenteResult:
    phi: np.ndarray
    sup_ratio: float
    grad_ratio: float


def jacobian_density(mesh: DiskMesh, a, b) -> np.ndarray:
    """perp grad a . grad b per element."""
    return np.sum(perp(gradient(mesh, a)) * gradient(mesh, b), axis=-1)


def wente_solve(mesh: DiskMesh, a, b, bc: str = "dirichlet0") -> WenteResult:
    """Solve Delta phi = perp grad a . grad b and report the Wente ratios."""
    J = jacobian_density(mesh, a, b)
    load = element_load(mesh, J)
    if bc == "dirichlet0":
        phi = solve_dirichlet_load(mesh, load)
    elif bc == "neumann0_meanzero":
        phi = solve_neumann_load(mesh, load, report=False)
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    ga = np.sqrt(dirichlet_energy(mesh, a))
    gb = np.sqrt(dirichlet_energy(mesh, b))
    den = ga * gb
    if den == 0.0:
        return WenteResult(phi, 0.0, 0.0)
    return WenteResult(phi, float(np.abs(phi).max() / den), float(np.sqrt(dirichlet_energy(mesh, phi)) / den))


# ---------------------------------------------------------------- eigenproblems
def generalized_eig(K, Mw, k: int, dense_limit: int = 2500, tol: float = EIG_TOL):
    """Smallest k eigenpairs of K phi = lam Mw phi, Mw-orthonormal, ascending."""
    n = K.shape[0]
    if k < 1 or k > n:
        raise ValueError("eigenpair count out of range")
    Md = Mw.toarray() if sp.issparse(Mw) else np.asarray(Mw)
    try:
        np.linalg.cholesky(Md)
    except np.linalg.LinAlgError as exc:
        raise ValueError("weight matrix is not positive definite") from exc
    Kd = K.toarray() if sp.issparse(K) else np.asarray(K)
    if n <= dense_limit or k >= n - 1:
        lam, vec = sla.eigh(Kd, Md, subset_by_index=[0, k - 1])
    else:
        lam, vec = spla.eigsh(sp.csc_matrix(K), k=k, M=sp.csc_matrix(Mw), sigma=-1e-6, which="LM", tol=1e-12)
        order = np.argsort(lam)
        lam, vec = lam[order], vec[:, order]
        vec = vec / np.sqrt(np.einsum("ik,ij,jk->k", vec, Md, vec))
    res = np.linalg.norm(Kd @ vec - Md @ vec * lam, axis=0) / np.maximum(np.linalg.norm(Kd @ vec, axis=0), 1.0)
    if np.any(res > tol):
        warnings.warn(f"eigen-residual {res.max():.2e} exceeds tolerance", RuntimeWarning, stacklevel=2)
    return lam, vec


# ---------------------------------------------------------------- norms and regions
def lorentz21(mesh: DiskMesh, g, mask=None) -> float:
    """L^{2,1} norm of the modulus of piecewise-constant data.

    Exact for piecewise-constant functions: with values sorted decreasingly
    and cumulative areas A_k, ||g||_{2,1} = sum_k g_k 2 (sqrt(A_k) - sqrt(A_{k-1})).
    For equal element areas this is the rearrangement sum
    sum_k k^{-1/2} g_k sqrt(area) up to the weights 2(sqrt k - sqrt(k-1)) ~ k^{-1/2}.
    """
    v = np.abs(np.asarray(g)).reshape(len(mesh.areas), -1)
    v = v if v.shape[1] == 1 else np.sqrt(np.sum(v**2, axis=1, keepdims=True))
    v = v[:, 0]
    a = mesh.areas
    if mask is not None:
        v, a = v[mask], a[mask]
    order = np.argsort(-v, kind="stable")
    A = np.concatenate([[0.0], np.cumsum(a[order])])
    return float(np.sum(v[order] * 2.0 * (np.sqrt(A[1:]) - np.sqrt(A[:-1]))))


def integrate_disk(mesh: DiskMesh, u, r: float, center=(0.0, 0.0), depth: int = 4) -> float:
    """Integral of a nodal P1 field over the disk of radius r.

    Elements inside the disk are integrated exactly, elements crossing the
    circle are split recursively ``depth`` times and the pieces assigned by
    centroid.
    """
    u = np.asarray(u, float)
    c = np.asarray(center, float)
    P = mesh.vertices[mesh.triangles] - c
    U = u[mesh.triangles]
    dist = np.linalg.norm(P, axis=2)
    inside = np.all(dist <= r, axis=1)
    total = float(np.sum(mesh.areas[inside] * U[inside].mean(axis=1)))
    near = ~inside & (_seg_dist(P) < r)
    P, U = P[near], U[near]
    for _ in range(depth):
        m01, m12, m20 = (P[:, 0] + P[:, 1]) / 2, (P[:, 1] + P[:, 2]) / 2, (P[:, 2] + P[:, 0]) / 2
        u01, u12, u20 = (U[:, 0] + U[:, 1]) / 2, (U[:, 1] + U[:, 2]) / 2, (U[:, 2] + U[:, 0]) / 2
        P = np.concatenate([np.stack(s, 1) for s in ([P[:, 0], m01, m20], [m01, P[:, 1], m12], [m20, m12, P[:, 2]], [m01, m12, m20])])
        U = np.concatenate([np.stack(s, 1) for s in ([U[:, 0], u01, u20], [u01, U[:, 1], u12], [u20, u12, U[:, 2]], [u01, u12, u20])])
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    ar = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    keep = np.linalg.norm(P.mean(axis=1), axis=1) < r
    return total + float(np.sum(ar[keep] * U[keep].mean(axis=1)))


def _seg_dist(P):
    """Distance from the origin to each triangle (0 if it contains the origin)."""
    best = np.full(len(P), np.inf)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        a, b = P[:, i], P[:, j]
        d = b - a
        s = np.clip(-np.sum(a * d, axis=1) / np.maximum(np.sum(d * d, axis=1), 1e-300), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(a + s[:, None] * d, axis=1))
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    cr = lambda p, q: p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]  # noqa: E731
    s1, s2, s3 = cr(a, b), cr(b, c), cr(c, a)
    contains = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
    return np.where(contains, 0.0, best)


def matrix_sup_norm(A) -> float:
    """Spectral norm of the matrix of entrywise sup-norms of a nodal matrix field."""
    S = np.abs(np.asarray(A)).max(axis=0)
    return float(np.linalg.norm(S, 2)) if S.ndim == 2 else float(S.max())
