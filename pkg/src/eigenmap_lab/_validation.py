"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .ellipsoid import EllipsoidSpec, as_spec
from .meshpde.mesh import DiskMesh


class NotFittedError(ValueError, AttributeError):
    """Raised when a result is requested from an estimator before ``fit``."""


def check_is_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def check_mesh(mesh, domains=("disk", "half_disk")) -> DiskMesh:
    if not isinstance(mesh, DiskMesh):
        raise TypeError("expected a DiskMesh")
    if mesh.domain not in domains:
        raise ValueError(f"mesh domain {mesh.domain!r} not in {domains}")
    return mesh


def check_spec(E) -> EllipsoidSpec:
    return as_spec(E)


def check_map_field(mesh: DiskMesh, phi, m: int | None = None, name: str = "field") -> np.ndarray:
    """Nodal (N, m) array, finite, matching the mesh; a callable is evaluated at the vertices."""
    if callable(phi):
        phi = phi(mesh.vertices)
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != mesh.n_vertices:
        raise ValueError(f"{name} must have shape (n_vertices, m)")
    if m is not None and phi.shape[1] != m:
        raise ValueError(f"{name} has {phi.shape[1]} components, expected {m}")
    if phi.shape[1] < 2:
        raise ValueError(f"{name} needs m >= 2 components")
    if not np.all(np.isfinite(phi)):
        raise ValueError(f"{name} has non-finite entries")
    return phi


def nodal_data(mesh: DiskMesh, data, mask: np.ndarray, m: int, name: str) -> np.ndarray:
    """Expand boundary data to a full (N, m) array.

    ``data`` may be a callable of the vertex array, a constant m-vector, a full
    nodal array or an array with one row per masked vertex.
    """
    out = np.zeros((mesh.n_vertices, m))
    if callable(data):
        vals = np.asarray(data(mesh.vertices[mask]), dtype=float)
    else:
        vals = np.asarray(data, dtype=float)
        if vals.ndim == 1:
            vals = np.broadcast_to(vals, (int(mask.sum()), len(vals)))
        elif vals.shape[0] == mesh.n_vertices:
            vals = vals[mask]
    if vals.shape != (int(mask.sum()), m):
        raise ValueError(f"{name} has shape {vals.shape}, expected {(int(mask.sum()), m)}")
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{name} has non-finite entries")
    out[mask] = vals
    return out


def check_antisymmetric(omega, tol: float = 1e-12, name: str = "potential") -> np.ndarray:
    omega = np.asarray(omega)
    if omega.ndim != 4 or omega.shape[1] != omega.shape[2] or omega.shape[3] != 2:
        raise ValueError(f"{name} must have shape (T, m, m, 2)")
    gap = np.abs(omega + np.swapaxes(omega, 1, 2)).max() if omega.size else 0.0
    if gap > tol * max(1.0, np.abs(omega).max()):
        raise ValueError(f"{name} is not antisymmetric (gap {gap:.2e})")
    return omega
