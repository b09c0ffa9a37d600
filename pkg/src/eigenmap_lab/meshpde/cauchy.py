"""Cauchy transform of piecewise-constant data with exact element integrals."""
from __future__ import annotations

import numpy as np

from .mesh import DiskMesh


def _as_complex_points(targets) -> np.ndarray:
    z = np.asarray(targets)
    if np.iscomplexobj(z):
        return z.ravel()
    z = z.reshape(-1, 2)
    return z[:, 0] + 1j * z[:, 1]


def element_kernel(mesh: DiskMesh, targets, chunk: int = 256) -> np.ndarray:
    """Matrix C[n, T] = (1/pi) int_T dA(w) / (z_n - w).

    Uses 1/(z - w) = d_wbar[(wbar - zbar)/(z - w)] and Stokes on each edge,
    which gives the closed form -(1/2i) c log((z - b)/(z - a)) per edge with
    c = (abar - zbar) + (dbar/d)(z - a), d = b - a.  The integrand is bounded,
    so targets on vertices or edges need no special treatment beyond c = 0
    when z is on the edge line.
    """
    z_all = _as_complex_points(targets)
    V = mesh.vertices[:, 0] + 1j * mesh.vertices[:, 1]
    tri = V[mesh.triangles]
    out = np.empty((len(z_all), mesh.n_triangles), dtype=complex)
    for s in range(0, len(z_all), chunk):
        z = z_all[s : s + chunk, None]
        acc = np.zeros((z.shape[0], mesh.n_triangles), dtype=complex)
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = tri[:, i], tri[:, j]
            d = b - a
            c = np.conj(a) - np.conj(z) + np.conj(d) / d * (z - a)
            ua, ub = z - a, z - b
            scale = np.abs(d)
            on_line = np.abs(c) <= 1e-13 * scale
            with np.errstate(divide="ignore", invalid="ignore"):
                lg = np.log(np.where(on_line, 1.0, ub) / np.where(on_line, 1.0, ua))
            acc += np.where(on_line, 0.0, -c * lg)
        out[s : s + chunk] = acc / (2j * np.pi)
    return out


def cauchy_transform(mesh: DiskMesh, f, targets, chunk: int = 256) -> np.ndarray:
    """T(f)(z) = sum_T f_T int_T dA(w) / (pi (z - w)) for element data ``(T, ...)``."""
    f = np.asarray(f)
    flat = f.reshape(mesh.n_triangles, -1)
    z_all = _as_complex_points(targets)
    out = np.empty((len(z_all), flat.shape[1]), dtype=complex)
    for s in range(0, len(z_all), chunk):
        out[s : s + chunk] = element_kernel(mesh, z_all[s : s + chunk], chunk) @ flat
    return out.reshape((len(z_all),) + f.shape[1:])
