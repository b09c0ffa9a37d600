"""Quasi-uniform P1 triangulations of the unit disk and upper half-disk."""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

INTERIOR, CIRCLE, FLAT = 0, 1, 2
TAG_NAMES = {INTERIOR: "interior", CIRCLE: "circle", FLAT: "flat"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}


class DiskMesh:
    """Triangulation with boundary tags and lazily assembled P1 operators.

    Arrays are read-only after construction, so a mesh can be shared between
    threads; operators are computed once on first access.
    """

    def __init__(self, vertices, triangles, domain: str, h: float, mirror=None):
        v = np.ascontiguousarray(vertices, dtype=float)
        t = np.ascontiguousarray(triangles, dtype=np.int64)
        # counter-clockwise orientation
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        flip = cross < 0
        t[flip] = t[flip][:, [0, 2, 1]]
        self.vertices = v
        self.triangles = t
        self.domain = domain
        self.h = float(h)
        self.mirror = None if mirror is None else np.asarray(mirror, dtype=np.int64)
        self._build_boundary()
        for a in (self.vertices, self.triangles, self.boundary_edges, self.edge_tag, self.vertex_tag):
            a.setflags(write=False)
        self._cache = {}

    # topology -------------------------------------------------------------
    def _build_boundary(self):
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        bnd = uniq[counts == 1]
        z = self.vertices
        on_axis = (np.abs(z[bnd[:, 0], 1]) <= 1e-12) & (np.abs(z[bnd[:, 1], 1]) <= 1e-12)
        flat_edge = on_axis if self.domain == "half_disk" else np.zeros(len(bnd), bool)
        self.boundary_edges = bnd
        self.edge_tag = np.where(flat_edge, FLAT, CIRCLE).astype(np.int64)
        tag = np.full(len(z), INTERIOR, dtype=np.int64)
        tag[bnd[flat_edge].ravel()] = FLAT
        # vertices on a circle edge (this includes the two corners) are circle-tagged
        tag[bnd[~flat_edge].ravel()] = CIRCLE
        self.vertex_tag = tag

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return self.vertex_tag != INTERIOR

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def circle_mask(self) -> np.ndarray:
        return self.vertex_tag == CIRCLE

    @cached_property
    def flat_mask(self) -> np.ndarray:
        """Vertices on the flat boundary segment, corners included."""
        m = np.zeros(self.n_vertices, bool)
        m[self.boundary_edges[self.edge_tag == FLAT].ravel()] = True
        return m

    # geometry -------------------------------------------------------------
    @cached_property
    def areas(self) -> np.ndarray:
        v, t = self.vertices, self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the three hat functions per element."""
        v, t = self.vertices, self.triangles
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        rot = lambda d: np.stack([-d[:, 1], d[:, 0]], axis=1)  # noqa: E731
        g = np.stack([rot(p2 - p1), rot(p0 - p2), rot(p1 - p0)], axis=1)
        return g / (2.0 * self.areas)[:, None, None]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.boundary_edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @cached_property
    def area(self) -> float:
        return float(self.areas.sum())

    # operators ------------------------------------------------------------
    def _scatter(self, local):
        t = self.triangles
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        n = self.n_vertices
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        G = self.basis_gradients
        local = np.einsum("tad,tbd->tab", G, G) * self.areas[:, None, None]
        return self._scatter(local)

    def weighted_mass(self, weight=None) -> sp.csr_matrix:
        """Consistent P1 mass matrix for a piecewise-constant weight."""
        w = np.ones(self.n_triangles) if weight is None else np.asarray(weight, float)
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = (w * self.areas)[:, None, None] * base
        return self._scatter(local)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return self.weighted_mass()

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        return np.asarray(self.mass.sum(axis=1)).ravel()

    def boundary_mass(self, tag=None) -> sp.csr_matrix:
        """1D P1 mass on boundary edges, optionally restricted to one tag."""
        e = self.boundary_edges
        keep = np.ones(len(e), bool) if tag is None else self.edge_tag == TAG_CODES.get(tag, tag)
        e, L = e[keep], self.edge_lengths[keep]
        base = (np.ones((2, 2)) + np.eye(2)) / 6.0
        local = L[:, None, None] * base
        rows = np.repeat(e, 2, axis=1).ravel()
        cols = np.tile(e, (1, 2)).ravel()
        n = self.n_vertices
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))

    def boundary_lumped(self, tag=None) -> np.ndarray:
        return np.asarray(self.boundary_mass(tag).sum(axis=1)).ravel()

    def element_average(self, f) -> np.ndarray:
        """Centroid values of a nodal field (trailing axes preserved)."""
        f = np.asarray(f)
        return f[self.triangles].mean(axis=1)

    def disk_elements(self, r: float, center=(0.0, 0.0)) -> np.ndarray:
        """Elements whose centroid lies in the open disk of radius r."""
        c = self.centroids - np.asarray(center, float)
        return np.hypot(c[:, 0], c[:, 1]) < r

    def reflected(self) -> "DiskMesh":
        """Full-disk mesh made of this half-disk mesh and its mirror image."""
        if self.domain != "half_disk":
            raise ValueError("only a half-disk mesh can be reflected")
        v = self.vertices
        upper = np.flatnonzero(v[:, 1] > 1e-12)
        n = len(v)
        mirror = np.arange(n + len(upper))
        img = np.arange(n)
        img[upper] = n + np.arange(len(upper))
        verts = np.vstack([v, v[upper] * [1.0, -1.0]])
        mirror[:n] = img
        mirror[n + np.arange(len(upper))] = upper
        tris = np.vstack([self.triangles, img[self.triangles][:, [0, 2, 1]]])
        return DiskMesh(verts, tris, "disk", self.h, mirror=mirror)


def _half_disk_points(h: float) -> np.ndarray:
    nr = max(1, int(np.floor(1.0 / h - 0.5)))
    radii = np.concatenate([h * np.arange(1, nr + 1), [1.0]]) if nr * h < 1.0 - 1e-12 else h * np.arange(1, nr + 1)
    radii = radii[radii <= 1.0 + 1e-12]
    pts = [np.zeros((1, 2))]
    for r in radii:
        n = max(2, int(round(np.pi * r / h)))
        th = np.pi * np.arange(n + 1) / n
        ring = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        ring[0, 1] = ring[-1, 1] = 0.0
        pts.append(ring)
    return np.vstack(pts)


def make_mesh(domain: str, h: float) -> DiskMesh:
    """Ring-based Delaunay triangulation of the disk or half-disk.

    The disk mesh is the half-disk mesh together with its reflection across
    the real axis, so it is exactly symmetric under (x, y) -> (x, -y) and
    ``mesh.mirror`` maps every vertex to its reflection.
    """
    if not (0.0 < h < 0.5):
        raise ValueError("mesh size must satisfy 0 < h < 1/2")
    if domain not in ("disk", "half_disk"):
        raise ValueError(f"unknown domain {domain!r}")
    pts = _half_disk_points(h)
    tri = Delaunay(pts, qhull_options="Qbb Qc Qz Q12 Qt")
    simp = tri.simplices
    v = pts[simp]
    area = 0.5 * np.abs((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
    simp = simp[area > 1e-12 * h * h]
    half = DiskMesh(pts, simp, "half_disk", h)
    return half if domain == "half_disk" else half.reflected()
