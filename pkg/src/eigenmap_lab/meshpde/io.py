"""Plain-text mesh and field dumps.

Mesh: header ``vertices N triangles T``, then ``x y tag`` per vertex, then
``i j k`` per triangle.  Field: one line per vertex with whitespace-separated
values; matrix-valued fields are flattened row-major.  Floats are written with
``repr`` so a dump round-trips exactly and is bit-stable.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TAG_CODES, TAG_NAMES, DiskMesh


def _fmt(v) -> str:
    return repr(float(v))


def write_mesh(mesh: DiskMesh, path) -> Path:
    path = Path(path)
    lines = [f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}"]
    lines += [f"{_fmt(x)} {_fmt(y)} {TAG_NAMES[int(t)]}" for (x, y), t in zip(mesh.vertices, mesh.vertex_tag)]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path, domain: str | None = None, h: float | None = None) -> DiskMesh:
    rows = Path(path).read_text().split("\n")
    head = rows[0].split()
    if len(head) != 4 or head[0] != "vertices" or head[2] != "triangles":
        raise ValueError("malformed mesh header")
    n, t = int(head[1]), int(head[3])
    vert, tags = np.empty((n, 2)), []
    for i in range(n):
        x, y, tag = rows[1 + i].split()
        vert[i] = float(x), float(y)
        tags.append(TAG_CODES[tag])
    tri = np.array([[int(a) for a in rows[1 + n + k].split()] for k in range(t)], dtype=np.int64)
    if domain is None:
        domain = "half_disk" if TAG_CODES["flat"] in tags else "disk"
    if h is None:
        e = vert[tri[:, 1]] - vert[tri[:, 0]]
        h = float(np.linalg.norm(e, axis=1).max())
    return DiskMesh(vert, tri, domain, h)


def write_field(values, path) -> Path:
    path = Path(path)
    v = np.asarray(values)
    v = v.reshape(v.shape[0], -1)
    if np.iscomplexobj(v):
        v = np.stack([v.real, v.imag], axis=-1).reshape(v.shape[0], -1)
    path.write_text("\n".join(" ".join(_fmt(x) for x in row) for row in v) + "\n")
    return path


def read_field(path, shape=None) -> np.ndarray:
    rows = [r for r in Path(path).read_text().split("\n") if r.strip()]
    v = np.array([[float(x) for x in r.split()] for r in rows])
    return v if shape is None else v.reshape((len(v),) + tuple(shape))
