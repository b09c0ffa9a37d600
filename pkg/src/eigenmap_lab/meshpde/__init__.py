"""Disk meshes, P1 operators and the scalar linear solvers."""
from .cauchy import cauchy_transform, element_kernel
from .fem import (
    EIG_TOL,
    LIN_TOL,
    HodgeDecomposition,
    WenteResult,
    d_z,
    d_zbar,
    dirichlet_energy,
    element_l2,
    element_load,
    flux_load,
    generalized_eig,
    gradient,
    hodge_decompose,
    integrate_disk,
    jacobian_density,
    lorentz21,
    matrix_sup_norm,
    perp,
    recover_nodal,
    solve_dirichlet_load,
    solve_neumann_load,
    solve_poisson,
    wente_solve,
)
from .io import read_field, read_mesh, write_field, write_mesh
from .mesh import CIRCLE, FLAT, INTERIOR, DiskMesh, make_mesh

__all__ = [
    "CIRCLE",
    "EIG_TOL",
    "FLAT",
    "INTERIOR",
    "LIN_TOL",
    "DiskMesh",
    "HodgeDecomposition",
    "WenteResult",
    "cauchy_transform",
    "d_z",
    "d_zbar",
    "dirichlet_energy",
    "element_kernel",
    "element_l2",
    "element_load",
    "flux_load",
    "generalized_eig",
    "gradient",
    "hodge_decompose",
    "integrate_disk",
    "jacobian_density",
    "lorentz21",
    "make_mesh",
    "matrix_sup_norm",
    "perp",
    "read_field",
    "read_mesh",
    "recover_nodal",
    "solve_dirichlet_load",
    "solve_neumann_load",
    "solve_poisson",
    "wente_solve",
    "write_field",
    "write_mesh",
]
