"""Harmonic eigenmaps into ellipsoids: solvers, gauges and estimate harness."""
from .eigenmap import (
    EigenmapSolution,
    FreeBoundaryEigenmapSolver,
    InteriorEigenmapSolver,
    derived_fields,
    riviere_potential,
    solve_free_boundary,
    solve_interior,
    symmetrized_extension,
    weighted_identity_check,
)
from .ellipsoid import (
    EllipsoidSpec,
    hess_s_contract,
    invol_s,
    jac_s,
    lambda_norm,
    normal_nu,
    proj_p,
    solve_t,
    tangent_project,
)
from .gauge import (
    DbarFrameSolver,
    RiviereDecomposition,
    UhlenbeckGauge,
    dbar_frame,
    holomorphic_factor,
    riviere_AB,
    uhlenbeck_gauge,
)
from .meshpde import DiskMesh, make_mesh
from .verify import EstimateReport, SweepConfig, analyse, dimension_sweep

__version__ = "0.1.0"

__all__ = [
    "DbarFrameSolver",
    "DiskMesh",
    "EigenmapSolution",
    "EllipsoidSpec",
    "EstimateReport",
    "FreeBoundaryEigenmapSolver",
    "InteriorEigenmapSolver",
    "RiviereDecomposition",
    "SweepConfig",
    "UhlenbeckGauge",
    "analyse",
    "dbar_frame",
    "derived_fields",
    "dimension_sweep",
    "hess_s_contract",
    "holomorphic_factor",
    "invol_s",
    "jac_s",
    "lambda_norm",
    "make_mesh",
    "normal_nu",
    "proj_p",
    "riviere_AB",
    "riviere_potential",
    "solve_free_boundary",
    "solve_interior",
    "solve_t",
    "symmetrized_extension",
    "tangent_project",
    "uhlenbeck_gauge",
    "weighted_identity_check",
]
