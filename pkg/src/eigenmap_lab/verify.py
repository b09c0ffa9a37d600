"""Estimates harness: every inequality and identity measured on solved maps.

Each report entry compares a left-hand side with the right-hand side of an
estimate and stores the measured constant ``ratio = lhs / rhs``.  Estimates
with an explicit continuum bound are checked against it; for the others only
finiteness is asserted, and the dimension sweep checks that the measured
constants do not drift with the number of coordinates.

Entries are keyed by name and carry an ``anchor`` from :data:`ANCHORS`;
adding an entry with an unknown anchor raises.  Smallness gates are evaluated
first and recorded; an entry whose gate fails is marked ``gate_not_met``
and only checked for finiteness.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import eigenmap as em
from . import fixtures as fx
from . import gauge as gg
from .ellipsoid import EllipsoidSpec
from .meshpde import fem
from .meshpde.mesh import DiskMesh, make_mesh

MONO_SLACK = 0.02
DIM_RATIO_CAP = 2.0
SPECTRAL_TOL = 5e-2
PAD_TOL = 1e-12
HOLO_FLOOR = 1e-4  # relative size of d_zbar alpha below which holomorphy is already attained
CONSTANT_TOL = 1e-12  # a solved map this close to one point is analysed as exactly constant

ANCHORS = {
    "monotonicity": "relative decrease of e^{c r^2/4} r^-2 int_{D_r} u between consecutive radii",
    "subsolution_defect": "weak defect of Delta u <= c u over nonnegative hat functions",
    "interior_gradient_sup": "sup (1-|x|)^2 |grad Phi|^2 / int |grad Phi|^2",
    "quarter_disk_gradient_sup": "sup_{D_1/4} |grad Phi|^2 / int |grad Phi|^2",
    "weighted_laplacian": "sum_i int (Delta Phi_i)^2 (1-|x|)^2 / (int |grad Phi|^2 int |grad nu|^2)",
    "normal_pairing": "r^2 ||<grad Phi, grad nu>||^2_{L2(D_1-r)} / (int |grad nu|^2 int |grad Phi|^2)",
    "conformal_factor": "(min lambda)^2 ||beta||^2_{L2(D_1/2)} / (int |grad nu|^2 int |grad Phi|^2)",
    "gauge_energy_bound": "(||grad P|| + ||grad xi||) / ||Omega||, continuum bound 3",
    "riviere_frame_bound": "(sup|PA - I|^2 + ||grad A||^2 + ||grad B||^2) / ||Omega||^2",
    "riviere_contraction": "measured contraction rate of the (A, B) fixed point",
    "dbar_contraction": "measured contraction rate of the d-bar Picard iteration",
    "dbar_frame_distance": "sup-norm distance ||A - I|| of the d-bar frame, bound 1/3",
    "dbar_lorentz_ratio": "||omega||^2_{L(2,1)} / int |Omega|^2",
    "holomorphic_improvement": "||d_zbar beta|| / ||d_zbar alpha|| on the analysis region",
    "lp_gradient": "sum_i ||grad Phi_i||^2_{L^2p(D_1/2)} / int |grad Phi|^2",
    "lq_laplacian": "sum_i ||Delta Phi_i||^2_{L^q(D_1/2)} / (int |Omega|^2 int |grad Phi|^2)",
    "flat_trace": "int_{[-9/10, 9/10]} |grad u|^2 / (int |grad u|^2 + int |grad u|^4)",
    "flat_modulus": "(1 - min_{D+_1/2} |u|_sigma^2)_+ / sqrt(int |grad u|^2)",
    "steklov_gradient_sup": "sup (1-|x|)^2 |grad u|^2 / int |grad u|^2 on the half-disk",
    "weighted_eigen_residual": "||K phi_k - lambda_k M_beta phi_k||_* / (lambda_k ||M_beta phi_k||_*), dual norm on interior rows",
    "weighted_gram_offdiag": "max off-diagonal of the M_beta Gram matrix relative to the diagonal",
    "constraint_constancy": "max |sum_k lambda_k phi_k^2 - 1| over the constrained vertices",
    "steklov_eigen_residual": "||K phi_k - sigma_k B_w phi_k|| / (sigma_k ||B_w phi_k||) on free-boundary rows",
    "padding_invariance": "max relative change of a measured constant after padding with zero coordinates",
}

# anchors whose ratio is a measured constant compared across dimensions
SWEEP_ANCHORS = (
    "interior_gradient_sup", "quarter_disk_gradient_sup", "weighted_laplacian", "normal_pairing",
    "conformal_factor", "gauge_energy_bound", "riviere_frame_bound", "dbar_lorentz_ratio",
    "lp_gradient", "lq_laplacian", "flat_trace", "flat_modulus", "steklov_gradient_sup",
)


# ------------------------------------------------------------------ report container
@dataclass
class Gates:
    """Smallness thresholds; none of them has a published value."""

    energy: float = 0.05  # int |grad Phi|^2
    normal: float = 0.05  # int |grad nu|^2
    omega: float = gg.EPS0  # int |Omega|^2
    lorentz: float = gg.EPS1  # ||omega||_{L(2,1)}

    def to_dict(self):
        return asdict(self)


@dataclass
class Entry:
    anchor: str
    lhs: float
    rhs: float
    ratio: float
    threshold: float | None
    passed: bool
    gate: str | None = None
    gate_met: bool | None = None

    @property
    def status(self) -> str:
        if self.gate_met is False:
            return "gate_not_met"
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor, "lhs": _num(self.lhs), "rhs": _num(self.rhs), "ratio": _num(self.ratio),
            "pass": bool(self.passed), "tolerance_used": _num(self.threshold), "gate": self.gate,
            "gate_met": self.gate_met, "status": self.status,
        }


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _ratio(lhs, rhs):
    if lhs == 0:
        return 0.0
    if rhs == 0:
        return math.inf
    return lhs / rhs


@dataclass
class EstimateReport:
    provenance: dict = field(default_factory=dict)
    entries: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)  # name -> {"value", "limit", "met"}
    notes: list = field(default_factory=list)

    def gate(self, name: str, value: float, limit: float) -> bool:
        met = bool(value <= limit)
        self.gates[name] = {"value": float(value), "limit": float(limit), "met": met}
        return met

    def add(self, key: str, anchor: str, lhs, rhs, threshold: float | None = None, gate: str | None = None,
            ratio: float | None = None) -> Entry:
        if anchor not in ANCHORS:
            raise KeyError(f"unanchored report entry {key!r} (anchor {anchor!r})")
        lhs, rhs = float(lhs), float(rhs)
        r = _ratio(lhs, rhs) if ratio is None else float(ratio)
        met = None
        if gate is not None:
            if gate not in self.gates:
                raise KeyError(f"gate {gate!r} not evaluated")
            met = self.gates[gate]["met"]
        finite = math.isfinite(r)
        ok = finite if (threshold is None or met is False) else (finite and r <= threshold)
        e = Entry(anchor, lhs, rhs, r, threshold, bool(ok), gate, met)
        self.entries[key] = e
        return e

    def merge(self, other: "EstimateReport") -> "EstimateReport":
        for k, v in other.gates.items():
            self.gates.setdefault(k, v)
        for k, v in other.entries.items():
            self.entries[k] = v
        self.notes.extend(other.notes)
        for k, v in other.provenance.items():
            self.provenance.setdefault(k, v)
        return self

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries.values())

    def failures(self) -> list:
        return [k for k, e in self.entries.items() if not e.passed]

    def measured(self, anchors=SWEEP_ANCHORS) -> dict:
        return {k: e.ratio for k, e in self.entries.items() if e.anchor in anchors}

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "gates": {k: self.gates[k] for k in sorted(self.gates)},
            "entries": {k: self.entries[k].to_dict() for k in sorted(self.entries)},
            "passed": self.passed,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_num)

    def csv_rows(self) -> list:
        p = self.provenance
        rows = []
        for k in sorted(self.entries):
            e = self.entries[k]
            rows.append({
                "key": k, "anchor": e.anchor, "m": p.get("m", ""), "h": _fmt(p.get("h", "")),
                "energy": _fmt(p.get("energy", "")), "lhs": _fmt(e.lhs), "rhs": _fmt(e.rhs), "ratio": _fmt(e.ratio),
                "tolerance_used": _fmt(e.threshold), "pass": int(e.passed), "status": e.status,
            })
        return rows


CSV_FIELDS = ["key", "anchor", "m", "h", "energy", "lhs", "rhs", "ratio", "tolerance_used", "pass", "status"]


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(rows: list, fields=CSV_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in fields})
    return buf.getvalue()


def provenance(sol: em.EigenmapSolution) -> dict:
    return {
        "domain": sol.mesh.domain, "h": float(sol.mesh.h), "m": int(sol.m), "problem": sol.problem,
        "lambdas": [float(v) for v in sol.spec.lambdas], "energy": float(sol.energy),
        "converged": bool(sol.converged),
    }


# ------------------------------------------------------------------ monotonicity
def _ball_weights(mesh: DiskMesh, u, center, r):
    return fem.integrate_disk(mesh, u, r, center=center)


def check_monotonicity(mesh: DiskMesh, u, c: float, radii, center=(0.0, 0.0), scale: float = 1.0,
                       slack: float = MONO_SLACK) -> EstimateReport:
    """g(r) = e^{c r^2/4} r^-2 int_{D_r} u for the rescaled field u~(z) = scale^2 u(center + scale z).

    With ``scale`` = 1 and ``center`` = 0 this is the plain sequence on the
    mesh.  The weak defect of Delta u <= c u is measured on the hat functions
    of the interior vertices inside the largest disk and reported without a
    threshold.
    """
    u = np.asarray(u, float)
    if u.shape != (mesh.n_vertices,):
        raise ValueError("u must be a nodal scalar field")
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    radii = np.sort(np.asarray(radii, float))
    if radii.size < 2 or radii[0] <= 0:
        raise ValueError("need at least two positive radii")
    rep = EstimateReport(provenance={"h": float(mesh.h), "c": float(c), "scale": float(scale),
                                     "center": [float(v) for v in center]})
    g = np.array([np.exp(c * r * r / 4) / r**2 * _ball_weights(mesh, u, center, scale * r) for r in radii])
    rep.provenance["radii"] = [float(r) for r in radii]
    rep.provenance["g"] = [float(v) for v in g]
    for k in range(len(g) - 1):
        rep.add(f"monotonicity[{k}]", "monotonicity", g[k] - g[k + 1], g[k], threshold=slack)
    # weak check: int grad u . grad v <= c_x int u v with c_x = c / scale^2 in the unscaled variable
    cx = c / scale**2
    d = np.linalg.norm(mesh.vertices - np.asarray(center, float), axis=1)
    rows = np.flatnonzero(mesh.interior_mask & (d <= scale * radii[-1]))
    Ku = (mesh.stiffness @ u)[rows]
    Mu = (mesh.mass @ u)[rows]
    viol = np.maximum(Ku - cx * Mu, 0.0)
    rep.add("subsolution_defect", "subsolution_defect", float(viol.max(initial=0.0)),
            float(np.abs(Ku).max(initial=0.0) + cx * np.abs(Mu).max(initial=0.0)))
    return rep


def monotonicity_inputs(sol: em.EigenmapSolution):
    """u, c, center and scale of the rescaling used in the interior gradient argument.

    x0 maximises (1-|x|)^2 |grad Phi|^2 over the vertices, sigma0 = (1-|x0|)/2,
    Phi~(z) = Phi(x0 + sigma0 z) and c = 8 alpha^3 |grad Phi~(0)|^2.
    """
    mesh = sol.mesh
    dens = _nodal_grad_sq(sol)
    r = np.linalg.norm(mesh.vertices, axis=1)
    F = np.where(mesh.interior_mask, (1 - r) ** 2 * dens, -np.inf)
    i = int(np.argmax(F))
    x0 = mesh.vertices[i]
    s0 = (1 - r[i]) / 2
    alpha = sol.spec.elongation
    c = 8 * alpha**3 * s0**2 * dens[i]
    return dens, float(c), (float(x0[0]), float(x0[1])), float(s0)


def monotonicity_of_solution(sol: em.EigenmapSolution, n_radii: int = 8, slack: float = MONO_SLACK) -> EstimateReport:
    u, c, x0, s0 = monotonicity_inputs(sol)
    r_min = min(0.9, 2 * sol.mesh.h / s0)
    radii = np.linspace(r_min, 1.0, n_radii)
    rep = check_monotonicity(sol.mesh, u, c, radii, center=x0, scale=s0, slack=slack)
    rep.provenance.update(provenance(sol))
    return rep


# ------------------------------------------------------------------ interior estimates
def _nodal_grad_sq(sol):
    return fem.recover_nodal(sol.mesh, np.sum(sol.grad**2, axis=(1, 2)))


def _sup_weighted(sol):
    mesh = sol.mesh
    r = np.linalg.norm(mesh.vertices, axis=1)
    nodes = 1.0 - r >= 2 * mesh.h
    dens = _nodal_grad_sq(sol)
    return float(np.max((1 - r[nodes]) ** 2 * dens[nodes], initial=0.0))


def _evaluate_gates(rep: EstimateReport, sol, gates: Gates):
    fd = sol.fields
    energy = sol.energy
    rep.gate("energy", energy, gates.energy)
    rep.gate("normal", fd.grad_nu_sq, gates.normal)
    rep.gate("omega", fd.omega_sq, gates.omega)
    # the interior gradient bound follows from either smallness assumption
    either = min(energy / gates.energy, fd.grad_nu_sq / gates.normal)
    rep.gate("energy_or_normal", either, 1.0)
    beta_int = float(np.sum(sol.mesh.areas * fd.beta))
    quarter = max(fd.grad_nu_sq / gates.normal, energy, beta_int)
    rep.gate("normal_unit_mass", quarter, 1.0)


def epsreg_report(sol: em.EigenmapSolution, frame: gg.GaugeFrame | None = None, riviere: gg.RiviereDecomp | None = None,
                  dbar: gg.DbarFrame | None = None, holo: gg.HolomorphicFactor | None = None,
                  gates: Gates | None = None, pairing_r: float = 0.5) -> EstimateReport:
    """Interior epsilon-regularity estimates, plus gauge, (A, B) and d-bar entries when given."""
    gates = gates or Gates()
    mesh, lam = sol.mesh, sol.spec.lambdas
    rep = EstimateReport(provenance=provenance(sol))
    _evaluate_gates(rep, sol, gates)
    fd = sol.fields
    energy, nu_sq = sol.energy, fd.grad_nu_sq
    a = mesh.areas
    gsq = np.sum(sol.grad**2, axis=(1, 2))
    rep.add("interior_gradient_sup", "interior_gradient_sup", _sup_weighted(sol), energy, gate="energy_or_normal")
    q = mesh.disk_elements(0.25)
    rep.add("quarter_disk_gradient_sup", "quarter_disk_gradient_sup", float(gsq[q].max(initial=0.0)), energy,
            gate="normal_unit_mass")
    # Delta Phi through the equation: beta Lambda Phi per element
    lap = fd.beta[:, None] * lam * mesh.element_average(sol.phi)
    w = (1 - np.linalg.norm(mesh.centroids, axis=1)) ** 2
    rep.add("weighted_laplacian", "weighted_laplacian", float(np.sum(a * w * np.sum(lap**2, axis=1))),
            energy * nu_sq, gate="normal")
    pair = np.sum(sol.grad * fd.grad_nu, axis=(1, 2))
    inner = mesh.disk_elements(1.0 - pairing_r)
    rep.add("normal_pairing", "normal_pairing", pairing_r**2 * float(np.sum(a[inner] * pair[inner] ** 2)),
            nu_sq * energy, gate="normal")
    half = mesh.disk_elements(0.5)
    rep.add("conformal_factor", "conformal_factor", lam.min() ** 2 * float(np.sum(a[half] * fd.beta[half] ** 2)),
            nu_sq * energy, gate="normal")
    omega_sq = fd.omega_sq
    if frame is not None:
        lhs = np.sqrt(frame.energy_P) + np.sqrt(frame.energy_xi)
        rep.add("gauge_energy_bound", "gauge_energy_bound", lhs, frame.omega_norm, gate="omega",
                threshold=3.0 * (1.0 + gg.GAUGE_SLACK))
    if riviere is not None:
        rep.add("riviere_frame_bound", "riviere_frame_bound", sum(riviere.bound_terms.values()), omega_sq, gate="omega")
        rep.add("riviere_contraction", "riviere_contraction", riviere.max_rate, 1.0, gate="omega",
                threshold=gg.CONTRACTION_CAP)
        if not riviere.converged:
            rep.notes.append(f"riviere: {riviere.message}")
    if dbar is None and holo is not None:
        dbar = holo.dbar
    if dbar is not None:
        rep.gate("lorentz", dbar.lorentz_norm, gates.lorentz)
        rep.add("dbar_contraction", "dbar_contraction", dbar.max_rate, 1.0, gate="lorentz",
                threshold=gg.DBAR_CONTRACTION * (1.0 + gg.DBAR_SLACK))
        rep.add("dbar_frame_distance", "dbar_frame_distance", dbar.distance, 1.0, gate="lorentz", threshold=1.0 / 3.0)
        rep.add("dbar_lorentz_ratio", "dbar_lorentz_ratio", dbar.lorentz_norm**2, omega_sq)
        if not dbar.converged:
            rep.notes.append(f"dbar: {dbar.message}")
    if holo is not None:
        # when d_zbar alpha already sits at the gauge tolerance (e.g. m = 2) the comparison is vacuous
        size = fem.element_l2(mesh, holo.alpha_elem, gg.analysis_mask(mesh))
        rel = holo.dbar_alpha / size if size > 0 else 0.0
        rep.gate("nontrivial_dbar_alpha", HOLO_FLOOR / rel if rel > 0 else math.inf, 1.0)
        met = rep.gates["lorentz"]["met"] and rep.gates["nontrivial_dbar_alpha"]["met"]
        rep.gate("lorentz_nontrivial", 0.0 if met else 1.0, 0.5)
        rep.add("holomorphic_improvement", "holomorphic_improvement", holo.dbar_beta, holo.dbar_alpha,
                gate="lorentz_nontrivial", threshold=1.0 / holo.report["improve_factor"])
    return rep


# ------------------------------------------------------------------ L^p estimates
def lp_exponent_pairs(ps=(2, 4)):
    """(p, q) with q = 2p/(p+1), equivalently p = q/(2-q)."""
    return [(float(p), 2.0 * p / (p + 1.0)) for p in ps]


def lp_report(sol: em.EigenmapSolution, omega=None, ps=(2, 4), gates: Gates | None = None) -> EstimateReport:
    """Coordinatewise L^2p gradient and L^q Laplacian ratios on D_1/2.

    Delta Phi is the element field Omega . grad Phi of the equation, never a
    discrete second derivative.
    """
    gates = gates or Gates()
    mesh = sol.mesh
    Om = em.riviere_potential(sol) if omega is None else np.asarray(omega, float)
    rep = EstimateReport(provenance=provenance(sol))
    omega_sq = gg._l2sq(mesh, Om)
    rep.gate("omega", omega_sq, gates.omega)
    energy = sol.energy
    half = mesh.disk_elements(0.5)
    a = mesh.areas[half]
    gi = np.sum(sol.grad[half] ** 2, axis=2)  # (T', m): |grad phi_i|^2
    lap = np.abs(em.omega_apply(Om, sol.grad)[half])  # (T', m)
    for p, q in lp_exponent_pairs(ps):
        lhs_p = float(np.sum(np.sum(a[:, None] * gi**p, axis=0) ** (1.0 / p)))
        rep.add(f"lp_gradient[p={p:g}]", "lp_gradient", lhs_p, energy, gate="omega")
        lhs_q = float(np.sum(np.sum(a[:, None] * lap**q, axis=0) ** (2.0 / q)))
        rep.add(f"lq_laplacian[q={q:.4g}]", "lq_laplacian", lhs_q, omega_sq * energy, gate="omega")
    return rep


# ------------------------------------------------------------------ free boundary
def _flat_edge_elements(mesh: DiskMesh):
    """For each flat boundary edge, its endpoints, length and adjacent triangle."""
    key = ("flat_edge_elements",)
    hit = mesh._cache.get(key)
    if hit is not None:
        return hit
    t = mesh.triangles
    loc = {}
    for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        e = np.sort(t[:, [i, j]], axis=1)
        for n, (u, v) in enumerate(e):
            loc[(int(u), int(v))] = n
    flat = mesh.boundary_edges[mesh.edge_tag == 2]
    tri = np.array([loc[(int(min(u, v)), int(max(u, v)))] for u, v in flat], dtype=np.int64)
    L = np.linalg.norm(mesh.vertices[flat[:, 1]] - mesh.vertices[flat[:, 0]], axis=1)
    hit = (flat, L, tri)
    mesh._cache[key] = hit
    return hit


def boundary_report(sol: em.EigenmapSolution, gates: Gates | None = None, segment: float = 0.9) -> EstimateReport:
    """Flat-boundary trace, modulus and interior gradient estimates for a half-disk map."""
    gates = gates or Gates()
    mesh = sol.mesh
    if mesh.domain != "half_disk":
        raise ValueError("boundary_report needs a half-disk solution")
    rep = EstimateReport(provenance=provenance(sol))
    energy = sol.energy
    rep.gate("energy", energy, gates.energy)
    gsq = np.sum(sol.grad**2, axis=(1, 2))
    flat, L, tri = _flat_edge_elements(mesh)
    x = mesh.vertices[flat, 0]
    keep = np.all(np.abs(x) <= segment + 1e-12, axis=1)
    trace = float(np.sum(L[keep] * gsq[tri[keep]]))
    quartic = float(np.sum(mesh.areas * gsq**2))
    rep.add("flat_trace", "flat_trace", trace, energy + quartic, gate="energy")
    qn = np.sum(sol.spec.sigma * sol.phi**2, axis=1)
    inner = np.linalg.norm(mesh.vertices, axis=1) <= 0.5
    drop = max(0.0, 1.0 - float(qn[inner].min()))
    rep.add("flat_modulus", "flat_modulus", drop, np.sqrt(energy), gate="energy")
    rep.add("steklov_gradient_sup", "steklov_gradient_sup", _sup_weighted(sol), energy, gate="energy")
    return rep


# ------------------------------------------------------------------ spectral consistency
def _weighted_boundary_mass(mesh: DiskMesh, density, tag):
    """P1 boundary mass on ``tag`` edges with the edge-averaged nodal density as weight."""
    import scipy.sparse as sp

    code = {"circle": 1, "flat": 2}[tag]
    e = mesh.boundary_edges[mesh.edge_tag == code]
    L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    d = density[e]
    w = np.where(np.isnan(d).any(axis=1), np.nanmax(np.where(np.isnan(d), -np.inf, d), axis=1), d.mean(axis=1))
    base = (np.ones((2, 2)) + np.eye(2)) / 6.0
    local = (w * L)[:, None, None] * base
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def spectral_consistency(sol: em.EigenmapSolution, tol: float = SPECTRAL_TOL,
                         gram_tol: float | None = SPECTRAL_TOL) -> EstimateReport:
    """Coordinates as eigenfunctions of the weighted problem (Laplace) or the Steklov problem.

    Orthogonality of the coordinates is only expected when the boundary data
    separates them (e.g. by parity); pass ``gram_tol=None`` to record the
    Gram off-diagonal without a threshold.
    """
    mesh, lam, phi = sol.mesh, sol.spec.lambdas, sol.phi
    rep = EstimateReport(provenance=provenance(sol))
    rep.add("constraint_constancy", "constraint_constancy", sol.constraint_error, 1.0, threshold=1e-9)
    K = mesh.stiffness
    active = [k for k in range(sol.m) if np.abs(phi[:, k]).max() > 0]
    if sol.problem == "interior":
        beta = sol.fields.beta
        if not np.any(beta > 0):
            rep.notes.append("degenerate: beta vanishes identically")
            return rep
        Mb = mesh.weighted_mass(beta)
        rows = np.flatnonzero(mesh.interior_mask)
        Kp, Mp = K @ phi, Mb @ phi
        _, lu = em._interior_factor(mesh)
        for k in active:
            # dual (H^-1) norms: beta is only piecewise constant, so row-wise l2 sees its O(h) jitter
            num = em._dual_norm(lu, Kp[rows, k] - lam[k] * Mp[rows, k])
            den = lam[k] * em._dual_norm(lu, Mp[rows, k])
            rep.add(f"weighted_eigen_residual[{k}]", "weighted_eigen_residual", num, den, threshold=tol)
        G = phi.T @ Mp
        d = np.sqrt(np.abs(np.diag(G)))
        off = 0.0
        for i in active:
            for j in active:
                if i != j and d[i] > 0 and d[j] > 0:
                    off = max(off, abs(G[i, j]) / (d[i] * d[j]))
        rep.add("weighted_gram_offdiag", "weighted_gram_offdiag", off, 1.0, threshold=gram_tol)
    else:
        tag = "flat" if mesh.domain == "half_disk" else "circle"
        dens = sol.steklov_density
        Bw = _weighted_boundary_mass(mesh, dens, tag)
        rows = np.flatnonzero(sol.constrained)
        Kp, Bp = K @ phi, Bw @ phi
        for k in active:
            num = float(np.linalg.norm(Kp[rows, k] - lam[k] * Bp[rows, k]))
            den = float(lam[k] * np.linalg.norm(Bp[rows, k]))
            rep.add(f"steklov_eigen_residual[{k}]", "steklov_eigen_residual", num, den, threshold=tol)
    return rep


# ------------------------------------------------------------------ full pipeline
@dataclass
class Analysis:
    solution: em.EigenmapSolution
    frame: gg.GaugeFrame | None
    riviere: gg.RiviereDecomp | None
    holo: gg.HolomorphicFactor | None
    report: EstimateReport


def snap_constant(sol: em.EigenmapSolution, tol: float = CONSTANT_TOL):
    """Replace a map that is constant up to roundoff by the exact constant.

    Ratios of roundoff-level quantities are meaningless, so a constant solve
    is analysed through its exact value.  Returns (solution, snapped).
    """
    ref = sol.phi[np.flatnonzero(sol.fixed)[0]] if sol.fixed.any() else sol.phi[0]
    if np.abs(sol.phi - ref).max() > tol:
        return sol, False
    phi = np.broadcast_to(ref, sol.phi.shape).copy()
    return replace(sol, phi=phi, energy_history=list(sol.energy_history),
                   residual_history=list(sol.residual_history)), True


def analyse(sol: em.EigenmapSolution, gates: Gates | None = None, gauge: bool = True,
            gram_tol: float | None = SPECTRAL_TOL) -> Analysis:
    """Derived fields, gauge, (A, B), d-bar frame and every applicable report for one solve."""
    gates = gates or Gates()
    if getattr(sol, "_snapped", False) is False:
        sol, snapped = snap_constant(sol)
        if snapped:
            sol._snapped = True
            an = analyse(sol, gates, gauge, gram_tol)
            an.report.notes.append("map constant to roundoff: analysed as exactly constant")
            return an
    if sol.mesh.domain == "half_disk":
        rep = boundary_report(sol, gates)
        rep.merge(spectral_consistency(sol, gram_tol=gram_tol))
        return Analysis(sol, None, None, None, rep)
    frame = riv = holo = None
    notes = []
    Om = em.riviere_potential(sol)
    if sol.problem == "interior":
        if gauge:
            frame = gg.uhlenbeck_gauge(sol.mesh, Om)
            riv = gg.riviere_AB(sol.mesh, Om, frame, sol.phi)
            try:
                holo = gg.holomorphic_factor(sol, frame, eps1=gates.lorentz)
            except ValueError as exc:
                notes.append(f"holomorphic factor skipped: {exc}")
        rep = epsreg_report(sol, frame, riv, None, holo, gates)
        rep.notes.extend(notes)
        rep.merge(lp_report(sol, Om, gates=gates))
    else:
        rep = EstimateReport(provenance=provenance(sol))
    rep.merge(spectral_consistency(sol, gram_tol=gram_tol))
    return Analysis(sol, frame, riv, holo, rep)


def padding_invariance(sol: em.EigenmapSolution, extra_lambdas, gates: Gates | None = None,
                       base: EstimateReport | None = None) -> tuple[float, EstimateReport, EstimateReport]:
    """Largest relative change of a measured constant when zero coordinates are appended.

    Round-off quantities (Gram off-diagonals near 1e-10, say) are not measured
    constants and are left out of the comparison.
    """
    base = base if base is not None else analyse(sol, gates).report
    padded = analyse(sol.padded(extra_lambdas), gates).report
    worst = 0.0
    for k, e in base.entries.items():
        if k not in padded.entries or e.anchor not in SWEEP_ANCHORS:
            continue
        a, b = e.ratio, padded.entries[k].ratio
        if a == b:
            continue
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    return worst, base, padded


# ------------------------------------------------------------------ dimension sweep
@dataclass
class SweepConfig:
    ms: tuple = (3, 8, 32)
    h: float = 0.05
    lambda_construction: str = "geometric"
    alpha: float = 4.0
    energy: float = 0.2
    seeds: tuple = (1, 2)
    modes: int = 2
    decay: float = 2.0
    calib_rtol: float = 1e-3
    steklov: bool = True
    padding: bool = True
    dim_ratio_cap: float = DIM_RATIO_CAP
    gates: Gates = field(default_factory=Gates)
    threads: int | None = None


def lambda_construction(name: str, m: int, alpha: float = 4.0) -> EllipsoidSpec:
    """Named weight families with elongation alpha, available for every m."""
    if name == "sphere":
        return EllipsoidSpec(np.ones(m))
    if name == "geometric":
        return EllipsoidSpec(np.geomspace(1.0, alpha, m))
    if name == "two_level":
        return EllipsoidSpec(np.concatenate([[1.0], np.full(m - 1, alpha)]))
    raise ValueError(f"unknown lambda construction {name!r}")


def _calibrated_interior(mesh, E, seed, cfg: SweepConfig):
    loop = fx.random_loop(E, seed, modes=cfg.modes, decay=cfg.decay)
    cache = {}

    def energy_of(l):
        sol = em.solve_interior(mesh, E, l)
        cache[l.amplitude] = sol
        return sol.energy

    a = fx.calibrate_amplitude(loop, energy_of, cfg.energy, lo=1e-3, hi=2.0, rtol=cfg.calib_rtol)
    sol = cache.get(a) or em.solve_interior(mesh, E, loop.with_amplitude(a))
    return sol, a


def _calibrated_steklov(mesh, E, seed, cfg: SweepConfig):
    loop = fx.random_loop(E, seed, modes=cfg.modes, decay=cfg.decay)
    cache = {}

    def energy_of(l):
        sol = em.solve_free_boundary(mesh, E, arc_data=l)
        cache[l.amplitude] = sol
        return sol.energy

    a = fx.calibrate_amplitude(loop, energy_of, cfg.energy, lo=1e-3, hi=2.0, rtol=cfg.calib_rtol)
    sol = cache.get(a) or em.solve_free_boundary(mesh, E, arc_data=loop.with_amplitude(a))
    return sol, a


def _sweep_run(task, meshes, cfg: SweepConfig):
    kind, m, seed = task
    E = lambda_construction(cfg.lambda_construction, m, cfg.alpha)
    try:
        if kind == "interior":
            sol, amp = _calibrated_interior(meshes["disk"], E, seed, cfg)
        else:
            sol, amp = _calibrated_steklov(meshes["half_disk"], E, seed, cfg)
        rep = analyse(sol, cfg.gates, gram_tol=None).report  # random data does not separate coordinates
        rep.provenance.update({"seed": int(seed), "amplitude": float(amp), "kind": kind})
        if not sol.converged:
            rep.notes.append(f"solver: {sol.message}")
        return task, rep, None
    except Exception as exc:  # recorded, the sweep continues
        return task, None, f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    config: SweepConfig
    reports: dict  # (kind, m, seed) -> EstimateReport
    failures: dict  # (kind, m, seed) -> message
    constants: dict  # key -> {m: median ratio}
    spread: dict  # key -> max/min over m
    padding_gap: float | None
    padding_reports: dict = field(default_factory=dict)

    @property
    def within_cap(self) -> bool:
        return all(v <= self.config.dim_ratio_cap for v in self.spread.values())

    @property
    def padding_ok(self) -> bool | None:
        return None if self.padding_gap is None else self.padding_gap <= PAD_TOL

    def rows(self) -> list:
        cfg = self.config
        rows = []
        for key in sorted(self.constants):
            anchor = key.split("[")[0]
            for m in sorted(self.constants[key]):
                rows.append({
                    "key": key, "anchor": anchor, "m": m, "h": _fmt(cfg.h), "energy": _fmt(cfg.energy),
                    "ratio": _fmt(self.constants[key][m]), "spread": _fmt(self.spread[key]),
                    "tolerance_used": _fmt(cfg.dim_ratio_cap), "pass": int(self.spread[key] <= cfg.dim_ratio_cap),
                    "status": "pass" if self.spread[key] <= cfg.dim_ratio_cap else "fail",
                })
        if self.padding_gap is not None:
            rows.append({
                "key": "padding_invariance", "anchor": "padding_invariance", "m": "", "h": _fmt(cfg.h),
                "energy": "", "ratio": _fmt(self.padding_gap), "spread": "", "tolerance_used": _fmt(PAD_TOL),
                "pass": int(bool(self.padding_ok)), "status": "pass" if self.padding_ok else "fail",
            })
        return rows

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "constants": {k: {str(m): _num(v) for m, v in sorted(d.items())} for k, d in sorted(self.constants.items())},
            "spread": {k: _num(v) for k, v in sorted(self.spread.items())},
            "within_cap": self.within_cap,
            "padding_gap": _num(self.padding_gap),
            "padding_ok": self.padding_ok,
            "failures": {"/".join(map(str, k)): v for k, v in sorted(self.failures.items())},
            "runs": {"/".join(map(str, k)): self.reports[k].to_dict() for k in sorted(self.reports)},
        }


SWEEP_CSV_FIELDS = ["key", "anchor", "m", "h", "energy", "ratio", "spread", "tolerance_used", "pass", "status"]


def _threads(cfg: SweepConfig) -> int:
    if cfg.threads is not None:
        return max(1, int(cfg.threads))
    env = os.environ.get("EIGENMAP_LAB_THREADS", "")
    return max(1, int(env)) if env.strip().isdigit() else 1


def great_circle_solution(mesh: DiskMesh):
    """Solved circle eigenmap (cos x, sin x) with Lambda = (1, 1)."""
    return em.solve_interior(mesh, EllipsoidSpec([1.0, 1.0]), fx.circle_eigenmap(1.0))


def dimension_sweep(config: SweepConfig | None = None) -> SweepResult:
    cfg = config or SweepConfig()
    meshes = {"disk": make_mesh("disk", cfg.h)}
    kinds = ["interior"]
    if cfg.steklov:
        meshes["half_disk"] = make_mesh("half_disk", cfg.h)
        kinds.append("steklov")
    # shared factorisations are built before any worker starts
    for mesh in meshes.values():
        mesh.stiffness, mesh.mass  # noqa: B018
    gg.cauchy_baseline(meshes["disk"])
    tasks = [(k, int(m), int(s)) for k in kinds for m in cfg.ms for s in cfg.seeds]
    n = _threads(cfg)
    if n == 1:
        out = [_sweep_run(t, meshes, cfg) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=n) as ex:
            out = list(ex.map(lambda t: _sweep_run(t, meshes, cfg), tasks))
    reports, failures = {}, {}
    for task, rep, err in sorted(out, key=lambda r: r[0]):
        if rep is None:
            failures[task] = err
        else:
            reports[task] = rep
    constants = {}
    for (kind, m, seed), rep in sorted(reports.items()):
        for key, val in rep.measured().items():
            constants.setdefault(key, {}).setdefault(m, []).append(val)
    constants = {k: {m: float(np.median(v)) for m, v in d.items()} for k, d in constants.items()}
    spread = {}
    for k, d in constants.items():
        vals = np.array(list(d.values()))
        if np.all(vals == 0):
            spread[k] = 1.0
        elif np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            spread[k] = math.inf
        else:
            spread[k] = float(vals.max() / vals.min())
    gap, pads = None, {}
    if cfg.padding:
        base_sol = great_circle_solution(meshes["disk"])
        base = analyse(base_sol, cfg.gates).report
        gap = 0.0
        for m in cfg.ms:
            if m <= 2:
                continue
            g, _, padded = padding_invariance(base_sol, np.ones(m - 2), cfg.gates, base=base)
            pads[m] = padded
            gap = max(gap, g)
    return SweepResult(cfg, reports, failures, constants, spread, gap, pads)
