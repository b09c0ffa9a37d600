"""Command-line driver: ``eigenmap-lab <subcommand> --config <path> [--out <dir>]``.

Subcommands ``mesh``, ``solve``, ``gauge``, ``verify``, ``spectrum`` and
``sweep`` read one JSON config, write their dumps, ``report.json``,
``report.csv`` and a ``manifest.txt`` listing every output with its sha256.

Exit status: 0 success, 1 invalid config or missing input, 2 a solver did
not converge, 3 an estimate check failed.  Reports are written in every case
where a solve happened.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from . import eigenmap as em
from . import fixtures as fx
from . import gauge as gg
from . import verify as vf
from .ellipsoid import EllipsoidSpec
from .meshpde import fem
from .meshpde.io import read_mesh, write_field, write_mesh
from .meshpde.mesh import make_mesh

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_CHECK = 0, 1, 2, 3
SUBCOMMANDS = ("mesh", "solve", "gauge", "verify", "spectrum", "sweep")
GENERATORS = ("constant", "circle_eigenmap", "random_loop", "symmetric_loop", "steklov_disk", "steklov_half_disk")


# ------------------------------------------------------------------ config
class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BoundarySpec(_Strict):
    generator: Literal[GENERATORS]
    params: dict = Field(default_factory=dict)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _seeded(self):
        if self.generator == "random_loop" and self.seed is None:
            raise ValueError("seed is required for the random_loop generator")
        return self


class SolverSpec(_Strict):
    tol: PositiveFloat = em.SOLVE_TOL
    max_iter: PositiveInt = em.MAX_ITERS
    preconditioner: Optional[Literal["h1", "l2", "newton"]] = None
    constraint_tol: PositiveFloat = em.CONSTRAINT_TOL


class GateSpec(_Strict):
    energy: PositiveFloat = 0.05
    normal: PositiveFloat = 0.05
    omega: PositiveFloat = gg.EPS0
    lorentz: PositiveFloat = gg.EPS1


class SweepSpec(_Strict):
    ms: list[int] = Field(default_factory=lambda: [3, 8, 32])
    seeds: list[int] = Field(default_factory=lambda: [1, 2])
    energy: PositiveFloat = 0.2
    lambda_construction: Literal["sphere", "geometric", "two_level"] = "geometric"
    alpha: float = Field(4.0, ge=1.0)
    modes: PositiveInt = 2
    decay: PositiveFloat = 2.0
    calib_rtol: PositiveFloat = 1e-3
    steklov: bool = True
    padding: bool = True
    dim_ratio_cap: PositiveFloat = vf.DIM_RATIO_CAP
    threads: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def _dims(self):
        if not self.ms or min(self.ms) < 2:
            raise ValueError("ms must list dimensions >= 2")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self


class ExperimentConfig(_Strict):
    domain: Literal["disk", "half_disk"] = "disk"
    h: float = Field(0.05, gt=0.0, lt=0.5)
    lambdas: Optional[list[PositiveFloat]] = None
    sigma: Optional[list[PositiveFloat]] = None
    boundary: Optional[BoundarySpec] = None
    solver: SolverSpec = Field(default_factory=SolverSpec)
    gates: GateSpec = Field(default_factory=GateSpec)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    spectrum_k: PositiveInt = 6
    closed_form_tol: PositiveFloat = 1e-3
    mesh_file: Optional[str] = None
    out: Optional[str] = None

    @model_validator(mode="after")
    def _weights(self):
        if self.lambdas is not None and self.sigma is not None:
            raise ValueError("give either lambdas (interior problem) or sigma (free-boundary problem), not both")
        w = self.lambdas if self.lambdas is not None else self.sigma
        if w is not None and len(w) < 2:
            raise ValueError("at least two weights are needed")
        if self.sigma is None and self.domain == "half_disk" and self.lambdas is not None:
            raise ValueError("the interior problem lives on the disk; use sigma on the half-disk")
        return self

    @property
    def problem(self) -> str:
        return "free_boundary" if self.sigma is not None else "interior"

    @property
    def spec(self) -> EllipsoidSpec:
        w = self.sigma if self.sigma is not None else self.lambdas
        if w is None:
            raise ConfigError("lambdas: required for this subcommand")
        return EllipsoidSpec(w)


class ConfigError(ValueError):
    pass


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


# ------------------------------------------------------------------ outputs
class RunWriter:
    """Single writer for one run directory; remembers every file for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def _track(self, path: Path) -> Path:
        self.files.append(path)
        return path

    def text(self, name: str, content: str) -> Path:
        p = self.root / name
        p.write_text(content)
        return self._track(p)

    def field(self, name: str, values) -> Path:
        return self._track(write_field(values, self.root / name))

    def mesh(self, mesh, name: str = "mesh.txt") -> Path:
        return self._track(write_mesh(mesh, self.root / name))

    def json(self, obj, name: str = "report.json") -> Path:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True, default=vf._num) + "\n")

    def manifest(self) -> Path:
        lines = []
        for p in sorted(set(self.files), key=lambda q: q.relative_to(self.root).as_posix()):
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{p.relative_to(self.root).as_posix()} {digest}")
        path = self.root / "manifest.txt"
        path.write_text("\n".join(lines) + "\n")
        return path


def _kv_csv(d: dict, prefix: str = "") -> list:
    rows = []
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows += _kv_csv(v, key + ".")
        elif isinstance(v, (list, tuple)):
            rows.append({"key": key, "value": " ".join(vf._fmt(x) if not isinstance(x, str) else x for x in v)})
        elif isinstance(v, bool) or v is None or isinstance(v, str):
            rows.append({"key": key, "value": "" if v is None else str(v)})
        else:
            rows.append({"key": key, "value": vf._fmt(v)})
    return rows


# ------------------------------------------------------------------ problem setup
def _mesh(cfg: ExperimentConfig):
    if cfg.mesh_file is not None:
        p = Path(cfg.mesh_file)
        if not p.exists():
            raise ConfigError(f"mesh_file: input dump not found: {p}")
        mesh = read_mesh(p)
        if mesh.domain != cfg.domain:
            raise ConfigError(f"mesh_file: dump holds a {mesh.domain} mesh but domain is {cfg.domain}")
        return mesh
    return make_mesh(cfg.domain, cfg.h)


def _generator(cfg: ExperimentConfig, mesh):
    """Boundary data, initial map and closed form (or None) for the configured generator."""
    if cfg.boundary is None:
        raise ConfigError("boundary: required for this subcommand")
    b, E = cfg.boundary, cfg.spec
    p = dict(b.params)

    def take(name, default):
        return p.pop(name, default)

    exact = phi0 = None
    if b.generator == "constant":
        data = fx.constant_map(E)
        exact = data
    elif b.generator == "circle_eigenmap":
        lam = float(take("lam", E.lambdas[0]))
        if E.m != 2 or not np.allclose(E.lambdas, lam):
            raise ConfigError("boundary.params: circle_eigenmap needs lambdas = [lam, lam]")
        data = exact = fx.circle_eigenmap(lam, float(take("freq", 1.0)))
    elif b.generator == "random_loop":
        data = fx.random_loop(E, b.seed, modes=int(take("modes", 2)), amplitude=float(take("amplitude", 0.3)),
                              decay=float(take("decay", 2.0)))
    elif b.generator == "symmetric_loop":
        data = fx.symmetric_loop(E, float(take("amplitude", 0.1)))
    elif b.generator == "steklov_disk":
        s = float(take("s", E.lambdas[0]))
        if cfg.domain != "disk" or cfg.problem != "free_boundary":
            raise ConfigError("boundary.generator: steklov_disk needs domain disk and sigma")
        data, exact = None, fx.steklov_disk(s)
        phi0 = fx.steklov_disk_guess(s, float(take("wiggle", 0.1)))(mesh.vertices)
    else:  # steklov_half_disk
        s = float(take("s", E.lambdas[0]))
        if cfg.domain != "half_disk" or cfg.problem != "free_boundary":
            raise ConfigError("boundary.generator: steklov_half_disk needs domain half_disk and sigma")
        data = exact = fx.steklov_half_disk(s)
        phi0 = fx.steklov_half_disk_guess(mesh, s)
    if p:
        raise ConfigError(f"boundary.params: unknown parameter(s) {sorted(p)} for {b.generator}")
    return data, phi0, exact


def _solve(cfg: ExperimentConfig, mesh):
    data, phi0, exact = _generator(cfg, mesh)
    s = cfg.solver
    kw = dict(tol=s.tol, max_iter=s.max_iter, constraint_tol=s.constraint_tol)
    if s.preconditioner is not None:
        kw["preconditioner"] = s.preconditioner
    try:
        if cfg.problem == "interior":
            if cfg.domain != "disk":
                raise ConfigError("domain: the interior problem needs the disk")
            sol = em.solve_interior(mesh, cfg.spec, data, phi0=phi0, **kw)
        else:
            sol = em.solve_free_boundary(mesh, cfg.spec, arc_data=data, phi0=phi0, **kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"boundary: {exc}") from exc
    return sol, exact


def _solve_summary(cfg, sol, exact) -> dict:
    out = {
        "problem": sol.problem, "converged": bool(sol.converged), "iterations": int(sol.iterations),
        "message": sol.message, "energy": sol.energy, "constraint_error": sol.constraint_error,
        "residual_interior": sol.residual_interior, "residual_boundary": sol.residual_boundary,
        "h": float(sol.mesh.h), "m": int(sol.m), "lambdas": [float(v) for v in sol.spec.lambdas],
    }
    if sol.problem == "interior":
        out["equation_consistency"] = em.equation_consistency(sol)
        out["omega_identity_gap"] = sol.fields.omega_identity_gap
        if sol.energy > 0 and sol.constraint_error < 1.0:
            lhs, rhs, gap = em.weighted_identity_check(sol)
            out["weighted_identity"] = {"lhs": lhs, "rhs": rhs, "gap": gap}
    else:
        d = sol.steklov_density[sol.constrained]
        out["steklov_density_min"] = float(d.min()) if d.size else None
    if exact is not None:
        err = exact(sol.mesh.vertices) - sol.phi
        l2 = float(np.sqrt(np.sum(sol.mesh.lumped_mass[:, None] * err**2)))
        out["closed_form"] = {"l2_error": l2, "tolerance": cfg.closed_form_tol, "pass": bool(l2 <= cfg.closed_form_tol)}
    return out


# ------------------------------------------------------------------ subcommands
def cmd_mesh(cfg, w: RunWriter) -> int:
    mesh = _mesh(cfg)
    w.mesh(mesh)
    rep = {"domain": mesh.domain, "h": float(mesh.h), "n_vertices": int(mesh.n_vertices),
           "n_triangles": int(mesh.n_triangles), "area": float(mesh.area),
           "n_boundary": int(mesh.boundary_mask.sum()), "n_flat": int(mesh.flat_mask.sum())}
    w.json(rep)
    w.text("report.csv", vf.write_csv(_kv_csv(rep), ["key", "value"]))
    return EXIT_OK


def _status(sol, extra_ok: bool = True) -> int:
    if not sol.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK if extra_ok else EXIT_CHECK


def cmd_solve(cfg, w: RunWriter) -> int:
    mesh = _mesh(cfg)
    sol, exact = _solve(cfg, mesh)
    w.mesh(mesh)
    w.field("phi.txt", sol.phi)
    rep = _solve_summary(cfg, sol, exact)
    w.json(rep)
    w.text("report.csv", vf.write_csv(_kv_csv(rep), ["key", "value"]))
    return _status(sol, rep.get("closed_form", {}).get("pass", True))


def cmd_gauge(cfg, w: RunWriter) -> int:
    mesh = _mesh(cfg)
    if mesh.domain != "disk":
        raise ConfigError("domain: the gauge construction needs the disk")
    sol, _ = _solve(cfg, mesh)
    gates = vf.Gates(**cfg.gates.model_dump())
    an = vf.analyse(sol, gates)
    m = sol.m
    w.mesh(mesh)
    w.field("phi.txt", sol.phi)
    w.field("frame_P.txt", an.frame.P.reshape(-1, m * m))
    w.field("potential_xi.txt", an.frame.xi.reshape(-1, m * m))
    w.field("riviere_A.txt", an.riviere.A.reshape(-1, m * m))
    w.field("riviere_B.txt", an.riviere.B.reshape(-1, m * m))
    if an.holo is not None:
        w.field("dbar_A.txt", an.holo.dbar.A.reshape(-1, m * m))
    keep = ("gauge_energy_bound", "riviere_frame_bound", "riviere_contraction", "dbar_contraction",
            "dbar_frame_distance", "dbar_lorentz_ratio", "holomorphic_improvement")
    rep = vf.EstimateReport(provenance=an.report.provenance, gates=an.report.gates, notes=an.report.notes,
                            entries={k: v for k, v in an.report.entries.items() if v.anchor in keep})
    d = rep.to_dict()
    d["gauge"] = {"iterations": an.frame.iterations, "converged": an.frame.converged, "message": an.frame.message,
                  "relative_defect": an.frame.relative_defect, "coulomb_residual": an.frame.coulomb_residual}
    d["riviere"] = {"iterations": an.riviere.iterations, "converged": an.riviere.converged,
                    "message": an.riviere.message, "conservation_residual": an.riviere.residual}
    w.json(d)
    w.text("report.csv", vf.write_csv(rep.csv_rows()))
    conv = sol.converged and an.frame.converged and an.riviere.converged
    if not conv:
        return EXIT_NONCONVERGED
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_verify(cfg, w: RunWriter) -> int:
    mesh = _mesh(cfg)
    sol, exact = _solve(cfg, mesh)
    gates = vf.Gates(**cfg.gates.model_dump())
    an = vf.analyse(sol, gates)
    rep = an.report
    if sol.problem == "interior":
        rep.merge(vf.monotonicity_of_solution(an.solution))
    w.mesh(mesh)
    w.field("phi.txt", sol.phi)
    d = rep.to_dict()
    d["solve"] = _solve_summary(cfg, sol, exact)
    w.json(d)
    w.text("report.csv", vf.write_csv(rep.csv_rows()))
    converged = sol.converged and (an.frame is None or an.frame.converged) and (an.riviere is None or an.riviere.converged)
    if not converged:
        return EXIT_NONCONVERGED
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_spectrum(cfg, w: RunWriter) -> int:
    mesh = _mesh(cfg)
    sol, _ = _solve(cfg, mesh)
    rep = vf.spectral_consistency(sol)
    d = rep.to_dict()
    w.mesh(mesh)
    w.field("phi.txt", sol.phi)
    # lowest eigenvalues of the weighted Neumann problem K v = mu M_beta v
    if sol.problem == "interior":
        beta = sol.fields.beta
        if beta.min() > 0:
            k = min(cfg.spectrum_k, mesh.n_vertices)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mu, _ = fem.generalized_eig(mesh.stiffness, mesh.weighted_mass(beta), k)
            w.field("spectrum.txt", mu[:, None])
            d["weighted_spectrum"] = [float(v) for v in mu]
        else:
            d["weighted_spectrum"] = None
            d["notes"].append("beta vanishes somewhere: weighted spectrum skipped")
    w.json(d)
    w.text("report.csv", vf.write_csv(rep.csv_rows()))
    return _status(sol, rep.passed)


def cmd_sweep(cfg, w: RunWriter) -> int:
    s = cfg.sweep
    sc = vf.SweepConfig(
        ms=tuple(s.ms), h=cfg.h, lambda_construction=s.lambda_construction, alpha=s.alpha, energy=s.energy,
        seeds=tuple(s.seeds), modes=s.modes, decay=s.decay, calib_rtol=s.calib_rtol, steklov=s.steklov,
        padding=s.padding, dim_ratio_cap=s.dim_ratio_cap, gates=vf.Gates(**cfg.gates.model_dump()), threads=s.threads,
    )
    res = vf.dimension_sweep(sc)
    w.json(res.to_dict())
    w.text("report.csv", vf.write_csv(res.rows(), vf.SWEEP_CSV_FIELDS))
    for key in sorted(res.reports):
        rep = res.reports[key]
        w.text(f"runs/{'_'.join(map(str, key))}.csv", vf.write_csv(rep.csv_rows()))
    if res.failures or any(not r.provenance.get("converged", True) for r in res.reports.values()):
        return EXIT_NONCONVERGED
    ok = res.within_cap and res.padding_ok is not False
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "gauge": cmd_gauge, "verify": cmd_verify,
            "spectrum": cmd_spectrum, "sweep": cmd_sweep}


def run(subcommand: str, config_path, out=None) -> int:
    cfg = load_config(config_path)
    root = Path(out or cfg.out or "out")
    w = RunWriter(root)
    if subcommand == "sweep":
        (root / "runs").mkdir(exist_ok=True)
    code = COMMANDS[subcommand](cfg, w)
    w.manifest()
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="eigenmap-lab", description="Harmonic eigenmap experiments")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default=None, help="output directory (overrides the config)")
    args = ap.parse_args(argv)
    try:
        code = run(args.subcommand, args.config, args.out)
    except ConfigError as exc:
        print(f"eigenmap-lab: invalid configuration\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    names = {EXIT_OK: "ok", EXIT_NONCONVERGED: "not converged", EXIT_CHECK: "estimate check failed"}
    print(f"eigenmap-lab {args.subcommand}: {names.get(code, code)}")
    return code


if __name__ == "__main__":
    sys.exit(main())
