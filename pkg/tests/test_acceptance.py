"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the terminal summary under "acceptance criteria".
"""
import functools
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record_criterion

from eigenmap_lab import cli
from eigenmap_lab import eigenmap as em
from eigenmap_lab import ellipsoid as ell
from eigenmap_lab import fixtures as fx
from eigenmap_lab import gauge as gg
from eigenmap_lab import verify as vf
from eigenmap_lab.ellipsoid import EllipsoidSpec
from eigenmap_lab.meshpde import fem
from eigenmap_lab.meshpde.mesh import make_mesh

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
INTERIOR_EXAMPLES = ("circle_eigenmap", "symmetric_loop", "random_loop")
SOLVES: list = []  # every converged solve of this module, for the identity criterion


def _keep(sol):
    if sol.converged:
        SOLVES.append(sol)
    return sol


@functools.lru_cache(maxsize=None)
def _shipped(name, h=None):
    cfg = cli.load_config(CONFIGS / f"{name}.json")
    if h is not None:
        cfg = cfg.model_copy(update={"h": h})
    mesh = cli._mesh(cfg)
    sol, exact = cli._solve(cfg, mesh)
    return _keep(sol), exact


def _l2(mesh, f):
    return float(np.sqrt(np.sum(mesh.lumped_mass[:, None] * f**2)))


def _order(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


# ------------------------------------------------------------------ 1
def _fd_jac(f, x, h=1e-6):
    m = len(x)
    X = np.concatenate([x + h * np.eye(m), x - h * np.eye(m)])
    Y = f(X)
    return (Y[:m] - Y[m:]).T / (2 * h)


def test_criterion_1_ellipsoid_algebra():
    t0 = time.perf_counter()
    g = np.random.default_rng(20261014)
    worst = dict(ss=0.0, ps=0.0, ts=0.0, jac=0.0, hess=0.0, upper=0.0, lower=0.0, lap=0.0)
    outside_lower = 0.0
    for _ in range(1000):
        m = int(g.integers(2, 33))
        alpha = float(g.uniform(1.0, 4.0))
        sig = np.exp(g.uniform(-np.log(alpha), np.log(alpha), m))
        E = EllipsoidSpec(sig)
        K = ell.gradient_bound_constant(E.elongation)
        # algebra on an arbitrary nonzero point
        x = g.standard_normal(m) * np.exp(g.uniform(-1.5, 1.5))
        s = ell.invol_s(x, E)
        worst["ss"] = max(worst["ss"], np.linalg.norm(ell.invol_s(s, E) - x) / np.linalg.norm(x))
        worst["ps"] = max(worst["ps"], np.linalg.norm(ell.proj_p(s, E) - ell.proj_p(x, E)))
        worst["ts"] = max(worst["ts"], abs(float(ell.solve_t(s, E) + ell.solve_t(x, E))))
        # derivatives and the reflection bounds on the solid ellipsoid shell 1/2 <= |y|_sigma^2 <= 1
        y = g.standard_normal(m)
        y *= np.sqrt(g.uniform(0.5, 1.0) / np.sum(sig * y * y))
        assert ell.in_reflection_regime(y, E)
        J = ell.jac_s(y, E)
        worst["jac"] = max(worst["jac"], np.abs(J - _fd_jac(lambda P: ell.invol_s(P, E), y)).max() / max(1.0, np.abs(J).max()))
        V = g.standard_normal((m, 2))
        hstep = 1e-4
        H = ell.hess_s_contract(y, E, V)
        fd = sum((ell.invol_s(y + hstep * V[:, d], E) - 2 * ell.invol_s(y, E) + ell.invol_s(y - hstep * V[:, d], E)) / hstep**2
                 for d in range(2))
        worst["hess"] = max(worst["hess"], np.abs(H - fd).max() / max(1.0, np.abs(H).max()))
        DV = J @ V
        worst["upper"] = max(worst["upper"], np.sum(DV**2) / (K * np.sum(V**2)))
        worst["lower"] = max(worst["lower"], np.sum(V**2) / (K * np.sum(DV**2)))
        worst["lap"] = max(worst["lap"], np.sum(H**2) / (K**3 * np.sum(DV**2) ** 2))
        # diagnostic only: the lower bound outside the solid ellipsoid
        z = y * np.sqrt(g.uniform(4.0, 16.0) / np.sum(sig * y * y))
        DZ = ell.jac_s(z, E) @ V
        outside_lower = max(outside_lower, np.sum(V**2) / (K * np.sum(DZ**2)))
    elapsed = time.perf_counter() - t0
    ok = (worst["ss"] <= 1e-10 and worst["ps"] <= 1e-10 and worst["ts"] <= 1e-10 and worst["jac"] <= 1e-6
          and worst["hess"] <= 1e-5 and max(worst["upper"], worst["lower"], worst["lap"]) <= 1.0 and elapsed < 10)
    record_criterion(1, ok, (
        f"s.s {worst['ss']:.1e}, p.s {worst['ps']:.1e}, t.s+t {worst['ts']:.1e}, jac FD {worst['jac']:.1e}, "
        f"hess FD {worst['hess']:.1e}; bound ratios upper {worst['upper']:.3f} lower {worst['lower']:.3f} "
        f"laplacian {worst['lap']:.1e} on 1/2 <= |x|^2 <= 1 (outside, 4..16: lower {outside_lower:.2f}, not asserted); "
        f"{elapsed:.1f} s"))
    assert ok


# ------------------------------------------------------------------ 2
def test_criterion_2_manufactured_solutions():
    t0 = time.perf_counter()
    hs = np.array([0.1, 0.05, 0.025])
    circle, steklov, half = [], [], []
    res = {}
    for h in hs:
        mesh = make_mesh("disk", h)
        sol = _keep(em.solve_interior(mesh, [1.0, 1.0], fx.circle_eigenmap(1.0)))
        circle.append(_l2(mesh, sol.phi - fx.circle_eigenmap(1.0)(mesh.vertices)))
        res["circle"] = sol.residual_interior
        # z / sqrt(s) is reproduced by P1 up to the rotation invariance of the free-boundary problem
        fb = _keep(em.solve_free_boundary(mesh, [2.0, 2.0], phi0=fx.steklov_disk_guess(2.0)))
        ex = fx.steklov_disk(2.0)(mesh.vertices)
        U, _, Vt = np.linalg.svd((fb.phi * mesh.lumped_mass[:, None]).T @ ex)
        steklov.append(_l2(mesh, fb.phi @ (U @ Vt) - ex))
        res["steklov"] = max(fb.residual_interior, fb.residual_boundary)
        hm = make_mesh("half_disk", h)
        hd = _keep(em.solve_free_boundary(hm, [2.0, 2.0], arc_data=fx.steklov_half_disk(2.0),
                                          phi0=fx.steklov_half_disk_guess(hm, 2.0)))
        half.append(_l2(hm, hd.phi - fx.steklov_half_disk(2.0)(hm.vertices)))
        res["half"] = max(hd.residual_interior, hd.residual_boundary)
    elapsed = time.perf_counter() - t0
    p_circle, p_half = _order(hs, circle), _order(hs, half)
    C_circle = max(e / h**2 for e, h in zip(circle, hs))
    ok = (p_circle >= 1.7 and p_half >= 1.7 and max(steklov) <= 1e-9 and max(res.values()) <= 1e-6 and elapsed < 120)
    record_criterion(2, ok, (
        f"circle order {p_circle:.2f} (C = {C_circle:.2e}), z/sqrt(s) exact up to rotation (max {max(steklov):.1e}), "
        f"half-disk Steklov order {p_half:.2f}; residuals at h = 0.025 <= {max(res.values()):.1e}; {elapsed:.1f} s"))
    assert ok


# ------------------------------------------------------------------ 3
def test_criterion_3_monotonicity():
    worst, lines = -np.inf, []
    for name in INTERIOR_EXAMPLES:
        sol, _ = _shipped(name)
        rep = vf.monotonicity_of_solution(sol)
        drop = max(e.ratio for k, e in rep.entries.items() if k.startswith("monotonicity"))
        worst = max(worst, drop)
        lines.append(f"{name} {drop:+.3f}")
    ok = worst <= vf.MONO_SLACK
    record_criterion(3, ok, f"largest relative decrease {worst:+.3f} (slack {vf.MONO_SLACK}): " + ", ".join(lines))
    assert ok


# ------------------------------------------------------------------ 4
def test_criterion_4_identities():
    E = [1.0, 1.0, 4.0]
    gaps = []
    for h in (0.05, 0.025):
        sol = _keep(em.solve_interior(make_mesh("disk", h), E, fx.random_loop(E, 3, amplitude=0.3)))
        gaps.append(em.weighted_identity_check(sol)[2])
    for name in INTERIOR_EXAMPLES + ("small_loop",):
        _shipped(name)
    omega = max(s.fields.omega_identity_gap for s in SOLVES)
    ok = omega <= 1e-10 and gaps[0] <= 1e-2 and gaps[1] < gaps[0]
    record_criterion(4, ok, (
        f"int|Omega|^2 = 2 int|grad nu|^2 worst gap {omega:.1e} over {len(SOLVES)} converged solves; "
        f"weighted identity gap {gaps[0]:.2e} at h = 0.05 -> {gaps[1]:.2e} at h = 0.025"))
    assert ok


# ------------------------------------------------------------------ 5
def _abelian_potential(mesh, scale):
    c = mesh.centroids
    w = np.stack([np.sin(2 * c[:, 1]) + c[:, 0] ** 2, np.cos(c[:, 0]) * c[:, 1] - c[:, 0] * c[:, 1] ** 2], axis=1)
    Om = np.zeros((mesh.n_triangles, 2, 2, 2))
    Om[:, 1, 0], Om[:, 0, 1] = w, -w
    return Om * scale / np.sqrt(gg._l2sq(mesh, Om))


def _h1_rel(mesh, a, b):
    d = a - b
    num = fem.dirichlet_energy(mesh, d) + np.sum(mesh.lumped_mass * d**2)
    return float(np.sqrt(num / (fem.dirichlet_energy(mesh, b) + np.sum(mesh.lumped_mass * b**2))))


def _affine_oracle(mesh, frame):
    N, m = mesh.n_vertices, frame.m
    n = N * m * m

    def T(x):
        R, S = gg.riviere_T(mesh, frame, x[:n].reshape(N, m, m), x[n:].reshape(N, m, m))
        return np.concatenate([R.ravel(), S.ravel()])

    t0 = T(np.zeros(2 * n))
    L = np.stack([T(e) - t0 for e in np.eye(2 * n)], axis=1)
    x = np.linalg.solve(np.eye(2 * n) - L, t0)
    return x[:n].reshape(N, m, m), x[n:].reshape(N, m, m)


def test_criterion_5_gauge():
    # scalar Hodge oracle for the abelian case
    mesh = make_mesh("disk", 0.05)
    Om = _abelian_potential(mesh, 0.2)
    fr = gg.uhlenbeck_gauge(mesh, Om)
    w = Om[:, 1, 0]
    theta = fem.solve_neumann_load(mesh, fem.flux_load(mesh, w))
    xi = fem.solve_dirichlet_load(mesh, fem.flux_load(mesh, -fem.perp(w - fem.gradient(mesh, theta))))
    got = np.arctan2(fr.P[:, 1, 0], fr.P[:, 0, 0])
    got -= np.sum(mesh.lumped_mass * got) / mesh.area
    hodge = max(_h1_rel(mesh, got, theta), _h1_rel(mesh, fr.xi[:, 1, 0], xi))
    # bound ratio on every shipped potential below the smallness gate
    ratios = {"abelian": fr.bound_ratio}
    riv_rates = []
    for name in INTERIOR_EXAMPLES + ("small_loop", "constant"):
        sol, _ = _shipped(name)
        P = em.riviere_potential(sol)
        if sol.fields.omega_sq <= 0.05:
            f = gg.uhlenbeck_gauge(sol.mesh, P)
            ratios[name] = f.bound_ratio
            riv_rates.append(gg.riviere_AB(sol.mesh, P, f).max_rate)
    # (A, B) fixed point against the direct affine solve
    coarse = make_mesh("disk", 0.25)
    Oc = _abelian_potential(coarse, 0.15)
    fc = gg.uhlenbeck_gauge(coarse, Oc)
    dec = gg.riviere_AB(coarse, Oc, fc, tol=1e-14)
    a, b = _affine_oracle(coarse, fc)
    affine = gg.pair_norm(coarse, dec.A_hat - a, dec.B - b) / gg.pair_norm(coarse, a, b)
    rate = max([dec.max_rate] + riv_rates)
    ok = hodge <= 1e-6 and max(ratios.values()) <= 3.3 and len(ratios) >= 2 and rate <= 0.5 and affine <= 1e-8
    record_criterion(5, ok, (
        f"m = 2 Hodge oracle {hodge:.1e}; bound ratio max {max(ratios.values()):.3f} over "
        f"{', '.join(sorted(ratios))}; (A, B) contraction {rate:.3f}, affine oracle {affine:.1e}"))
    assert ok


# ------------------------------------------------------------------ 6
def test_criterion_6_dbar_frame():
    sol, _ = _shipped("symmetric_loop")
    fr = gg.uhlenbeck_gauge(sol.mesh, em.riviere_potential(sol))
    hf = gg.holomorphic_factor(sol, fr)
    db = hf.dbar
    gate = db.lorentz_norm <= gg.EPS1
    ratio = hf.dbar_beta / hf.dbar_alpha
    ok = gate and db.converged and db.max_rate <= 0.30 and db.distance <= 1 / 3 and ratio <= 0.1
    record_criterion(6, ok, (
        f"L(2,1) {db.lorentz_norm:.3f} <= {gg.EPS1} (gate met: {gate}); Picard contraction {db.max_rate:.2e}, "
        f"||A - I|| {db.distance:.2e}; ||dbar beta|| / ||dbar alpha|| = {ratio:.3f}"))
    assert ok


# ------------------------------------------------------------------ 7, 9
@pytest.fixture(scope="module")
def default_sweeps(tmp_path_factory):
    runs = []
    for tag in ("first", "second"):
        out = tmp_path_factory.mktemp(f"sweep_{tag}")
        t0 = time.perf_counter()
        code = cli.main(["sweep", "--config", str(CONFIGS / "sweep_default.json"), "--out", str(out)])
        runs.append((out, code, time.perf_counter() - t0))
    return runs


def test_criterion_7_dimension_independence(default_sweeps):
    import json

    out, code, elapsed = default_sweeps[0]
    rep = json.loads((out / "report.json").read_text())
    spread = {k: float(v) for k, v in rep["spread"].items()}
    worst = max(spread, key=spread.get)
    pad = float(rep["padding_gap"])
    ok = (code == cli.EXIT_OK and not rep["failures"] and rep["within_cap"] and pad <= vf.PAD_TOL
          and elapsed < 15 * 60)
    record_criterion(7, ok, (
        f"{len(spread)} constants over m = {rep['config']['ms']}: worst spread {spread[worst]:.3f} ({worst}), "
        f"cap {rep['config']['dim_ratio_cap']}; padding gap {pad:.1e}; {len(rep['failures'])} failed runs; {elapsed:.0f} s"))
    assert ok


def test_criterion_8_spectral_consistency():
    E = [1.0, 1.0, 4.0]
    worst, gram, constancy = [], 0.0, 0.0
    for h in (0.05, 0.025):
        sol = _keep(em.solve_interior(make_mesh("disk", h), E, fx.symmetric_loop(E, 0.1)))
        rep = vf.spectral_consistency(sol)
        worst.append(max(e.ratio for k, e in rep.entries.items() if k.startswith("weighted_eigen")))
        gram = max(gram, rep.entries["weighted_gram_offdiag"].ratio)
        constancy = max(constancy, rep.entries["constraint_constancy"].lhs)
    ok = worst[0] <= 5e-2 and worst[1] < worst[0] and constancy <= 1e-9 and gram <= 5e-2
    record_criterion(8, ok, (
        f"eigen residual {worst[0]:.2e} at h = 0.05 -> {worst[1]:.2e} at h = 0.025; "
        f"sum lambda phi^2 deviation {constancy:.1e}; Gram off-diagonal {gram:.1e}"))
    assert ok


def test_criterion_9_determinism(default_sweeps):
    (a, _, _), (b, _, _) = default_sweeps
    same_csv = (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    same_manifest = (a / "manifest.txt").read_bytes() == (b / "manifest.txt").read_bytes()
    ok = same_csv and same_manifest
    record_criterion(9, ok, f"report.csv byte-identical: {same_csv}; manifest identical: {same_manifest}")
    assert ok
