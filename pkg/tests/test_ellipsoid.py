import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenmap_lab import ellipsoid as ell
from eigenmap_lab.ellipsoid import EllipsoidSpec

# bisection on e^{2t} + 4 e^{8t} = 1 to machine precision
T_14_11 = -0.2793513659711159


def _bisect_t(x, sig):
    x2 = np.asarray(x, float) ** 2
    g = lambda t: np.sum(sig * np.exp(2 * sig * t) * x2) - 1.0  # noqa: E731
    lo, hi = -1.0, 1.0
    while g(lo) > 0:
        lo *= 2
    while g(hi) < 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


def _fd_jac(f, x, h=1e-6):
    J = np.empty((len(x), len(x)))
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = h
        J[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return J


def test_spec_validation():
    E = EllipsoidSpec([2.0, 0.5, 1.0])
    assert E.m == 3 and E.elongation == 2.0
    with pytest.raises(ValueError):
        EllipsoidSpec([1.0])
    with pytest.raises(ValueError):
        EllipsoidSpec([1.0, 0.0])
    with pytest.raises(ValueError):
        EllipsoidSpec([1.0, np.nan])
    assert EllipsoidSpec([1, 2]).padded([3]).m == 3


@pytest.mark.parametrize("lam,x,val", [((1, 1), (3, 4), 5.0), ((4, 1), (1, 0), 2.0), ((2, 3), (1, 1), np.sqrt(5))])
def test_lambda_norm_examples(lam, x, val):
    assert ell.lambda_norm(x, lam) == pytest.approx(val, rel=1e-15)


def test_lambda_norm_dimension_mismatch():
    with pytest.raises(ValueError):
        ell.lambda_norm([1.0, 2.0, 3.0], [1.0, 1.0])


def test_solve_t_examples():
    assert float(ell.solve_t([1.0, 0.0], [1.0, 1.0])) == pytest.approx(0.0, abs=1e-15)
    assert float(ell.solve_t([2.0, 0.0], [1.0, 1.0])) == pytest.approx(-np.log(2.0), abs=1e-14)
    t = float(ell.solve_t([1.0, 1.0], [1.0, 4.0]))
    assert t == pytest.approx(T_14_11, abs=1e-14)
    assert t == pytest.approx(_bisect_t([1.0, 1.0], np.array([1.0, 4.0])), abs=1e-14)


def test_solve_t_errors():
    with pytest.raises(ValueError):
        ell.solve_t([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        ell.solve_t([np.inf, 0.0], [1.0, 1.0])


def test_proj_and_involution_examples():
    np.testing.assert_allclose(ell.proj_p([2.0, 0.0], [1, 1]), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(ell.invol_s([2.0, 0.0], [1, 1]), [0.5, 0.0], atol=1e-15)
    p = ell.proj_p([1.0, 1.0], [1.0, 4.0])
    np.testing.assert_allclose(p, np.exp(np.array([1.0, 4.0]) * T_14_11), atol=1e-14)
    x = np.array([0.6, 0.8 / np.sqrt(2.0)])  # on E_(1, 2)
    np.testing.assert_allclose(ell.proj_p(x, [1, 2]), x, atol=1e-15)
    np.testing.assert_allclose(ell.invol_s(x, [1, 2]), x, atol=1e-15)


def test_jac_examples():
    x = np.array([2.0, 0.0])
    J = ell.jac_s(x, [1, 1])
    inv = lambda y: y / np.dot(y, y)  # noqa: E731
    np.testing.assert_allclose(J, _fd_jac(inv, x), atol=1e-8)
    sig = np.array([1.0, 2.0, 5.0])
    y = np.array([0.3, 0.4, 0.0])
    y = y / ell.lambda_norm(y, sig)
    J = ell.jac_s(y, sig)
    n = sig * y
    H = np.eye(3) - 2 * np.outer(n, n) / (n @ n)
    np.testing.assert_allclose(J, H, atol=1e-14)
    np.testing.assert_allclose(J @ J, np.eye(3), atol=1e-13)


def test_jac_matches_finite_differences():
    g = np.random.default_rng(0)
    sig = np.array([1.0, 3.0])
    for _ in range(20):
        x = g.standard_normal(2)
        J = ell.jac_s(x, sig)
        assert np.abs(J - _fd_jac(lambda y: ell.invol_s(y, sig), x)).max() < 1e-6


def test_hessian_contraction_examples():
    sig = np.array([1.0, 1.0])
    x = np.array([2.0, 0.0])
    assert np.all(ell.hess_s_contract(x, sig, np.zeros((2, 2))) == 0)
    V = np.eye(2)  # canonical: V_j = e_j
    h = 1e-4
    # sum_{j,l} d_j d_l s_i V_j . V_l with V_j = e_j is the Laplacian of s_i
    lap = sum((ell.invol_s(x + h * e, sig) - 2 * ell.invol_s(x, sig) + ell.invol_s(x - h * e, sig)) / h**2 for e in np.eye(2))
    np.testing.assert_allclose(ell.hess_s_contract(x, sig, V), lap, atol=1e-6)


def test_printed_hessian_formula_differs():
    g = np.random.default_rng(1)
    sig = np.array([1.0, 2.0, 3.0])
    x, V = g.standard_normal(3), g.standard_normal((3, 2))
    h = 1e-4
    fd = np.zeros(3)
    for d in range(2):
        v = V[:, d]
        fd += (ell.invol_s(x + h * v, sig) - 2 * ell.invol_s(x, sig) + ell.invol_s(x - h * v, sig)) / h**2
    assert np.abs(ell.hess_s_contract(x, sig, V) - fd).max() < 1e-5
    assert np.abs(ell.hess_s_contract_printed(x, sig, V) - fd).max() > 1e-3


def test_normal_and_tangent():
    x = np.array([0.6, 0.8, 0.0])
    np.testing.assert_allclose(ell.normal_nu(x, [1, 1, 1]), x)
    np.testing.assert_allclose(ell.normal_nu([0.5, 0.0], [4, 1]), [1.0, 0.0])
    with pytest.raises(ValueError):
        ell.normal_nu([1.0, 1.0], [1, 1])
    sig = np.array([1.0, 2.0, 4.0])
    y = np.array([0.2, -0.5, 0.3])
    y = y / ell.lambda_norm(y, sig)
    v = np.array([1.0, 2.0, -1.0])
    Tv = ell.tangent_project(y, sig, v)
    np.testing.assert_allclose(ell.tangent_project(y, sig, Tv), Tv, atol=1e-15)
    assert abs(ell.normal_nu(y, sig) @ Tv) < 1e-14
    assert np.linalg.norm(ell.tangent_project(y, sig, sig * y)) < 1e-15


def test_bound_constants():
    assert ell.gradient_bound_constant(1.0) == 5 * 2**3
    a = 2.0
    assert ell.hessian_bound_constant(a) == 64 * 2**8 + 16 * 2**12 + 256 * 4 * 2**12 + 64 * 4 * 2**12


# ------------------------------------------------------------------ properties
@st.composite
def point_and_spec(draw, max_m=32, alpha=4.0):
    m = draw(st.integers(2, max_m))
    sig = np.array(draw(st.lists(st.floats(1 / alpha, alpha), min_size=m, max_size=m)))
    x = np.array(draw(st.lists(st.floats(-3, 3), min_size=m, max_size=m)))
    if np.linalg.norm(x) < 1e-3:
        x[0] = 1.0
    return x, sig


@settings(max_examples=150, deadline=None)
@given(point_and_spec())
def test_involution_algebra(ps):
    x, sig = ps
    s = ell.invol_s(x, sig)
    assert np.linalg.norm(ell.invol_s(s, sig) - x) <= 1e-10 * np.linalg.norm(x)
    p = ell.proj_p(x, sig)
    assert np.linalg.norm(ell.proj_p(p, sig) - p) <= 1e-10
    assert np.linalg.norm(ell.proj_p(s, sig) - p) <= 1e-10
    assert abs(float(ell.solve_t(s, sig) + ell.solve_t(x, sig))) <= 1e-10
    assert abs(np.sum(sig * p * p) - 1.0) <= 10 * ell.ROOT_TOL


@settings(max_examples=100, deadline=None)
@given(point_and_spec(max_m=8))
def test_jacobian_symmetric_and_involutive(ps):
    x, sig = ps
    J = ell.jac_s(x, sig)
    assert np.abs(J - J.T).max() <= 1e-12 * max(1.0, np.abs(J).max())
    Js = ell.jac_s(ell.invol_s(x, sig), sig)
    assert np.abs(J @ Js - np.eye(len(x))).max() <= 1e-8


@settings(max_examples=100, deadline=None)
@given(point_and_spec(max_m=8), st.integers(0, 2**31))
def test_gradient_bounds_in_solid_ellipsoid(ps, seed):
    x, sig = ps
    q = np.sum(sig * x * x)
    x = x / np.sqrt(q) * np.sqrt(0.5 + 0.5 * (seed % 1000 + 0.5) / 1000)
    assert ell.in_reflection_regime(x, sig)
    alpha = EllipsoidSpec(sig).elongation
    K = ell.gradient_bound_constant(alpha)
    V = np.random.default_rng(seed).standard_normal((len(x), 2))
    DV = ell.jac_s(x, sig) @ V
    assert np.sum(DV**2) <= K * np.sum(V**2) * (1 + 1e-12)
    assert np.sum(V**2) <= K * np.sum(DV**2) * (1 + 1e-12)
    H = ell.hess_s_contract(x, sig, V)
    assert np.sum(H**2) <= ell.hessian_bound_constant(alpha) * np.sum(V**2) ** 2


def test_batched_evaluation_matches_pointwise():
    g = np.random.default_rng(5)
    sig = np.array([0.5, 1.0, 3.0])
    X = g.standard_normal((7, 3))
    np.testing.assert_allclose(ell.invol_s(X, sig), np.array([ell.invol_s(x, sig) for x in X]), rtol=1e-15)
    np.testing.assert_allclose(ell.jac_s(X, sig), np.array([ell.jac_s(x, sig) for x in X]), rtol=1e-14)


def test_lower_gradient_bound_needs_solid_ellipsoid():
    # far outside the unit circle s is an inversion and shrinks gradients by |x|^-2
    x, sig = np.array([0.0, 3.0]), np.array([1.0, 1.0])
    assert not ell.in_reflection_regime(x, sig)
    V = np.eye(2)
    DV = ell.jac_s(x, sig) @ V
    assert np.sum(V**2) > ell.gradient_bound_constant(1.0) * np.sum(DV**2)
    assert not ell.in_reflection_regime([0.1, 0.1], sig)
