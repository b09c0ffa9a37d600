"""Boundary-data generators and closed-form manufactured solutions.

Every generator returns a callable of the vertex array (or a nodal array)
so it can be fed directly to the solvers.  Randomness goes through
``numpy.random.Generator(Philox(seed))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ellipsoid as ell
from .ellipsoid import EllipsoidSpec, as_spec


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _z(P):
    P = np.asarray(P, float)
    return P[:, 0] + 1j * P[:, 1]


# ------------------------------------------------------------------ closed forms
def constant_point(E) -> np.ndarray:
    """The point (1/sqrt(lambda_1), 0, ..., 0) of the ellipsoid."""
    E = as_spec(E)
    c = np.zeros(E.m)
    c[0] = 1.0 / np.sqrt(E.lambdas[0])
    return c


def constant_map(E):
    c = constant_point(E)
    return lambda P: np.broadcast_to(c, (len(P), len(c))).copy()


def circle_eigenmap(lam: float, freq: float = 1.0):
    """(cos(freq x), sin(freq x)) / sqrt(lam), an eigenmap into the circle of radius lam^{-1/2}.

    Delta Phi = freq^2 Phi, beta = freq^2 / lam, |grad Phi|^2 = freq^2 / lam.
    """
    s = 1.0 / np.sqrt(lam)

    def f(P):
        x = np.asarray(P, float)[:, 0]
        return s * np.stack([np.cos(freq * x), np.sin(freq * x)], axis=1)

    return f


def steklov_disk(s: float):
    """z / sqrt(s): free-boundary map of the disk into the circle |x|^2 s = 1, e^u = 1/s."""

    def f(P):
        z = _z(P) / np.sqrt(s)
        return np.stack([z.real, z.imag], axis=1)

    return f


def steklov_disk_guess(s: float, wiggle: float = 0.1):
    """Doubly-symmetric angular perturbation of z / sqrt(s) (fixes the Moebius freedom)."""

    def f(P):
        z = _z(P)
        th = np.angle(z)
        w = np.abs(z) * np.exp(1j * (th + wiggle * np.sin(4 * th))) / np.sqrt(s)
        return np.stack([w.real, w.imag], axis=1)

    return f


def steklov_half_disk(s: float):
    """G(z) / sqrt(s) with G(z) = (1 + iz)/(1 - iz), mapping the half-disk onto a half-disk.

    G sends the flat segment into the unit circle, so the trace lies on
    |x|^2 s = 1 there; the outward derivative is d_nu Phi = 2 Phi / (1 + x^2)
    and the Steklov density is e^u = 2 / ((1 + x^2) s).
    """

    def f(P):
        z = _z(P)
        g = (1 + 1j * z) / (1 - 1j * z) / np.sqrt(s)
        return np.stack([g.real, g.imag], axis=1)

    return f


def steklov_half_disk_density(s: float):
    return lambda x: 2.0 / ((1.0 + np.asarray(x) ** 2) * s)


def steklov_half_disk_guess(mesh, s: float):
    """Arc values from the closed form, crude trace (1, x)/|(1, x)| on the free segment."""
    phi = steklov_half_disk(s)(mesh.vertices)
    free = mesh.flat_mask & ~mesh.circle_mask
    x = mesh.vertices[free, 0]
    phi[free] = np.stack([np.ones_like(x), x], axis=1)
    return phi


# ------------------------------------------------------------------ random loops
@dataclass(frozen=True)
class RandomLoop:
    """Smooth closed boundary loop on an ellipsoid.

    gamma(theta) = p(c + amplitude * sum_k k^{-decay} (cos k theta u_k + sin k theta v_k))
    with c the base point and the u_k, v_k random unit vectors orthogonal to c.
    """

    spec: EllipsoidSpec
    base: np.ndarray
    u: np.ndarray  # (K, m)
    v: np.ndarray  # (K, m)
    amplitude: float
    decay: float = 2.0

    def with_amplitude(self, amplitude: float) -> "RandomLoop":
        return RandomLoop(self.spec, self.base, self.u, self.v, float(amplitude), self.decay)

    def raw(self, P) -> np.ndarray:
        th = np.angle(_z(P))
        k = np.arange(1, len(self.u) + 1)
        w = k ** (-self.decay)
        c = np.cos(np.outer(th, k)) * w
        s = np.sin(np.outer(th, k)) * w
        return self.base + self.amplitude * (c @ self.u + s @ self.v)

    def __call__(self, P) -> np.ndarray:
        return ell.proj_p(self.raw(P), self.spec)


def random_loop(E, seed: int, modes: int = 2, amplitude: float = 0.3, decay: float = 2.0) -> RandomLoop:
    E = as_spec(E)
    g = rng(seed)
    m = E.m
    base = constant_point(E)
    vecs = g.standard_normal((2 * modes, m))
    e = base / np.linalg.norm(base)
    out = []
    for w in vecs:
        w = w - (w @ e) * e
        for q in out[: m - 2]:  # at most m - 2 earlier directions fit beside c and w
            w = w - (w @ q) * q
        n = np.linalg.norm(w)
        out.append(w / n)
    out = np.array(out)
    return RandomLoop(E, base, out[0::2], out[1::2], float(amplitude), float(decay))


def symmetric_loop(E, amplitude: float = 0.1):
    """p(c + amplitude (cos theta e_2 + sin theta e_3)) with c the base point.

    Under x -> -x and y -> -y the three coordinates carry distinct parities,
    so the solved coordinates are orthogonal for any even weight.
    """
    E = as_spec(E)
    if E.m < 3:
        raise ValueError("symmetric loop needs m >= 3")
    u = np.zeros((1, E.m))
    v = np.zeros((1, E.m))
    u[0, 1] = v[0, 2] = 1.0
    return RandomLoop(E, constant_point(E), u, v, float(amplitude), 0.0)


def calibrate_amplitude(loop: RandomLoop, energy_of, target: float, lo: float = 1e-3, hi: float = 3.0,
                        rtol: float = 1e-3, max_iter: int = 40):
    """Amplitude whose solution energy matches ``target`` (secant on log-energy, bisection safeguard).

    ``energy_of(loop)`` must return the energy int |grad Phi|^2 of the solved map.
    """
    def f(a):
        return np.log(energy_of(loop.with_amplitude(a))) - np.log(target)

    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise ValueError("target energy not bracketed by the amplitude range")
    a = np.exp(0.5 * (np.log(lo) + np.log(hi)))
    for _ in range(max_iter):
        fa = f(a)
        if abs(fa) <= rtol:
            return a
        if fa < 0:
            lo, flo = a, fa
        else:
            hi, fhi = a, fa
        # secant in log-amplitude (energy ~ amplitude^2 for small data)
        la, lb = np.log(lo), np.log(hi)
        cand = la - flo * (lb - la) / (fhi - flo)
        a = float(np.exp(cand)) if lo < np.exp(cand) < hi else float(np.exp(0.5 * (la + lb)))
    return a
