"""Kernel identity and invariant checks against adaptive quadrature.

Every check returns a CheckRow; the CLI `kernel-check` command tabulates them.
The quadrature here is scipy's QUADPACK, kept independent of the ray
quadrature used elsewhere in the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import kernels as kn


@dataclass
class CheckRow:
    name: str
    passed: bool
    worst: float
    tolerance: float
    samples: int
    detail: str = ""


# Scalar transcriptions of the kernels for QUADPACK integrands.  They are
# written independently of kernels.py on purpose (image-difference form).

def _g1(a, t):
    return math.exp(-a * a / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)


def _dir1(xn, yn, t):
    return _g1(xn - yn, t) - _g1(xn + yn, t)


def _k1(xn, yn, t):
    """Normal factor of K: image difference / y_N, or its y_N -> 0 limit."""
    if yn == 0.0:
        return xn / t * _g1(xn, t)
    return _dir1(xn, yn, t) / yn


def _quad(f, a, b, points=None, epsrel=1e-12):
    if points is not None:
        points = [q for q in points if a < q < b] or None
    val, _ = integrate.quad(f, a, b, points=points, epsabs=0, epsrel=epsrel, limit=400)
    return val


def boundary_mass_quadrature(N: int, t: float, y_tangential=None) -> float:
    """∫_Ω K(x, y, t) dx for y on ∂Ω, by iterated adaptive quadrature."""
    st = np.sqrt(t)
    R = 40.0 * st
    yp = np.zeros(N - 1) if y_tangential is None else np.asarray(y_tangential, float)
    if N == 1:
        return _quad(lambda xn: _k1(xn, 0.0, t), 0.0, R, points=[st, 2 * st])
    if N == 2:
        y1 = float(yp[0])
        inner = lambda xn: _quad(lambda x1: _g1(x1 - y1, t) * _k1(xn, 0.0, t),
                                 y1 - R, y1 + R, points=[y1], epsrel=1e-10)
        return _quad(inner, 0.0, R, points=[st, 2 * st], epsrel=1e-10)
    raise ValueError("boundary mass quadrature implemented for N in {1, 2}")


def semigroup_quadrature(z, y, t: float, s: float) -> float:
    """∫_Ω G(z, x, s) K(x, y, t) dx by iterated adaptive quadrature (N = 1, 2)."""
    z, y = np.asarray(z, float), np.asarray(y, float)
    N = z.shape[0]
    w = np.sqrt(2 * max(s, t))
    lo_n = 0.0
    hi_n = max(z[-1], y[-1]) + 30 * w
    pts_n = sorted({z[-1], y[-1]} | {max(c + k * np.sqrt(2 * v), 0.0)
                                     for c, v in ((z[-1], s), (y[-1], t)) for k in (-3, 3)})
    zn, yn = float(z[-1]), float(y[-1])
    if N == 1:
        return _quad(lambda xn: _dir1(zn, xn, s) * _k1(xn, yn, t), lo_n, hi_n, points=pts_n, epsrel=1e-9)
    if N == 2:
        lo_t = min(z[0], y[0]) - 30 * w
        hi_t = max(z[0], y[0]) + 30 * w
        pts_t = [z[0], y[0]]

        z1, y1 = float(z[0]), float(y[0])

        def inner(xn):
            a, b = _dir1(zn, xn, s), _k1(xn, yn, t)
            f = lambda x1: _g1(z1 - x1, s) * a * _g1(x1 - y1, t) * b
            return _quad(f, lo_t, hi_t, points=pts_t, epsrel=1e-9)

        return _quad(inner, lo_n, hi_n, points=pts_n, epsrel=1e-8)
    raise ValueError("semigroup quadrature implemented for N in {1, 2}")


def kernel_mass_quadrature(x, t: float) -> float:
    """∫_Ω G(x, y, t) dy.  The tangential factor integrates to 1, so the
    normal integral of the 1D image kernel carries the whole mass."""
    x = np.asarray(x, float)
    xn = x[-1]
    st = np.sqrt(t)
    hi = xn + 40 * st
    f = lambda yn: _dir1(xn, yn, t)
    return _quad(f, 0.0, hi, points=[xn, max(xn - 5 * st, 0.0), xn + 5 * st], epsrel=1e-13)


def check_boundary_mass(ts=(0.01, 0.1, 1.0, 10.0), dims=(1, 2), rtol=1e-6) -> CheckRow:
    worst = 0.0
    for N in dims:
        for t in ts:
            q = boundary_mass_quadrature(N, t)
            worst = max(worst, abs(q / kn.boundary_k_mass(t) - 1.0))
    return CheckRow("boundary_mass_identity", worst <= rtol, worst, rtol, len(ts) * len(dims))


def semigroup_samples(n: int, rng: np.random.Generator):
    """(z, y, t, s) with roughly half the y on the boundary and half in N = 2."""
    out = []
    for i in range(n):
        N = 1 + (i % 2)
        t, s = np.exp(rng.uniform(np.log(0.05), np.log(2.0), size=2))
        y = np.concatenate([rng.uniform(-1, 1, N - 1), [0.0 if i % 4 < 2 else rng.uniform(0.05, 1.5)]])
        z = np.concatenate([y[:-1] + rng.uniform(-1, 1, N - 1), [rng.uniform(0.05, 1.5)]])
        out.append((z, y, float(t), float(s)))
    return out


def check_semigroup(n: int = 20, seed: int = 0, rtol=1e-4) -> CheckRow:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for z, y, t, s in semigroup_samples(n, rng):
        q = semigroup_quadrature(z, y, t, s)
        exact = kn.k_kernel(z, y, t + s)
        worst = max(worst, abs(q / exact - 1.0))
    return CheckRow("semigroup_identity", worst <= rtol, worst, rtol, n)


def check_kernel_mass(n: int = 100, seed: int = 0, rtol=1e-8) -> CheckRow:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        N = int(rng.integers(1, 4))
        t = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
        x = np.concatenate([rng.uniform(-2, 2, N - 1), [np.exp(rng.uniform(np.log(1e-3), np.log(5.0)))]])
        closed = float(kn.dirichlet_kernel_mass(x, t))
        worst = max(worst, abs(kernel_mass_quadrature(x, t) / closed - 1.0))
    return CheckRow("kernel_mass_closed_form", worst <= rtol, worst, rtol, n)


def _random_pairs(rng, n, N, interior=True):
    xp = rng.uniform(-3, 3, (n, N - 1))
    yp = rng.uniform(-3, 3, (n, N - 1))
    lo = 1e-3 if interior else 0.0
    xn = rng.uniform(lo, 3, (n, 1))
    yn = rng.uniform(lo, 3, (n, 1))
    t = np.exp(rng.uniform(np.log(0.05), np.log(5.0), n))
    return np.hstack([xp, xn]), np.hstack([yp, yn]), t


def check_symmetry(n: int = 10_000, seed: int = 0) -> CheckRow:
    rng = np.random.default_rng(seed)
    bad, worst = 0, 0.0
    for N in kn.SUPPORTED_DIMENSIONS:
        x, y, t = _random_pairs(rng, n, N)
        a, b = kn.dirichlet_kernel(x, y, t), kn.dirichlet_kernel(y, x, t)
        scale = kn.free_heat_kernel(N, np.zeros(N), t)
        err = np.abs(a - b) / scale
        bad += int(np.sum(err > 1e-15))
        worst = max(worst, float(err.max()))
    return CheckRow("G_symmetry", bad == 0, worst, 1e-15, 3 * n, f"{bad} violations")


def check_boundary_vanishing(n: int = 10_000, seed: int = 0) -> CheckRow:
    rng = np.random.default_rng(seed)
    bad = 0
    for N in kn.SUPPORTED_DIMENSIONS:
        x, y, t = _random_pairs(rng, n, N, interior=False)
        x[:, -1] = 0.0
        bad += int(np.sum(kn.dirichlet_kernel(x, y, t) != 0.0))
        bad += int(np.sum(kn.k_kernel(x, y, t) != 0.0))
    return CheckRow("boundary_vanishing", bad == 0, float(bad), 0.0, 3 * n, f"{bad} violations")


def check_positivity(n: int = 10_000, seed: int = 0) -> CheckRow:
    rng = np.random.default_rng(seed)
    bad = 0
    for N in kn.SUPPORTED_DIMENSIONS:
        x, y, t = _random_pairs(rng, n, N)
        bad += int(np.sum(~(kn.dirichlet_kernel(x, y, t) > 0)))
        y[: n // 2, -1] = 0.0  # K stays positive for boundary y as well
        bad += int(np.sum(~(kn.k_kernel(x, y, t) > 0)))
    return CheckRow("positivity", bad == 0, float(bad), 0.0, 3 * n, f"{bad} violations")


def check_time_monotonicity(n: int = 10_000, seed: int = 0) -> CheckRow:
    rng = np.random.default_rng(seed)
    bad, worst = 0, 0.0
    for d in kn.SUPPORTED_DIMENSIONS:
        x = rng.uniform(-4, 4, (n, d))
        t = np.exp(rng.uniform(np.log(0.01), np.log(10.0), n))
        s = t * rng.uniform(1e-6, 1.0, n)
        gap = kn.time_monotonicity_gap(d, x, s, t)
        scale = kn.free_heat_kernel(d, np.zeros(d), 2 * t - s)
        rel = gap / scale
        bad += int(np.sum(rel < -1e-14))
        worst = min(worst, float(rel.min()))
    return CheckRow("time_monotonicity", bad == 0, worst, 0.0, 3 * n, f"{bad} violations")


def empirical_c2(n: int = 10_000, seed: int = 0) -> float:
    """Observed maximum of the Gaussian-bound ratio over random samples (all dimensions)."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for N in kn.SUPPORTED_DIMENSIONS:
        xp = rng.uniform(-3, 3, (n, N - 1))
        yp = rng.uniform(-3, 3, (n, N - 1))
        xn = np.exp(rng.uniform(np.log(1e-4), np.log(5), (n, 1)))
        yn = np.concatenate([np.zeros((n // 4, 1)), np.exp(rng.uniform(np.log(1e-4), np.log(5), (n - n // 4, 1)))])
        t = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), n))
        r = kn.gaussian_bound_ratio(np.hstack([xp, xn]), np.hstack([yp, yn]), t)
        best = max(best, float(np.max(r[np.isfinite(r)])))
    return best


def check_gaussian_bound(n: int = 10_000, seed: int = 0) -> CheckRow:
    c1 = empirical_c2(n, seed)
    c2 = empirical_c2(2 * n, seed + 1)
    drift = abs(c2 / c1 - 1.0)
    return CheckRow("gaussian_upper_bound", bool(np.isfinite(c1) and drift <= 0.1), drift, 0.1, 3 * n,
                    f"empirical C2 = {c1:.6g} (doubled sample: {c2:.6g})")


def run_all(seed: int = 0, fast: bool = False) -> list[CheckRow]:
    n = 2000 if fast else 10_000
    return [
        check_boundary_mass(),
        check_semigroup(20, seed),
        check_kernel_mass(100, seed),
        check_symmetry(n, seed),
        check_boundary_vanishing(n, seed),
        check_positivity(n, seed),
        check_time_monotonicity(n, seed),
        check_gaussian_bound(n, seed),
    ]
