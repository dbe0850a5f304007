"""Nonnegative Radon measures on the closed half space and their ball functionals.

A measure is stored as  interior density g(x) dx  +  h(x') ⊗ δ(x_N)  +  atoms,
all multiplied by a global scale.  The boundary-line part lives on the
hyperplane x_N = 0 (δ is the one-dimensional Dirac mass at the origin).
Densities are vectorized callables acting on arrays whose last axis holds
coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import kernels as kn
from .kernels import DomainError
from .quadrature import (FINE, Region, Resolution, Singularity, ball_volume, gaussian_breaks,
                         integrate_region)

Density = Callable[[np.ndarray], np.ndarray]

PROFILE_KINDS = ("interior_power", "interior_log", "boundary_power", "boundary_log",
                 "boundary_line_power", "boundary_line_log")


@dataclass(frozen=True)
class SingularPoint:
    """Density behaves like r^{-power} |log r|^{-log_power} near `center`."""

    center: np.ndarray
    power: float = 0.0
    log_power: float = 0.0

    @property
    def singularity(self) -> Singularity:
        return Singularity(self.power, self.log_power)


@dataclass(frozen=True)
class HalfSpaceMeasure:
    N: int
    interior: Optional[Density] = None
    f: Optional[Density] = None  # set when interior = x_N * f
    boundary_line: Optional[Density] = None
    atoms: tuple = ()
    support_center: Optional[np.ndarray] = None
    support_radius: Optional[float] = None
    line_support_radius: Optional[float] = None
    singular: Optional[SingularPoint] = None
    line_singular: Optional[SingularPoint] = None
    scale: float = 1.0
    label: str = ""
    focus: tuple = field(default=())  # points where grids should be refined

    def __post_init__(self):
        if self.N not in kn.SUPPORTED_DIMENSIONS:
            raise DomainError(f"dimension {self.N} not supported")
        if self.scale < 0:
            raise DomainError("measure scale must be nonnegative")
        for pos, mass in self.atoms:
            if mass <= 0:
                raise DomainError("atom masses must be positive")
            if np.asarray(pos).shape != (self.N,) or pos[-1] < 0:
                raise DomainError("atoms must sit in the closed half space")
        if self.boundary_line is not None and self.N == 1:
            raise DomainError("boundary-line densities need N >= 2; use a boundary atom for N = 1")
        if self.singular is not None:
            self.singular.singularity.check(self.N)
        if self.line_singular is not None:
            self.line_singular.singularity.check(self.N - 1)

    @property
    def is_zero(self) -> bool:
        return self.scale == 0 or (self.interior is None and self.boundary_line is None
                                   and not self.atoms)

    def scaled(self, kappa: float) -> "HalfSpaceMeasure":
        return replace(self, scale=self.scale * kappa)

    def density(self, x) -> np.ndarray:
        """Scaled interior density g at x."""
        x = np.asarray(x, float)
        if self.interior is None:
            return np.zeros(x.shape[:-1])
        return self.scale * self._g(x)

    def _g(self, x):
        val = self.interior(x)
        if self.support_radius is not None:
            inside = np.sum((x - self.support_center) ** 2, axis=-1) < self.support_radius ** 2
            val = np.where(inside, val, 0.0)
        return np.where(x[..., -1] >= 0, val, 0.0)

    def _f(self, x):
        val = self.f(x)
        if self.support_radius is not None:
            inside = np.sum((x - self.support_center) ** 2, axis=-1) < self.support_radius ** 2
            val = np.where(inside, val, 0.0)
        return val

    def _h(self, xp):
        val = self.boundary_line(xp)
        if self.line_support_radius is not None:
            c = self.support_center[:-1] if self.support_center is not None else 0.0
            inside = np.sum((xp - c) ** 2, axis=-1) < self.line_support_radius ** 2
            val = np.where(inside, val, 0.0)
        return val

    def boundary_mass(self) -> float:
        """μ(∂Ω): boundary atoms plus the total boundary-line mass."""
        total = sum(m for pos, m in self.atoms if pos[-1] == 0)
        if self.boundary_line is not None:
            big = self.line_support_radius
            if big is None:
                raise DomainError("boundary-line mass needs a finite line support radius")
            zero = np.zeros(self.N)
            total += _line_integral(self, zero, big, lambda yp: np.ones(yp.shape[:-1]))
        return self.scale * total

    def extra_balls(self):
        if self.support_radius is None:
            return ()
        return ((np.asarray(self.support_center, float), float(self.support_radius)),)


def _as_array(z, N=None) -> np.ndarray:
    if isinstance(z, kn.Point):
        z = z.as_array()
    z = np.atleast_1d(np.asarray(z, float))
    if N is not None and z.shape != (N,):
        raise DomainError(f"expected a point in R^{N}, got shape {z.shape}")
    return z


def _interior_integral(mu: HalfSpaceMeasure, z, sigma, weight, res=FINE) -> float:
    region = Region(z, sigma, True, mu.extra_balls())
    sing = mu.singular
    pole, s = None, None
    if sing is not None and np.linalg.norm(sing.center - z) <= 2 * sigma:
        pole = sing.center
        if np.linalg.norm(sing.center - z) <= sigma:
            s = sing.singularity
    return integrate_region(lambda y: mu._g(y) * weight(y), region, pole=pole, singularity=s, res=res)


def _line_integral(mu: HalfSpaceMeasure, z, sigma, weight, res=FINE) -> float:
    """∫ over {y' : |(y', 0) - z| < σ} of h(y') weight(y') dy'."""
    zN = z[-1]
    if zN >= sigma:
        return 0.0
    rad = np.sqrt(sigma * sigma - zN * zN)
    zp = z[:-1]
    balls = ()
    if mu.line_support_radius is not None:
        c = mu.support_center[:-1] if mu.support_center is not None else np.zeros(mu.N - 1)
        balls = ((np.asarray(c, float), float(mu.line_support_radius)),)
    region = Region(zp, rad, False, balls)
    sing = mu.line_singular
    pole, s = None, None
    if sing is not None and np.linalg.norm(sing.center - zp) <= 2 * rad:
        pole = sing.center
        if np.linalg.norm(sing.center - zp) <= rad:
            s = sing.singularity
    return integrate_region(lambda yp: mu._h(yp) * weight(yp), region, pole=pole, singularity=s, res=res)


def _pair_ball(mu, z, sigma, weight_full, weight_line, res=FINE) -> float:
    z = _as_array(z, mu.N)
    if not sigma > 0:
        raise DomainError("ball radius must be positive")
    if mu.is_zero:
        return 0.0
    total = 0.0
    if mu.interior is not None:
        total += _interior_integral(mu, z, sigma, weight_full, res)
    if mu.boundary_line is not None:
        total += _line_integral(mu, z, sigma, weight_line, res)
    for pos, mass in mu.atoms:
        pos = np.asarray(pos, float)
        if np.sum((pos - z) ** 2) <= sigma * sigma:
            total += mass * float(weight_full(pos[None, :])[0])
    return mu.scale * total


def ball_mass(mu: HalfSpaceMeasure, z, sigma: float, res: Resolution = FINE) -> float:
    """μ(B_Ω(z, σ))."""
    one = lambda y: np.ones(y.shape[:-1])
    return _pair_ball(mu, z, sigma, one, one, res)


def weighted_ball_integral(mu: HalfSpaceMeasure, z, sigma: float, s: float,
                           res: Resolution = FINE) -> float:
    """∫_{B_Ω(z,σ)} dμ(y) / (y_N + √s)."""
    if not s > 0:
        raise DomainError("s must be positive")
    rs = np.sqrt(s)
    return _pair_ball(mu, z, sigma, lambda y: 1.0 / (y[..., -1] + rs),
                      lambda yp: np.full(yp.shape[:-1], 1.0 / rs), res)


def half_ball_moment(z, sigma: float) -> float:
    """∫_{B_Ω(z,σ)} y_N dy."""
    z = _as_array(z)
    if not sigma > 0:
        raise DomainError("ball radius must be positive")
    N = z.shape[0]
    zN = z[-1]
    if zN < 0:
        raise DomainError("center must lie in the closed half space")
    if zN >= sigma:
        return float(zN * ball_volume(N) * sigma ** N)
    # slice at height y_N has (N-1)-volume ω_{N-1} (σ² - (y_N - z_N)²)^{(N-1)/2}
    from scipy import integrate
    wv = ball_volume(N - 1) if N > 1 else 1.0
    val, _ = integrate.quad(lambda y: y * wv * max(sigma ** 2 - (y - zN) ** 2, 0.0) ** ((N - 1) / 2),
                            0.0, zN + sigma, epsabs=0, epsrel=1e-13, limit=200)
    return float(val)


def apply_K(mu: HalfSpaceMeasure, x, t: float, config: kn.KernelConfig = kn.DEFAULT_CONFIG,
            res: Resolution = FINE) -> float:
    """[K(t)μ](x) = ∫ K(x, y, t) dμ(y)."""
    if not t > 0:
        raise DomainError("time argument must be positive")
    x = _as_array(x, mu.N)
    if mu.is_zero or x[-1] <= 0:
        return 0.0
    N = mu.N
    st = np.sqrt(t)
    reach = config.truncation_radius_sigmas * st
    total = 0.0
    if mu.interior is not None:
        region = Region(x, reach, True, mu.extra_balls())
        pole, s = None, None
        sing = mu.singular
        if sing is not None and np.linalg.norm(sing.center - x) < reach:
            pole, s = sing.center, sing.singularity
        if mu.f is not None:
            func = lambda y: kn.dirichlet_kernel(x, y, t) * mu._f(y)
        else:
            func = lambda y: kn.k_kernel(x, y, t, config) * mu._g(y)
        total += integrate_region(func, region, pole=pole, singularity=s, res=res,
                                  radial_breaks=gaussian_breaks(x, np.sqrt(2 * t)))
    if mu.boundary_line is not None:
        xp = x[:-1]
        balls = ()
        if mu.line_support_radius is not None:
            c = mu.support_center[:-1] if mu.support_center is not None else np.zeros(N - 1)
            balls = ((np.asarray(c, float), float(mu.line_support_radius)),)
        region = Region(xp, reach, False, balls)
        pole, s = None, None
        sing = mu.line_singular
        if sing is not None and np.linalg.norm(sing.center - xp) < reach:
            pole, s = sing.center, sing.singularity
        conv = integrate_region(lambda yp: kn.free_heat_kernel(N - 1, xp - yp, t) * mu._h(yp),
                                region, pole=pole, singularity=s, res=res,
                                radial_breaks=gaussian_breaks(xp, np.sqrt(2 * t)))
        total += x[-1] / t * kn.gaussian_1d(x[-1], t) * conv
    for pos, mass in mu.atoms:
        total += mass * kn.k_kernel(x, np.asarray(pos, float), t, config)
    return mu.scale * total


def apply_K_many(mu: HalfSpaceMeasure, xs, t: float, **kw) -> np.ndarray:
    xs = np.asarray(xs, float).reshape(-1, mu.N)
    return np.array([apply_K(mu, x, t, **kw) for x in xs])


# ---------------------------------------------------------------- constructors

def zero_measure(N: int) -> HalfSpaceMeasure:
    return HalfSpaceMeasure(N, label="zero")


def atom(position, mass: float = 1.0) -> HalfSpaceMeasure:
    position = _as_array(position)
    return HalfSpaceMeasure(position.shape[0], atoms=((position, float(mass)),),
                            label="atom", focus=(position,))


def weighted_density(N: int, f: Density, support_center=None, support_radius=None,
                     singular: SingularPoint | None = None, label="x_N f") -> HalfSpaceMeasure:
    """μ = x_N f(x) dx."""
    c = None if support_center is None else _as_array(support_center, N)
    focus = () if c is None else (c,)
    return HalfSpaceMeasure(N, interior=lambda x: x[..., -1] * f(x), f=f, support_center=c,
                            support_radius=support_radius, singular=singular, label=label,
                            focus=focus)


def plain_density(N: int, g: Density, support_center=None, support_radius=None,
                  singular: SingularPoint | None = None, label="g") -> HalfSpaceMeasure:
    """μ = g(x) dx with no x_N factor."""
    c = None if support_center is None else _as_array(support_center, N)
    return HalfSpaceMeasure(N, interior=g, support_center=c, support_radius=support_radius,
                            singular=singular, label=label, focus=() if c is None else (c,))


def gaussian_bump(N: int, center, width: float, amplitude: float = 1.0) -> HalfSpaceMeasure:
    """μ = x_N · A exp(-|x - c|² / (2 w²)), truncated at 9 widths."""
    c = _as_array(center, N)
    f = lambda x: amplitude * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * width ** 2))
    return weighted_density(N, f, c, 9.0 * width, label="gaussian")


def smooth_bump(N: int, center, radius: float, amplitude: float = 1.0) -> HalfSpaceMeasure:
    """μ = x_N · A exp(1 - 1/(1 - |x-c|²/r²)) on B(c, r): smooth, compactly supported."""
    c = _as_array(center, N)

    def f(x):
        q = np.sum((x - c) ** 2, axis=-1) / radius ** 2
        inside = q < 1
        out = np.zeros(q.shape)
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - q[inside]))
        return out

    return weighted_density(N, f, c, radius, label="smooth_bump")


def constant_density(N: int, value: float, center=None, radius=None, weighted=True) -> HalfSpaceMeasure:
    """x_N·value (weighted) or value (plain) on B(center, radius) or everywhere."""
    one = lambda x: np.full(x.shape[:-1], float(value))
    if weighted:
        return weighted_density(N, one, center, radius, label="constant")
    return plain_density(N, one, center, radius, label="constant")


def boundary_line_density(N: int, h: Density, radius: float | None,
                          singular: SingularPoint | None = None, label="h") -> HalfSpaceMeasure:
    """μ = h(x') ⊗ δ(x_N), h supported in B'(0, radius)."""
    return HalfSpaceMeasure(N, boundary_line=h, support_center=np.zeros(N) if radius else None,
                            line_support_radius=radius, line_singular=singular, label=label,
                            focus=(np.zeros(N),))


@dataclass(frozen=True)
class SingularProfile:
    kind: str
    center: np.ndarray
    p: float
    N: int

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise DomainError(f"unknown profile kind {self.kind!r}")
        if self.N not in kn.SUPPORTED_DIMENSIONS:
            raise DomainError(f"dimension {self.N} not supported")
        c = _as_array(self.center, self.N)
        object.__setattr__(self, "center", c)
        if not self.p > 1:
            raise DomainError("p must exceed 1")
        if self.kind.startswith("interior") and not c[-1] > 0:
            raise DomainError("interior profiles need a center with positive normal coordinate")
        if not self.kind.startswith("interior") and c[-1] != 0:
            raise DomainError("boundary profiles need a center on the boundary")
        if self.kind.startswith("boundary_line") and self.N == 1:
            raise DomainError("boundary-line profiles need N >= 2")
        if self.kind.endswith("_log"):
            crit = self.critical_exponent
            if not np.isclose(self.p, crit, rtol=1e-12, atol=0):
                raise DomainError(f"{self.kind} is defined only at p = {crit}")
            if self.kind == "boundary_line_log" and not crit < 2:
                raise DomainError("boundary_line_log needs p_{N+1} < 2, i.e. N >= 2")

    @property
    def critical_exponent(self) -> float:
        if self.kind.startswith("interior"):
            return kn.fujita_exponent(self.N)
        return kn.fujita_exponent(self.N + 1)

    @property
    def cutoff(self) -> float:
        return 0.5 if self.kind.endswith("_log") else 1.0


def _radial(center, a, b, dim_slice=slice(None)):
    """r^{-a} |log r|^{-b} with r = |x - center|."""
    def f(x):
        r = np.sqrt(np.sum((x[..., dim_slice] - center) ** 2, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = r ** (-a)
            if b:
                out = out * np.abs(np.log(r)) ** (-b)
        return np.where(r > 0, out, np.inf)
    return f


def make_profile(profile: SingularProfile, kappa: float = 1.0) -> HalfSpaceMeasure:
    """κ times the optimal-singularity measure of the given kind."""
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    N, p, c, k = profile.N, profile.p, profile.center, profile.kind
    rad = profile.cutoff
    if k == "interior_power":
        a, b = 2.0 / (p - 1.0), 0.0
    elif k == "interior_log":
        a, b = float(N), N / 2.0 + 1.0
    elif k == "boundary_power":
        a, b = 2.0 / (p - 1.0), 0.0
    elif k == "boundary_log":
        a, b = N + 1.0, (N + 1) / 2.0 + 1.0
    elif k == "boundary_line_power":
        a, b = 2.0 / (p - 1.0) - 2.0, 0.0
    else:
        a, b = N - 1.0, (N + 1) / 2.0 + 1.0

    if k.startswith("boundary_line"):
        cp = c[:-1]
        sing = SingularPoint(cp, max(a, 0.0), b)
        mu = boundary_line_density(N, _radial(cp, a, b), rad, sing if a > 0 or b else None, label=k)
        return mu.scaled(kappa)
    # boundary-centred densities gain one power of r from the x_N factor
    eff = a - 1.0 if k.startswith("boundary") else a
    sing = SingularPoint(c, max(eff, 0.0), b) if (eff > 0 or b) else None
    if sing is not None:
        cexp = N - sing.power
        if cexp < 0 or (cexp == 0 and b <= 1):
            raise DomainError(f"{k} profile is not locally integrable at p = {p} (N = {N})")
    mu = weighted_density(N, _radial(c, a, b), c, rad, sing, label=k)
    return mu.scaled(kappa)
