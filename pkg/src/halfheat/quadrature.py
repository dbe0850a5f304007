"""Ray-based quadrature over half balls with radial power/log singularities.

Integrals over B(z, sigma) ∩ {y_N >= 0} ∩ B(support) are written in polar
coordinates around a pole c (a declared singular center or z itself).  Each
ray c + r*omega meets the convex region in one interval [lo, hi]; the radial
integral on that interval uses composite Gauss-Legendre panels, and when the
pole is singular the first panel is mapped to w = -log r with an analytic
tail for r < r_min, computed from the declared singular exponents.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .kernels import DomainError


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def composite_gl(breaks: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule over consecutive breakpoints; breaks shape (..., P+1)."""
    x, w = gauss_legendre(order)
    a = breaks[..., :-1, None]
    h = (breaks[..., 1:] - breaks[..., :-1])[..., None]
    nodes = a + h * x
    weights = h * w
    shape = nodes.shape[:-2] + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)


@lru_cache(maxsize=None)
def _log_tail_integral(c: float, b: float, W: float) -> float:
    """∫_W^∞ e^{-c w} w^{-b} dw for c >= 0 (b > 1 when c == 0)."""
    if c <= 0:
        if b <= 1:
            raise DomainError("non-integrable singularity (radial exponent too large)")
        return W ** (1.0 - b) / (b - 1.0)
    if b == 0:
        return np.exp(-c * W) / c
    val, _ = integrate.quad(lambda w: np.exp(-c * (w - W)) * w ** (-b), W, np.inf,
                            epsabs=0, epsrel=1e-12, limit=200)
    return val * np.exp(-c * W)


@dataclass(frozen=True)
class Singularity:
    """Integrand behaves like r^{-power} |log r|^{-log_power} near its pole."""

    power: float = 0.0
    log_power: float = 0.0

    def check(self, dim: int) -> None:
        c = dim - self.power
        if c < 0 or (c == 0 and self.log_power <= 1):
            raise DomainError(
                f"singularity r^-{self.power}|log r|^-{self.log_power} is not integrable in dimension {dim}")


@dataclass(frozen=True)
class Resolution:
    angular_panels: int = 48
    angular_order: int = 6
    polar_panels: int = 16  # dim 3 only: panels in cos(theta)
    radial_panels: int = 6
    radial_order: int = 10
    log_panels: int = 14
    log_order: int = 8


FINE = Resolution()
COARSE = Resolution(angular_panels=16, angular_order=4, polar_panels=6, radial_panels=3,
                    radial_order=8, log_panels=10, log_order=6)


def directions(dim: int, res: Resolution = FINE, kinks=()) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors and solid-angle weights on S^{dim-1}."""
    if dim == 1:
        return np.array([[-1.0], [1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        br = np.linspace(0.0, 2 * np.pi, res.angular_panels + 1)
        if len(kinks):
            br = np.unique(np.concatenate([br, np.mod(np.asarray(kinks, float), 2 * np.pi)]))
        th, w = composite_gl(br, res.angular_order)
        return np.stack([np.cos(th), np.sin(th)], axis=-1), w
    if dim == 3:
        u, wu = composite_gl(np.linspace(-1.0, 1.0, res.polar_panels + 1), res.angular_order)
        ph, wp = composite_gl(np.linspace(0.0, 2 * np.pi, res.angular_panels + 1), res.angular_order)
        s = np.sqrt(1.0 - u * u)
        U, P = np.meshgrid(u, ph, indexing="ij")
        S = np.sqrt(1.0 - U * U)
        # normal coordinate is last: (x1, x2, x3=cos theta)
        om = np.stack([S * np.cos(P), S * np.sin(P), U], axis=-1).reshape(-1, 3)
        del s
        return om, (wu[:, None] * wp[None, :]).ravel()
    raise DomainError(f"dimension {dim} not supported")


def _ray_ball(pole, omega, center, radius):
    """Parameter interval of the ray pole + r*omega inside the open ball."""
    d = pole - center
    b = omega @ d
    c = d @ d - radius * radius
    disc = b * b - c
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    lo = np.where(ok, -b - sq, 0.0)
    hi = np.where(ok, -b + sq, 0.0)
    return np.maximum(lo, 0.0), np.maximum(hi, 0.0)


@dataclass
class Region:
    """B(center, radius) ∩ optional half space ∩ optional extra balls."""

    center: np.ndarray
    radius: float
    halfspace: bool = True
    extra_balls: tuple = ()

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        inside = np.sum((y - self.center) ** 2, axis=-1) < self.radius ** 2
        if self.halfspace:
            inside &= y[..., -1] >= 0
        for c, r in self.extra_balls:
            inside &= np.sum((y - c) ** 2, axis=-1) < r * r
        return inside

    def ray_interval(self, pole, omega):
        lo, hi = _ray_ball(pole, omega, self.center, self.radius)
        for c, r in self.extra_balls:
            l2, h2 = _ray_ball(pole, omega, np.asarray(c, float), r)
            lo, hi = np.maximum(lo, l2), np.minimum(hi, h2)
        if self.halfspace:
            on = omega[:, -1]
            with np.errstate(divide="ignore"):
                cut = np.where(on < 0, pole[-1] / np.where(on < 0, -on, 1.0), np.inf)
            hi = np.minimum(hi, cut)
        hi = np.maximum(hi, lo)
        return lo, hi

    def kink_angles(self, pole) -> list[float]:
        """Directions (dim 2) where the exit switches between sphere and plane."""
        if len(self.center) != 2 or not self.halfspace:
            return []
        zN = self.center[-1]
        if abs(zN) >= self.radius:
            return []
        half = np.sqrt(self.radius ** 2 - zN ** 2)
        pts = [np.array([self.center[0] - half, 0.0]), np.array([self.center[0] + half, 0.0])]
        out = []
        for q in pts:
            v = q - pole
            if np.hypot(*v) > 0:
                out.append(float(np.arctan2(v[1], v[0])))
        return out


def integrate_region(func, region: Region, pole=None, singularity: Singularity | None = None,
                     res: Resolution = FINE, radial_breaks=None) -> float:
    """∫_region func(y) dy by polar coordinates around `pole`.

    func maps an array (..., dim) to values (...).  `singularity` declares the
    integrand's behaviour at the pole; the pole must then lie in the closure
    of the region for the log rule to be used.  `radial_breaks(pole, omega)`
    may return extra radial breakpoints per direction, shape (n_dir, k).
    """
    c = np.asarray(region.center if pole is None else pole, dtype=float)
    dim = c.shape[0]
    om, wang = directions(dim, res, region.kink_angles(c))
    lo, hi = region.ray_interval(c, om)
    total = 0.0
    use_log = singularity is not None and (singularity.power > 0 or singularity.log_power > 0)
    if use_log:
        singularity.check(dim)
    starts_at_pole = lo <= 0.0
    breaks = [lo[:, None], hi[:, None]]
    span = hi - lo
    uniform = lo[:, None] + span[:, None] * np.linspace(0, 1, res.radial_panels + 1)[None, 1:-1]
    breaks.append(uniform)
    if radial_breaks is not None:
        extra = np.asarray(radial_breaks(c, om), float)
        breaks.append(np.clip(extra, lo[:, None], hi[:, None]))
    br = np.sort(np.concatenate(breaks, axis=1), axis=1)

    if use_log:
        # first panel handled on a log scale when the ray starts at the pole
        first_hi = br[:, 1].copy()
        log_rows = starts_at_pole & (first_hi > 0)
        br_reg = br.copy()
        br_reg[log_rows, 0] = first_hi[log_rows]  # collapse first panel for regular rule
        total += _log_panel(func, c, om, wang, first_hi, log_rows, singularity, dim, res)
    else:
        br_reg = br

    r, wr = composite_gl(br_reg, res.radial_order)
    pts = c + r[..., None] * om[:, None, :]
    total += float(np.sum(wang[:, None] * wr * r ** (dim - 1) * _eval(func, pts, wr)))
    return total


def _eval(func, pts, weights):
    """func at pts, with zero-weight nodes (degenerate panels) forced to 0."""
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        vals = func(pts)
    return np.where(weights > 0, vals, 0.0)


def _log_panel(func, c, om, wang, rho, rows, sing: Singularity, dim, res) -> float:
    if not np.any(rows):
        return 0.0
    om, wang, rho = om[rows], wang[rows], rho[rows]
    scale = max(1.0, float(np.max(np.abs(c))))
    r_min = np.maximum(rho * 1e-10, 1e-13 * scale)
    r_min = np.minimum(r_min, 0.5 * rho)
    w0, W = -np.log(rho), -np.log(r_min)
    # w = -log r, r = e^{-w}, dr = -r dw
    brk = w0[:, None] + (W - w0)[:, None] * np.linspace(0.0, 1.0, res.log_panels + 1)[None, :]
    w, ww = composite_gl(brk, res.log_order)
    r = np.exp(-w)
    pts = c + r[..., None] * om[:, None, :]
    body = np.sum(wang[:, None] * ww * r ** dim * _eval(func, pts, ww))
    # analytic tail below r_min from the declared leading behaviour
    tail_pts = c + r_min[:, None] * om
    tail_vals = _eval(func, tail_pts, np.ones(len(r_min)))
    cexp = dim - sing.power
    T = np.array([_log_tail_integral(float(cexp), float(sing.log_power), float(Wi)) for Wi in W])
    amp = tail_vals * r_min ** sing.power * W ** sing.log_power
    return float(body + np.sum(wang * amp * T))


def gaussian_breaks(x, sqrt_t, k=(-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0)):
    """Radial breakpoint hint resolving a Gaussian of width sqrt_t centred at x."""
    x = np.asarray(x, float)
    ks = np.asarray(k)

    def hint(pole, om):
        rstar = om @ (x - pole)
        return rstar[:, None] + sqrt_t * ks[None, :]

    return hint


def ball_volume(dim: int) -> float:
    """Volume of the unit ball in R^dim."""
    return float(np.exp(0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1.0)))
