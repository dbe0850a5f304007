"""Closed-form heat kernels on the half space {x_N > 0}.

Points are arrays whose last axis holds the coordinates (x', x_N), normal
coordinate last.  Every kernel broadcasts over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

SUPPORTED_DIMENSIONS = (1, 2, 3)


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class Point:
    """A location (x', x_N) in the closed half space."""

    tangential: tuple[float, ...] = field(default_factory=tuple)
    normal: float = 0.0

    def __post_init__(self):
        if self.normal < 0:
            raise DomainError(f"normal coordinate must be >= 0, got {self.normal}")
        if self.dim not in SUPPORTED_DIMENSIONS:
            raise DomainError(f"dimension {self.dim} not supported")

    @property
    def dim(self) -> int:
        return len(self.tangential) + 1

    def as_array(self) -> np.ndarray:
        return np.array([*self.tangential, self.normal], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Point":
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(tuple(float(v) for v in a[:-1]), float(a[-1]))


@dataclass(frozen=True)
class KernelConfig:
    # K switches to its boundary branch when y_N / sqrt(t) falls below this.
    small_argument_threshold: float = 1e-8
    quadrature_tol: float = 1e-10
    truncation_radius_sigmas: float = 12.0

    def __post_init__(self):
        if self.quadrature_tol <= 0:
            raise DomainError("quadrature_tol must be positive")
        if self.truncation_radius_sigmas < 6:
            raise DomainError("truncation_radius_sigmas must be >= 6")


DEFAULT_CONFIG = KernelConfig()


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("time argument must be positive")
    return t


def _coords(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    return x


def free_heat_kernel(d: int, x, t) -> np.ndarray:
    """(4 pi t)^(-d/2) exp(-|x|^2 / 4t).  For d = 1 a bare scalar x is accepted."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        r2 = x * x
    else:
        r2 = np.sum(x * x, axis=-1)
    return (4.0 * np.pi * t) ** (-0.5 * d) * np.exp(-r2 / (4.0 * t))


def gaussian_1d(x, t) -> np.ndarray:
    """One-dimensional heat kernel, no argument checks (hot path)."""
    return np.exp(-(x * x) / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)


def one_minus_exp_over(a) -> np.ndarray:
    """(1 - e^{-a}) / a, continuous at a = 0."""
    a = np.asarray(a, dtype=float)
    out = np.ones_like(a)
    big = a > 1e-8
    out[big] = -np.expm1(-a[big]) / a[big]
    small = ~big
    out[small] = 1.0 - 0.5 * a[small]
    return out


def dirichlet_kernel(x, y, t) -> np.ndarray:
    """G(x, y, t) = Gamma_N(x - y, t) (1 - exp(-x_N y_N / t)).

    The factor 1 - e^{-a} is evaluated as -expm1(-a), which keeps full
    relative accuracy for every a >= 0; exactly 0 when x_N or y_N is 0.
    """
    t = _check_time(t)
    x, y = _coords(x), _coords(y)
    n = max(x.shape[-1], y.shape[-1])
    a = x[..., -1] * y[..., -1] / t
    return free_heat_kernel(n, x - y, t) * (-np.expm1(-a))


def dirichlet_kernel_images(x, y, t) -> np.ndarray:
    """Image-difference form Gamma_{N-1}(x'-y') [Gamma_1(x_N-y_N) - Gamma_1(x_N+y_N)].

    Algebraically equal to `dirichlet_kernel`; loses relative accuracy when
    x_N y_N / t is small.  Kept as an independent cross-check.
    """
    t = _check_time(t)
    x, y = _coords(x), _coords(y)
    n = max(x.shape[-1], y.shape[-1])
    normal = gaussian_1d(x[..., -1] - y[..., -1], t) - gaussian_1d(x[..., -1] + y[..., -1], t)
    if n == 1:
        return normal
    return free_heat_kernel(n - 1, x[..., :-1] - y[..., :-1], t) * normal


def k_kernel(x, y, t, config: KernelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """K(x, y, t) = G(x, y, t) / y_N, with the d/dy_N G limit on the boundary.

    Boundary branch (y_N / sqrt(t) below the config threshold):
    (x_N / t) Gamma_N((x' - y', x_N), t).
    """
    t = _check_time(t)
    x, y = _coords(x), _coords(y)
    x, y = np.broadcast_arrays(x, y)
    t = np.broadcast_to(t, x.shape[:-1])
    n = x.shape[-1]
    xn, yn = x[..., -1], y[..., -1]
    gauss = free_heat_kernel(n, x - y, t)
    on_boundary = yn / np.sqrt(t) < config.small_argument_threshold
    out = np.empty(xn.shape, dtype=float)
    # interior branch: G / y_N, written so that no division by tiny y_N occurs
    interior = ~on_boundary
    a = xn[interior] * yn[interior] / t[interior]
    out[interior] = gauss[interior] * (xn[interior] / t[interior]) * one_minus_exp_over(a)
    bd = on_boundary
    shifted = x[bd].copy()
    shifted[..., :-1] -= y[bd][..., :-1]
    out[bd] = (xn[bd] / t[bd]) * free_heat_kernel(n, shifted, t[bd])
    return out if out.ndim else float(out)


def dirichlet_kernel_mass(x, t) -> np.ndarray:
    """Integral of G(x, ., t) over the half space: erf(x_N / (2 sqrt t))."""
    t = _check_time(t)
    x = _coords(x)
    return erf(x[..., -1] / (2.0 * np.sqrt(t)))


def boundary_k_mass(t) -> np.ndarray:
    """Integral over x of K(x, y, t) for y on the boundary: (pi t)^(-1/2)."""
    t = _check_time(t)
    return 1.0 / np.sqrt(np.pi * t)


def gaussian_bound_ratio(x, y, t) -> np.ndarray:
    """K / [x_N / ((x_N + sqrt t)(y_N + sqrt t)) Gamma_N(x - y, 2t)] for interior x."""
    x, y = _coords(x), _coords(y)
    t = _check_time(t)
    n = x.shape[-1]
    st = np.sqrt(t)
    denom = x[..., -1] / ((x[..., -1] + st) * (y[..., -1] + st)) * free_heat_kernel(n, x - y, 2 * t)
    with np.errstate(invalid="ignore", divide="ignore"):
        return k_kernel(x, y, t) / denom


def time_monotonicity_gap(d: int, x, s, t) -> np.ndarray:
    """Gamma_d(x, 2t - s) - (s / 2t)^{d/2} Gamma_d(x, s); nonnegative for 0 < s < t."""
    s, t = np.asarray(s, float), np.asarray(t, float)
    return free_heat_kernel(d, x, 2 * t - s) - (s / (2 * t)) ** (d / 2) * free_heat_kernel(d, x, s)


def fujita_exponent(d: int) -> float:
    """p_d = 1 + 2/d."""
    return 1.0 + 2.0 / d
