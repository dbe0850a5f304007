"""Monotone Picard iteration of the Duhamel equation and the experiments built on it."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels as kn
from .duhamel import DuhamelOperator
from .grid import Grid, GridSpec, SliceStatus, SolutionField, build_grid
from .kernels import DomainError
from .measures import HalfSpaceMeasure, SingularProfile, apply_K, make_profile
from .quadrature import COARSE, gauss_legendre

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Quadrature or iteration failure that is not a mathematical verdict."""


@dataclass(frozen=True)
class Caps:
    max_sweeps: int = 400
    sup_cap: float = 1e12
    tol: float = 1e-8
    growth_sweeps: int = 5
    # test hook: scales the nonlinear term; 0 gives the linear problem
    nonlinear_amplitude: float = 1.0

    def __post_init__(self):
        if self.max_sweeps < 1 or not self.sup_cap > 1 or not self.tol > 0:
            raise DomainError("invalid iteration caps")


# ----------------------------------------------------------------- data term

def data_term(mu: HalfSpaceMeasure, grid: Grid, op: DuhamelOperator | None = None) -> np.ndarray:
    """[K(t)μ](x) at every grid node.

    Atoms use the closed-form kernel everywhere.  Densities are integrated
    node by node in N = 1; for N >= 2 they are integrated at t_0 only and
    carried forward with the discrete heat semigroup.
    """
    out = np.zeros(grid.shape)
    if mu.is_zero:
        return out
    pts = grid.points()
    t = np.broadcast_to(grid.times.reshape((-1,) + (1,) * grid.N), grid.shape)
    xs = np.broadcast_to(pts[None], grid.shape + (grid.N,))
    for pos, mass in mu.atoms:
        out += mu.scale * mass * kn.k_kernel(xs, np.asarray(pos, float), t)
    if mu.interior is None and mu.boundary_line is None:
        return out
    dens = replace(mu, atoms=())
    flat = pts.reshape(-1, grid.N)
    if grid.N == 1:
        for j, tj in enumerate(grid.times):
            out[j] += np.array([apply_K(dens, x, tj) for x in flat]).reshape(grid.spatial_shape)
        return out
    if op is None:
        op = DuhamelOperator(grid)
    first = np.array([apply_K(dens, x, grid.times[0], res=COARSE) for x in flat])
    out += op.propagate(first.reshape(grid.spatial_shape))
    return out


def grid_for(mu: HalfSpaceMeasure, spec: GridSpec) -> Grid:
    """Grid graded toward the measure's singular points and atoms."""
    focus = list(mu.focus)
    if mu.singular is not None:
        focus.append(mu.singular.center)
    extent = 0.0
    if mu.support_radius is not None and mu.support_center is not None:
        extent = float(np.linalg.norm(mu.support_center) + mu.support_radius)
    if mu.line_support_radius is not None:
        extent = max(extent, float(mu.line_support_radius))
    for pos, _ in mu.atoms:
        extent = max(extent, float(np.linalg.norm(pos)))
    return build_grid(spec, mu.N, focus, extent)


# --------------------------------------------------------------------- Picard

def picard_iterate(U0: np.ndarray, p: float, op: DuhamelOperator, caps: Caps = Caps()) -> SolutionField:
    """u_{k+1} = U0 + D(u_k^p) from u_0 = U0, with convergence and divergence detection."""
    grid = op.grid
    nt = len(grid.times)
    field_ = SolutionField(grid, U0.copy(), [SliceStatus.ITERATING] * nt)
    diag = field_.diagnostics
    if not np.all(np.isfinite(U0)):
        field_.status = [SliceStatus.DIVERGED] * nt
        diag["reason"] = "data term not finite on the grid (measure too singular for this grid)"
        return field_
    if np.any(U0 < 0):
        raise NumericalError("negative data term")
    data_sup = np.maximum(U0.reshape(nt, -1).max(axis=1), 1e-300)
    amp = caps.nonlinear_amplitude
    u = U0.copy()
    field_.sup_history.append(float(u.max()))
    if amp == 0 or not np.any(U0 > 0):
        field_.status = [SliceStatus.CONVERGED] * nt
        field_.iteration_count = 1
        diag["reason"] = "linear problem" if amp == 0 else "zero data"
        return field_
    prev_step, growing = math.inf, 0
    monotone_violation = 0.0
    reason = "max_sweeps reached"
    slice_conv = np.zeros(nt, bool)
    for sweep in range(1, caps.max_sweeps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            F = u ** p
            new = U0 + amp * op.apply(F)
        field_.iteration_count = sweep
        if not np.all(np.isfinite(new)):
            reason = "non-finite iterate"
            bad = ~np.isfinite(new.reshape(nt, -1)).all(axis=1)
            field_.status = [SliceStatus.DIVERGED if b else SliceStatus.ITERATING for b in bad]
            break
        drop = float(np.max(u - new))
        scale = float(np.max(new))
        monotone_violation = max(monotone_violation, drop / scale if scale > 0 else 0.0)
        new = np.maximum(new, u)
        inc = (new - u).reshape(nt, -1).max(axis=1)
        sups = new.reshape(nt, -1).max(axis=1)
        rel = inc / np.maximum(sups, 1e-300)
        u = new
        field_.values = u
        field_.sup_history.append(float(u.max()))
        slice_conv = rel < caps.tol
        blown = sups / data_sup > caps.sup_cap
        if np.any(blown) or np.any(sups > 1e100):
            reason = "sup cap exceeded"
            first = int(np.argmax(blown | (sups > 1e100)))
            field_.status = [SliceStatus.CONVERGED if (c and j < first) else
                             (SliceStatus.DIVERGED if j >= first else SliceStatus.ITERATING)
                             for j, c in enumerate(slice_conv)]
            break
        if np.all(slice_conv):
            reason = "converged"
            field_.status = [SliceStatus.CONVERGED] * nt
            break
        step = float(inc.max())
        if step > prev_step and rel.max() > caps.tol:
            growing += 1
        else:
            growing = 0
        prev_step = step
        if growing >= caps.growth_sweeps:
            reason = "increments grew over consecutive sweeps"
            first = int(np.argmax(~slice_conv))
            field_.status = [SliceStatus.CONVERGED if j < first else SliceStatus.DIVERGED
                             for j in range(nt)]
            break
    else:
        field_.status = [SliceStatus.CONVERGED if c else SliceStatus.ITERATING for c in slice_conv]
    diag["reason"] = reason
    diag["monotone_violation"] = monotone_violation
    if monotone_violation > 1e-12:
        raise NumericalError(f"Picard sequence not monotone (relative drop {monotone_violation:.3g})")
    div = [j for j, s in enumerate(field_.status) if s == SliceStatus.DIVERGED]
    if div:
        diag["first_diverged_time"] = float(grid.times[div[0]])
    return field_


def picard_solve(mu: HalfSpaceMeasure, p: float, grid: Grid | GridSpec, caps: Caps = Caps(),
                 op: DuhamelOperator | None = None) -> SolutionField:
    """Minimal solution of the Duhamel equation on a grid by monotone iteration."""
    if not p > 1:
        raise DomainError("p must exceed 1")
    if isinstance(grid, GridSpec):
        grid = grid_for(mu, grid)
    if op is None:
        op = DuhamelOperator(grid)
    U0 = data_term(mu, grid, op)
    return picard_iterate(U0, p, op, caps)


def duhamel_integral(u: SolutionField, x, t_index: int, p: float,
                     op: DuhamelOperator | None = None) -> float:
    """∫_0^t ∫_Ω G(x, y, t - s) u(y, s)^p dy ds at one point and time node."""
    if not 0 <= t_index < len(u.grid.times):
        raise DomainError("time index outside the grid")
    if op is None:
        op = DuhamelOperator(u.grid)
    return op.point_integral(u.values ** p, x, t_index)


# ------------------------------------------------------------------ dichotomy

@dataclass
class DichotomyResult:
    kappa_lo: float | None
    kappa_hi: float | None
    bracket_ratio: float | None
    outcome: str  # "bracket", "all-diverge", "all-converge"
    refinement_trend: dict = field(default_factory=dict)
    evaluations: list = field(default_factory=list)


def _converged(sf: SolutionField) -> bool:
    return sf.verdict == SliceStatus.CONVERGED


class _ScaledRunner:
    """Reuses grid, operator and the unit-κ data term across κ (Kμ is linear in κ)."""

    def __init__(self, mu: HalfSpaceMeasure, p: float, spec: GridSpec, caps: Caps):
        self.p, self.caps = p, caps
        self.grid = grid_for(mu, spec)
        self.op = DuhamelOperator(self.grid)
        self.unit = data_term(mu, self.grid, self.op)

    def run(self, kappa: float) -> SolutionField:
        return picard_iterate(kappa * self.unit, self.p, self.op, self.caps)


def dichotomy_bisect(profile: SingularProfile | HalfSpaceMeasure, p: float, grid: GridSpec,
                     kappa_range: tuple[float, float], ratio_tol: float = 2.0,
                     caps: Caps = Caps(), refine: bool = True) -> DichotomyResult:
    """Bisect in log κ between a converging and a diverging multiple of the profile."""
    if isinstance(profile, SingularProfile):
        crit = profile.critical_exponent
        if profile.kind.endswith("_log"):
            if not math.isclose(p, crit, rel_tol=1e-12):
                raise DomainError("log profiles are run at their critical exponent")
        elif not p > crit and not profile.kind.startswith("boundary_line"):
            raise DomainError("power profiles are run strictly above their critical exponent")
        mu = make_profile(profile, 1.0)
    else:
        mu = profile
    lo, hi = kappa_range
    if not 0 < lo < hi:
        raise DomainError("kappa_range must satisfy 0 < lo < hi")
    if not ratio_tol > 1:
        raise DomainError("ratio_tol must exceed 1")
    runner = _ScaledRunner(mu, p, grid, caps)
    evals = []

    def verdict(k):
        sf = runner.run(k)
        ok = _converged(sf)
        evals.append({"kappa": k, "verdict": sf.verdict.value, "sweeps": sf.iteration_count,
                      "reason": sf.diagnostics.get("reason", "")})
        log.info("kappa=%.6g -> %s (%d sweeps)", k, sf.verdict.value, sf.iteration_count)
        return ok, sf

    ok_lo, sf_lo = verdict(lo)
    if not ok_lo:
        res = DichotomyResult(None, lo, None, "all-diverge", evaluations=evals)
        if refine:
            res.refinement_trend = _refine_trend(mu, p, grid, caps, [lo], runner, sf_lo)
        return res
    ok_hi, _ = verdict(hi)
    if ok_hi:
        return DichotomyResult(hi, None, None, "all-converge", evaluations=evals)
    while hi / lo > ratio_tol:
        mid = math.sqrt(lo * hi)
        ok, _ = verdict(mid)
        if ok:
            lo = mid
        else:
            hi = mid
    res = DichotomyResult(lo, hi, hi / lo, "bracket", evaluations=evals)
    if refine:
        res.refinement_trend = _refine_trend(mu, p, grid, caps, [lo, hi], runner, None)
    return res


def _refine_trend(mu, p, spec: GridSpec, caps, kappas, coarse: _ScaledRunner, coarse_field) -> dict:
    fine = _ScaledRunner(mu, p, spec.refined(), caps)
    trend = {"refined_nodes": [len(fine.grid.times), *fine.grid.spatial_shape], "verdicts": {}}
    persists = True
    for k in kappas:
        c = coarse.run(k)
        f = fine.run(k)
        trend["verdicts"][f"{k:.6g}"] = {"coarse": c.verdict.value, "refined": f.verdict.value}
        persists &= (c.verdict == SliceStatus.CONVERGED) == (f.verdict == SliceStatus.CONVERGED)
        if c.verdict != SliceStatus.CONVERGED:
            # growth of the sup after a fixed number of sweeps
            s = min(len(c.sup_history), len(f.sup_history)) - 1
            trend["verdicts"][f"{k:.6g}"]["sup_at_sweep"] = {
                "sweep": s, "coarse": c.sup_history[s], "refined": f.sup_history[s]}
    trend["persistent"] = bool(persists)
    return trend


# -------------------------------------------------------------- initial trace

@dataclass
class TraceEntry:
    label: str
    times: list
    values: list
    extrapolated: float
    status: str  # "OK" or "INCONCLUSIVE"


def weighted_pairing(u: SolutionField, phi: Callable, t_index: int, order: int = 6) -> float:
    """∫ y_N u(y, t) φ(y) dy for the piecewise-(multi)linear interpolant of u."""
    g = u.grid
    vals = u.values[t_index]
    xn = np.concatenate([[0.0], g.normal])
    v = np.concatenate([np.zeros(vals.shape[:-1] + (1,)), vals], axis=-1)
    gx, gw = gauss_legendre(order)
    # normal axis: exact for the linear pieces times a smooth weight
    h = np.diff(xn)
    yq = xn[:-1, None] + h[:, None] * gx
    wq = h[:, None] * gw
    lam = gx[None, :]
    if g.N == 1:
        uq = v[:-1, None] * (1 - lam) + v[1:, None] * lam
        pts = yq[..., None]
        return float(np.sum(wq * yq * uq * phi(pts)))
    # tangential axes: trapezoid on the uniform nodes
    wt = [np.full(len(a), a[1] - a[0]) * np.r_[0.5, np.ones(len(a) - 2), 0.5] for a in g.tangential]
    uq = v[..., :-1, None] * (1 - lam) + v[..., 1:, None] * lam
    mesh = np.meshgrid(*g.tangential, indexing="ij")
    tang = np.stack(mesh, axis=-1)
    shape = tang.shape[:-1] + yq.shape
    coords = np.concatenate([np.broadcast_to(tang[..., None, None, :], shape + (g.N - 1,)),
                             np.broadcast_to(yq[..., None], shape + (1,))], axis=-1)
    w = wq * yq
    for k, wk in enumerate(wt):
        w = np.multiply.outer(wk, w) if k == 0 else w * wk.reshape((1,) * k + (-1,) + (1,) * (w.ndim - k - 1))
    if g.N == 3:
        w = np.multiply.outer(wt[0], np.multiply.outer(wt[1], wq * yq))
    return float(np.sum(w * uq * phi(coords)))


def initial_trace(u: SolutionField, test_functions: Sequence, extrapolation_times: Sequence[float],
                  labels: Sequence[str] | None = None) -> list[TraceEntry]:
    """Extrapolate t ↦ ∫ y_N u(y,t) φ(y) dy to t = 0 (linear in t, least squares)."""
    times = np.asarray(extrapolation_times, float)
    if len(times) < 2 or np.any(np.diff(times) >= 0):
        raise DomainError("extrapolation_times must be a decreasing list of at least two times")
    g = u.grid
    idx = [int(np.argmin(np.abs(np.log(g.times / t)))) for t in times]
    if len(set(idx)) != len(idx):
        raise DomainError("extrapolation times map to repeated grid times")
    tt = g.times[idx]
    out = []
    for n, phi in enumerate(test_functions):
        vals = np.array([weighted_pairing(u, phi, j) for j in idx])
        A = np.vstack([np.ones_like(tt), tt]).T
        coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
        d = np.diff(vals)
        sign_changes = int(np.sum(np.diff(np.sign(d[d != 0])) != 0)) if d.size > 1 else 0
        scale = max(np.max(np.abs(vals)), 1e-300)
        resid = np.max(np.abs(A @ coef - vals)) / scale if np.any(vals) else 0.0
        status = "OK"
        if sign_changes > 1 or resid > 0.05 or not np.all(np.isfinite(vals)):
            status = "INCONCLUSIVE"
        label = labels[n] if labels else f"phi{n}"
        out.append(TraceEntry(label, [float(x) for x in tt], [float(x) for x in vals],
                              float(coef[0]) if np.any(vals) else 0.0, status))
    return out


# ------------------------------------------------------------ global probe

@dataclass
class GlobalProbeResult:
    horizons: list
    verdicts: list
    largest_converged: float | None
    trend: str


def global_existence_probe(mu: HalfSpaceMeasure, p: float, horizons: Sequence[float],
                           caps: Caps = Caps(), grid_factory: Callable[[float], GridSpec] | None = None
                           ) -> GlobalProbeResult:
    """Run the solver at each horizon; report the largest converged horizon."""
    if not p > 1:
        raise DomainError("p must exceed 1")
    hs = [float(h) for h in horizons]
    if any(b <= a for a, b in zip(hs, hs[1:])):
        raise DomainError("horizons must be increasing")
    factory = grid_factory or (lambda T: GridSpec(T, t_min=1e-6 * T))
    verdicts = []
    for T in hs:
        sf = picard_solve(mu, p, factory(T), caps)
        verdicts.append(sf.verdict.value)
        log.info("horizon %.4g -> %s", T, sf.verdict.value)
    conv = [T for T, v in zip(hs, verdicts) if v == SliceStatus.CONVERGED.value]
    if all(v == SliceStatus.CONVERGED.value for v in verdicts):
        trend = "converged at every horizon"
    elif any(v == SliceStatus.DIVERGED.value for v in verdicts):
        trend = "diverged by the horizon sweep"
    else:
        trend = "undecided"
    return GlobalProbeResult(hs, verdicts, max(conv) if conv else None, trend)
