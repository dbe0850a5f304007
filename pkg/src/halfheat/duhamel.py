"""Product integration of the Duhamel term on tensor grids.

Fields are represented by piecewise-linear hats: on the normal axis the
nodes are x_1 < ... < x_M with an implicit node x_0 = 0 carrying the
Dirichlet value 0, and the interpolant vanishes beyond x_M; tangential axes
use hats on uniform nodes, vanishing outside the grid.  The heat semigroup
applied to a hat has a closed form in erf and Gaussians, which gives exact
spatial weights W(τ).  In time the source F = u^p is linear between time
nodes and frozen on (0, t_0), so that

    D_j = W(Δ_j) D_{j-1} + ∫_0^{Δ_j} W(τ) [ (τ/Δ_j) F_{j-1} + (1 - τ/Δ_j) F_j ] dτ,

with the τ-integral done by Gauss-Legendre in √τ on geometric panels and
W(τ) ≈ interpolation below the scale where the kernel sees a single hat.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.special import erf, erfc

from .grid import Grid
from .quadrature import gauss_legendre

CUT = 12.0  # Gaussian support cut in units of sqrt(tau)


def erf_diff(p, q):
    """erf(p) - erf(q) without cancellation when p, q share a sign."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    out = erf(p) - erf(q)
    pos = (p > 1) & (q > 1)
    out = np.where(pos, erfc(q) - erfc(p), out)
    neg = (p < -1) & (q < -1)
    return np.where(neg, erfc(-p) - erfc(-q), out)


def _gauss(a, tau):
    return np.exp(-a * a / (4.0 * tau)) / np.sqrt(4.0 * np.pi * tau)


@dataclass(frozen=True)
class Axis:
    """Hat basis on one axis.  `image=True` marks the normal axis."""

    nodes: np.ndarray
    image: bool

    @cached_property
    def ext(self) -> np.ndarray:
        return np.concatenate([[0.0], self.nodes]) if self.image else self.nodes

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.ext)))

    def hat_values(self, X) -> np.ndarray:
        """Interpolation weights of the hats at points X, shape (P, n)."""
        X = np.atleast_1d(np.asarray(X, float))
        eye = np.eye(self.n)
        if self.image:
            eye = np.vstack([np.zeros((1, self.n)), eye])
        out = np.empty((len(X), self.n))
        for j in range(self.n):
            out[:, j] = np.interp(X, self.ext, eye[:, j], left=0.0, right=0.0)
        return out

    def weights(self, X, tau: float) -> np.ndarray:
        """W(τ)[P, j] = ∫ G_axis(X_P, y, τ) hat_j(y) dy."""
        X = np.atleast_1d(np.asarray(X, float))
        i, j, v = self.weights_sparse(X, tau)
        W = np.zeros((len(X), self.n))
        np.add.at(W, (i, j), v)
        return W

    def weights_sparse(self, X, tau: float):
        """Triplets (row, hat, value) of W(τ); entries beyond the Gaussian cut are dropped."""
        X = np.atleast_1d(np.asarray(X, float))
        i, k, rise, fall = _segment_integrals(X, self.ext, tau, self.image)
        if self.image:
            # hat j (node j, 0-based) rises on segment j and falls on segment j + 1
            rows = np.concatenate([i, i[k > 0]])
            cols = np.concatenate([k, k[k > 0] - 1])
            vals = np.concatenate([rise, fall[k > 0]])
        else:
            rows = np.concatenate([i[k < self.n - 1], i])
            cols = np.concatenate([k[k < self.n - 1], k])
            vals = np.concatenate([fall[k < self.n - 1], rise[k >= 0]])
            # rise on segment k belongs to hat k + 1
            cols[len(k[k < self.n - 1]):] += 1
        keep = vals != 0
        return rows[keep], cols[keep], vals[keep]


def _segment_integrals(X, ext, tau, image):
    """For every point X_i and segment k = [ext[k], ext[k+1]] within the Gaussian
    cut, ∫ k(X, y)(y - a)/L dy (rise) and ∫ k(X, y)(b - y)/L dy (fall).

    k is the free Gaussian, or the Dirichlet image kernel when `image`.
    Returns flat arrays (i, k, rise, fall).
    """
    st = np.sqrt(tau)
    cut = CUT * st
    k_lo = np.maximum(np.searchsorted(ext, X - cut, side="right") - 1, 0)
    k_hi = np.minimum(np.searchsorted(ext, X + cut, side="left"), len(ext) - 1)
    cnt = np.maximum(k_hi - k_lo, 0)
    i = np.repeat(np.arange(len(X)), cnt)
    k = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(k_lo, cnt)
    x, aa, bb = X[i], ext[k], ext[k + 1]
    L = bb - aa
    rise = np.zeros(len(i))
    fall = np.zeros(len(i))
    # the closed form loses digits like (τ / x b)(√τ / L) when x b / τ is small
    small = (x * bb / tau * np.minimum(1.0, L / st) < 1e-6) if image else np.zeros(len(i), bool)
    d = ~small
    if np.any(d):
        xd, ad, bd = x[d], aa[d], bb[d]
        s = 2.0 * st
        m0 = 0.5 * erf_diff((xd - ad) / s, (xd - bd) / s)
        dg = _gauss(xd - bd, tau) - _gauss(xd - ad, tau)
        r = -2.0 * tau * dg + (xd - ad) * m0
        f = (bd - xd) * m0 + 2.0 * tau * dg
        if image:
            near = xd + ad < cut
            xi, ai, bi = xd[near], ad[near], bd[near]
            m1 = 0.5 * erf_diff((xi + bi) / s, (xi + ai) / s)
            dh = _gauss(xi + bi, tau) - _gauss(xi + ai, tau)
            r[near] -= -2.0 * tau * dh - (xi + ai) * m1
            f[near] -= (xi + bi) * m1 + 2.0 * tau * dh
        rise[d] = np.maximum(r / L[d], 0.0)
        fall[d] = np.maximum(f / L[d], 0.0)
    if np.any(small):
        # image cancellation regime: G = 2 e^{-x²/4τ} Γ(y) sinh(xy/2τ) has no
        # cancellation; Gauss-Legendre on the segment clipped to the cut,
        # one panel when the segment is short on the √τ scale
        idx = np.flatnonzero(small)
        xs, a_s, b_s = x[idx], aa[idx], bb[idx]
        top = np.maximum(np.minimum(b_s, xs + cut), a_s)
        long_ = (top - a_s) > st
        for sel, panels in ((~long_, 1), (long_, 12)):
            if not np.any(sel):
                continue
            xx, a0, b0, tp = xs[sel], a_s[sel], b_s[sel], top[sel]
            gx, gw = gauss_legendre(6)
            edges = a0[:, None] + (tp - a0)[:, None] * np.linspace(0, 1, panels + 1)[None, :]
            h = np.diff(edges, axis=1)
            y = edges[:, :-1, None] + h[:, :, None] * gx
            w = h[:, :, None] * gw
            xc = xx[:, None, None]
            kern = 2.0 * np.exp(-xc * xc / (4 * tau)) * _gauss(y, tau) * np.sinh(xc * y / (2 * tau))
            Ls = (b0 - a0)[:, None, None]
            rise[idx[sel]] = np.sum(w * kern * (y - a0[:, None, None]) / Ls, axis=(1, 2))
            fall[idx[sel]] = np.sum(w * kern * (b0[:, None, None] - y) / Ls, axis=(1, 2))
    return i, k, rise, fall


def tau_rule(lo: float, hi: float, tau_floor: float, ratio: float = 8.0, order: int = 5):
    """Gauss-Legendre nodes in √τ on geometric panels covering [max(lo, tau_floor), hi].

    Returns (tau, weight) arrays for ∫ g(τ) dτ.  When lo == 0 the piece
    [0, tau_floor] is left to the caller.
    """
    start = max(lo, tau_floor) if lo == 0 else lo
    if hi <= start:
        return np.zeros(0), np.zeros(0)
    n = max(1, int(np.ceil(np.log(hi / start) / np.log(ratio)))) if start > 0 else 1
    edges = np.geomspace(start, hi, n + 1)
    se = np.sqrt(edges)
    gx, gw = gauss_legendre(order)
    h = np.diff(se)
    w = se[:-1, None] + h[:, None] * gx
    wt = h[:, None] * gw * 2.0 * w  # dτ = 2 w dw
    return (w * w).ravel(), wt.ravel()


def log_hat(tau, t_hi: float, L: float):
    """Weight of the earlier node at s = t_hi - tau for hats linear in log s."""
    return -np.log1p(-np.asarray(tau) / t_hi) / L


class DuhamelOperator:
    """Precomputed product-integration weights for one grid."""

    def __init__(self, grid: Grid, ratio: float = 8.0, order: int = 5):
        self.grid = grid
        self.axes = [Axis(ax, False) for ax in grid.tangential] + [Axis(grid.normal, True)]
        self.ratio, self.order = ratio, order
        h = min(ax.min_spacing for ax in self.axes)
        self.tau_floor = (0.5 * h / CUT) ** 2
        self._build()

    # -- construction ------------------------------------------------------
    def _factor(self, ax: Axis, tau: float):
        """Sparse W(τ) on one axis, or None when it is the identity to within the cut."""
        if CUT * np.sqrt(tau) < 0.5 * ax.min_spacing:
            return None
        i, j, v = ax.weights_sparse(ax.nodes, tau)
        return sparse.csr_matrix((v, (i, j)), shape=(ax.n, ax.n))

    def _factors(self, tau):
        cache = {}
        out = []
        for ax in self.axes:
            key = "n" if ax.image else "t"
            if key not in cache:
                cache[key] = self._factor(ax, tau)
            out.append(cache[key])
        return out

    def _identity_part(self, lo, hi):
        return max(0.0, min(hi, self.tau_floor) - lo) if lo < self.tau_floor else 0.0

    def _block(self, lo: float, hi: float, hat, hat_mass):
        """∫_lo^hi W(τ)·(λ(τ), 1 - λ(τ)) dτ as (identity weights, quadrature terms).

        λ is the weight of the earlier time node; hat_mass(a) = ∫_0^a λ.
        """
        taus, wts = tau_rule(lo, hi, self.tau_floor, ratio=self.ratio, order=self.order)
        lam = hat(taus)
        terms = [(w * l, w * (1 - l), self._factors(tau)) for tau, w, l in zip(taus, wts, lam)]
        ident = (0.0, 0.0)
        if lo == 0:
            a = self._identity_part(0.0, hi)
            m = hat_mass(a)
            ident = (m, a - m)
        return ident, terms

    def _uniform_tail(self) -> int:
        """Index c such that t_c, ..., t_n are equally spaced (c = n when there is no tail)."""
        dt = np.diff(self.grid.times)
        n = len(dt)
        k = n
        while k > 0 and abs(dt[k - 1] / dt[-1] - 1) < 1e-9:
            k -= 1
        return k if n - k >= 2 else n

    def _earlier_weight(self, k: int, s):
        """Weight of F_{k-1} at time s in [t_{k-1}, t_k]."""
        t = self.grid.times
        if k > self.tail_start:
            return (t[k] - s) / (t[k] - t[k - 1])
        return np.log(t[k] / s) / np.log(t[k] / t[k - 1])

    def _build(self):
        t = self.grid.times
        n = len(t) - 1
        self.separable = len(self.axes) > 1
        self.tail_start = c = self._uniform_tail()
        # initial layer: F frozen at F_0 on (0, t_0)
        self.initial = self._finish(self._block(0.0, t[0], lambda x: np.ones_like(x), lambda a: a))
        if not self.separable:
            self.initial = self.initial[0]
        # geometric part: hats linear in log t, one recursion step per interval
        self.steps = []
        for j in range(1, c + 1):
            d, tj = t[j] - t[j - 1], t[j]
            L = np.log(tj / t[j - 1])
            hat = lambda tau, tj=tj, L=L: log_hat(tau, tj, L)
            # exact ∫_0^a of the log-time hat
            mass = lambda a, tj=tj, L=L: tj * ((1 - a / tj) * np.log1p(-a / tj) + a / tj) / L
            self.steps.append((self._propagator(d), self._finish(self._block(0.0, d, hat, mass))))
        # uniform tail: shift-invariant blocks, full history from t_c
        self.tail_props, self.tail_blocks = [], []
        if c < n:
            dt = t[-1] - t[-2]
            for lag in range(n - c):
                self.tail_props.append(self._propagator((lag + 1) * dt))
                lo = lag * dt
                hat = lambda tau, lo=lo: (tau - lo) / dt
                blk = self._block(lo, lo + dt, hat, lambda a: a * a / (2 * dt))
                self.tail_blocks.append(self._finish(blk))

    def _propagator(self, tau):
        f = self._factors(tau)
        if self.separable:
            return f
        return np.eye(self.axes[0].n) if f[0] is None else f[0].toarray()

    def _finish(self, block):
        return self._collapse(*block) if not self.separable else block

    def _collapse(self, ident, terms):
        """Sum the weighted 1D factors of one step into two dense matrices."""
        M = self.axes[0].n
        out = [ident[0] * np.eye(M), ident[1] * np.eye(M)]
        for wp, wc, fac in terms:
            f = fac[0]
            for k, w in enumerate((wp, wc)):
                if w == 0:
                    continue
                if f is None:
                    out[k][np.diag_indices(M)] += w
                else:
                    out[k] += (w * f).toarray()
        return out[0], out[1]

    # -- application -------------------------------------------------------
    @staticmethod
    def _tensor(factors, V):
        """Apply ⊗ factors along the trailing spatial axes of V."""
        out = V
        nd = len(factors)
        for k, M in enumerate(factors):
            if M is None:
                continue
            axis = out.ndim - nd + k
            moved = np.moveaxis(out, axis, 0)
            shp = moved.shape
            res = M @ moved.reshape(shp[0], -1)
            out = np.moveaxis(np.asarray(res).reshape((M.shape[0],) + shp[1:]), 0, axis)
        return out

    def _prop(self, P, V):
        return P @ V if not self.separable else self._tensor(P, V)

    def _apply_block(self, block, Fp, Fc):
        if not self.separable:
            return block[0] @ Fp + block[1] @ Fc
        (ip, ic), terms = block
        acc = ip * Fp + ic * Fc
        for wp, wc, fac in terms:
            acc = acc + self._tensor(fac, wp * Fp + wc * Fc)
        return acc

    def apply(self, F: np.ndarray) -> np.ndarray:
        """Duhamel term at every grid node for the source F (shape grid.shape)."""
        D = np.empty_like(F, dtype=float)
        if self.separable:
            D[0] = self._apply_block(self.initial, F[0], np.zeros_like(F[0]))
        else:
            D[0] = self.initial @ F[0]
        for j, (prop, block) in enumerate(self.steps, start=1):
            D[j] = self._prop(prop, D[j - 1]) + self._apply_block(block, F[j - 1], F[j])
        c = self.tail_start
        for j in range(c + 1, len(F)):
            acc = self._prop(self.tail_props[j - c - 1], D[c])
            for k in range(c + 1, j + 1):
                acc = acc + self._apply_block(self.tail_blocks[j - k], F[k - 1], F[k])
            D[j] = acc
        return D

    def propagate(self, V0: np.ndarray) -> np.ndarray:
        """Heat semigroup evolution of the slice V0 (at t_0) to every time node."""
        out = np.empty(self.grid.shape)
        out[0] = V0
        for j, step in enumerate(self.steps, start=1):
            out[j] = self._prop(step[0], out[j - 1])
        c = self.tail_start
        for j in range(c + 1, len(out)):
            out[j] = self._prop(self.tail_props[j - c - 1], out[c])
        return out

    # -- independent pointwise evaluation -------------------------------------
    def _row(self, x, tau):
        rows = []
        for ax, xc in zip(self.axes, x):
            rows.append(ax.hat_values([xc])[0] if tau is None else ax.weights([xc], tau)[0])
        return rows

    def point_integral(self, F: np.ndarray, x, j: int) -> float:
        """∫_0^{t_j} [G(t_j - s) F(s)](x) ds as a full history sum at one point."""
        x = np.atleast_1d(np.asarray(x, float))
        t = self.grid.times
        tj = t[j]

        def contract(rows, V):
            return float(self._tensor([r[None, :] for r in rows], V).reshape(-1)[0])

        total = 0.0
        # pieces: (tau_lo, tau_hi, coefficient of F_{k-1}, coefficient of F_k, k)
        pieces = [(tj - t[0], tj, None, 0)]
        for k in range(1, j + 1):
            pieces.append((tj - t[k], tj - t[k - 1], k - 1, k))
        for lo, hi, kprev, k in pieces:
            taus, wts = tau_rule(lo, hi, self.tau_floor, 4.0, 8)
            if lo == 0 and hi > 0:
                ident = self._identity_part(0.0, hi)
                if ident > 0:
                    taus = np.append(taus, 0.5 * ident)
                    wts = np.append(wts, ident)
            for tau, w in zip(taus, wts):
                rows = self._row(x, None if tau < self.tau_floor else tau)
                if kprev is None:
                    Fs = F[0]
                else:
                    # s = t_j - tau lies in [t_{k-1}, t_k]
                    lam = float(self._earlier_weight(k, tj - tau))
                    Fs = lam * F[kprev] + (1 - lam) * F[k]
                total += w * contract(rows, Fs)
        return total
