"""Bicharacteristic rays of ``a(x, xi) = -g^{jk}(x) xi_j xi_k``.

Rays solve ``x' = grad_xi a = -2 g(x) xi`` and ``xi' = -grad_x a``, i.e.
``xi'_l = (d_l g^{jk}) xi_j xi_k``.  Everything here is batched: many rays
are advanced together by one vectorised Dormand-Prince 5(4) stepper with a
per-ray step size and a Hamiltonian drift guard.

Metrics are evaluated on all of ``R^d`` (no periodicity).  Compactly
supported perturbations of a constant matrix make exit certification exact:
outside the support rays are straight lines, so an outgoing ray beyond the
support radius never comes back.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field, asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, optimize
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.stats import norm as _gauss, qmc

from .grid_core import Field, Grid, chi, chi_deriv


class IntegrationError(RuntimeError):
    """Step size underflow.  ``partial`` holds the ray computed so far."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class TrappedFlowError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


class DiagnosticsError(RuntimeError):
    def __init__(self, msg, variational=None, finite_difference=None):
        super().__init__(msg)
        self.variational = variational
        self.finite_difference = finite_difference


@dataclass
class FlowConfig:
    """Tunable constants of the ray machinery."""

    c0: float = 10.0          # exponent in the perturbation budget exp(-c0 L)
    eps0: float = 0.1
    eps: float = 0.01
    n_samples: int = 4096
    drift_tol: float = 1e-8


DEFAULT_FLOW = FlowConfig()


# ---------------------------------------------------------------- metrics

class Metric:
    """Base class.  Subclasses provide ``g``, ``grad`` and optionally ``hess``.

    Shapes: ``x`` is ``(..., d)``; ``g(x)`` is ``(..., d, d)``;
    ``grad(x)[..., l, j, k] = d_l g^{jk}``; ``hess(x)[..., l, m, j, k]``.
    """

    d: int
    g_inf: np.ndarray
    support_radius: float = math.inf
    has_hessian: bool = False

    @property
    def signature(self) -> str:
        ev = np.linalg.eigvalsh(self.g_inf)
        return "elliptic" if (np.all(ev > 0) or np.all(ev < 0)) else "ultrahyperbolic"

    def g(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no analytic Hessian")

    def hamiltonian(self, x, xi):
        return -np.einsum("...j,...jk,...k->...", xi, self.g(x), xi)

    def rhs(self, y):
        d = self.d
        x, xi = y[..., :d], y[..., d:]
        dx = -2.0 * np.einsum("...jk,...k->...j", self.g(x), xi)
        dxi = np.einsum("...ljk,...j,...k->...l", self.grad(x), xi, xi)
        return np.concatenate([dx, dxi], axis=-1)

    def jacobian(self, y):
        """Derivative of ``rhs`` with respect to ``(x, xi)``, shape (..., 2d, 2d)."""
        d = self.d
        x, xi = y[..., :d], y[..., d:]
        G, dG, H = self.g(x), self.grad(x), self.hess(x)
        J = np.zeros(y.shape[:-1] + (2 * d, 2 * d))
        J[..., :d, :d] = -2.0 * np.einsum("...lij,...j->...il", dG, xi)
        J[..., :d, d:] = -2.0 * G
        J[..., d:, :d] = np.einsum("...lmjk,...j,...k->...lm", H, xi, xi)
        J[..., d:, d:] = 2.0 * np.einsum("...ljk,...k->...lj", dG, xi)
        return J

    def nondegeneracy(self, n_probe: int = 512, seed: int = 7) -> float:
        """Sampled constant ``c`` with ``|xi|/c <= |g(x) xi| <= c |xi|``."""
        X, XI = _probe_set(self.d, max(self.support_radius, 1.0) if math.isfinite(self.support_radius) else 4.0,
                           n_probe, seed)
        G = self.g(X)
        gx = np.linalg.norm(np.einsum("bjk,bk->bj", G, XI), axis=-1)
        return float(max(gx.max(), 1.0 / gx.min()))

    def symmetry_defect(self, n_probe: int = 256, seed: int = 7) -> float:
        X, _ = _probe_set(self.d, 4.0, n_probe, seed)
        G = self.g(X)
        return float(np.abs(G - np.swapaxes(G, -1, -2)).max())

    def sup_distance(self, other: "Metric", n_probe: int = 2048, seed: int = 11) -> float:
        rad = max(self.support_radius, other.support_radius)
        rad = rad if math.isfinite(rad) else 8.0
        X, _ = _probe_set(self.d, rad, n_probe, seed)
        return float(np.abs(self.g(X) - other.g(X)).max())


class ConstantMetric(Metric):
    has_hessian = True

    def __init__(self, matrix):
        G = np.atleast_2d(np.asarray(matrix, dtype=float))
        if not np.allclose(G, G.T, atol=1e-12):
            raise ValueError("metric matrix must be symmetric")
        self.d = G.shape[0]
        self.g_inf = G
        self.support_radius = 0.0

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.g_inf, x.shape[:-1] + (self.d, self.d))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.d,) * 3)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.d,) * 4)

    def nondegeneracy(self, n_probe: int = 512, seed: int = 7) -> float:
        sv = np.linalg.svd(self.g_inf, compute_uv=False)
        return float(max(sv.max(), 1.0 / sv.min()))


def _bump_u(u):
    """B(u) = exp(1 - 1/(1-u)) for u < 1 with dB/du and d2B/du2."""
    u = np.asarray(u, dtype=float)
    B = np.zeros_like(u)
    B1 = np.zeros_like(u)
    B2 = np.zeros_like(u)
    m = u < 1.0
    um = u[m]
    w = 1.0 - um
    b = np.exp(1.0 - 1.0 / w)
    B[m] = b
    B1[m] = -b / w ** 2
    B2[m] = b * (2.0 * um - 1.0) / w ** 4
    return B, B1, B2


def _bump_s(s):
    """b(s) = exp(1 - 1/(1-s^2)) for |s| < 1, with b' and b''."""
    s = np.asarray(s, dtype=float)
    B, B1, B2 = _bump_u(s * s)
    return B, 2.0 * s * B1, 2.0 * B1 + 4.0 * s * s * B2


class BumpMetric(Metric):
    """``g(x) = g_inf + amplitude * B(|x - c|^2 / r^2) * P`` with a smooth bump ``B``.

    ``B`` peaks at 1 in the centre and vanishes for ``|x - c| >= r``.
    """

    has_hessian = True

    def __init__(self, g_inf, amplitude: float, radius: float, center=None, shape=None):
        self.g_inf = np.atleast_2d(np.asarray(g_inf, dtype=float))
        self.d = self.g_inf.shape[0]
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        self.center = np.zeros(self.d) if center is None else np.asarray(center, dtype=float)
        self.shape = self.g_inf.copy() if shape is None else np.asarray(shape, dtype=float)
        if not np.allclose(self.shape, self.shape.T):
            raise ValueError("bump shape matrix must be symmetric")
        self.support_radius = float(np.linalg.norm(self.center) + self.radius)

    def with_amplitude(self, amplitude: float) -> "BumpMetric":
        return BumpMetric(self.g_inf, amplitude, self.radius, self.center, self.shape)

    def _parts(self, x):
        y = np.asarray(x, dtype=float) - self.center
        u = (y * y).sum(axis=-1) / self.radius ** 2
        return y, _bump_u(u)

    def g(self, x):
        _, (B, _, _) = self._parts(x)
        return self.g_inf + self.amplitude * B[..., None, None] * self.shape

    def grad(self, x):
        y, (_, B1, _) = self._parts(x)
        gb = (2.0 / self.radius ** 2) * B1[..., None] * y
        return self.amplitude * gb[..., :, None, None] * self.shape

    def hess(self, x):
        y, (_, B1, B2) = self._parts(x)
        r2 = self.radius ** 2
        hb = (4.0 / r2 ** 2) * B2[..., None, None] * y[..., :, None] * y[..., None, :]
        hb = hb + (2.0 / r2) * B1[..., None, None] * np.eye(self.d)
        return self.amplitude * hb[..., :, :, None, None] * self.shape


class ConformalTrap(Metric):
    """Elliptic conformal metric ``g^{jk} = h(|x|) delta^{jk}`` with an annular bump.

    ``h(r) = 1 + amplitude * b((r - r_c)/width)``.  For large amplitude the
    circumference function ``r / sqrt(h)`` has an interior maximum at some
    ``r0``, where ``h'(r0)/h(r0) = 2/r0``.  The circle ``|x| = r0`` is then a
    stable closed ray, and an open set of rays around it stays trapped.
    """

    has_hessian = True

    def __init__(self, d: int = 2, amplitude: float = 8.0, r_c: float = 2.0, width: float = 1.0):
        if r_c <= width:
            raise ValueError("annulus must avoid the origin")
        self.d = d
        self.g_inf = np.eye(d)
        self.amplitude, self.r_c, self.width = float(amplitude), float(r_c), float(width)
        self.support_radius = self.r_c + self.width

    def h(self, r):
        b, b1, b2 = _bump_s((np.asarray(r, dtype=float) - self.r_c) / self.width)
        A, w = self.amplitude, self.width
        return 1.0 + A * b, A * b1 / w, A * b2 / w ** 2

    def _radial(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        rs = np.where(r > 0, r, 1.0)
        return x, r, rs

    def g(self, x):
        x, r, _ = self._radial(x)
        return self.h(r)[0][..., None, None] * np.eye(self.d)

    def grad(self, x):
        x, r, rs = self._radial(x)
        dh = self.h(r)[1]
        gr = (dh / rs)[..., None] * x
        return gr[..., :, None, None] * np.eye(self.d)

    def hess(self, x):
        x, r, rs = self._radial(x)
        _, h1, h2 = self.h(r)
        e = x / rs[..., None]
        ee = e[..., :, None] * e[..., None, :]
        H = h2[..., None, None] * ee + (h1 / rs)[..., None, None] * (np.eye(self.d) - ee)
        return H[..., :, :, None, None] * np.eye(self.d)

    def orbit_condition(self, r):
        """``r h'(r) - 2 h(r)``; zero exactly on circular rays."""
        h0, h1, _ = self.h(r)
        return r * h1 - 2.0 * h0

    def trapped_radius(self) -> float:
        """Radius of the stable circular ray (interior maximum of r/sqrt(h))."""
        lo = self.r_c - self.width
        rr = np.linspace(lo, self.r_c, 4001)
        vals = self.orbit_condition(rr)
        i = np.nonzero((vals[:-1] < 0) & (vals[1:] >= 0))[0]
        if i.size == 0:
            raise ValueError("amplitude too small for a circular ray")
        a, b = rr[i[0]], rr[i[0] + 1]
        return float(optimize.brentq(self.orbit_condition, a, b, xtol=1e-14))

    def nondegeneracy(self, n_probe: int = 512, seed: int = 7) -> float:
        r = np.linspace(0.0, self.support_radius, 4001)
        h = self.h(r)[0]
        return float(max(h.max(), 1.0 / h.min()))


class GridMetric(Metric):
    """Metric sampled on a periodic grid, tapered to be compactly supported.

    ``g(x) = g_inf + chi(|x| / taper) * S(x)`` where ``S`` is a periodic cubic
    spline of ``samples - g_inf``.  The taper vanishes for ``|x| >= 2 taper``.
    Supports d = 1 and d = 2.  No analytic Hessian.
    """

    def __init__(self, grid: Grid, samples: np.ndarray, g_inf, taper: Optional[float] = None):
        if grid.d not in (1, 2):
            raise ValueError("GridMetric supports d = 1 or 2")
        self.grid = grid
        self.d = grid.d
        self.g_inf = np.atleast_2d(np.asarray(g_inf, dtype=float))
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (self.d, self.d) + grid.shape:
            raise ValueError(f"samples must have shape {(self.d, self.d) + grid.shape}")
        self.taper = grid.box_length / 6.0 if taper is None else float(taper)
        if 2.0 * self.taper > grid.box_length / 2.0 + 1e-12:
            raise ValueError("taper support must fit inside the box")
        self.support_radius = 2.0 * self.taper
        ax = grid.axis()
        axp = np.concatenate([ax, [ax[0] + grid.box_length]])
        self._spl = {}
        for j in range(self.d):
            for k in range(j, self.d):
                v = samples[j, k] - self.g_inf[j, k]
                if self.d == 1:
                    self._spl[j, k] = CubicSpline(axp, np.append(v, v[0]), bc_type="periodic")
                else:
                    # wrap three cells on each side so the spline sees periodic data
                    pad = 3
                    vp = np.pad(v, pad, mode="wrap")
                    a =np.concatenate([ax[-pad:] - grid.box_length, ax, ax[:pad] + grid.box_length])
                    self._spl[j, k] = RectBivariateSpline(a, a, vp, kx=3, ky=3, s=0)

    def _eval(self, x, j, k, dx=0, dy=0):
        spl = self._spl[min(j, k), max(j, k)]
        if self.d == 1:
            return spl(x[..., 0], dx)
        return spl(x[..., 0], x[..., 1], dx=dx, dy=dy, grid=False)

    def _taper(self, x):
        r = np.linalg.norm(x, axis=-1)
        t = chi(r / self.taper)
        rs = np.where(r > 0, r, 1.0)
        dt = (chi_deriv(r / self.taper) / self.taper / rs)[..., None] * x
        return t, dt

    def g(self, x):
        x = np.asarray(x, dtype=float)
        t, _ = self._taper(x)
        out = np.empty(x.shape[:-1] + (self.d, self.d))
        for j in range(self.d):
            for k in range(self.d):
                out[..., j, k] = self.g_inf[j, k] + t * self._eval(x, j, k)
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        t, dt = self._taper(x)
        out = np.empty(x.shape[:-1] + (self.d,) * 3)
        for j in range(self.d):
            for k in range(self.d):
                s = self._eval(x, j, k)
                for l in range(self.d):
                    ds = self._eval(x, j, k, dx=int(l == 0), dy=int(l == 1))
                    out[..., l, j, k] = t * ds + dt[..., l] * s
        return out


def _probe_set(d: int, radius: float, n: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-radius, radius, size=(n, d))
    XI = rng.standard_normal((n, d))
    XI /= np.linalg.norm(XI, axis=-1, keepdims=True)
    return X, XI


# ------------------------------------------------------------- integrator

_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class StepInfo:
    """Accepted steps of one stepper iteration (rows refer to ``idx``)."""

    idx: np.ndarray
    t0: np.ndarray
    y0: np.ndarray
    f0: np.ndarray
    t1: np.ndarray
    y1: np.ndarray
    f1: np.ndarray

    def hermite(self, theta):
        """Cubic Hermite state at fraction ``theta`` (shape (B,) or scalar) of the step."""
        th = np.asarray(theta, dtype=float)
        th = np.broadcast_to(th, self.t0.shape)[:, None]
        dt = (self.t1 - self.t0)[:, None]
        h00 = 2 * th ** 3 - 3 * th ** 2 + 1
        h10 = th ** 3 - 2 * th ** 2 + th
        h01 = -2 * th ** 3 + 3 * th ** 2
        h11 = th ** 3 - th ** 2
        return h00 * self.y0 + h10 * dt * self.f0 + h01 * self.y1 + h11 * dt * self.f1


@dataclass
class BatchResult:
    t: np.ndarray
    y: np.ndarray
    status: np.ndarray      # 0 reached end, 1 stopped by observer, 2 step underflow
    steps: np.ndarray
    rejected: np.ndarray
    max_drift: np.ndarray


def integrate_batch(fun: Callable[[np.ndarray], np.ndarray], Y0, t_end, *, rtol: float = 1e-11,
                    atol: float = 1e-12, max_step=np.inf, invariant: Optional[Callable] = None,
                    drift_tol: float = 1e-8, stops: Optional[np.ndarray] = None,
                    observer: Optional[Callable[[StepInfo], Optional[np.ndarray]]] = None,
                    max_iter: int = 2_000_000) -> BatchResult:
    """Advance many autonomous ODEs ``y' = fun(y)`` with Dormand-Prince 5(4).

    Each row of ``Y0`` has its own end time ``t_end`` (negative for backward
    runs) and its own step size.  ``invariant(y)`` (optional) is guarded:
    a step is rejected when it changes the invariant by more than
    ``drift_tol / 100`` relative to ``max(1, |invariant(y0)|)``.  ``stops``
    are nonnegative elapsed times the stepper lands on exactly.  ``max_step``
    may be a callable of the current states returning per-row caps.  The
    ``observer`` sees every batch of accepted steps and may return a mask of
    rows to retire.
    """
    Y = np.array(Y0, dtype=float)
    B, n = Y.shape
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (B,)).copy()
    sgn = np.where(t_end < 0, -1.0, 1.0)
    T = np.abs(t_end)
    tau = np.zeros(B)
    status = np.zeros(B, dtype=int)
    steps = np.zeros(B, dtype=int)
    rejected = np.zeros(B, dtype=int)
    F = fun(Y) * sgn[:, None]
    inv0 = invariant(Y) if invariant is not None else None
    scale_inv = np.maximum(1.0, np.abs(inv0)) if inv0 is not None else None
    inv_prev = inv0.copy() if inv0 is not None else None
    max_drift = np.zeros(B)
    stops = np.sort(np.asarray(stops, dtype=float)) if stops is not None else np.zeros(0)
    step_fn = max_step if callable(max_step) else None
    max_step = np.full(B, np.inf) if step_fn else np.broadcast_to(np.asarray(max_step, dtype=float), (B,))

    yn = np.maximum(np.abs(Y).max(axis=1), 1e-3)
    fn = np.maximum(np.abs(F).max(axis=1), 1e-12)
    H = np.minimum(0.01 * yn / fn, max_step)
    H = np.minimum(H, np.where(T > 0, T, 1.0))
    active = T > 0
    order_exp = 0.2

    it = 0
    while np.any(active) and it < max_iter:
        it += 1
        idx = np.nonzero(active)[0]
        y, f, tt, h = Y[idx], F[idx], tau[idx], H[idx]
        if step_fn is not None:
            ms = step_fn(y)
            h = np.minimum(h, ms)
            max_step = np.full(B, np.inf)
            max_step[idx] = ms
        nxt = T[idx].copy()
        if stops.size:
            pos = np.searchsorted(stops, tt * (1 + 1e-14) + 1e-300, side="right")
            has = pos < stops.size
            cand = np.where(has, stops[np.minimum(pos, stops.size - 1)], np.inf)
            nxt = np.minimum(nxt, cand)
        h = np.minimum(h, nxt - tt)
        hits = np.isclose(h, nxt - tt, rtol=1e-13, atol=0)
        s = sgn[idx][:, None]
        K = [f]
        for i in range(1, 6):
            yi = y + h[:, None] * sum(a * k for a, k in zip(_A[i], K))
            K.append(fun(yi) * s)
        y_new = y + h[:, None] * sum(b * k for b, k in zip(_B5[:6], K))
        f_new = fun(y_new) * s
        K.append(f_new)
        err_vec = h[:, None] * sum(e * k for e, k in zip(_E, K))
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / sc) ** 2, axis=1))
        ok = np.isfinite(err) & (err <= 1.0)
        if invariant is not None:
            inv_new = invariant(y_new)
            inc = np.abs(inv_new - inv_prev[idx]) / scale_inv[idx]
            ok &= inc <= drift_tol * 1e-2
        fac = np.where(err > 0, 0.9 * np.where(np.isfinite(err), err, 1e10) ** (-order_exp), 5.0)
        fac = np.clip(fac, 0.2, 5.0)
        # failed drift guard with a fine local error: just halve
        fac = np.where(~ok & (err <= 1.0), 0.5, fac)
        fac = np.where(ok, np.minimum(fac, 5.0), np.minimum(fac, 1.0))
        h_next = np.minimum(h * fac, max_step[idx])
        if not np.all(ok):
            bad = idx[~ok]
            rejected[bad] += 1
            under = h[~ok] < 1e-13 * np.maximum(1.0, tt[~ok]) + 1e-300
            if np.any(under):
                status[bad[under]] = 2
                active[bad[under]] = False
        acc = idx[ok]
        if acc.size:
            t0 = tau[acc].copy()
            y0, f0 = Y[acc].copy(), F[acc].copy()
            t1 = np.where(hits[ok], nxt[ok], t0 + h[ok])
            Y[acc], F[acc], tau[acc] = y_new[ok], f_new[ok], t1
            steps[acc] += 1
            if invariant is not None:
                inv_prev[acc] = inv_new[ok]
                max_drift[acc] = np.maximum(max_drift[acc], np.abs(inv_new[ok] - inv0[acc]) / scale_inv[acc])
            done = tau[acc] >= T[acc] * (1 - 1e-15)
            if observer is not None:
                s_acc = sgn[acc]
                info = StepInfo(acc, s_acc * t0, y0, f0 * s_acc[:, None], s_acc * t1, Y[acc],
                                F[acc] * s_acc[:, None])
                stop = observer(info)
                if stop is not None:
                    stop = np.asarray(stop, dtype=bool)
                    status[acc[stop & ~done]] = 1
                    done |= stop
            active[acc[done]] = False
        H[idx] = np.where(ok, h_next, np.maximum(h * fac, 1e-300))
        # a step cut short by a stop must not shrink the next one
        H[idx] = np.where(ok & hits, np.maximum(H[idx], h), H[idx])
    if np.any(active):
        status[active] = 2
    return BatchResult(sgn * tau, Y, status, steps, rejected, max_drift)


# ------------------------------------------------------------------- rays

@dataclass
class Ray:
    """Samples of one bicharacteristic and integrator statistics."""

    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    a0: float
    drift: np.ndarray
    steps: int
    status: str = "ok"

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.drift))) if self.drift.size else 0.0

    @property
    def xi_growth(self) -> float:
        n = np.linalg.norm(self.xi, axis=1)
        return float(n.max() / n[0])

    def to_csv(self, path) -> None:
        d = self.x.shape[1]
        cols = ["t"] + [f"x{i}" for i in range(d)] + [f"xi{i}" for i in range(d)] + ["hamiltonian_drift"]
        data = np.column_stack([self.t, self.x, self.xi, self.drift])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def _hamiltonian_of(metric: Metric):
    d = metric.d
    return lambda y: metric.hamiltonian(y[:, :d], y[:, d:])


def _local_tols(tol: float) -> Tuple[float, float]:
    rt = max(tol * 1e-3, 1e-13)
    return rt, rt


def flow(metric: Metric, x0, xi0, t_span=(0.0, 1.0), tol: float = 1e-8, t_eval=None,
         max_step: float = np.inf) -> Ray:
    """Integrate one ray over ``t_span`` (either direction).

    Samples are taken at every accepted step, or at ``t_eval`` if given.
    ``tol`` bounds the relative Hamiltonian drift.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    if not np.any(xi0):
        raise ValueError("xi0 must be nonzero")
    t0, t1 = map(float, t_span)
    y0 = np.concatenate([x0, xi0])[None, :]
    ham = _hamiltonian_of(metric)
    a0 = float(ham(y0)[0])
    samples_t = [t0]
    samples_y = [y0[0].copy()]

    def obs(info: StepInfo):
        if t_eval is None:
            samples_t.append(t0 + float(info.t1[0]))
            samples_y.append(info.y1[0].copy())
        return None

    stops = None
    if t_eval is not None:
        te = np.asarray(t_eval, dtype=float) - t0
        stops = np.abs(te)

        def obs(info: StepInfo):  # noqa: F811
            tt = abs(float(info.t1[0]))
            if np.any(np.isclose(stops, tt, rtol=1e-13, atol=1e-15)):
                samples_t.append(t0 + float(info.t1[0]))
                samples_y.append(info.y1[0].copy())
            return None

    rtol, atol = _local_tols(tol)
    res = integrate_batch(metric.rhs, y0, t1 - t0, rtol=rtol, atol=atol, max_step=max_step,
                          invariant=ham, drift_tol=tol, stops=stops, observer=obs)
    T = np.array(samples_t)
    Yv = np.array(samples_y)
    if t_eval is not None:
        # t_eval entries equal to t0 are represented by the initial sample
        want = np.asarray(t_eval, dtype=float)
        pick = [int(np.argmin(np.abs(T - w))) for w in want]
        T, Yv = T[pick], Yv[pick]
    d = metric.d
    ray = Ray(T, Yv[:, :d], Yv[:, d:], a0, (ham(Yv) - a0) / max(1.0, abs(a0)), int(res.steps[0]),
              "ok" if res.status[0] == 0 else "step-underflow")
    if res.status[0] == 2:
        raise IntegrationError("step size underflow", partial=ray)
    return ray


def flow_many(metric: Metric, X0, XI0, T, tol: float = 1e-8, max_step=np.inf) -> BatchResult:
    """End states of many rays; ``T`` may be scalar or per ray, signed."""
    Y0 = np.concatenate([np.atleast_2d(X0), np.atleast_2d(XI0)], axis=1)
    rtol, atol = _local_tols(tol)
    return integrate_batch(metric.rhs, Y0, T, rtol=rtol, atol=atol, max_step=max_step,
                           invariant=_hamiltonian_of(metric), drift_tol=tol)


def homogeneity_check(metric: Metric, x0, xi0, lam: float, T: float, tol: float = 1e-9,
                      n_samples: int = 17) -> float:
    """Max over samples of the scaling defect ``xi -> lam xi, t -> lam t``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    xi0 = np.asarray(xi0, dtype=float)
    ts = np.linspace(0.0, T, n_samples)
    slow = flow(metric, x0, xi0, (0.0, lam * T), tol=tol, t_eval=lam * ts)
    fast = flow(metric, x0, lam * xi0, (0.0, T), tol=tol, t_eval=ts)
    res = np.linalg.norm(slow.x - fast.x, axis=1) + np.linalg.norm(lam * slow.xi - fast.xi, axis=1)
    return float(res.max())


# ------------------------------------------------------- nontrapping L(R)

@dataclass
class SamplerSpec:
    """Low-discrepancy sample of ``B_R x S^{d-1}``."""

    n_samples: int = 4096
    seed: int = 0


def sample_phase_space(d: int, R: float, spec: SamplerSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Scrambled Sobol points mapped to the ball (positions) and sphere (directions)."""
    sob = qmc.Sobol(2 * d + 1, scramble=True, seed=spec.seed)
    m = int(math.ceil(math.log2(max(spec.n_samples, 2))))
    U = sob.random_base2(m)[: spec.n_samples]
    U = np.clip(U, 1e-12, 1 - 1e-12)
    if d == 1:
        X = R * (2.0 * U[:, :1] - 1.0)
        XI = np.where(U[:, 2:3] < 0.5, -1.0, 1.0)
        return X, XI
    dirx = _gauss.ppf(U[:, :d])
    dirx /= np.linalg.norm(dirx, axis=1, keepdims=True)
    X = R * U[:, d:d + 1] ** (1.0 / d) * dirx
    XI = _gauss.ppf(U[:, d + 1:])
    XI /= np.linalg.norm(XI, axis=1, keepdims=True)
    return X, XI


def default_t_cap(metric: Metric, R: float) -> float:
    return 50.0 * R / (2.0 / metric.nondegeneracy())


@dataclass
class TrappingReport:
    radius: float
    n_samples: int
    n_rays: int
    L: float
    T_cap: float
    verdict: str
    n_uncertified: int
    worst: Dict[str, object]
    xi_growth: float
    exit_times: np.ndarray = dc_field(repr=False, default=None)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "exit_times"}
        return json.dumps(d, indent=2, default=lambda o: np.asarray(o).tolist())


def _crossing_fraction(info: StepInfo, sel: np.ndarray, R: float, iters: int = 50) -> np.ndarray:
    """Fraction of the step where |x| first rises through R (bisection on the Hermite cubic)."""
    sub = StepInfo(info.idx[sel], info.t0[sel], info.y0[sel], info.f0[sel], info.t1[sel], info.y1[sel],
                   info.f1[sel])
    d = info.y0.shape[1] // 2
    lo = np.zeros(sel.sum())
    hi = np.ones(sel.sum())
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        r = np.linalg.norm(sub.hermite(mid)[:, :d], axis=1)
        inside = r <= R
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


class _ExitTracker:
    """Observer recording last exits from ``B_R`` and certifying escape."""

    def __init__(self, metric: Metric, R: float, n_rays: int, r_cert: Optional[float] = None,
                 eps: float = 0.01):
        self.metric, self.R, self.eps = metric, float(R), eps
        sr = metric.support_radius
        self.r_cert = max(self.R, sr) if r_cert is None else max(self.R, r_cert)
        self.exact = math.isfinite(sr) and self.r_cert >= sr
        self.last_exit = np.zeros(n_rays)
        self.certified = np.zeros(n_rays, dtype=bool)
        self.xi0 = None
        self.xi_max = np.zeros(n_rays)

    def __call__(self, info: StepInfo):
        d = self.metric.d
        r0 = np.linalg.norm(info.y0[:, :d], axis=1)
        r1 = np.linalg.norm(info.y1[:, :d], axis=1)
        cross = (r0 <= self.R) & (r1 > self.R)
        if np.any(cross):
            th = _crossing_fraction(info, cross, self.R)
            tc = info.t0[cross] + th * (info.t1[cross] - info.t0[cross])
            self.last_exit[info.idx[cross]] = np.abs(tc)
        self.xi_max[info.idx] = np.maximum(self.xi_max[info.idx], np.linalg.norm(info.y1[:, d:], axis=1))
        x1, v1 = info.y1[:, :d], info.f1[:, :d]
        # f1 is d/dt in signed time; outgoing means |x| grows along the run
        dt_sign = np.sign(info.t1 - info.t0)
        radial = (x1 * v1).sum(axis=1) * dt_sign
        ok = (r1 > self.r_cert) & (radial >= 0)
        if not self.exact:
            force = np.linalg.norm(info.f1[:, d:], axis=1) * r1
            ok &= force <= self.eps * np.linalg.norm(info.y1[:, d:], axis=1) * np.linalg.norm(v1, axis=1)
        self.certified[info.idx[ok]] = True
        return ok


def nontrapping_parameter(metric: Metric, R: float, sampler_spec: Optional[SamplerSpec] = None,
                          T_cap: Optional[float] = None, tol: float = 1e-8,
                          samples: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrappingReport:
    """Sampled estimate of ``L(R)``, the worst last-exit time from ``B_R``.

    Every sample is run forward and backward until it certifiably escapes or
    reaches ``T_cap``.  The estimate is a lower bound for the true supremum.
    """
    spec = sampler_spec or SamplerSpec()
    X, XI = samples if samples is not None else sample_phase_space(metric.d, R, spec)
    N = X.shape[0]
    T_cap = default_t_cap(metric, R) if T_cap is None else float(T_cap)
    Y0 = np.concatenate([np.vstack([X, X]), np.vstack([XI, XI])], axis=1)
    t_end = np.concatenate([np.full(N, T_cap), np.full(N, -T_cap)])
    tracker = _ExitTracker(metric, R, 2 * N)
    speed = 2.0 * metric.nondegeneracy() * np.linalg.norm(XI, axis=1).max()
    max_step = 0.1 * R / speed
    rtol, atol = _local_tols(tol)
    res = integrate_batch(metric.rhs, Y0, t_end, rtol=rtol, atol=atol, max_step=max_step,
                          invariant=_hamiltonian_of(metric), drift_tol=tol, observer=tracker)
    uncert = ~tracker.certified
    exits = tracker.last_exit
    n_unc = int(uncert.sum())
    verdict = "trapped-suspect" if n_unc else "nontrapping-estimate"
    if n_unc:
        L = T_cap
        w = int(np.nonzero(uncert)[0][0])
    else:
        w = int(np.argmax(exits))
        L = float(exits[w])
    xi_growth = float((tracker.xi_max / np.linalg.norm(np.vstack([XI, XI]), axis=1)).max())
    worst = {"x": Y0[w, :metric.d].tolist(), "xi": Y0[w, metric.d:].tolist(),
             "direction": "forward" if w < N else "backward", "exit_time": float(exits[w]),
             "certified": bool(tracker.certified[w]), "max_drift": float(res.max_drift.max())}
    return TrappingReport(float(R), N, 2 * N, L, T_cap, verdict, n_unc, worst, xi_growth,
                          exit_times=np.maximum(exits[:N], exits[N:]))


# --------------------------------------------------------- flat asymptotics

@dataclass
class FlatAsymptoticsReport:
    dev_x: float
    dev_xi: float
    eps0: float
    n_samples: int
    n_rejected: int
    n_uncertified: int

    @property
    def passed(self) -> bool:
        return self.dev_x <= self.eps0 and self.dev_xi <= self.eps0 and self.n_uncertified == 0


def outgoing_samples(metric: Metric, R0: float, n: int, seed: int = 0, width: float = 0.5):
    """Random data with ``R0 <= |x| <= (1 + width) R0`` and outgoing velocity."""
    rng = np.random.default_rng(seed)
    d = metric.d
    dirx = rng.standard_normal((n, d))
    dirx /= np.linalg.norm(dirx, axis=1, keepdims=True)
    X = dirx * rng.uniform(R0, (1 + width) * R0, size=(n, 1))
    XI = rng.standard_normal((n, d))
    XI /= np.linalg.norm(XI, axis=1, keepdims=True)
    v = -2.0 * np.einsum("bjk,bk->bj", metric.g(X), XI)
    flip = (v * X).sum(axis=1) < 0
    XI[flip] *= -1.0
    return X, XI


def flat_asymptotics_check(metric: Metric, R0: float, eps0: float = 0.1, samples=None,
                           n_samples: int = 256, seed: int = 0, T_cap: Optional[float] = None,
                           tol: float = 1e-9) -> FlatAsymptoticsReport:
    """Worst deviation from the flat flow over ``t >= 0`` for outgoing data.

    The sup over ``t`` is exact after certified exit: past the support the ray
    is straight and ``|P/t + Q|`` is convex in ``1/t``, so it is maximal
    either at the exit time or as ``t -> infinity``.
    """
    if samples is None:
        samples = outgoing_samples(metric, R0, n_samples, seed)
    X, XI = (np.atleast_2d(np.asarray(a, dtype=float)) for a in samples)
    d = metric.d
    G = metric.g_inf
    v0 = -2.0 * np.einsum("bjk,bk->bj", metric.g(X), XI)
    keep = ((v0 * X).sum(axis=1) >= 0) & (np.linalg.norm(X, axis=1) >= R0)
    n_rej = int((~keep).sum())
    X, XI = X[keep], XI[keep]
    N = X.shape[0]
    if N == 0:
        return FlatAsymptoticsReport(0.0, 0.0, eps0, 0, n_rej, 0)
    nxi = np.linalg.norm(XI, axis=1)
    # t -> 0 limit of the position deviation
    dev_x = 2.0 * np.linalg.norm(np.einsum("bjk,bk->bj", metric.g(X) - G, XI), axis=1) / nxi
    dev_xi = np.zeros(N)
    R_eff = max(float(np.linalg.norm(X, axis=1).max()), metric.support_radius if math.isfinite(metric.support_radius) else 0.0)
    tracker = _ExitTracker(metric, R_eff, N)
    T_cap = default_t_cap(metric, R_eff) if T_cap is None else T_cap
    speed = 2.0 * metric.nondegeneracy() * nxi.max()
    xi_exit = XI.copy()

    def obs(info: StepInfo):
        i = info.idx
        t = info.t1
        x, xi = info.y1[:, :d], info.y1[:, d:]
        dx = np.linalg.norm(x - X[i] + 2.0 * t[:, None] * (XI[i] @ G.T), axis=1) / (t * nxi[i])
        dev_x[i] = np.maximum(dev_x[i], dx)
        dev_xi[i] = np.maximum(dev_xi[i], np.linalg.norm(xi - XI[i], axis=1) / nxi[i])
        done = tracker(info)
        xi_exit[i[done]] = xi[done]
        return done

    rtol, atol = _local_tols(tol)
    Y0 = np.concatenate([X, XI], axis=1)
    integrate_batch(metric.rhs, Y0, T_cap, rtol=rtol, atol=atol, max_step=0.05 * max(R0, 1e-3) / speed,
                    invariant=_hamiltonian_of(metric), drift_tol=max(tol, 1e-8), observer=obs)
    # t -> infinity limit: 2 |g_inf (xi - xi_exit)| / |xi|
    asym = 2.0 * np.linalg.norm((XI - xi_exit) @ G.T, axis=1) / nxi
    dev_x = np.maximum(dev_x, asym)
    n_unc = int((~tracker.certified).sum())
    return FlatAsymptoticsReport(float(dev_x.max()), float(dev_xi.max()), eps0, N, n_rej, n_unc)


# ------------------------------------------------- integrals along the flow

def _support_radius_of(v: Field, rel: float = 1e-14) -> float:
    a = np.abs(v.physical().values)
    if a.max() == 0:
        return 0.0
    r = v.grid.radius()
    return float(r[a > rel * a.max()].max() + 3.0 * v.grid.h)


def integrate_along_flow(metric: Metric, v: Field, x, xi, tol: float = 1e-10,
                         T_cap: Optional[float] = None) -> float:
    """``int_R |v(x^t)| dt`` along the ray through ``(x, xi)``, ``|xi| = 1``.

    ``|v|`` is interpolated with periodic cubic B-splines and the integral is
    carried as an extra ODE component so that the step control also bounds
    the quadrature error.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("xi must lie on the unit sphere")
    grid = v.grid
    if grid.d != metric.d:
        raise ValueError("field and metric dimensions differ")
    av = np.abs(v.physical().values)
    if av.max() == 0:
        return 0.0
    coeffs = ndimage.spline_filter(av, order=3, mode="grid-wrap")
    sv = _support_radius_of(v)
    if sv >= grid.box_length / 2:
        raise ValueError("v must be supported well inside the box")
    d = metric.d
    h, half = grid.h, grid.box_length / 2

    def vabs(xs):
        idx = ((xs + half) / h).T
        return ndimage.map_coordinates(coeffs, idx, order=3, mode="grid-wrap", prefilter=False)

    def fun(z):
        out = np.empty_like(z)
        out[:, :2 * d] = metric.rhs(z[:, :2 * d])
        out[:, 2 * d] = np.abs(vabs(z[:, :d]))
        return out

    R = max(sv, 1e-9)
    tracker = _ExitTracker(metric, R, 2, r_cert=sv)
    T_cap = default_t_cap(metric, R) if T_cap is None else T_cap
    Z0 = np.tile(np.concatenate([x, xi, [0.0]]), (2, 1))
    speed = 2.0 * metric.nondegeneracy()

    def obs(info: StepInfo):
        sub = StepInfo(info.idx, info.t0, info.y0[:, :2 * d], info.f0[:, :2 * d], info.t1,
                       info.y1[:, :2 * d], info.f1[:, :2 * d])
        return tracker(sub)

    res = integrate_batch(fun, Z0, np.array([T_cap, -T_cap]), rtol=tol, atol=tol * 1e-2,
                          max_step=0.25 * h / speed, observer=obs)
    if not np.all(tracker.certified):
        raise TrappedFlowError("ray did not certify escape before T_cap")
    # the backward run accumulates a negative integral
    return float(res.y[0, 2 * d] - res.y[1, 2 * d])


# ----------------------------------------------------- perturbation stability

@dataclass
class StabilityReport:
    divergence: float
    L0: float
    L1: float
    budget: float
    distance: float

    @property
    def ratio(self) -> float:
        return self.L1 / self.L0 if self.L0 > 0 else 1.0

    @property
    def passed(self) -> bool:
        return 0.5 <= self.ratio <= 2.0


def perturbation_stability_check(metric0: Metric, metric1: Metric, R0: float, budget: float,
                                 cfg: FlowConfig = DEFAULT_FLOW, sampler_spec: Optional[SamplerSpec] = None,
                                 n_divergence: int = 256, tol: float = 1e-10) -> StabilityReport:
    """Compare rays and ``L(R0)`` for two nearby metrics."""
    dist = metric0.sup_distance(metric1)
    if dist > budget:
        raise PreconditionError(f"sampled |g0 - g1| = {dist:.3e} exceeds budget {budget:.3e}")
    spec = sampler_spec or SamplerSpec(n_samples=1024)
    X, XI = sample_phase_space(metric0.d, R0, spec)
    rep0 = nontrapping_parameter(metric0, R0, samples=(X, XI))
    if rep0.verdict != "nontrapping-estimate":
        raise PreconditionError("reference metric looks trapped at R0")
    if budget > math.exp(-cfg.c0 * rep0.L):
        raise PreconditionError(f"budget {budget:.3e} above exp(-C0 L) = {math.exp(-cfg.c0 * rep0.L):.3e}")
    rep1 = nontrapping_parameter(metric1, R0, samples=(X, XI))
    L0 = rep0.L
    m = min(n_divergence, X.shape[0])
    Xd, XId = X[:m], XI[:m]
    stops = np.linspace(0.0, L0, 65)[1:]
    div = 0.0
    for sgn in (1.0, -1.0):
        tracks = []
        for met in (metric0, metric1):
            rec = np.full((m, stops.size, met.d), np.nan)

            def obs(info: StepInfo, rec=rec):
                tt = np.abs(info.t1)
                j = np.searchsorted(stops, tt * (1 - 1e-12))
                hit = (j < stops.size) & np.isclose(stops[np.minimum(j, stops.size - 1)], tt, rtol=1e-12)
                rec[info.idx[hit], j[hit]] = info.y1[hit, :met.d]
                return None

            rtol, atol = _local_tols(tol)
            integrate_batch(met.rhs, np.concatenate([Xd, XId], axis=1), sgn * L0, rtol=rtol, atol=atol,
                            invariant=_hamiltonian_of(met), drift_tol=1e-8, stops=stops, observer=obs)
            tracks.append(rec)
        a, b = tracks
        inside = (np.linalg.norm(a, axis=2) <= R0) | (np.linalg.norm(b, axis=2) <= R0)
        gap = np.linalg.norm(a - b, axis=2)
        if np.any(inside):
            div = max(div, float(np.nanmax(np.where(inside, gap, 0.0))))
    return StabilityReport(div, L0, rep1.L, float(budget), dist)


# ----------------------------------------------------------- derivatives

@dataclass
class FlowDerivatives:
    dx_dx: np.ndarray
    dx_dxi: np.ndarray
    dxi_dx: np.ndarray
    dxi_dxi: np.ndarray
    fd_rel_error: float
    second: Optional[np.ndarray] = None
    symmetry_error: Optional[float] = None

    @property
    def jacobian(self) -> np.ndarray:
        return np.block([[self.dx_dx, self.dx_dxi], [self.dxi_dx, self.dxi_dxi]])


def _variational_end(metric: Metric, Y0: np.ndarray, t: float, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """End states and Jacobians for a batch of rays."""
    B, n = Y0.shape

    def fun(z):
        y = z[:, :n]
        P = z[:, n:].reshape(-1, n, n)
        out = np.empty_like(z)
        out[:, :n] = metric.rhs(y)
        out[:, n:] = np.einsum("bij,bjk->bik", metric.jacobian(y), P).reshape(-1, n * n)
        return out

    Z0 = np.concatenate([Y0, np.tile(np.eye(n).ravel(), (B, 1))], axis=1)
    res = integrate_batch(fun, Z0, t, rtol=tol, atol=tol)
    return res.y[:, :n], res.y[:, n:].reshape(-1, n, n)


def flow_derivatives(metric: Metric, x, xi, t: float, order: int = 1, fd_step: float = 1e-5,
                     tol: float = 1e-12, check_tol: float = 1e-3) -> FlowDerivatives:
    """Jacobian of the flow map at time ``t`` from the variational ODE.

    The result is cross-checked against central finite differences of the
    flow endpoints.  With ``order=2`` the second derivatives come from
    central differences of the variational Jacobian, and symmetry of the
    mixed partials is reported as their consistency check.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not metric.has_hessian:
        raise ValueError("flow_derivatives needs an analytic Hessian")
    y0 = np.concatenate([np.atleast_1d(x), np.atleast_1d(xi)]).astype(float)
    n = y0.size
    d = n // 2
    _, P = _variational_end(metric, y0[None, :], t, tol)
    P = P[0]
    steps = fd_step * np.maximum(1.0, np.abs(y0))
    Yp = y0 + np.diag(steps)
    Ym = y0 - np.diag(steps)
    res = integrate_batch(metric.rhs, np.vstack([Yp, Ym]), t, rtol=tol, atol=tol)
    fd = ((res.y[:n] - res.y[n:]) / (2 * steps[:, None])).T
    rel = float(np.linalg.norm(P - fd) / max(np.linalg.norm(P), 1e-300))
    if rel > check_tol:
        raise DiagnosticsError(f"variational and finite-difference Jacobians differ (rel {rel:.2e})",
                               variational=P, finite_difference=fd)
    second = sym = None
    if order == 2:
        h2 = 1e-4 * np.maximum(1.0, np.abs(y0))
        _, Pp = _variational_end(metric, y0 + np.diag(h2), t, tol)
        _, Pm = _variational_end(metric, y0 - np.diag(h2), t, tol)
        # second[i, a, b] = d^2 y_i / d y_a d y_b
        second = np.transpose((Pp - Pm) / (2 * h2[:, None, None]), (1, 0, 2))
        sym = float(np.abs(second - np.transpose(second, (0, 2, 1))).max() / max(np.abs(second).max(), 1e-300))
    return FlowDerivatives(P[:d, :d], P[:d, d:], P[d:, :d], P[d:, d:], rel, second, sym)


def fit_growth_constant(block_norms: Sequence[float], L: float) -> float:
    """Smallest ``C`` with ``norm <= exp(C L)`` for all supplied norms."""
    nm = np.maximum(np.asarray(block_norms, dtype=float), 1.0)
    return float(np.log(nm).max() / max(L, 1e-300))


# ------------------------------------------------------- integrability sweep

def integrability_sweep(metric: Metric, v: Field, R0: float, n_dirs: int = 64, through=None,
                        s: float = 1.0, sampler_spec: Optional[SamplerSpec] = None) -> Dict[str, float]:
    """Max of ``int |v(x^t)| dt`` over directions, compared with ``(1 + L(R0)) |v|_{l1Hs}``."""
    from .littlewood_paley import norm as lp_norm

    d = metric.d
    x = np.zeros(d) if through is None else np.asarray(through, dtype=float)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        th = 2 * np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
        dirs = np.column_stack([np.cos(th), np.sin(th)])
    else:
        dirs = sample_phase_space(d, 1.0, SamplerSpec(n_dirs, 3))[1]
    vals = np.array([integrate_along_flow(metric, v, x, e) for e in dirs])
    L = nontrapping_parameter(metric, R0, sampler_spec or SamplerSpec(1024)).L
    nv = lp_norm(v, "l1Hs", s=s).value
    C = float(vals.max() / ((1.0 + L) * nv)) if nv > 0 else 0.0
    return {"max_integral": float(vals.max()), "L": float(L), "l1Hs": float(nv), "C": C}
