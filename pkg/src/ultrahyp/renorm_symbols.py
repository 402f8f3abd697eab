"""Renormalization symbols built from ray integrals, and their lattice checks.

Two families are constructed from frozen coefficients ``A(x) = g(x)``,
``b(x)``, ``b~(x)``:

* ``O = exp(psi1 + psi2)``.  ``psi1`` integrates the odd first-order symbol
  ``B`` along rays and is localised to ``|x| < 4R``.  ``psi2`` is an angular
  weight that absorbs the localisation error, and ``r`` is the remainder.
* ``q = exp(C (p - inf p))`` with ``p = p1 + p2``.  ``p1`` is a forward
  escape integral of ``(chi_{<2R} + eta) |xi|`` localised to ``|x| < 2R'``.

The ray integrals need one ray per ``(x, direction)``.  Writing
``I +- J`` as a backward minus a forward integral along the same ray, and
using homogeneity ``xi -> lam xi, t -> t/lam``, the dependence on ``|xi|``
only enters through ``mu = |xi|^-2`` in a smooth integrand.  That
dependence is carried by Chebyshev nodes in ``mu``.

Along the flow, ``H_a`` of a ray integral is the integrand itself.  This
gives closed forms for ``H_a psi1`` and ``H_a p1`` on the check lattices
that need no differentiation of tabulated data.  ``hamilton_derivative``
verifies those forms by short-time ray differencing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field, asdict, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .grid_core import (DELTA0, Grid, chi, chi_deriv, chi_hi, chi_hi_deriv, phi_below, phi_below_deriv,
                        rho, rho_deriv)
from .hamilton_flow import (ConstantMetric, Metric, SamplerSpec, StepInfo, TrappedFlowError, _ExitTracker,
                            default_t_cap, flow_many, integrate_batch, nontrapping_parameter)
from .psdo import QuantizedOperator, Symbol, japanese, op_norm, fit_slope
from .littlewood_paley import below_multiplier, shell_multiplier


class DependencyError(RuntimeError):
    pass


# ------------------------------------------------------------- coefficients

class VectorField:
    """Complex vector field ``b(x)`` with Jacobian ``db_j/dx_l``."""

    d: int
    support_radius: float = 0.0

    def __call__(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError


class ZeroVector(VectorField):
    def __init__(self, d: int):
        self.d = d
        self.support_radius = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape, dtype=complex)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.d,), dtype=complex)


class BumpVector(VectorField):
    """``b(x) = amplitude * B(|x - c|^2 / r^2)`` with the smooth unit bump ``B``."""

    def __init__(self, amplitude, radius: float, center=None):
        self.amplitude = np.atleast_1d(np.asarray(amplitude, dtype=complex))
        self.d = self.amplitude.size
        self.radius = float(radius)
        self.center = np.zeros(self.d) if center is None else np.asarray(center, dtype=float)
        self.support_radius = float(np.linalg.norm(self.center) + self.radius)

    def _u(self, x):
        y = np.asarray(x, dtype=float) - self.center
        u = (y * y).sum(axis=-1) / self.radius ** 2
        B = np.zeros_like(u)
        B1 = np.zeros_like(u)
        m = u < 1
        w = 1.0 - u[m]
        B[m] = np.exp(1.0 - 1.0 / w)
        B1[m] = -B[m] / w ** 2
        return y, B, B1

    def __call__(self, x):
        _, B, _ = self._u(x)
        return B[..., None] * self.amplitude

    def jacobian(self, x):
        """``J[..., j, l] = d b_j / d x_l``."""
        y, _, B1 = self._u(x)
        gb = (2.0 / self.radius ** 2) * B1[..., None] * y
        return self.amplitude[:, None] * gb[..., None, :]


@dataclass
class FrozenCoefficients:
    """Time-zero, frequency-truncated coefficients used by the constructions."""

    metric: Metric
    b: VectorField
    b_tilde: VectorField
    sigma: float = 1.0

    @property
    def d(self) -> int:
        return self.metric.d

    @property
    def support_radius(self) -> float:
        m = self.metric.support_radius
        return float(max(m if math.isfinite(m) else 0.0, self.b.support_radius, self.b_tilde.support_radius))

    @property
    def feature_scale(self) -> float:
        """Smallest bump radius among the coefficients (``inf`` when all are constant)."""
        rs = [getattr(c, "radius", math.inf) for c in (self.metric, self.b, self.b_tilde)
              if not isinstance(c, (ZeroVector, ConstantMetric))]
        return float(min(rs)) if rs else math.inf

    def A(self, x):
        return self.metric.g(x)

    def a(self, x, xi):
        return self.metric.hamiltonian(x, xi)

    def B(self, x, xi):
        """``Re b . xi + sigma <xi>^-2 xi_l d_l A^{jk} xi_j xi_k`` (odd in ``xi``)."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        lin = (np.real(self.b(x)) * xi).sum(axis=-1)
        cub = np.einsum("...l,...ljk,...j,...k->...", xi, self.metric.grad(x), xi, xi)
        return lin + self.sigma * cub / japanese(xi) ** 2

    def grad_A_norm(self, x):
        G = self.metric.grad(x)
        return np.sqrt((G * G).sum(axis=(-1, -2, -3)))

    def min_A_xi(self, n_probe: int = 512, seed: int = 3) -> float:
        """Sampled ``min |A(x) xi|`` over ``|xi| = 1``."""
        rng = np.random.default_rng(seed)
        d = self.d
        rad = max(self.support_radius, 1.0)
        X = rng.uniform(-rad, rad, size=(n_probe, d))
        X = np.vstack([X, np.zeros((1, d))])
        if d == 1:
            XI = np.ones((X.shape[0], 1))
        else:
            XI = rng.standard_normal((X.shape[0], d))
            XI /= np.linalg.norm(XI, axis=1, keepdims=True)
        v = np.linalg.norm(np.einsum("bjk,bk->bj", self.A(X), XI), axis=1)
        sv = np.linalg.svd(self.metric.g_inf, compute_uv=False)
        return float(min(v.min(), sv.min()))


def flat_coefficients(g_inf, sigma: float = 1.0) -> FrozenCoefficients:
    m = ConstantMetric(g_inf)
    return FrozenCoefficients(m, ZeroVector(m.d), ZeroVector(m.d), sigma)


# ------------------------------------------------------------------ params

@dataclass
class RenormParams:
    R: float = 4.0
    R_prime: float = 32.0
    k0: int = 4
    k1: int = 12
    sigma: float = 1.0
    K: Optional[float] = None
    K_prime: Optional[float] = None
    K_dprime: Optional[float] = None
    C_M: Optional[float] = None
    M: float = 0.0
    eps: float = 0.01
    eps0: float = 0.1
    delta0: float = DELTA0
    L_R: Optional[float] = None
    L_2Rp: Optional[float] = None
    n_cheb: int = 12

    def validate(self, box_length: Optional[float] = None) -> None:
        if self.R_prime < 8 * self.R:
            raise ValueError("need R' >= 8 R")
        if self.k1 < self.k0 + 8:
            raise ValueError("need k1 >= k0 + 8")
        ks = [self.K, self.K_prime, self.K_dprime]
        if all(k is not None for k in ks) and not (ks[0] < ks[1] < ks[2]):
            raise ValueError("need K < K' < K''")
        if box_length is not None and 2 * self.R_prime > box_length / 2 * (2 / 3) + 1e-12:
            raise ValueError("radii must stay inside the box's middle third")

    def fingerprint(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# ------------------------------------------------------------------ angles

class AngleSet:
    """Angles between ``x``, ``A xi`` and ``A_inf xi``."""

    def __init__(self, frozen: FrozenCoefficients):
        self.frozen = frozen
        self.A_inf = frozen.metric.g_inf

    @staticmethod
    def _cos(u, v):
        nu = np.linalg.norm(u, axis=-1)
        nv = np.linalg.norm(v, axis=-1)
        den = np.where((nu > 0) & (nv > 0), nu * nv, 1.0)
        return np.clip((u * v).sum(axis=-1) / den, -1.0, 1.0)

    def cos_theta(self, x, xi):
        return self._cos(np.asarray(x, float), np.asarray(xi, float) @ self.A_inf.T)

    def cos_alpha(self, x, xi):
        Axi = np.einsum("...jk,...k->...j", self.frozen.A(x), xi)
        return self._cos(np.asarray(x, float), Axi)

    def cos_beta(self, x, xi):
        Axi = np.einsum("...jk,...k->...j", self.frozen.A(x), xi)
        return self._cos(Axi, np.asarray(xi, float) @ self.A_inf.T)

    def theta(self, x, xi):
        return np.arccos(self.cos_theta(x, xi))

    def alpha(self, x, xi):
        return np.arccos(self.cos_alpha(x, xi))

    def beta(self, x, xi):
        return np.arccos(self.cos_beta(x, xi))

    def gamma(self, x, xi):
        return 0.5 * (1.0 + self.cos_theta(x, xi))


def angle_identity_check(frozen: FrozenCoefficients, X, XI, h: float = 1e-5) -> float:
    """Worst ``r |delta|`` in ``A xi . grad_x cos(theta) = |A xi| (sin^2(theta)/r + delta)``.

    The gradient is taken by central differences in ``x``.
    """
    X = np.atleast_2d(np.asarray(X, float))
    XI = np.atleast_2d(np.asarray(XI, float))
    ang = AngleSet(frozen)
    d = frozen.d
    grad = np.zeros(np.broadcast_shapes(X.shape, XI.shape))
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        grad[..., l] = (ang.cos_theta(X + e, XI) - ang.cos_theta(X - e, XI)) / (2 * h)
    Axi = np.einsum("...jk,...k->...j", frozen.A(X), XI)
    nA = np.linalg.norm(Axi, axis=-1)
    r = np.linalg.norm(X, axis=-1)
    c = ang.cos_theta(X, XI)
    delta = (Axi * grad).sum(axis=-1) / nA - (1 - c * c) / r
    return float(np.max(np.abs(r * delta)))


# ------------------------------------------------------------- psi2 / p2

@dataclass
class AngularWeight:
    """``K' chi_{>1}(|xi|) (rho_R phi_{<-1/2}(cos th) - rho_th phi_{>-1/2}(cos th))``.

    ``rho_th = rho(r gamma / R)``, the radial reading of the gamma-averaged
    radius.  Value and exact gradients are available.
    """

    A_inf: np.ndarray
    R: float
    K_prime: float
    delta0: float = DELTA0

    def parts(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        x, xi = np.broadcast_arrays(x, xi)
        r = np.linalg.norm(x, axis=-1)
        rs = np.where(r > 0, r, 1.0)
        xh = x / rs[..., None]
        u = xi @ self.A_inf.T
        nu = np.linalg.norm(u, axis=-1)
        nus = np.where(nu > 0, nu, 1.0)
        uh = u / nus[..., None]
        c = np.clip((xh * uh).sum(axis=-1), -1.0, 1.0)
        gam = 0.5 * (1.0 + c)
        R = self.R
        rR, rG = rho(r / R), rho(r * gam / R)
        dR, dG = rho_deriv(r / R), rho_deriv(r * gam / R)
        pl = phi_below(c, -0.5, self.delta0)
        dpl = phi_below_deriv(c, -0.5, self.delta0)
        pg = 1.0 - pl
        base = rR * pl - rG * pg
        dc_dx = (uh - c[..., None] * xh) / rs[..., None]
        dc_dxi = ((xh - c[..., None] * uh) / nus[..., None]) @ self.A_inf
        g_rR = (dR / R)[..., None] * xh
        g_rG_x = (dG / R)[..., None] * (gam[..., None] * xh + 0.5 * r[..., None] * dc_dx)
        g_rG_xi = (dG / R)[..., None] * (0.5 * r[..., None] * dc_dxi)
        coef_c = (rR + rG) * dpl
        gx_base = g_rR * pl[..., None] - g_rG_x * pg[..., None] + coef_c[..., None] * dc_dx
        gxi_base = -g_rG_xi * pg[..., None] + coef_c[..., None] * dc_dxi
        nxi = np.linalg.norm(xi, axis=-1)
        h = chi_hi(nxi)
        dh = chi_hi_deriv(nxi)
        xih = xi / np.where(nxi > 0, nxi, 1.0)[..., None]
        K = self.K_prime
        val = K * h * base
        gx = K * h[..., None] * gx_base
        gxi = K * (dh * base)[..., None] * xih + K * h[..., None] * gxi_base
        return val, gx, gxi, base

    def __call__(self, x, xi):
        return self.parts(x, xi)[0]


def build_psi2(frozen: FrozenCoefficients, params: RenormParams, K_prime: Optional[float] = None) -> Symbol:
    K = params.K_prime if K_prime is None else K_prime
    if K is None:
        raise ValueError("K' is not calibrated")
    w = AngularWeight(frozen.metric.g_inf, params.R, K, params.delta0)
    return Symbol(w, 0.0, frozen.d, grad_x=lambda x, xi: w.parts(x, xi)[1],
                  grad_xi=lambda x, xi: w.parts(x, xi)[2], name="psi2")


def hamilton_field(frozen: FrozenCoefficients, x, xi, grad_x, grad_xi):
    """``H_a f = grad_xi a . grad_x f - grad_x a . grad_xi f`` from supplied gradients."""
    Axi = np.einsum("...jk,...k->...j", frozen.A(x), xi)
    dA = np.einsum("...ljk,...j,...k->...l", frozen.metric.grad(x), xi, xi)
    return (-2.0 * Axi * grad_x).sum(axis=-1) + (dA * grad_xi).sum(axis=-1)


def remainder_symbol(frozen: FrozenCoefficients, weight: AngularWeight, K_dprime: float):
    """``r = -xi_i xi_j grad_xi(weight) . grad_x A^{ij} + K'' chi_{<2}(|xi|)``."""
    def fn(x, xi):
        _, _, gxi, _ = weight.parts(x, xi)
        dA = np.einsum("...ljk,...j,...k->...l", frozen.metric.grad(x), xi, xi)
        return -(dA * gxi).sum(axis=-1) + K_dprime * chi(np.linalg.norm(xi, axis=-1) / 2.0)

    return fn


# ------------------------------------------------------------ ray engine

def cheb_nodes(n: int) -> np.ndarray:
    """Chebyshev points of the second kind mapped to ``mu in [0, 1]``."""
    if n == 1:
        return np.array([0.0])
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / (n - 1)))


def cheb_interp(nodes: np.ndarray, values: np.ndarray, mu) -> np.ndarray:
    """Barycentric interpolation along the last axis of ``values``."""
    n = nodes.size
    if n == 1:
        return np.broadcast_to(values[..., 0], np.broadcast_shapes(values.shape[:-1], np.shape(mu)))
    w = np.ones(n)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    mu = np.asarray(mu, dtype=float)
    shp = np.broadcast_shapes(values.shape[:-1], mu.shape)
    mu = np.broadcast_to(mu, shp)
    values = np.broadcast_to(values, shp + (n,))
    diff = mu[..., None] - nodes
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff = np.where(exact, 1.0, diff)
    t = w / diff
    val = (t * values).sum(axis=-1) / t.sum(axis=-1)
    if np.any(exact):
        hit = exact.any(axis=-1)
        idx = exact.argmax(axis=-1)
        v_exact = np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]
        val = np.where(hit, v_exact, val)
    return val


@dataclass
class RayTable:
    """Backward and forward integrals per ``(x, unit direction)`` and component."""

    X: np.ndarray
    W: np.ndarray
    backward: np.ndarray
    forward: np.ndarray
    max_drift: float
    rays: int


def ray_integrals(frozen: FrozenCoefficients, X, W, integrand: Callable, n_comp: int, r_cert: float,
                  tol: float = 1e-10, T_cap: Optional[float] = None, directions: str = "both",
                  scale: Optional[float] = None) -> RayTable:
    """Integrate ``integrand(x, eta)`` along rays from ``(X, W)`` in both time directions.

    ``integrand`` returns ``(B, n_comp)`` and must vanish for ``|x| > r_cert``.
    ``scale`` is the smallest length on which the integrand varies; steps are
    capped at a tenth of its crossing time so no feature is stepped over.
    Rays stop once they are outgoing beyond ``max(r_cert, metric support)``,
    after which the remaining integral is exactly zero.
    """
    metric = frozen.metric
    d = frozen.d
    X = np.atleast_2d(np.asarray(X, float))
    W = np.atleast_2d(np.asarray(W, float))
    N = X.shape[0]
    R_out = float(np.linalg.norm(X, axis=1).max())
    if T_cap is None:
        T_cap = default_t_cap(metric, max(R_out, r_cert, 1.0))
    runs = []
    if directions in ("both", "backward"):
        runs.append(-1.0)
    if directions in ("both", "forward"):
        runs.append(1.0)
    Y0 = np.concatenate([X, W, np.zeros((N, n_comp))], axis=1)
    Y0 = np.vstack([Y0] * len(runs))
    t_end = np.concatenate([np.full(N, s * T_cap) for s in runs])

    def fun(z):
        out = np.empty_like(z)
        out[:, :2 * d] = metric.rhs(z[:, :2 * d])
        out[:, 2 * d:] = integrand(z[:, :d], z[:, d:2 * d])
        return out

    tracker = _ExitTracker(metric, max(r_cert, 1e-12), Y0.shape[0], r_cert=r_cert)

    def obs(info: StepInfo):
        sub = StepInfo(info.idx, info.t0, info.y0[:, :2 * d], info.f0[:, :2 * d], info.t1,
                       info.y1[:, :2 * d], info.f1[:, :2 * d])
        return tracker(sub)

    ham = lambda z: metric.hamiltonian(z[:, :d], z[:, d:2 * d])
    if scale is None or not math.isfinite(scale):
        scale = max(r_cert, 1e-3)
    speed = 2.0 * metric.nondegeneracy() * float(np.linalg.norm(W, axis=1).max())
    r_coef = frozen.support_radius

    def cap(z):
        r = np.linalg.norm(z[:, :d], axis=1)
        return 0.1 * np.maximum(scale, np.minimum(r - r_coef, 0.25 * r)) / speed

    res = integrate_batch(fun, Y0, t_end, rtol=tol, atol=tol, invariant=ham, drift_tol=1e-8, observer=obs,
                          max_step=cap)
    if not np.all(tracker.certified):
        raise TrappedFlowError(f"{int((~tracker.certified).sum())} rays did not certify escape")
    out = {}
    for i, s in enumerate(runs):
        z = res.y[i * N:(i + 1) * N, 2 * d:]
        out[s] = -z if s < 0 else z
    back = out.get(-1.0, np.zeros((N, n_comp)))
    fwd = out.get(1.0, np.zeros((N, n_comp)))
    return RayTable(X, W, back, fwd, float(res.max_drift.max()), Y0.shape[0])


# ----------------------------------------------------------------- psi1

class PsiOne:
    """``psi1 = -1/2 chi_{>1}(|xi|) chi_{<2R}(x) (I + J)`` with ray-tabulated ``I + J``."""

    def __init__(self, frozen: FrozenCoefficients, params: RenormParams, tol: float = 1e-10):
        self.frozen, self.params, self.tol = frozen, params, tol
        self.nodes = cheb_nodes(params.n_cheb if self._has_metric_term() else 1)
        R = params.R
        self.r_cert = frozen.support_radius
        self.R = R

    def _has_metric_term(self) -> bool:
        return not isinstance(self.frozen.metric, ConstantMetric)

    def integrand(self, cutoff: bool = True):
        fz = self.frozen
        nodes = self.nodes
        R = self.R

        def f(x, eta):
            lin = (np.real(fz.b(x)) * eta).sum(axis=-1)
            cub = np.einsum("bl,bljk,bj,bk->b", eta, fz.metric.grad(x), eta, eta)
            e2 = (eta * eta).sum(axis=-1)
            vals = lin[:, None] + fz.sigma * cub[:, None] / (nodes[None, :] + e2[:, None])
            if cutoff:
                vals = vals * chi(np.linalg.norm(x, axis=-1) / (4.0 * R))[:, None]
            return vals

        return f

    def table(self, X, W, cutoff: bool = True) -> RayTable:
        """``I + J`` samples: backward minus forward integral per Chebyshev node."""
        return ray_integrals(self.frozen, X, W, self.integrand(cutoff), self.nodes.size, self.r_cert, self.tol,
                             scale=min(self.frozen.feature_scale, self.R))

    def i_plus_j(self, tab: RayTable, lam) -> np.ndarray:
        """``(I + J)(x, lam w)`` for table rows; ``lam`` broadcasts against rows."""
        vals = tab.backward - tab.forward
        lam = np.asarray(lam, dtype=float)
        mu = np.where(lam > 0, 1.0 / np.maximum(lam, 1e-150) ** 2, np.inf)
        mu = np.minimum(mu, 1.0)  # chi_{>1} kills |xi| < 1
        return cheb_interp(self.nodes, vals, mu)

    def evaluate(self, x, xi) -> np.ndarray:
        """Direct evaluation at arbitrary points (one ray pair per point)."""
        x = np.atleast_2d(np.asarray(x, float))
        xi = np.atleast_2d(np.asarray(xi, float))
        x, xi = np.broadcast_arrays(x, xi)
        lam = np.linalg.norm(xi, axis=-1)
        w = xi / np.where(lam > 0, lam, 1.0)[:, None]
        tab = self.table(x, w)
        ij = self.i_plus_j(tab, lam)
        return -0.5 * chi_hi(lam) * chi(np.linalg.norm(x, axis=-1) / (2 * self.R)) * ij


def build_psi1(frozen: FrozenCoefficients, params: RenormParams, certify: bool = True) -> PsiOne:
    if certify and frozen.support_radius > 0 and not isinstance(frozen.metric, ConstantMetric):
        rep = nontrapping_parameter(frozen.metric, max(frozen.support_radius, 1.0), SamplerSpec(512))
        if rep.verdict != "nontrapping-estimate":
            raise TrappedFlowError("frozen metric looks trapped; psi1 refused")
    return PsiOne(frozen, params)


# ----------------------------------------------------------- calibration

def calibrate_O(frozen: FrozenCoefficients, params: RenormParams, X=None, W=None) -> RenormParams:
    """``K = sup |I + J|`` (twice ``sup |psi_ideal|``), ``K' = 8K / min|A xi|``, ``K'' = 8 K'``."""
    p1 = PsiOne(frozen, params)
    if X is None:
        X, W = _calibration_points(frozen, params.R)
    tab = ray_integrals(frozen, X, W, p1.integrand(cutoff=False), p1.nodes.size, p1.r_cert, p1.tol,
                        scale=min(frozen.feature_scale, params.R))
    K = float(np.abs(tab.backward - tab.forward).max())
    K = max(K, 1e-3)
    Kp = 8.0 * K / frozen.min_A_xi()
    return replace(params, K=K, K_prime=Kp, K_dprime=8.0 * Kp, C_M=8.0 * (1.0 + params.M))


def _calibration_points(frozen: FrozenCoefficients, R: float, n_r: int = 24, n_phi: int = 16, n_dir: int = 16):
    d = frozen.d
    rad = max(frozen.support_radius, R / 8)
    if d == 1:
        xs = np.linspace(-1.5 * rad, 1.5 * rad, 4 * n_r + 1)
        X = np.repeat(xs, 2)[:, None]
        W = np.tile([[1.0], [-1.0]], (xs.size, 1))
        return X, W
    lat = polar_lattice(d, 1.5 * rad, n_r, n_phi)
    dirs = unit_directions(d, n_dir)
    X = np.repeat(lat, dirs.shape[0], axis=0)
    W = np.tile(dirs, (lat.shape[0], 1))
    return X, W


# ------------------------------------------------------------------ lattices

def unit_directions(d: int, n: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    rng = np.random.default_rng(1)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def polar_lattice(d: int, r_max: float, n_r: int, n_phi: int) -> np.ndarray:
    if d == 1:
        return np.linspace(-r_max, r_max, 2 * n_r + 1)[:, None]
    rs = np.linspace(0.0, r_max, n_r + 1)[1:]
    pts = [np.zeros(d)]
    dirs = unit_directions(d, n_phi)
    for r in rs:
        pts.extend(r * dirs)
    return np.array(pts)


@dataclass
class CheckLattice:
    """Phase-space lattice: points ``X`` times unit directions ``W`` times radii ``lam``."""

    X: np.ndarray
    W: np.ndarray
    lam: np.ndarray

    @classmethod
    def build(cls, d: int, radii: Sequence[Tuple[float, int]], n_phi: int = 24, n_dir: int = 24,
              k1: int = 12) -> "CheckLattice":
        parts = [polar_lattice(d, rm, nr, n_phi) for rm, nr in radii]
        X = np.unique(np.round(np.vstack(parts), 12), axis=0)
        lam = np.unique(np.concatenate([[0.5, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0],
                                        2.0 ** np.arange(2, k1 + 1)]))
        return cls(X, unit_directions(d, n_dir), lam)

    def rays(self) -> Tuple[np.ndarray, np.ndarray]:
        X = np.repeat(self.X, self.W.shape[0], axis=0)
        W = np.tile(self.W, (self.X.shape[0], 1))
        return X, W

    def radial_spacing(self) -> float:
        r = np.unique(np.round(np.linalg.norm(self.X, axis=1), 9))
        return float(np.diff(r).max()) if r.size > 1 else math.inf


# ----------------------------------------------------------------- O check

@dataclass
class CommutatorReport:
    kind: str
    minimum: float
    where: Dict[str, object]
    tol: float
    n_points: int
    params: Dict[str, object]
    resolution_warning: Optional[str] = None
    extra: Dict[str, object] = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.minimum >= -self.tol

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=lambda o: np.asarray(o).tolist())


def _H_of_cutoff(frozen: FrozenCoefficients, x, xi, radius: float):
    """``H_a c`` for ``c = chi_{>1}(|xi|) chi(|x| / radius)``."""
    r = np.linalg.norm(x, axis=-1)
    rs = np.where(r > 0, r, 1.0)
    nxi = np.linalg.norm(xi, axis=-1)
    xih = xi / np.where(nxi > 0, nxi, 1.0)[..., None]
    gx = (chi_hi(nxi) * chi_deriv(r / radius) / radius)[..., None] * x / rs[..., None]
    gxi = (chi(r / radius) * chi_hi_deriv(nxi))[..., None] * xih
    return hamilton_field(frozen, x, xi, gx, gxi)


def positive_commutator_check_O(frozen: FrozenCoefficients, params: RenormParams,
                                lattice: Optional[CheckLattice] = None, tol: float = 1e-3,
                                K_prime: Optional[float] = None) -> CommutatorReport:
    """Minimum over the lattice of ``(H_a O + chi_{<2R} B O + r O) / ((1 + |xi|) O)``.

    ``K_prime`` overrides the calibrated ``K'`` (``0`` is the sabotage run);
    ``K''`` keeps its calibrated value.
    """
    R = params.R
    lat = lattice or CheckLattice.build(frozen.d, [(5 * R, 40)], k1=params.k1)
    psi1 = PsiOne(frozen, params)
    X, W = lat.rays()
    tab = psi1.table(X, W)
    Kp = params.K_prime if K_prime is None else K_prime
    weight = AngularWeight(frozen.metric.g_inf, R, Kp, params.delta0)
    rfun = remainder_symbol(frozen, weight, params.K_dprime)
    worst = math.inf
    where: Dict[str, object] = {}
    vals_all = []
    for lam in lat.lam:
        xi = lam * W
        ij = psi1.i_plus_j(tab, lam)
        nx = np.linalg.norm(X, axis=-1)
        c2R = chi(nx / (2 * R))
        h = chi_hi(lam)
        _, gx2, gxi2, _ = weight.parts(X, xi)
        Ha_psi2 = hamilton_field(frozen, X, xi, gx2, gxi2)
        Ha_psi1 = -0.5 * ij * _H_of_cutoff(frozen, X, xi, 2 * R) - h * c2R * chi(nx / (4 * R)) * frozen.B(X, xi)
        E = Ha_psi1 + c2R * frozen.B(X, xi) + Ha_psi2 + rfun(X, xi)
        v = E / (1.0 + lam)
        vals_all.append(v)
        i = int(np.argmin(v))
        if v[i] < worst:
            worst = float(v[i])
            where = {"x": X[i].tolist(), "xi": xi[i].tolist(), "r": float(nx[i])}
    warn = None
    if lat.radial_spacing() > R / 4:
        warn = f"radial spacing {lat.radial_spacing():.3g} exceeds R/4"
    return CommutatorReport("O", worst, where, tol, X.shape[0] * lat.lam.size,
                            {"R": R, "K": params.K, "K_prime": Kp, "K_dprime": params.K_dprime}, warn,
                            {"max_drift": tab.max_drift})


# ------------------------------------------------------------- O as symbol

class RenormSymbol:
    """``exp(s * psi)`` tabulated on a 1-D grid for quantization.

    ``psi = chi_{>1}(|xi|) T(x) Psi(x, mu, sign xi)``, where ``T`` is an
    outer taper to zero that makes the symbol periodic on the box.  The
    high-frequency part ``|xi| >= 2`` is separable in the Chebyshev basis in
    ``mu``.  The lattice columns with ``|xi| < 2`` are stored densely.
    """

    def __init__(self, grid: Grid, Psi: Dict[float, np.ndarray], nodes: np.ndarray, taper: np.ndarray):
        self.grid, self.Psi, self.nodes, self.taper = grid, Psi, nodes, taper

    def psi(self, xi_values: np.ndarray) -> np.ndarray:
        """``psi(x_j, xi)`` for a vector of lattice frequencies, shape ``(n, len(xi))``."""
        xi_values = np.asarray(xi_values, dtype=float)
        lam = np.abs(xi_values)
        out = np.zeros((self.grid.n, xi_values.size))
        for s in (1.0, -1.0):
            m = np.sign(xi_values) == s
            if not np.any(m):
                continue
            mu = np.minimum(1.0 / np.maximum(lam[m], 1e-150) ** 2, 1.0)
            val = cheb_interp(self.nodes, self.Psi[s][:, None, :], mu[None, :])
            out[:, m] = chi_hi(lam[m])[None, :] * self.taper[:, None] * val
        return out

    def operator(self, sign: float = 1.0) -> QuantizedOperator:
        """``Op(exp(sign * psi))`` built from separable terms plus dense low columns."""
        g = self.grid
        xi = g.freq_axis()
        lam = np.abs(xi)
        low = np.nonzero(lam < 2.0)[0]
        alphas, betas = [], []
        n = self.nodes.size
        for s in (1.0, -1.0):
            for k in range(n):
                e = np.zeros(n)
                e[k] = 1.0
                sel = (np.sign(xi) == s) & (lam >= 2.0)
                mu = np.minimum(1.0 / np.maximum(lam, 1e-150) ** 2, 1.0)
                beta = np.where(sel, cheb_interp(self.nodes, e, mu), 0.0)
                alphas.append(np.exp(sign * self.taper * self.Psi[s][:, k]).astype(complex))
                betas.append(beta.astype(complex))
        cols = np.exp(sign * self.psi(xi[low])).astype(complex)
        return QuantizedOperator.from_terms(g, alphas, betas, low, cols)


def materialize_O(frozen: FrozenCoefficients, params: RenormParams, grid: Grid,
                  taper_radius: Optional[float] = None) -> RenormSymbol:
    """Tabulate ``psi = psi1 + psi2`` on a 1-D grid (both frequency signs)."""
    if grid.d != 1 or frozen.d != 1:
        raise ValueError("materialize_O tabulates d = 1 symbols")
    R = params.R
    psi1 = PsiOne(frozen, params)
    x = grid.axis()[:, None]
    Psi = {}
    for s in (1.0, -1.0):
        W = np.full_like(x, s)
        tab = psi1.table(x, W)
        vals = -0.5 * chi(np.abs(x[:, 0]) / (2 * R))[:, None] * (tab.backward - tab.forward)
        weight = AngularWeight(frozen.metric.g_inf, R, params.K_prime, params.delta0)
        base = weight.parts(x, W)[3]
        Psi[s] = vals + params.K_prime * base[:, None]
    nodes = psi1.nodes
    if nodes.size == 1:
        nodes = np.array([0.0])
    tr = 4.5 * R if taper_radius is None else taper_radius
    if 2 * tr > grid.box_length / 2:
        raise ValueError("taper does not fit in the box")
    taper = chi(np.abs(grid.axis()) / tr)
    return RenormSymbol(grid, Psi, nodes, taper)


def linf_uniformity_scan(make_frozen: Callable[[float], FrozenCoefficients], R_list: Sequence[float],
                         params: RenormParams, n_for: Callable[[float], Tuple[int, float]],
                         k_list: Sequence[int], trials: int = 8, iters: int = 20) -> Dict[str, object]:
    """``sup|O|``, the high-frequency plateau of ``||Op(O) S_{>=k}||`` and ``sup|d_x O|`` per ``R``."""
    rows = []
    for R in R_list:
        fz = make_frozen(R)
        p = calibrate_O(fz, replace(params, R=R, R_prime=8 * R))
        n, L = n_for(R)
        grid = Grid(1, n, L)
        sym = materialize_O(fz, p, grid)
        xi = grid.freq_axis()
        supO = dO = 0.0
        for cols in np.array_split(np.arange(n), max(1, n // 256)):
            O = np.exp(sym.psi(xi[cols]))
            supO = max(supO, float(O.max()))
            dO = max(dO, float(np.abs(np.diff(O, axis=0, append=O[:1]) / grid.h).max()))
        op = sym.operator(+1.0)
        curve = [op_norm(op, trials=trials, iters=iters, restrict=1.0 - below_multiplier(grid, k)) for k in k_list]
        rows.append({"R": R, "sup_O": supO, "sup_dxO": dO, "curve": curve,
                     "plateau": curve[-1], "K": p.K, "K_prime": p.K_prime})
    plate = [r["plateau"] for r in rows]
    return {"rows": rows, "plateau_ratio": max(plate) / min(plate), "passed": max(plate) / min(plate) <= 2.0}


def approx_inverse_check(sym: RenormSymbol, k_list: Sequence[int], trials: int = 8, iters: int = 20,
                         slope_tol: float = 0.3) -> Dict[str, object]:
    """Shell norms of ``Op(e^{-psi}) Op(e^{psi}) - Id`` and their log-log slope."""
    g = sym.grid
    P, M = sym.operator(+1.0), sym.operator(-1.0)
    ap = lambda v: M.apply(P.apply(v)) - v
    ad = lambda w: P.adjoint(M.adjoint(w)) - w
    from .psdo import operator_norm

    norms = [operator_norm(ap, ad, g, restrict=shell_multiplier(g, k), trials=trials, iters=iters) for k in k_list]
    # log2 of the shell frequency 2^k against log2 of the norm
    slope = fit_slope(k_list, np.maximum(norms, 1e-300))
    return {"shells": list(k_list), "norms": norms, "slope": slope, "passed": abs(slope + 1.0) <= slope_tol}


def inverse_bound_probe(sym: RenormSymbol, k: int, trials: int = 16, seed: int = 0) -> float:
    """Largest observed ``|u| / |Op(O) u|`` over random shell-``k`` fields."""
    g = sym.grid
    P = sym.operator(+1.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = np.fft.ifft(np.fft.fft(rng.standard_normal(g.n) + 1j * rng.standard_normal(g.n)) * shell_multiplier(g, k))
        worst = max(worst, np.linalg.norm(u) / np.linalg.norm(P.apply(u)))
    return float(worst)


# ----------------------------------------------------------------- eta, q

class Eta:
    """``eta_{R'} = chi_{<2R'} sqrt(|b~|^2 + |b|^2 + |grad g|^2 + L(2R')^-2)``."""

    def __init__(self, frozen: FrozenCoefficients, R_prime: float, L_2Rp: Optional[float]):
        if L_2Rp is None:
            raise DependencyError("eta needs L(2R') from the ray module")
        self.frozen, self.R_prime, self.L = frozen, float(R_prime), float(L_2Rp)

    def inner(self, x):
        fz = self.frozen
        s = (np.abs(fz.b_tilde(x)) ** 2).sum(-1) + (np.abs(fz.b(x)) ** 2).sum(-1) + fz.grad_A_norm(x) ** 2
        return np.sqrt(s + self.L ** -2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return chi(np.linalg.norm(x, axis=-1) / (2 * self.R_prime)) * self.inner(x)

    def domination_constant(self, X, XI) -> float:
        """Sampled ``C`` in ``|grad g||xi| + |B entries| <= C eta |xi|`` on ``|x| <= R'``."""
        fz = self.frozen
        X = np.atleast_2d(X)
        XI = np.atleast_2d(XI)
        m = np.linalg.norm(X, axis=-1) <= self.R_prime
        X, XI = X[m], XI[m]
        nxi = np.linalg.norm(XI, axis=-1)
        lhs = fz.grad_A_norm(X) * nxi + np.abs((fz.b(X) * XI).sum(-1)) + np.abs((fz.b_tilde(X) * XI).sum(-1))
        return float((lhs / (self(X) * nxi)).max())


def build_eta(frozen: FrozenCoefficients, params: RenormParams) -> Eta:
    return Eta(frozen, params.R_prime, params.L_2Rp)


class EscapeIntegral:
    """``P(x, xi) = int_0^inf G(x^t) |xi^t| dt`` with ``G = chi_{<2R} + eta`` (degree 0 in ``xi``)."""

    def __init__(self, frozen: FrozenCoefficients, params: RenormParams, eta: Optional[Eta],
                 use_eta: bool = True, tol: float = 1e-10):
        self.frozen, self.params, self.eta, self.use_eta, self.tol = frozen, params, eta, use_eta, tol
        self.r_cert = max(4.0 * params.R, 4.0 * params.R_prime if use_eta else 0.0, frozen.support_radius)

    def G(self, x):
        g = chi(np.linalg.norm(x, axis=-1) / (2 * self.params.R))
        if self.use_eta:
            g = g + self.eta(x)
        return g

    def table(self, X, W) -> RayTable:
        f = lambda x, eta: (self.G(x) * np.linalg.norm(eta, axis=-1))[:, None]
        return ray_integrals(self.frozen, X, W, f, 1, self.r_cert, self.tol, directions="forward",
                             scale=min(self.frozen.feature_scale, self.params.R))

    def evaluate(self, x, xi) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        xi = np.atleast_2d(np.asarray(xi, float))
        x, xi = np.broadcast_arrays(x, xi)
        lam = np.linalg.norm(xi, axis=-1)
        return self.table(x, xi / lam[:, None]).forward[:, 0]


def calibrate_q(frozen: FrozenCoefficients, params: RenormParams, eta: Optional[Eta],
                use_eta: bool = True, X=None, W=None) -> Dict[str, float]:
    """``K_q = 2 sup P``, ``K'_q = 8 K_q / min|A xi|``, ``K''_q = 8 K'_q``."""
    esc = EscapeIntegral(frozen, params, eta, use_eta)
    if X is None:
        lat = CheckLattice.build(frozen.d, [(2.5 * params.R_prime, 20), (5 * params.R, 20)], n_phi=12, n_dir=12)
        X, W = lat.rays()
    P = esc.table(X, W).forward[:, 0]
    Kq = 2.0 * float(P.max())
    Kpq = 8.0 * Kq / frozen.min_A_xi()
    return {"K": Kq, "K_prime": Kpq, "K_dprime": 8.0 * Kpq, "sup_P": float(P.max())}


@dataclass
class QSymbol:
    """``q = exp(C (p - p_min))`` with ``p = -chi_{>1} chi_{<R'} P + p2``."""

    frozen: FrozenCoefficients
    params: RenormParams
    escape: EscapeIntegral
    weight: AngularWeight
    C: float
    K_dprime: float
    p_min: float = 0.0

    def p(self, X, xi, P):
        nx = np.linalg.norm(X, axis=-1)
        lam = np.linalg.norm(xi, axis=-1)
        return -chi_hi(lam) * chi(nx / self.params.R_prime) * P + self.weight(X, xi)

    def log_q(self, X, xi, P):
        return self.C * (self.p(X, xi, P) - self.p_min)


def build_q(frozen: FrozenCoefficients, params: RenormParams, use_eta: bool = True,
            calibration: Optional[Dict[str, float]] = None, K_prime: Optional[float] = None,
            lattice: Optional["CheckLattice"] = None) -> Tuple[QSymbol, Callable]:
    """Construct ``q`` and its remainder ``r``.  ``p_min`` is taken on the lattice."""
    eta = build_eta(frozen, params) if use_eta else None
    if use_eta and params.L_2Rp is None:
        raise DependencyError("L(2R') missing")
    cal = calibration or calibrate_q(frozen, params, eta, use_eta)
    Kp = cal["K_prime"] if K_prime is None else K_prime
    weight = AngularWeight(frozen.metric.g_inf, params.R_prime, Kp, params.delta0)
    esc = EscapeIntegral(frozen, params, eta, use_eta)
    C = params.C_M if params.C_M is not None else 8.0 * (1.0 + params.M)
    qs = QSymbol(frozen, params, esc, weight, C, cal["K_dprime"])
    r = remainder_symbol(frozen, weight, cal["K_dprime"])
    if lattice is not None:
        X, W = lattice.rays()
        P = esc.table(X, W).forward[:, 0]
        qs.p_min = float(min(qs.p(X, lam * W, P).min() for lam in lattice.lam))
    return qs, r


def positive_commutator_check_q(qs: QSymbol, r: Callable, lattice: Optional[CheckLattice] = None,
                                tol: float = 1e-3) -> CommutatorReport:
    """Minimum of ``(H_a q + C r q - C (chi_{<2R} + chi_{<R'} eta)|xi| q) / ((1 + |xi|) q)``.

    Also reports the ellipticity margin ``min (H_a p + r) / |xi|`` over
    ``|x| <= 2R``, ``|xi| >= 2``.
    """
    fz, prm = qs.frozen, qs.params
    R, Rp = prm.R, prm.R_prime
    lat = lattice or CheckLattice.build(fz.d, [(5 * Rp, 40), (5 * R, 20)], k1=prm.k1)
    X, W = lat.rays()
    P = qs.escape.table(X, W).forward[:, 0]
    nx = np.linalg.norm(X, axis=-1)
    G = qs.escape.G(X)
    eta_term = chi(nx / Rp) * qs.escape.eta(X) if qs.escape.use_eta else 0.0
    worst, ell = math.inf, math.inf
    where: Dict[str, object] = {}
    for lam in lat.lam:
        xi = lam * W
        Ha_c = _H_of_cutoff(fz, X, xi, Rp)
        c = chi_hi(lam) * chi(nx / Rp)
        Ha_p1 = -P * Ha_c + c * G * lam
        _, gx2, gxi2, _ = qs.weight.parts(X, xi)
        Ha_p2 = hamilton_field(fz, X, xi, gx2, gxi2)
        core = Ha_p1 + Ha_p2 + r(X, xi)
        rhs = (chi(nx / (2 * R)) + eta_term) * lam
        v = qs.C * (core - rhs) / (1.0 + lam)
        i = int(np.argmin(v))
        if v[i] < worst:
            worst = float(v[i])
            where = {"x": X[i].tolist(), "xi": xi[i].tolist(), "r": float(nx[i])}
        if lam >= 2:
            inner = nx <= 2 * R
            if np.any(inner):
                ell = min(ell, float((core[inner] / lam).min()))
    warn = None
    if lat.radial_spacing() > Rp / 4:
        warn = f"radial spacing {lat.radial_spacing():.3g} exceeds R'/4"
    return CommutatorReport("q", worst, where, tol, X.shape[0] * lat.lam.size,
                            {"R": R, "R_prime": Rp, "K_prime": qs.weight.K_prime, "K_dprime": qs.K_dprime,
                             "C": qs.C}, warn, {"ellipticity_margin": ell, "sup_P": float(P.max())})


# ---------------------------------------------------------------- H_a twice

def hamilton_derivative(frozen: FrozenCoefficients, fn: Callable, X, XI, h: float = 1e-3) -> np.ndarray:
    """``H_a fn`` by short-time central differencing along the flow.

    ``fn(x, xi)`` is evaluated on flowed points; the step is ``h / |xi|``.
    """
    X = np.atleast_2d(np.asarray(X, float))
    XI = np.atleast_2d(np.asarray(XI, float))
    lam = np.linalg.norm(XI, axis=1)
    dt = h / np.maximum(lam, 1.0)
    fw = flow_many(frozen.metric, X, XI, dt, tol=1e-12)
    bw = flow_many(frozen.metric, X, XI, -dt, tol=1e-12)
    d = frozen.d
    fp = fn(fw.y[:, :d], fw.y[:, d:])
    fm = fn(bw.y[:, :d], bw.y[:, d:])
    return (fp - fm) / (2 * dt)


def psi1_hamilton_closed_form(frozen: FrozenCoefficients, params: RenormParams, X, XI) -> np.ndarray:
    """``H_a psi1 = -1/2 (I + J) H_a c - c chi_{<4R} B`` with ``c = chi_{>1} chi_{<2R}``."""
    psi1 = PsiOne(frozen, params)
    X = np.atleast_2d(np.asarray(X, float))
    XI = np.atleast_2d(np.asarray(XI, float))
    lam = np.linalg.norm(XI, axis=1)
    tab = psi1.table(X, XI / lam[:, None])
    ij = psi1.i_plus_j(tab, lam)
    nx = np.linalg.norm(X, axis=1)
    c = chi_hi(lam) * chi(nx / (2 * params.R))
    return -0.5 * ij * _H_of_cutoff(frozen, X, XI, 2 * params.R) - c * chi(nx / (4 * params.R)) * frozen.B(X, XI)


def metric_size(frozen: FrozenCoefficients, grid: Grid, s0: float = 1.0) -> float:
    """``M = sum_jk |g^{jk} - g_inf^{jk}|_{l1 H^s0}`` measured on ``grid``."""
    from .grid_core import Field
    from .littlewood_paley import norm as lp_norm

    pts = grid.points()
    G = frozen.A(pts) - frozen.metric.g_inf
    tot = 0.0
    for j in range(frozen.d):
        for k in range(frozen.d):
            vals = G[:, j, k].reshape(grid.shape)
            if np.any(vals):
                tot += lp_norm(Field(grid, vals.astype(complex)), "l1Hs", s=s0).value
    return float(tot)
