"""Spectral time stepping for the linear, paradifferential and quasilinear flows.

The linear flow is

    i v_t + d_j g^{jk} d_k v + b^j d_j v + b~^j d_j conj(v) = f

on the periodic box.  The constant part ``d_j g_inf^{jk} d_k`` is applied
exactly as the Fourier multiplier ``exp(-i omega t)`` with
``omega = xi . g_inf xi``.  The rest is the perturbation.  In the
paradifferential flow every coefficient product ``c w`` becomes the
paraproduct ``T_c w``.

Schemes
-------
``exponential-splitting``
    Strang splitting: half flat step, one RK4 step of the perturbation,
    half flat step.  Second order.  RK4 is used because its stability region
    contains a segment of the imaginary axis, unlike explicit midpoint.
``implicit-midpoint``
    Cayley transform for the flat part and a fixed-point iteration for the
    perturbation evaluated at the midpoint.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field as dc_field, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grid_core import Field, Grid, SpaceTimeField, chi, time_weights
from .hamilton_flow import GridMetric, Metric, SamplerSpec, nontrapping_parameter
from .littlewood_paley import (below_multiplier, envelope as lp_envelope, norm as lp_norm, paraproduct_values,
                               shell_multiplier, shells, ys_norm)


class StepFailure(RuntimeError):
    def __init__(self, msg: str, diagnostics: Optional[dict] = None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class PreconditionError(ValueError):
    pass


class DivergenceReport(RuntimeError):
    def __init__(self, msg: str, history: List[float], L_final: Optional[float]):
        super().__init__(msg)
        self.history, self.L_final = history, L_final


Coef = Union[None, np.ndarray, Callable[[float], np.ndarray]]


def _eval(c: Coef, t: float):
    if c is None:
        return None
    return c(t) if callable(c) else c


# ------------------------------------------------------------ coefficients

@dataclass
class CoefficientSet:
    """Coefficients of the linear flow on a grid.

    ``g`` is ``(d, d) + grid.shape`` or a callable of ``t`` returning one;
    ``b`` and ``b_tilde`` are ``(d,) + grid.shape`` (complex).  ``f`` is a
    callable of ``t``, a :class:`SpaceTimeField` (linearly interpolated) or
    ``None``.
    """

    grid: Grid
    g_inf: np.ndarray
    g: Coef = None
    b: Coef = None
    b_tilde: Coef = None
    f: Union[None, Callable[[float], np.ndarray], SpaceTimeField] = None
    M: float = 0.0
    R0: float = 1.0
    eps0: float = 0.1

    def __post_init__(self):
        self.g_inf = np.atleast_2d(np.asarray(self.g_inf, dtype=float))

    @classmethod
    def from_metric(cls, grid: Grid, metric: Optional[Metric] = None, b=None, b_tilde=None, f=None,
                    g_inf=None, **kw) -> "CoefficientSet":
        """Sample an analytic metric and vector fields (callables of ``x``) on ``grid``."""
        pts = grid.points()
        if metric is not None:
            G = np.moveaxis(metric.g(pts), 0, -1).reshape((grid.d, grid.d) + grid.shape)
            g_inf = metric.g_inf
        else:
            G = None
            g_inf = np.eye(grid.d) if g_inf is None else g_inf

        def vec(v):
            if v is None:
                return None
            if callable(v):
                return np.moveaxis(np.asarray(v(pts), dtype=complex), -1, 0).reshape((grid.d,) + grid.shape)
            v = np.asarray(v, dtype=complex)
            return np.broadcast_to(v.reshape((grid.d,) + (1,) * grid.d), (grid.d,) + grid.shape).copy()

        return cls(grid, g_inf, G, vec(b), vec(b_tilde), f, **kw)

    def delta_g(self, t: float):
        G = _eval(self.g, t)
        if G is None:
            return None
        return G - self.g_inf.reshape(self.g_inf.shape + (1,) * self.grid.d)

    def source(self, t: float):
        if self.f is None:
            return None
        if isinstance(self.f, SpaceTimeField):
            s = (t - self.f.t0) / self.f.dt if len(self.f) > 1 else 0.0
            i = int(np.clip(math.floor(s), 0, len(self.f) - 2)) if len(self.f) > 1 else 0
            th = s - i
            if len(self.f) == 1:
                return self.f.data[0]
            return (1 - th) * self.f.data[i] + th * self.f.data[i + 1]
        return self.f(t)

    def check(self, t: float = 0.0) -> Dict[str, float]:
        """Sampled smallness outside ``2 R0`` and the symmetry/non-degeneracy of ``g``."""
        r = self.grid.radius()
        outside = r > 2 * self.R0
        out = {"outside_size": 0.0, "asymmetry": 0.0, "min_singular": float(np.abs(np.linalg.eigvalsh(self.g_inf)).min())}
        dg = self.delta_g(t)
        if dg is not None:
            out["outside_size"] = float(np.abs(dg[..., outside]).max()) if np.any(outside) else 0.0
            out["asymmetry"] = float(np.abs(dg - np.swapaxes(dg, 0, 1)).max())
            G = np.moveaxis(_eval(self.g, t).reshape(self.grid.d, self.grid.d, -1), -1, 0)
            out["min_singular"] = float(np.abs(np.linalg.eigvalsh(G)).min())
        for c in (_eval(self.b, t), _eval(self.b_tilde, t)):
            if c is not None and np.any(outside):
                out["outside_size"] = max(out["outside_size"], float(np.abs(c[..., outside]).max()))
        if out["asymmetry"] > 1e-12 or out["min_singular"] <= 0:
            raise PreconditionError(f"metric not symmetric non-degenerate: {out}")
        if out["outside_size"] > self.eps0:
            raise PreconditionError(f"coefficients not small outside 2 R0: {out['outside_size']:.3g}")
        return out


@dataclass
class SolverConfig:
    dt: float = 1e-3
    T: float = 0.1
    scheme: str = "exponential-splitting"
    k1: Optional[int] = None
    k0: Optional[int] = None
    dealias: bool = True
    snapshot_every: int = 1
    inner_tol: float = 1e-10
    inner_max: int = 50
    wrap_warn: float = 1e-2

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self, grid: Grid, g_inf: np.ndarray) -> None:
        if self.scheme not in ("exponential-splitting", "implicit-midpoint"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("T must be a multiple of dt")


@dataclass
class RunReport:
    scheme: str
    dt: float
    T: float
    n_steps: int
    times: List[float]
    l2: List[float]
    wrap_fraction: float
    warnings: List[str]
    fingerprint: str
    extra: Dict[str, object] = dc_field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=lambda o: np.asarray(o).tolist())

    def to_csv_rows(self) -> List[Tuple[float, str, float]]:
        return [(t, "L2", v) for t, v in zip(self.times, self.l2)]


@dataclass
class Run:
    field: SpaceTimeField
    report: RunReport
    coeffs: CoefficientSet
    config: SolverConfig
    v0: np.ndarray
    remainder: Optional[SpaceTimeField] = None
    difference: Optional[SpaceTimeField] = None


# ---------------------------------------------------------------- operator

class _Flow:
    def __init__(self, coeffs: CoefficientSet, config: SolverConfig, para: bool):
        g = coeffs.grid
        self.grid, self.coeffs, self.config, self.para = g, coeffs, config, para
        self.xi = np.stack(g.wavevectors()) if g.d > 1 else g.wavevectors()[0][None]
        self.xi = np.broadcast_to(self.xi, (g.d,) + g.shape)
        self.omega = np.einsum("jk,j...,k...->...", coeffs.g_inf, self.xi, self.xi)
        if config.dealias:
            cut = (2.0 / 3.0) * g.nyquist
            self.mask = np.all(np.abs(self.xi) <= cut + 1e-12, axis=0).astype(float)
        else:
            self.mask = None
        self.axes = tuple(range(-g.d, 0))

    def fft(self, v):
        return np.fft.fftn(v, axes=self.axes)

    def ifft(self, v):
        return np.fft.ifftn(v, axes=self.axes)

    def grad(self, v):
        vh = self.fft(v)
        return self.ifft(1j * self.xi * vh)

    def div(self, w):
        return self.ifft((1j * self.xi * self.fft(w)).sum(axis=0))

    def mul(self, c, w):
        if self.para:
            out = paraproduct_values(self.grid, c, w)
        else:
            out = c * w
        if self.mask is not None:
            out = self.ifft(self.fft(out) * self.mask)
        return out

    def coef_terms(self, t, v):
        """``d_j dg^{jk} d_k v + b . grad v + b~ . grad conj(v)`` with this flow's products."""
        c = self.coeffs
        dg, b, bt = c.delta_g(t), _eval(c.b, t), _eval(c.b_tilde, t)
        out = np.zeros(self.grid.shape, dtype=complex)
        d = self.grid.d
        if dg is not None or b is not None:
            gv = self.grad(v)
        if dg is not None and np.any(dg):
            flux = np.stack([sum(self.mul(dg[j, k], gv[k]) for k in range(d)) for j in range(d)])
            out = out + self.div(flux)
        if b is not None and np.any(b):
            out = out + sum(self.mul(b[j], gv[j]) for j in range(d))
        if bt is not None and np.any(bt):
            gc = self.grad(np.conj(v))
            out = out + sum(self.mul(bt[j], gc[j]) for j in range(d))
        return out

    def pert(self, t, v):
        f = self.coeffs.source(t)
        term = self.coef_terms(t, v)
        if f is not None:
            term = term - f
        return 1j * term

    def flat(self, v, tau):
        return self.ifft(np.exp(-1j * self.omega * tau) * self.fft(v))

    def step(self, t, v, dt):
        if self.config.scheme == "exponential-splitting":
            w = self.flat(v, dt / 2)
            k1 = self.pert(t, w)
            k2 = self.pert(t + dt / 2, w + dt / 2 * k1)
            k3 = self.pert(t + dt / 2, w + dt / 2 * k2)
            k4 = self.pert(t + dt, w + dt * k3)
            w = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            return self.flat(w, dt / 2)
        # implicit midpoint with Cayley flat part
        L = -1j * self.omega
        den = 1.0 - dt / 2 * L
        base = self.ifft((1.0 + dt / 2 * L) / den * self.fft(v))
        v1 = base
        nv = max(np.linalg.norm(v), 1e-300)
        for it in range(self.config.inner_max):
            p = self.pert(t + dt / 2, 0.5 * (v + v1))
            new = base + dt * self.ifft(self.fft(p) / den)
            delta = np.linalg.norm(new - v1) / nv
            v1 = new
            if delta <= self.config.inner_tol:
                return v1
        raise StepFailure("implicit midpoint inner iteration did not converge",
                          {"t": t, "last_increment": float(delta), "sweeps": self.config.inner_max})


def _wrap_fraction(grid: Grid, v: np.ndarray) -> float:
    pts = np.stack(grid.coords(), axis=0) if grid.d > 1 else grid.coords()[0][None]
    edge = np.any(np.abs(pts) > 0.45 * grid.box_length, axis=0)
    tot = (np.abs(v) ** 2).sum()
    return float((np.abs(v[edge]) ** 2).sum() / tot) if tot > 0 else 0.0


def _fingerprint(coeffs: CoefficientSet, config: SolverConfig, extra: str = "") -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(coeffs.grid.fingerprint().encode())
    h.update(json.dumps(asdict(config), sort_keys=True).encode())
    for c in (coeffs.g_inf, _eval(coeffs.g, 0.0), _eval(coeffs.b, 0.0), _eval(coeffs.b_tilde, 0.0)):
        if c is not None:
            h.update(np.ascontiguousarray(c).tobytes())
    h.update(extra.encode())
    return h.hexdigest()[:16]


def _integrate(flow: _Flow, v0: np.ndarray, on_step: Optional[Callable] = None) -> Tuple[SpaceTimeField, RunReport]:
    cfg, g = flow.config, flow.grid
    v = np.asarray(v0, dtype=complex).reshape(g.shape)
    if cfg.k1 is not None:
        v = flow.ifft(flow.fft(v) * (1.0 - below_multiplier(g, cfg.k1)))
    snaps = [v.copy()]
    w0 = _wrap_fraction(g, v)
    wrap = 0.0
    warns: List[str] = []
    t = 0.0
    for n in range(cfg.n_steps):
        v = flow.step(t, v, cfg.dt)
        t = (n + 1) * cfg.dt
        if on_step is not None:
            on_step(n + 1, v)
        if (n + 1) % cfg.snapshot_every == 0:
            snaps.append(v.copy())
        wrap = max(wrap, _wrap_fraction(g, v) - w0)
        if not np.all(np.isfinite(v)):
            raise StepFailure("non-finite state", {"t": t})
    if wrap > cfg.wrap_warn:
        msg = f"mass near the box edge grew by {wrap:.3g}"
        warns.append(msg)
        warnings.warn(msg)
    data = np.stack(snaps)
    dt_s = cfg.dt * cfg.snapshot_every
    field = SpaceTimeField(g, data, 0.0, dt_s)
    l2 = [float(np.sqrt((np.abs(u) ** 2).sum() * g.cell_volume)) for u in data]
    rep = RunReport(cfg.scheme, cfg.dt, cfg.T, cfg.n_steps, list(field.times), l2, wrap, warns,
                    _fingerprint(flow.coeffs, cfg, "para" if flow.para else "lin"))
    return field, rep


def evolve_linear(coeffs: CoefficientSet, v0, config: SolverConfig) -> Run:
    config.validate(coeffs.grid, coeffs.g_inf)
    v0 = v0.values if isinstance(v0, Field) else np.asarray(v0, dtype=complex)
    fl = _Flow(coeffs, config, para=False)
    field, rep = _integrate(fl, v0)
    return Run(field, rep, coeffs, config, v0)


def evolve_paradifferential(coeffs: CoefficientSet, v0, config: SolverConfig, compare: bool = True) -> Run:
    """Paradifferential evolution; also returns ``R v`` along the run and the difference to the linear flow.

    ``remainder`` holds ``(linear - paradifferential)`` coefficient terms applied
    to the paradifferential solution at each snapshot.
    """
    config.validate(coeffs.grid, coeffs.g_inf)
    v0 = v0.values if isinstance(v0, Field) else np.asarray(v0, dtype=complex)
    fp = _Flow(coeffs, config, para=True)
    field, rep = _integrate(fp, v0)
    fl = _Flow(coeffs, config, para=False)
    rem = np.stack([fl.coef_terms(t, u) - fp.coef_terms(t, u) for t, u in zip(field.times, field.data)])
    run = Run(field, rep, coeffs, config, v0, remainder=SpaceTimeField(coeffs.grid, rem, 0.0, field.dt))
    if compare:
        lin, _ = _integrate(fl, v0)
        run.difference = lin - field
    return run


# --------------------------------------------------------------- nonlinear

@dataclass
class NonlinearConfig:
    solver: SolverConfig
    s: float = 3.0
    tol: float = 1e-10
    n_max: int = 12
    R0: float = 1.0
    M: float = 0.0
    budget_constant: float = 1.0


@dataclass
class NonlinearResult:
    field: SpaceTimeField
    history: List[float]
    ratios: List[float]
    L_initial: float
    L_final: float
    s_norm: float
    converged: bool


def _metric_from_field(grid: Grid, G: np.ndarray, g_inf: np.ndarray) -> GridMetric:
    return GridMetric(grid, np.real(G), g_inf)


def _snap_interp(data: np.ndarray, dt: float) -> Callable[[float], np.ndarray]:
    n = data.shape[0]

    def at(t):
        s = t / dt
        i = int(np.clip(math.floor(s + 1e-12), 0, n - 2))
        th = s - i
        return (1 - th) * data[i] + th * data[i + 1]

    return at


def evolve_nonlinear(g_of_u: Callable[[np.ndarray], np.ndarray], F_of_u: Callable[[np.ndarray], np.ndarray],
                     u0, config: NonlinearConfig, grid: Grid, g_inf,
                     b_of_u: Optional[Callable] = None, L_samples: int = 256) -> NonlinearResult:
    """Iterate ``u^{n+1}``: paradifferential flow with coefficients and source frozen at ``u^n``.

    Starts from ``u^0 = 0`` and stops when the ``l1 X^sigma`` increment
    (``sigma = s - 1``) falls below ``tol``.
    """
    scfg = config.solver
    if scfg.snapshot_every != 1:
        raise ValueError("the iteration needs every step stored")
    u0 = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=complex)
    g_inf = np.atleast_2d(np.asarray(g_inf, dtype=float))
    s_norm = lp_norm(Field(grid, u0), "l1Hs", s=config.s).value
    sigma = config.s - 1.0
    R0 = config.R0
    spec = SamplerSpec(L_samples)
    L0 = nontrapping_parameter(_metric_from_field(grid, g_of_u(u0), g_inf), R0, spec).L
    prev = np.zeros((scfg.n_steps + 1,) + grid.shape, dtype=complex)
    history: List[float] = []
    field = None
    for n in range(config.n_max):
        at = _snap_interp(prev, scfg.dt)
        cs = CoefficientSet(grid, g_inf, g=lambda t: np.real(g_of_u(at(t))), f=lambda t: F_of_u(at(t)),
                            b=(lambda t: b_of_u(at(t))) if b_of_u is not None else None)
        fp = _Flow(cs, scfg, para=True)
        field, _ = _integrate(fp, u0)
        inc = lp_norm(SpaceTimeField(grid, field.data - prev, 0.0, scfg.dt), "lpXs", s=sigma, p=1.0).value
        history.append(inc)
        prev = np.array(field.data)
        if inc <= config.tol * max(1.0, s_norm):
            break
    ratios = [history[i + 1] / history[i] for i in range(len(history) - 1) if history[i] > 0]
    G_end = g_of_u(field.data[-1])
    L1 = nontrapping_parameter(_metric_from_field(grid, G_end, g_inf), R0, spec).L
    conv = history[-1] <= config.tol * max(1.0, s_norm)
    if not conv:
        raise DivergenceReport("iteration did not contract below tolerance", history, L1)
    return NonlinearResult(field, history, ratios, L0, L1, s_norm, conv)


def weak_lipschitz_check(u01, u02, g_of_u, F_of_u, config: NonlinearConfig, grid: Grid, g_inf,
                         s0: Optional[float] = None) -> Dict[str, float]:
    """``|u1 - u2|_{l1 X^sigma} / |u01 - u02|_{l1 H^sigma}`` at ``sigma = s0 - 1 - 0.1``.

    The data distance must stay below ``exp(-(budget_constant)(1 + M) L(R0))``.
    """
    u01 = np.asarray(u01, dtype=complex)
    u02 = np.asarray(u02, dtype=complex)
    s0 = config.s if s0 is None else s0
    sigma = s0 - 1.0 - 0.1
    dist0 = lp_norm(Field(grid, u01 - u02), "l1Hs", s=0.0).value
    if dist0 == 0:
        return {"ratio": 0.0, "distance": 0.0, "passed": True}
    r1 = evolve_nonlinear(g_of_u, F_of_u, u01, config, grid, g_inf)
    budget = math.exp(-config.budget_constant * (1.0 + config.M) * r1.L_initial)
    if dist0 > budget:
        raise PreconditionError(f"data distance {dist0:.3g} exceeds budget {budget:.3g}")
    r2 = evolve_nonlinear(g_of_u, F_of_u, u02, config, grid, g_inf)
    num = lp_norm(SpaceTimeField(grid, r1.field.data - r2.field.data, 0.0, r1.field.dt), "lpXs", s=sigma, p=1.0).value
    den = lp_norm(Field(grid, u01 - u02), "l1Hs", s=sigma).value
    return {"ratio": num / den, "distance": dist0, "budget": budget, "sigma": sigma,
            "L_u02": r2.L_initial, "L_u01": r1.L_initial, "passed": True}


# ------------------------------------------------------------ verification

def _hs_multiplier(grid: Grid, s: float) -> np.ndarray:
    return (1.0 + grid.kmag() ** 2) ** (s / 2)


def _local_smoothing(run: Run, R: float, s: float) -> float:
    g = run.field.grid
    cut = chi(g.radius() / R)
    m = _hs_multiplier(g, s)
    per_t = []
    for u in run.field.data:
        w = np.fft.fftn(cut * u) * m
        per_t.append((np.abs(w) ** 2).sum() / g.size * g.cell_volume)
    wts = time_weights(len(per_t), run.field.dt)
    return float(math.sqrt((wts * np.array(per_t)).sum()))


def verify_estimate(run: Run, kind: str, sigma: float = 0.0, R: float = 1.0,
                    family: str = "basic") -> Dict[str, object]:
    """Left and right sides of an estimate with ``Y`` replaced by its surrogate upper bound.

    ``kind`` is ``energy``, ``local-smoothing`` (``s`` = 1/2 gain, also
    ``local-smoothing-H1``), ``full``, ``Z`` or ``mizohata``.
    """
    g = run.field.grid
    v0 = Field(g, run.v0)
    src = None
    if run.coeffs.f is not None:
        src = SpaceTimeField(g, np.stack([run.coeffs.source(t) for t in run.field.times]), 0.0, run.field.dt)
    ysrc = ys_norm(src, s=sigma, family=family).value if src is not None else 0.0
    if kind == "energy":
        m = _hs_multiplier(g, sigma)
        lhs = max(float(np.sqrt((np.abs(np.fft.fftn(u) * m) ** 2).sum() / g.size * g.cell_volume))
                  for u in run.field.data)
        rhs = lp_norm(v0, "Hs", s=sigma).value + ysrc
    elif kind in ("local-smoothing", "local-smoothing-H1"):
        s = 0.5 if kind == "local-smoothing" else 1.0
        lhs = _local_smoothing(run, R, s)
        rhs = lp_norm(v0, "Hs", s=0.0).value + ysrc
    elif kind == "full":
        lhs = lp_norm(run.field, "lpXs", s=sigma, p=1.0).value
        rhs = lp_norm(v0, "l1Hs", s=sigma).value + (ys_norm(src, s=sigma, l1=True, family=family).value
                                                   if src is not None else 0.0)
    elif kind == "Z":
        lhs = lp_norm(run.field, "calZ", sigma=sigma).value
        rhs = lp_norm(v0, "Hs", s=sigma).value + ysrc
    elif kind == "mizohata":
        l2 = np.array(run.report.l2)
        return {"kind": kind, "ratio": float(l2.max() / l2[0]), "curve": (l2 / l2[0]).tolist(),
                "times": run.report.times}
    else:
        raise ValueError(f"unknown estimate kind {kind!r}")
    return {"kind": kind, "lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf),
            "sigma": sigma, "y_source": ysrc}


def frequency_envelope_check(run: Run, env=None, s: float = 0.0) -> Dict[str, object]:
    """``max_k |S_k u|_{l1 X^s} / (a_k |u0|_{l1 H^s})`` with the per-shell values."""
    g = run.field.grid
    v0 = Field(g, run.v0)
    base = lp_norm(v0, "l1Hs", s=s).value
    if env is None:
        env = lp_envelope(v0)
    rep = lp_norm(run.field, "lpXs", s=s, p=1.0)
    margins = []
    for k, a in enumerate(env.c):
        val = math.sqrt(rep.breakdown.get(k, 0.0))
        if base == 0 or val == 0:
            margins.append(0.0)
        else:
            margins.append(val / (a * base) if a > 0 else math.inf)
    return {"margins": margins, "max": max(margins) if margins else 0.0,
            "argmax": int(np.argmax(margins)) if margins else -1}


# ----------------------------------------------------------------- Mizohata

def mizohata_oracle(grid: Grid, beta, v0: np.ndarray, t: float) -> np.ndarray:
    """Exact solution for ``g = I``, ``b = beta`` real constant, ``f = 0``."""
    xi = np.stack(grid.wavevectors()) if grid.d > 1 else grid.wavevectors()[0][None]
    xi = np.broadcast_to(xi, (grid.d,) + grid.shape)
    beta = np.asarray(beta, dtype=float).reshape((grid.d,) + (1,) * grid.d)
    rate = -1j * (xi * xi).sum(axis=0) - (beta * xi).sum(axis=0)
    axes = tuple(range(grid.d))
    return np.fft.ifftn(np.exp(rate * t) * np.fft.fftn(v0, axes=axes), axes=axes)


def mizohata_run(grid: Grid, beta, k_list: Sequence[int], T: float, dt: float) -> Dict[str, object]:
    """Energy growth for single modes of frequency ``~ 2^k`` along ``-beta``."""
    beta = np.asarray(beta, dtype=float)
    bh = beta / np.linalg.norm(beta)
    rows = []
    for k in k_list:
        m = int(round(2 ** k / grid.dk))
        xi0 = -bh * m * grid.dk
        if grid.d > 1:
            xi0 = np.round(xi0 / grid.dk) * grid.dk
        x = grid.coords()
        v0 = np.exp(1j * sum(xi0[j] * x[j] for j in range(grid.d))).astype(complex)
        cs = CoefficientSet.from_metric(grid, None, b=beta, g_inf=np.eye(grid.d))
        run = evolve_linear(cs, v0, SolverConfig(dt=dt, T=T, snapshot_every=max(1, int(round(T / dt)) // 8)))
        exact = mizohata_oracle(grid, beta, v0, T)
        err = float(np.abs(run.field.data[-1] - exact).max() / np.abs(exact).max())
        ratio = run.report.l2[-1] / run.report.l2[0]
        rows.append({"k": k, "xi": xi0.tolist(), "growth": ratio, "predicted": math.exp(-float(beta @ xi0) * T),
                     "oracle_error": err})
    return {"rows": rows, "beta": beta.tolist(), "T": T}


# ------------------------------------------------------------------ helpers

def stable_dt(coeffs: CoefficientSet, safety: float = 0.5, t: float = 0.0) -> float:
    """Largest step keeping the RK4 perturbation stage inside its stability region.

    Uses ``dt |dg| k^2 + dt (|b| + |b~|) k <= 2.8 safety`` with ``k`` the
    dealiasing cap.
    """
    g = coeffs.grid
    k = (2.0 / 3.0) * g.nyquist
    dg = coeffs.delta_g(t)
    a2 = float(np.abs(dg).sum(axis=(0, 1)).max()) if dg is not None else 0.0
    a1 = 0.0
    for c in (_eval(coeffs.b, t), _eval(coeffs.b_tilde, t)):
        if c is not None:
            a1 += float(np.abs(c).sum(axis=0).max())
    rate = a2 * k * k + a1 * k
    return math.inf if rate == 0 else 2.8 * safety / rate


def plane_wave(grid: Grid, xi0) -> np.ndarray:
    x = grid.coords()
    return np.exp(1j * sum(float(xi0[j]) * x[j] for j in range(grid.d))).astype(complex)


def plane_wave_exact(grid: Grid, g_inf, xi0, t: float) -> np.ndarray:
    xi0 = np.asarray(xi0, dtype=float)
    om = float(xi0 @ np.asarray(g_inf) @ xi0)
    return plane_wave(grid, xi0) * np.exp(-1j * om * t)


def wave_packet(grid: Grid, xi0, width: float = 1.0, center=None) -> np.ndarray:
    x = grid.coords()
    c = np.zeros(grid.d) if center is None else np.asarray(center, dtype=float)
    r2 = sum((x[j] - c[j]) ** 2 for j in range(grid.d))
    return (np.exp(-r2 / (2 * width ** 2)) * plane_wave(grid, xi0)).astype(complex)


def self_convergence(coeffs: CoefficientSet, v0, dt: float, T: float, scheme: str = "exponential-splitting",
                     para: bool = False) -> Dict[str, float]:
    """Endpoint differences for ``dt, dt/2, dt/4``; the error ratio estimates ``2^order``."""
    ends = []
    for h in (dt, dt / 2, dt / 4):
        cfg = SolverConfig(dt=h, T=T, scheme=scheme, snapshot_every=int(round(T / h)))
        run = (evolve_paradifferential(coeffs, v0, cfg, compare=False) if para else evolve_linear(coeffs, v0, cfg))
        ends.append(run.field.data[-1])
    e1 = np.linalg.norm(ends[0] - ends[1])
    e2 = np.linalg.norm(ends[1] - ends[2])
    return {"e1": float(e1), "e2": float(e2), "ratio": float(e1 / e2) if e2 > 0 else math.inf}
