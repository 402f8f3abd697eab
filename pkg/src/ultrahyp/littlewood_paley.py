"""Littlewood-Paley projections, paraproducts and local-energy norms.

Shell multipliers are built from the radial bump ``phi = chi(|xi|)`` of
:mod:`ultrahyp.grid_core` (1 on the unit ball, 0 outside radius 2):

    S_0 = phi(xi),   S_k = phi(2^-k xi) - phi(2^-k+1 xi)  (k >= 1),
    S_{<k} = phi(2^-k+1 xi)  (k >= 1),  S_{<k} = 0  (k <= 0).

Space-time fields are arrays of snapshots (first axis is time).  All time
integrals use trapezoid weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grid_core import (Field, Grid, GridError, ResolutionError, SpaceTimeField, STEP,
                        chi, time_weights)

PARAPRODUCT_GAP = 4


@dataclass(frozen=True)
class LPConfig:
    """Littlewood-Paley conventions.

    ``gap`` is the low-high separation in the paraproduct and ``fatten``
    the number of neighbouring shells included in the fattened projection.
    """

    gap: int = PARAPRODUCT_GAP
    fatten: int = 1


DEFAULT_LP = LPConfig()


class EnvelopeError(ValueError):
    pass


class UnsupportedNorm(ValueError):
    pass


# ----------------------------------------------------------------------
# multipliers
# ----------------------------------------------------------------------

@lru_cache(maxsize=32)
def _kmag(grid: Grid) -> np.ndarray:
    k = grid.kmag()
    k.setflags(write=False)
    return k


def top_shell(grid: Grid) -> int:
    """Smallest K with sum_{k<=K} S_k = 1 on the whole lattice."""
    kmax = float(_kmag(grid).max())
    return max(0, int(math.ceil(math.log2(kmax))) if kmax > 1 else 0)


@lru_cache(maxsize=256)
def below_multiplier(grid: Grid, k: int) -> np.ndarray:
    """Symbol of S_{<k} on the lattice."""
    km = _kmag(grid)
    if k <= 0:
        m = np.zeros_like(km)
    else:
        m = chi(km / 2.0 ** (k - 1))
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def shell_multiplier(grid: Grid, k: int) -> np.ndarray:
    """Symbol of S_k on the lattice."""
    if k < 0:
        raise ValueError("shell index must be >= 0")
    m = below_multiplier(grid, k + 1) - below_multiplier(grid, k)
    m.setflags(write=False)
    return m


def _check_shell(grid: Grid, k: int):
    if k < 0:
        raise ValueError("shell index must be >= 0")
    if k > top_shell(grid) + 1:
        raise ResolutionError(f"shell {k} lies beyond the lattice (top shell {top_shell(grid)})")


def _apply(grid: Grid, values: np.ndarray, mult: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier to physical values (spatial axes are the last d)."""
    axes = tuple(range(values.ndim - grid.d, values.ndim))
    return np.fft.ifftn(np.fft.fftn(values, axes=axes) * mult, axes=axes)


def _as_values(u) -> Tuple[Grid, np.ndarray, str]:
    if isinstance(u, Field):
        return u.grid, u.physical().values, "field"
    if isinstance(u, SpaceTimeField):
        return u.grid, u.data, "st"
    raise TypeError("expected Field or SpaceTimeField")


def _wrap(kind: str, like, values: np.ndarray):
    if kind == "field":
        return Field(like.grid, values)
    return SpaceTimeField(like.grid, values, like.t0, like.dt)


def project(u, k: int, mode: str = "shell", cfg: LPConfig = DEFAULT_LP):
    """Littlewood-Paley projection.

    Parameters
    ----------
    u : Field or SpaceTimeField
    k : int
        Shell index.
    mode : {'shell', 'below', 'above', 'fat'}
        ``S_k``, ``S_{<k}``, ``S_{>=k}`` or the fattened ``S~_k`` covering
        shells ``k - fatten .. k + fatten``.
    """
    grid, vals, kind = _as_values(u)
    if mode == "shell":
        _check_shell(grid, k)
        m = shell_multiplier(grid, k)
    elif mode == "below":
        m = below_multiplier(grid, k)
    elif mode == "above":
        m = 1.0 - below_multiplier(grid, k)
    elif mode == "fat":
        _check_shell(grid, k)
        m = below_multiplier(grid, k + cfg.fatten + 1) - below_multiplier(grid, k - cfg.fatten)
    else:
        raise ValueError(f"unknown projection mode {mode!r}")
    return _wrap(kind, u, _apply(grid, vals, m))


def project_below(u, k):
    return project(u, k, "below")


def project_above(u, k):
    return project(u, k, "above")


def shells(u) -> np.ndarray:
    """All shell pieces ``S_k u`` for k = 0..top_shell, stacked on a new first axis."""
    grid, vals, _ = _as_values(u)
    axes = tuple(range(vals.ndim - grid.d, vals.ndim))
    vh = np.fft.fftn(vals, axes=axes)
    K = top_shell(grid)
    return np.stack([np.fft.ifftn(vh * shell_multiplier(grid, k), axes=axes) for k in range(K + 1)])


# ----------------------------------------------------------------------
# paraproducts
# ----------------------------------------------------------------------

def _para_values(grid: Grid, g: np.ndarray, f: np.ndarray, gap: int) -> np.ndarray:
    axes = tuple(range(f.ndim - grid.d, f.ndim))
    gh = np.fft.fftn(g, axes=axes)
    fh = np.fft.fftn(f, axes=axes)
    out = np.zeros(np.broadcast_shapes(f.shape, g.shape), dtype=complex)
    for k in range(gap + 1, top_shell(grid) + 1):
        low = np.fft.ifftn(gh * below_multiplier(grid, k - gap), axes=axes)
        out += low * np.fft.ifftn(fh * shell_multiplier(grid, k), axes=axes)
    return out


def paraproduct(g, f, cfg: LPConfig = DEFAULT_LP):
    """T_g f = sum_k S_{<k-gap} g * S_k f."""
    gg, gv, _ = _as_values(g)
    fg, fv, kind = _as_values(f)
    if gg != fg:
        raise GridError("paraproduct operands live on different grids")
    return _wrap(kind, f, _para_values(fg, gv, fv, cfg.gap))


def paraproduct_values(grid: Grid, g: np.ndarray, f: np.ndarray, gap: int = PARAPRODUCT_GAP) -> np.ndarray:
    """Array-level paraproduct used by the solvers."""
    return _para_values(grid, g, f, gap)


def resonant(f, g, cfg: LPConfig = DEFAULT_LP):
    """Pi(f, g) = sum_{|j-k| <= gap} S_j f * S_k g."""
    gg, gv, _ = _as_values(g)
    fg, fv, kind = _as_values(f)
    if gg != fg:
        raise GridError("operands live on different grids")
    grid = fg
    axes = tuple(range(fv.ndim - grid.d, fv.ndim))
    fh = np.fft.fftn(fv, axes=axes)
    gh = np.fft.fftn(gv, axes=axes)
    out = np.zeros(fv.shape, dtype=complex)
    gap = cfg.gap
    for k in range(top_shell(grid) + 1):
        near = below_multiplier(grid, k + gap + 1) - below_multiplier(grid, k - gap)
        out += np.fft.ifftn(gh * shell_multiplier(grid, k), axes=axes) * np.fft.ifftn(fh * near, axes=axes)
    return _wrap(kind, f, out)


# ----------------------------------------------------------------------
# cube partitions
# ----------------------------------------------------------------------

def _cube_count(grid: Grid, side: float) -> int:
    return max(1, int(math.ceil(grid.box_length / side - 1e-9)))


@lru_cache(maxsize=128)
def _axis_partition(grid: Grid, m: int) -> np.ndarray:
    """Smooth periodic partition of one axis into m cells, shape (m, n).

    Each row is supported within 3/4 of a cell width of its centre and the
    rows sum to one exactly.
    """
    x = grid.axis()
    if m == 1:
        p = np.ones((1, grid.n))
        p.setflags(write=False)
        return p
    L = grid.box_length
    s = L / m
    centres = -0.5 * L + (np.arange(m) + 0.5) * s
    y = (x[None, :] - centres[:, None]) / s
    y = (y + 0.5 * m) % m - 0.5 * m  # periodic distance in cell units
    eta = 1.0 - STEP((np.abs(y) - 0.25) / 0.5)
    p = eta / eta.sum(axis=0, keepdims=True)
    p.setflags(write=False)
    return p


@lru_cache(maxsize=128)
def _axis_bins(grid: Grid, m: int) -> np.ndarray:
    """Sharp cell indicator matrix (m, n)."""
    x = grid.axis()
    s = grid.box_length / m
    idx = np.minimum(((x + 0.5 * grid.box_length) / s + 1e-12).astype(int), m - 1)
    b = np.zeros((m, grid.n))
    b[idx, np.arange(grid.n)] = 1.0
    b.setflags(write=False)
    return b


@dataclass(frozen=True)
class CubePartition:
    """Partition of the box into cubes of side about 2^k.

    The side is ``L/m`` with ``m = ceil(L / 2^k)``, which equals ``2^k``
    whenever ``2^k`` divides ``L``.  ``kind='smooth'`` gives the mollified
    partition of unity, ``kind='sharp'`` the cube indicators.
    """

    grid: Grid
    k: int
    kind: str = "smooth"

    @property
    def per_axis(self) -> int:
        return _cube_count(self.grid, 2.0 ** self.k)

    @property
    def side(self) -> float:
        return self.grid.box_length / self.per_axis

    def axis_weights(self) -> np.ndarray:
        m = self.per_axis
        return _axis_partition(self.grid, m) if self.kind == "smooth" else _axis_bins(self.grid, m)

    def functions(self) -> np.ndarray:
        """All chi_Q as an array of shape (m,)*d + grid.shape (small grids only)."""
        w = self.axis_weights()
        out = w
        for _ in range(self.grid.d - 1):
            out = _outer_axes(out, w)
        return out

    def sum_check(self) -> float:
        return float(np.abs(self.axis_weights().sum(axis=0) - 1.0).max())


def _outer_axes(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    # a: (m,...,m, n,...,n) with r cube axes and r space axes; append one of each
    r = a.ndim // 2
    cube = a.shape[:r]
    space = a.shape[r:]
    out = a.reshape(cube + (1,) + space + (1,)) * w.reshape((1,) * r + (w.shape[0],) + (1,) * r + (w.shape[1],))
    return out


def _separable_contract(E: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """sum_x W1[p1,x1] ... Wd[pd,xd] E[x1..xd] -> array (p1,...,pd)."""
    out = E
    for a, W in enumerate(mats):
        # contract spatial axis `a` (which stays at position a after earlier steps)
        out = np.moveaxis(np.tensordot(W, out, axes=([1], [a])), 0, a)
    return out


def cube_sums(grid: Grid, E: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Sum a density over cubes given per-axis weight rows (same on every axis)."""
    return _separable_contract(E, [weights] * grid.d) * grid.cell_volume


# ----------------------------------------------------------------------
# norms
# ----------------------------------------------------------------------

@dataclass
class NormReport:
    """Value of a norm with its per-shell (or per-scale) breakdown.

    ``combine`` says how ``value`` is obtained from ``breakdown``: ``'l2'``
    means ``sqrt(sum(breakdown))``, ``'max'`` means ``max(breakdown)``.
    """

    kind: str
    value: float
    s: Optional[float] = None
    sigma: Optional[float] = None
    p: Optional[float] = None
    breakdown: Dict[int, float] = dc_field(default_factory=dict)
    combine: str = "l2"

    def recombine(self) -> float:
        vals = list(self.breakdown.values())
        if not vals:
            return 0.0
        if self.combine == "l2":
            return math.sqrt(sum(vals))
        return max(vals)

    def rows(self):
        yield (self.kind, self.s, self.value, "", "")
        for k, c in sorted(self.breakdown.items()):
            yield (self.kind, self.s, self.value, k, c)


def _st_data(u) -> Tuple[Grid, np.ndarray, np.ndarray]:
    """(grid, data (n_t, ...), trapezoid weights)."""
    if isinstance(u, SpaceTimeField):
        return u.grid, u.data, time_weights(len(u), u.dt)
    if isinstance(u, Field):
        return u.grid, u.physical().values[None], np.ones(1)
    raise TypeError("expected Field or SpaceTimeField")


def _x_scales(grid: Grid) -> List[int]:
    lmax = int(math.floor(math.log2(grid.box_length) + 1e-9))
    return list(range(0, max(lmax, 0) + 1))


def _x_norm_from_energy(grid: Grid, E: np.ndarray, smooth_rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Local-energy norm sup_l sup_Q s_l^{-1/2} (int_0^T int_Q |u|^2)^{1/2}.

    ``E`` is the time-integrated density.  With ``smooth_rows`` (m, n) the
    norm of every ``chi_Q u`` (chi_Q built from those rows) is returned as
    an array of shape (m,)*d; otherwise a scalar array.
    """
    best = None
    for l in _x_scales(grid):
        mq = _cube_count(grid, 2.0 ** l)
        side = grid.box_length / mq
        bins = _axis_bins(grid, mq)
        if smooth_rows is None:
            rows = bins
        else:
            m = smooth_rows.shape[0]
            rows = (smooth_rows ** 2)[:, None, :] * bins[None, :, :]
            rows = rows.reshape(m * mq, grid.n)
        S = _separable_contract(E, [rows] * grid.d) * grid.cell_volume
        if smooth_rows is not None:
            m = smooth_rows.shape[0]
            S = S.reshape(sum(((m, mq) for _ in range(grid.d)), ()))
            # move sharp-cube axes last and reduce them
            smooth_axes = tuple(range(0, 2 * grid.d, 2))
            sharp_axes = tuple(range(1, 2 * grid.d, 2))
            S = np.transpose(S, smooth_axes + sharp_axes)
            S = S.reshape((m,) * grid.d + (-1,)).max(axis=-1)
        else:
            S = S.max()
        val = np.sqrt(np.maximum(S, 0.0)) / math.sqrt(side)
        best = val if best is None else np.maximum(best, val)
    return best


def x_norm(u) -> float:
    grid, data, w = _st_data(u)
    E = np.tensordot(w, np.abs(data) ** 2, axes=(0, 0))
    return float(_x_norm_from_energy(grid, E))


def linf_l2(u) -> float:
    grid, data, _ = _st_data(u)
    return float(np.sqrt((np.abs(data) ** 2).reshape(data.shape[0], -1).sum(axis=1).max() * grid.cell_volume))


def l1_l2(u) -> float:
    grid, data, w = _st_data(u)
    per_t = np.sqrt((np.abs(data) ** 2).reshape(data.shape[0], -1).sum(axis=1) * grid.cell_volume)
    if data.shape[0] == 1:
        return float(per_t[0])
    return float((w * per_t).sum())


def xk_norm(u, k: int) -> float:
    return 2.0 ** (k / 2) * x_norm(u) + linf_l2(u)


def _lp_xk(grid: Grid, data: np.ndarray, w: np.ndarray, k: int, p: float) -> float:
    """l^p_k X_k norm of one shell piece."""
    rows = _axis_partition(grid, _cube_count(grid, 2.0 ** k))
    E = np.tensordot(w, np.abs(data) ** 2, axes=(0, 0))
    xq = _x_norm_from_energy(grid, E, rows)
    # sup_t of per-cube L^2 mass
    dens = np.abs(data) ** 2
    mats = [rows ** 2] * grid.d
    per_t = np.stack([_separable_contract(dens[i], mats) for i in range(dens.shape[0])]) * grid.cell_volume
    lq = np.sqrt(np.maximum(per_t.max(axis=0), 0.0))
    vals = (2.0 ** (k / 2) * xq + lq).ravel()
    if math.isinf(p):
        return float(vals.max())
    return float((vals ** p).sum() ** (1.0 / p))


def norm(u, kind: str, s: float = 0.0, sigma: float = 0.0, p: float = 1.0,
         k: Optional[int] = None, partition: str = "smooth") -> NormReport:
    """Evaluate a norm of the toolkit's family.

    Parameters
    ----------
    u : Field or SpaceTimeField
    kind : str
        ``'L2'``, ``'Hs'``, ``'l1Hs'`` (uses ``p`` for l^p), ``'l2cube'``
        (l^2 sum of cube pieces at scale ``k``), ``'X'``, ``'Xk'``,
        ``'LinfL2'``, ``'L1L2'``, ``'Xs'``, ``'lpXs'``, ``'calX'``
        (local-energy component with exponent ``sigma``), ``'calZ'``.
    """
    grid, data, w = _st_data(u)
    if kind == "Y":
        raise UnsupportedNorm("the Y norm has no exact evaluation; use y_surrogate")
    if kind == "L2":
        return NormReport(kind, linf_l2(u) if data.shape[0] == 1 else l1_l2(u), combine="max",
                          breakdown={0: linf_l2(u)})
    if kind == "Hs":
        vh = np.fft.fftn(data[-1], axes=tuple(range(grid.d)))
        jb = (1.0 + _kmag(grid) ** 2) ** s
        val = float(np.sqrt((jb * np.abs(vh) ** 2).sum() / grid.size * grid.cell_volume))
        return NormReport(kind, val, s=s, breakdown={0: val ** 2})
    if kind == "X":
        v = x_norm(u)
        return NormReport(kind, v, breakdown={0: v}, combine="max")
    if kind == "LinfL2":
        v = linf_l2(u)
        return NormReport(kind, v, breakdown={0: v}, combine="max")
    if kind == "L1L2":
        v = l1_l2(u)
        return NormReport(kind, v, breakdown={0: v}, combine="max")
    if kind == "Xk":
        if k is None:
            raise ValueError("Xk needs k")
        v = xk_norm(u, k)
        return NormReport(kind, v, breakdown={k: v}, combine="max")
    if kind == "l2cube":
        if k is None:
            raise ValueError("l2cube needs k")
        cp = CubePartition(grid, k, partition)
        E = np.abs(data[-1]) ** 2
        S = cube_sums(grid, E, cp.axis_weights() ** 2)
        v = float(np.sqrt(S.sum()))
        return NormReport(kind, v, breakdown={k: v ** 2})
    pieces = shells(Field(grid, data[-1]) if data.shape[0] == 1 else SpaceTimeField(grid, data, 0.0, 1.0))
    bd: Dict[int, float] = {}
    if kind == "l1Hs":
        single = data[-1]
        pieces = shells(Field(grid, single))
        for j, pj in enumerate(pieces):
            cp = CubePartition(grid, j, partition)
            S = cube_sums(grid, np.abs(pj) ** 2, cp.axis_weights() ** 2)
            q = np.sqrt(np.maximum(S, 0.0)).ravel()
            lp = float(q.max()) if math.isinf(p) else float((q ** p).sum() ** (1.0 / p))
            bd[j] = 2.0 ** (2 * s * j) * lp ** 2
        return NormReport(kind, math.sqrt(sum(bd.values())), s=s, p=p, breakdown=bd)
    if kind in ("Xs", "lpXs", "calX", "calZ"):
        if data.shape[0] == 1:
            w = np.ones(1)
        for j in range(pieces.shape[0]):
            pj = pieces[j] if data.shape[0] > 1 else pieces[j][None]
            if kind == "Xs":
                val = 2.0 ** (j / 2) * _x_from(grid, pj, w) + _linf_from(grid, pj)
                bd[j] = 2.0 ** (2 * s * j) * val ** 2
            elif kind == "lpXs":
                bd[j] = 2.0 ** (2 * s * j) * _lp_xk(grid, pj, w, j, p) ** 2
            elif kind == "calX":
                bd[j] = 2.0 ** (2 * j * (sigma + 0.5)) * _x_from(grid, pj, w) ** 2
            else:
                bd[j] = 2.0 ** (2 * j * sigma) * _linf_from(grid, pj) ** 2
        return NormReport(kind, math.sqrt(sum(bd.values())), s=s, sigma=sigma, p=p, breakdown=bd)
    raise ValueError(f"unknown norm kind {kind!r}")


def _x_from(grid: Grid, data: np.ndarray, w: np.ndarray) -> float:
    E = np.tensordot(w, np.abs(data) ** 2, axes=(0, 0))
    return float(_x_norm_from_energy(grid, E))


def _linf_from(grid: Grid, data: np.ndarray) -> float:
    return float(np.sqrt((np.abs(data) ** 2).reshape(data.shape[0], -1).sum(axis=1).max() * grid.cell_volume))


def _l1l2_from(grid: Grid, data: np.ndarray, w: np.ndarray) -> float:
    per_t = np.sqrt((np.abs(data) ** 2).reshape(data.shape[0], -1).sum(axis=1) * grid.cell_volume)
    return float((w * per_t).sum()) if data.shape[0] > 1 else float(per_t[0])


# ----------------------------------------------------------------------
# dual-space surrogate
# ----------------------------------------------------------------------

def y_atom(grid: Grid, data: np.ndarray, w: np.ndarray) -> float:
    """min over scales l of s_l^{1/2} sum_{Q in Q_l} ||f||_{L^2([0,T] x Q)}.

    Upper bound for the dual local-energy norm: decompose f into its
    restrictions to the cubes of one scale.
    """
    E = np.tensordot(w, np.abs(data) ** 2, axes=(0, 0))
    best = math.inf
    for l in _x_scales(grid):
        mq = _cube_count(grid, 2.0 ** l)
        side = grid.box_length / mq
        S = cube_sums(grid, E, _axis_bins(grid, mq))
        best = min(best, math.sqrt(side) * float(np.sqrt(np.maximum(S, 0.0)).sum()))
    return best


def _pair(grid: Grid, f: np.ndarray, g: np.ndarray, w: np.ndarray) -> complex:
    per_t = (f * np.conj(g)).reshape(f.shape[0], -1).sum(axis=1) * grid.cell_volume
    return complex((w * per_t).sum()) if f.shape[0] > 1 else complex(per_t[0])


def y_surrogate(f, k: int, family: str = "full") -> Tuple[float, float]:
    """Two-sided bracket for the Y_k norm of a space-time field.

    Returns ``(lower, upper)`` with ``lower <= ||f||_{Y_k} <= upper`` in the
    discrete setting.  The upper bound is the best value over a fixed family
    of splittings ``f = u1 + u2`` of ``2^{-k/2} atom(u1) + ||u2||_{L^1 L^2}``;
    the lower bound pairs ``f`` with cube-restricted copies of itself, each
    normalised in the exact X_k norm.
    """
    grid, data, w = _st_data(f)
    pure = _l1l2_from(grid, data, w)
    atom_all = 2.0 ** (-k / 2) * y_atom(grid, data, w)
    upper = min(pure, atom_all)
    if family == "full":
        r = grid.radius()
        rad = 1.0
        while rad < grid.box_length:
            c = np.clip(1.0 - STEP(r / rad - 1.0), 0.0, 1.0)
            inner, outer = data * c, data * (1.0 - c)
            upper = min(upper,
                        2.0 ** (-k / 2) * y_atom(grid, inner, w) + _l1l2_from(grid, outer, w),
                        2.0 ** (-k / 2) * y_atom(grid, outer, w) + _l1l2_from(grid, inner, w))
            rad *= 2.0
        axes = tuple(range(1, data.ndim))
        fh = np.fft.fftn(data, axes=axes)
        for j in range(1, top_shell(grid) + 1):
            m = below_multiplier(grid, j)
            lo = np.fft.ifftn(fh * m, axes=axes)
            hi = data - lo
            upper = min(upper,
                        2.0 ** (-k / 2) * y_atom(grid, hi, w) + _l1l2_from(grid, lo, w),
                        2.0 ** (-k / 2) * y_atom(grid, lo, w) + _l1l2_from(grid, hi, w))
    # dictionary lower bound
    E = np.tensordot(w, np.abs(data) ** 2, axes=(0, 0))
    lower = 0.0
    for l in _x_scales(grid) + [None]:
        if l is None:
            g = data
        else:
            mq = _cube_count(grid, 2.0 ** l)
            bins = _axis_bins(grid, mq)
            S = cube_sums(grid, E, bins)
            idx = np.unravel_index(int(np.argmax(S)), S.shape)
            mask = np.ones(grid.shape)
            for a, i in enumerate(idx):
                sh = [1] * grid.d
                sh[a] = grid.n
                mask = mask * bins[i].reshape(sh)
            g = data * mask
        gn = 2.0 ** (k / 2) * _x_from(grid, g, w) + _linf_from(grid, g)
        if gn > 0:
            lower = max(lower, abs(_pair(grid, data, g, w)) / gn)
    return lower, upper


def y_upper(f, k: int, family: str = "basic") -> float:
    return y_surrogate(f, k, family)[1]


def ys_norm(f, s: float = 0.0, l1: bool = False, family: str = "basic") -> NormReport:
    """Y^s (or l^1 Y^s) norm with Y_k replaced by its surrogate upper bound."""
    grid, data, w = _st_data(f)
    pieces = shells(SpaceTimeField(grid, data, 0.0, 1.0) if data.shape[0] > 1 else Field(grid, data[0]))
    bd = {}
    for j in range(pieces.shape[0]):
        pj = pieces[j] if data.shape[0] > 1 else pieces[j][None]
        if not np.any(pj):
            bd[j] = 0.0
            continue
        if l1:
            rows = _axis_partition(grid, _cube_count(grid, 2.0 ** j))
            tot = 0.0
            m = rows.shape[0]
            for idx in np.ndindex(*((m,) * grid.d)):
                c = np.ones(grid.shape)
                for a, i in enumerate(idx):
                    sh = [1] * grid.d
                    sh[a] = grid.n
                    c = c * rows[i].reshape(sh)
                piece = pj * c
                if np.any(np.abs(piece) > 0):
                    tot += _y_upper_arr(grid, piece, w, j, family)
            val = tot
        else:
            val = _y_upper_arr(grid, pj, w, j, family)
        bd[j] = 2.0 ** (2 * s * j) * val ** 2
    return NormReport("l1Ys" if l1 else "Ys", math.sqrt(sum(bd.values())), s=s, breakdown=bd)


def _y_upper_arr(grid, data, w, k, family):
    pure = _l1l2_from(grid, data, w)
    atom = 2.0 ** (-k / 2) * y_atom(grid, data, w)
    if family == "basic":
        return min(pure, atom)
    st = SpaceTimeField(grid, data, 0.0, w[1] * 1.0 if len(w) > 1 else 1.0)
    return y_surrogate(st, k, family)[1]


# ----------------------------------------------------------------------
# frequency envelopes
# ----------------------------------------------------------------------

@dataclass
class FrequencyEnvelope:
    c: np.ndarray
    delta_env: float
    sigma_env: float
    base_norm: float
    shell_norms: np.ndarray

    def check(self, tol: float = 1e-12) -> Dict[str, bool]:
        c, a, u = self.c, self.shell_norms, self.base_norm
        K = len(c)
        bounded = bool(np.all(a <= c * u * (1 + tol) + tol))
        left = right = True
        for j in range(K):
            for k in range(K):
                if j < k and c[j] < 2.0 ** (self.delta_env * (j - k)) * c[k] * (1 - tol):
                    left = False
                if j > k and c[j] < 2.0 ** (self.sigma_env * (k - j)) * c[k] * (1 - tol):
                    right = False
        l2 = float(np.sqrt((c ** 2).sum()))
        return {"bounded": bounded, "left": left, "right": right, "size": 0.5 <= l2 <= 2.0 + tol}


def envelope(u, delta_env: float = 0.125, sigma_env: float = 0.5, shell_norm=None) -> FrequencyEnvelope:
    """Frequency envelope of max type.

    ``c_j = ||u||^-1 max( max_{k>=j} 2^{-delta|j-k|} a_k , max_{k<=j} 2^{-sigma|j-k|} a_k )``
    with ``a_k`` the shell norms.  Taking the larger of the two one-sided
    maxima (rather than their sum) makes both slow-variation properties
    hold with constant one.  ``shell_norm`` maps a shell piece (array) to
    its norm; the default is the L^2 norm of the last snapshot.  The base
    norm is the l^2 sum of the shell norms, so ``||c||_2 >= 1``; if the
    raw envelope exceeds l^2 size 2 it is rescaled to size 2.
    """
    grid, data, _ = _st_data(u)
    pieces = shells(Field(grid, data[-1]))
    if shell_norm is None:
        a = np.array([math.sqrt(float((np.abs(p) ** 2).sum()) * grid.cell_volume) for p in pieces])
    else:
        a = np.array([float(shell_norm(p)) for p in pieces])
    base = float(np.sqrt((a ** 2).sum()))
    if base == 0.0:
        raise EnvelopeError("the zero field has no frequency envelope")
    j = np.arange(len(a))
    D = j[None, :] - j[:, None]  # k - j
    w = np.where(D >= 0, 2.0 ** (-delta_env * np.abs(D)), 2.0 ** (-sigma_env * np.abs(D)))
    c = (w * a[None, :]).max(axis=1) / base
    size = float(np.sqrt((c ** 2).sum()))
    if size > 2.0:
        c = c * (2.0 / size)
    return FrequencyEnvelope(c, delta_env, sigma_env, base, a)
