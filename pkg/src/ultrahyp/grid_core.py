"""Periodic spectral grids, complex fields, smooth cutoffs and field I/O.

The whole toolkit works on a periodic box ``[-L/2, L/2)^d`` sampled with
``n`` points per axis.  Frequencies live on the dual lattice
``(2*pi/L) * Z^d``.  Forward transforms use the unnormalised DFT (numpy's
``fftn``) and inverse transforms ``ifftn``, so that

    f(x) = (1/N) * sum_xi  f_hat(xi) * exp(i x.xi),   N = n**d.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline

PHYSICAL = "physical"
FREQUENCY = "frequency"

RAW_MAGIC = b"UHFIELD1"
_HEADER = struct.Struct("<8siidi4x")  # magic, d, n, box length, rep tag, pad -> 32 bytes
assert _HEADER.size == 32


class GridError(ValueError):
    """Structural mismatch between fields and grids."""


class ResolutionError(ValueError):
    """A requested feature is not resolved by the grid."""


class FieldFormatError(ValueError):
    """Malformed field file."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^d``.

    Parameters
    ----------
    d : int
        Spatial dimension, 1, 2 or 3.
    n : int
        Points per axis, a power of two.
    box_length : float
        Period ``L`` along every axis.
    """

    d: int
    n: int
    box_length: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not _is_pow2(int(self.n)) or self.n < 2:
            raise GridError(f"n must be a power of two >= 2, got {self.n}")
        if not (self.box_length > 0):
            raise GridError("box length must be positive")

    @property
    def h(self) -> float:
        return self.box_length / self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def dk(self) -> float:
        """Dual lattice spacing 2*pi/L."""
        return 2.0 * np.pi / self.box_length

    @property
    def nyquist(self) -> float:
        return np.pi / self.h

    def axis(self) -> np.ndarray:
        return -0.5 * self.box_length + self.h * np.arange(self.n)

    def freq_axis(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, d=self.h) * 2.0 * np.pi

    def coords(self) -> Tuple[np.ndarray, ...]:
        """Physical coordinate arrays, ``indexing='ij'``."""
        ax = self.axis()
        return tuple(np.meshgrid(*([ax] * self.d), indexing="ij"))

    def points(self) -> np.ndarray:
        """All grid points as an ``(N, d)`` array in C order."""
        return np.stack([c.ravel() for c in self.coords()], axis=-1)

    def wavevectors(self) -> Tuple[np.ndarray, ...]:
        k = self.freq_axis()
        return tuple(np.meshgrid(*([k] * self.d), indexing="ij"))

    def kmag(self) -> np.ndarray:
        return np.sqrt(sum(k * k for k in self.wavevectors()))

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.coords()))

    def fingerprint(self) -> str:
        return f"d{self.d}-n{self.n}-L{self.box_length!r}"


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Field:
    """Complex grid function tagged with its representation."""

    grid: Grid
    values: np.ndarray
    rep: str = PHYSICAL

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grid.shape:
            if v.size == self.grid.size:
                v = v.reshape(self.grid.shape)
            else:
                raise GridError(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
        if self.rep not in (PHYSICAL, FREQUENCY):
            raise GridError(f"unknown representation tag {self.rep!r}")
        v = np.array(v, dtype=np.complex128, copy=True)
        object.__setattr__(self, "values", _freeze(v))

    # convenience -----------------------------------------------------
    def physical(self) -> "Field":
        return self if self.rep == PHYSICAL else transform(self, "inverse")

    def frequency(self) -> "Field":
        return self if self.rep == FREQUENCY else transform(self, "forward")

    def l2(self) -> float:
        """L^2 norm with the physical measure h^d dx, from either representation."""
        v = self.values
        s = float(np.vdot(v, v).real)
        if self.rep == FREQUENCY:
            s /= self.grid.size
        return math.sqrt(s * self.grid.cell_volume)

    def with_values(self, values, rep: Optional[str] = None) -> "Field":
        return Field(self.grid, values, self.rep if rep is None else rep)

    def __add__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return Field(self.grid, self.values + other.values, self.rep)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return Field(self.grid, self.values - other.values, self.rep)

    def __mul__(self, c) -> "Field":
        return Field(self.grid, self.values * c, self.rep)

    __rmul__ = __mul__


def _check_same(a: Field, b: Field):
    if a.grid != b.grid:
        raise GridError("fields live on different grids")
    if a.rep != b.rep:
        raise GridError("fields carry different representation tags")


def transform(f: Field, direction: str) -> Field:
    """Forward (physical -> frequency) or inverse DFT of a field."""
    if f.values.shape != f.grid.shape:
        raise GridError("field size does not match its grid")
    if direction == "forward":
        if f.rep != PHYSICAL:
            raise GridError("forward transform needs a physical field")
        return Field(f.grid, np.fft.fftn(f.values), FREQUENCY)
    if direction == "inverse":
        if f.rep != FREQUENCY:
            raise GridError("inverse transform needs a frequency field")
        return Field(f.grid, np.fft.ifftn(f.values), PHYSICAL)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def field_from_function(grid: Grid, fn: Callable[..., np.ndarray]) -> Field:
    """Sample ``fn(*coords)`` on the grid."""
    return Field(grid, np.broadcast_to(fn(*grid.coords()), grid.shape))


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Snapshots ``u(t_i)`` on a common grid at uniformly spaced times."""

    grid: Grid
    data: np.ndarray  # shape (n_t,) + grid.shape, physical values
    t0: float
    dt: float

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.complex128)
        if a.ndim != self.grid.d + 1 or a.shape[1:] != self.grid.shape:
            raise GridError(f"snapshot array shape {a.shape} does not fit grid {self.grid.shape}")
        if a.shape[0] >= 2 and not (self.dt > 0):
            raise GridError("times must be strictly increasing")
        object.__setattr__(self, "data", _freeze(np.array(a, copy=True)))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.data.shape[0])

    @property
    def horizon(self) -> float:
        return self.dt * (self.data.shape[0] - 1)

    def __len__(self):
        return self.data.shape[0]

    def snapshot(self, i: int) -> Field:
        return Field(self.grid, self.data[i])

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "SpaceTimeField":
        out = np.stack([fn(u) for u in self.data])
        return SpaceTimeField(self.grid, out, self.t0, self.dt)

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        if other.grid != self.grid or other.data.shape != self.data.shape:
            raise GridError("space-time fields do not match")
        return SpaceTimeField(self.grid, self.data - other.data, self.t0, self.dt)

    def __mul__(self, c) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.data * c, self.t0, self.dt)

    __rmul__ = __mul__


def time_weights(n_t: int, dt: float) -> np.ndarray:
    """Trapezoid weights on ``n_t`` uniform samples."""
    if n_t == 1:
        return np.zeros(1)
    w = np.full(n_t, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


# ----------------------------------------------------------------------
# smooth profiles
# ----------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


class TabulatedProfile:
    """Monotone C-infinity profile ``P(t) = int_a^t w / int_a^b w``.

    ``w`` is a nonnegative smooth density supported in ``[a, b]``.  The
    primitive is tabulated with 16-point Gauss-Legendre per cell and
    interpolated by cubic Hermite splines using the exact density as
    derivative, so ``P`` and ``P'`` are consistent to ~1e-12.  Outside
    ``[a, b]`` the profile is exactly 0 or 1.
    """

    def __init__(self, density: Callable[[np.ndarray], np.ndarray], a: float, b: float, cells: int = 8192):
        self.a, self.b = float(a), float(b)
        t = np.linspace(self.a, self.b, cells + 1)
        mid = 0.5 * (t[1:] + t[:-1])
        half = 0.5 * (t[1:] - t[:-1])
        q = mid[:, None] + half[:, None] * _GL_X[None, :]
        cell_int = (density(q) * _GL_W[None, :]).sum(axis=1) * half
        prim = np.concatenate([[0.0], np.cumsum(cell_int)])
        self.norm = prim[-1]
        dens = density(t)
        self._spl = CubicHermiteSpline(t, prim / self.norm, dens / self.norm)
        self._dspl = self._spl.derivative()
        self._density = density

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.where(t <= self.a, 0.0, 1.0)
        m = (t > self.a) & (t < self.b)
        if np.any(m):
            out = np.array(out, dtype=float)
            out[m] = self._spl(t[m])
        return out

    def deriv(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        m = (t > self.a) & (t < self.b)
        if np.any(m):
            out[m] = self._density(t[m]) / self.norm
        return out


def _bump01(s):
    """exp(-1/(1 - (2s-1)^2)) on (0, 1), zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = (s > 0.0) & (s < 1.0)
    sm = s[m]
    out[m] = np.exp(-1.0 / (4.0 * sm * (1.0 - sm)))
    return out


STEP = TabulatedProfile(_bump01, 0.0, 1.0)
"""Smooth step: 0 for t <= 0, 1 for t >= 1, increasing."""

# Increasing transition profile used by the conjugation symbols.  It is
# zero up to 1/8, has an essentially flat derivative on [1/7, 4.25] and
# reaches 1 at RHO_TOP.
RHO_BOTTOM = 1.0 / 8.0
RHO_RAMP = 1.0 / 7.0
RHO_FLAT_END = 4.25
RHO_TOP = 4.5


def _rho_density(s):
    s = np.asarray(s, dtype=float)
    up = STEP((s - RHO_BOTTOM) / (RHO_RAMP - RHO_BOTTOM))
    down = 1.0 - STEP((s - RHO_FLAT_END) / (RHO_TOP - RHO_FLAT_END))
    return up * down


RHO = TabulatedProfile(_rho_density, RHO_BOTTOM, RHO_TOP)

DELTA0 = 0.1


def chi(r) -> np.ndarray:
    """Base radial bump: 1 for r <= 1, 0 for r >= 2."""
    return 1.0 - STEP(np.asarray(r, dtype=float) - 1.0)


def chi_deriv(r) -> np.ndarray:
    return -STEP.deriv(np.asarray(r, dtype=float) - 1.0)


def chi_below(r, rho: float) -> np.ndarray:
    """chi_{<rho}(x) = chi(|x|/rho) as a function of r = |x|."""
    return chi(np.asarray(r, dtype=float) / rho)


def chi_above(r, rho: float) -> np.ndarray:
    return 1.0 - chi_below(r, rho)


def chi_hi(s) -> np.ndarray:
    """Frequency selector chi_{>1}(s): 0 for s <= 1, 1 for s >= 2."""
    return STEP(np.asarray(s, dtype=float) - 1.0)


def chi_hi_deriv(s) -> np.ndarray:
    return STEP.deriv(np.asarray(s, dtype=float) - 1.0)


def phi_below(x, c: float, delta0: float = DELTA0) -> np.ndarray:
    """phi_{<c}: 1 for x <= c, 0 for x >= c + delta0, decreasing."""
    return 1.0 - STEP((np.asarray(x, dtype=float) - c) / delta0)


def phi_below_deriv(x, c: float, delta0: float = DELTA0) -> np.ndarray:
    return -STEP.deriv((np.asarray(x, dtype=float) - c) / delta0) / delta0


def phi_above(x, c: float, delta0: float = DELTA0) -> np.ndarray:
    return 1.0 - phi_below(x, c, delta0)


def rho(r) -> np.ndarray:
    return RHO(r)


def rho_deriv(r) -> np.ndarray:
    return RHO.deriv(r)


_CUTOFF_KINDS = ("chi_below", "chi_above", "chi_hi", "phi_below", "phi_above", "rho")


def make_cutoff(kind: str, params: Optional[dict] = None, grid: Optional[Grid] = None,
                samples: Optional[np.ndarray] = None):
    """Build a cutoff as a grid field or as a sampled 1-D profile.

    Parameters
    ----------
    kind : str
        One of ``chi_below``, ``chi_above`` (spatial, radius ``rho``),
        ``chi_hi`` (frequency selector on ``|xi|``), ``phi_below``,
        ``phi_above`` (threshold ``c``, margin ``delta0``) and ``rho``
        (transition profile, optionally rescaled by ``scale``).
    params : dict
        Kind-specific parameters.
    grid : Grid, optional
        When given, spatial kinds return a real :class:`Field` on the grid
        and ``chi_hi`` is evaluated on ``|xi|`` of the dual lattice.
    samples : array, optional
        Otherwise the profile is evaluated on these abscissae.

    Raises
    ------
    ResolutionError
        If the transition width is below four grid cells.
    """
    params = dict(params or {})
    if kind not in _CUTOFF_KINDS:
        raise ValueError(f"unknown cutoff kind {kind!r}")
    if kind in ("chi_below", "chi_above"):
        radius = float(params.get("rho", 1.0))
        width = radius
        fn = (lambda r: chi_below(r, radius)) if kind == "chi_below" else (lambda r: chi_above(r, radius))
    elif kind == "chi_hi":
        width = 1.0
        fn = chi_hi
    elif kind in ("phi_below", "phi_above"):
        c = float(params.get("c", -0.5))
        d0 = float(params.get("delta0", DELTA0))
        width = d0
        fn = (lambda x: phi_below(x, c, d0)) if kind == "phi_below" else (lambda x: phi_above(x, c, d0))
    else:
        scale = float(params.get("scale", 1.0))
        width = scale * (RHO_RAMP - RHO_BOTTOM)
        fn = lambda r: rho(np.asarray(r) / scale)
    if grid is not None:
        if kind == "chi_hi":
            if width < 4 * grid.dk:
                raise ResolutionError("frequency transition narrower than four lattice cells")
            return Field(grid, fn(grid.kmag()), "frequency")
        if kind in ("phi_below", "phi_above"):
            raise ValueError("phi profiles are one-dimensional; pass samples")
        if width < 4 * grid.h:
            raise ResolutionError(f"transition width {width:g} below 4h = {4 * grid.h:g}")
        return Field(grid, fn(grid.radius()))
    if samples is None:
        raise ValueError("need a grid or sample abscissae")
    return fn(np.asarray(samples, dtype=float))


# ----------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------

def dump_field(f: Field, path: Union[str, Path], fmt: str = "raw") -> None:
    """Write a field as raw little-endian binary or CSV."""
    path = Path(path)
    if fmt == "raw":
        rep = 0 if f.rep == PHYSICAL else 1
        head = _HEADER.pack(RAW_MAGIC, f.grid.d, f.grid.n, float(f.grid.box_length), rep)
        body = np.ascontiguousarray(f.values, dtype="<c16").tobytes(order="C")
        path.write_bytes(head + body)
    elif fmt == "csv":
        names = ["ix", "iy", "iz"][: f.grid.d]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"# d={f.grid.d} n={f.grid.n} L={f.grid.box_length!r} rep={f.rep}"])
            w.writerow(names + ["re", "im"])
            for idx in np.ndindex(*f.grid.shape):
                v = f.values[idx]
                w.writerow(list(idx) + [f"{v.real:.17g}", f"{v.imag:.17g}"])
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_field(path: Union[str, Path]) -> Field:
    """Read a field written by :func:`dump_field` (format sniffed)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] == RAW_MAGIC:
        if len(blob) < _HEADER.size:
            raise FieldFormatError("truncated header")
        _, d, n, box, rep = _HEADER.unpack(blob[: _HEADER.size])
        try:
            grid = Grid(d, n, box)
        except GridError as exc:
            raise FieldFormatError(f"bad header: {exc}") from None
        nbytes = grid.size * 16
        body = blob[_HEADER.size:]
        if len(body) != nbytes:
            raise FieldFormatError(f"expected {nbytes} payload bytes, found {len(body)}")
        vals = np.frombuffer(body, dtype="<c16").reshape(grid.shape)
        return Field(grid, vals, PHYSICAL if rep == 0 else FREQUENCY)
    text = blob.decode("utf-8", errors="replace").splitlines()
    if not text or not text[0].startswith("# d="):
        raise FieldFormatError("unrecognized field file")
    meta = dict(kv.split("=", 1) for kv in text[0][2:].split())
    grid = Grid(int(meta["d"]), int(meta["n"]), float(meta["L"]))
    rows = list(csv.reader(text[2:]))
    if len(rows) != grid.size:
        raise FieldFormatError(f"expected {grid.size} rows, found {len(rows)}")
    vals = np.empty(grid.shape, dtype=np.complex128)
    try:
        for row in rows:
            idx = tuple(int(v) for v in row[: grid.d])
            vals[idx] = float(row[grid.d]) + 1j * float(row[grid.d + 1])
    except (ValueError, IndexError) as exc:
        raise FieldFormatError(f"malformed row: {exc}") from None
    return Field(grid, vals, meta.get("rep", PHYSICAL))


def random_bandlimited(grid: Grid, kmax: float, rng: np.random.Generator, kmin: float = 0.0) -> Field:
    """Random complex field with spectrum inside ``kmin <= |xi| < kmax``."""
    km = grid.kmag()
    mask = (km < kmax) & (km >= kmin)
    spec = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * mask
    return Field(grid, np.fft.ifftn(spec))
