"""Kohn-Nirenberg quantization on the periodic lattice and operator probes.

``Op(a) f(x) = (1/N) sum_xi a(x, xi) f_hat(xi) e^{i x.xi}`` with the
unnormalised forward DFT.  Several application paths share one interface:

* ``multiplier``: ``a`` does not depend on ``x``.
* ``separable``: ``a = sum_r alpha_r(x) beta_r(xi)`` is declared by the symbol.
* ``svd``: the sampled phase-space matrix is compressed by a truncated SVD;
  this is how the rank of a general symbol is detected.
* ``dense``: blocked O(N^2) summation over x-tiles.

All but ``dense`` cost ``O(rank * N log N)`` per application.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field as dc_field, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grid_core import Field, Grid, ResolutionError, random_bandlimited
from .littlewood_paley import below_multiplier, paraproduct_values, shell_multiplier, top_shell


class PreconditionError(ValueError):
    pass


def japanese(xi) -> np.ndarray:
    """<xi> = sqrt(1 + |xi|^2) over the last axis."""
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(1.0 + (xi * xi).sum(axis=-1))


# ------------------------------------------------------------ finite differences

def fd_weights(p: int, half: int) -> np.ndarray:
    """Central weights for the p-th derivative on offsets -half..half."""
    offs = np.arange(-half, half + 1, dtype=float)
    V = np.vander(offs, increasing=True).T
    rhs = np.zeros(offs.size)
    rhs[p] = math.factorial(p)
    return np.linalg.solve(V, rhs)


def _stencil(p: int) -> Tuple[np.ndarray, np.ndarray]:
    if p == 0:
        return np.zeros(1), np.ones(1)
    half = (p + 1) // 2 + 1  # fourth-order accurate central stencils
    w = fd_weights(p, half)
    return np.arange(-half, half + 1, dtype=float), w


# ------------------------------------------------------------------- symbols

class Symbol:
    """Phase-space function ``a(x, xi)`` with a declared order.

    Parameters
    ----------
    fn : callable
        ``fn(x, xi)`` with broadcastable ``(..., d)`` arrays, returning
        ``(...)`` or, for matrix symbols, ``(..., p, p)``.
    order : float
    d : int
    grad_x, grad_xi : callable, optional
        Analytic gradients returning ``(..., d)`` (scalar symbols only).
    terms : list of (alpha, beta), optional
        Separable representation ``a = sum alpha(x) beta(xi)``.
    """

    def __init__(self, fn: Callable, order: float, d: int, *, grad_x=None, grad_xi=None, terms=None,
                 x_independent: bool = False, shape: Tuple[int, ...] = (), name: str = "a"):
        self.fn = fn
        self.order = float(order)
        self.d = int(d)
        self._gx = grad_x
        self._gxi = grad_xi
        self.terms = terms
        self.x_independent = x_independent
        self.shape = tuple(shape)
        self.name = name
        self.cache: Dict[Tuple, float] = {}

    def __call__(self, x, xi):
        return self.fn(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))

    # constructors
    @classmethod
    def multiplier(cls, fn_xi: Callable, order: float, d: int, grad_xi=None, name="m") -> "Symbol":
        def fn(x, xi):
            out = fn_xi(xi)
            return np.broadcast_to(out, np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]) + np.shape(out)[xi.ndim - 1:])

        gxi = None if grad_xi is None else (lambda x, xi: np.broadcast_to(
            grad_xi(xi), np.broadcast_shapes(x.shape, xi.shape)))
        gx = lambda x, xi: np.zeros(np.broadcast_shapes(x.shape, xi.shape))
        one = lambda x: np.ones(x.shape[:-1])
        return cls(fn, order, d, grad_x=gx, grad_xi=gxi, terms=[(one, fn_xi)], x_independent=True, name=name)

    @classmethod
    def function(cls, fn_x: Callable, d: int, grad_x=None, name="m") -> "Symbol":
        """Order-zero multiplication symbol ``a(x, xi) = m(x)``."""
        def fn(x, xi):
            return np.broadcast_to(fn_x(x), np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]))

        gx = None if grad_x is None else (lambda x, xi: np.broadcast_to(grad_x(x), np.broadcast_shapes(x.shape, xi.shape)))
        gxi = lambda x, xi: np.zeros(np.broadcast_shapes(x.shape, xi.shape))
        one = lambda xi: np.ones(xi.shape[:-1])
        return cls(fn, 0.0, d, grad_x=gx, grad_xi=gxi, terms=[(fn_x, one)], name=name)

    @classmethod
    def constant(cls, c, d: int) -> "Symbol":
        c = complex(c)
        return cls.multiplier(lambda xi: np.full(xi.shape[:-1], c), 0.0, d,
                              grad_xi=lambda xi: np.zeros(xi.shape), name=f"{c}")

    @classmethod
    def separable(cls, terms: Sequence[Tuple[Callable, Callable]], order: float, d: int, name="a") -> "Symbol":
        terms = list(terms)

        def fn(x, xi):
            return sum(al(x) * be(xi) for al, be in terms)

        return cls(fn, order, d, terms=terms, name=name)

    # algebra
    def _combine(self, other, op, order):
        if not isinstance(other, Symbol):
            c = other
            other = Symbol.constant(c, self.d)
        if op == "mul":
            fn = lambda x, xi: self(x, xi) * other(x, xi)
            gx = gxi = None
            if self.has_gradients and other.has_gradients and not self.shape and not other.shape:
                gx = lambda x, xi: (self.grad_x(x, xi) * other(x, xi)[..., None]
                                    + self(x, xi)[..., None] * other.grad_x(x, xi))
                gxi = lambda x, xi: (self.grad_xi(x, xi) * other(x, xi)[..., None]
                                     + self(x, xi)[..., None] * other.grad_xi(x, xi))
            terms = None
            if self.terms is not None and other.terms is not None:
                terms = [(_mul2(a1, a2), _mul2(b1, b2)) for (a1, b1) in self.terms for (a2, b2) in other.terms]
        else:
            s = 1.0 if op == "add" else -1.0
            fn = lambda x, xi: self(x, xi) + s * other(x, xi)
            gx = gxi = None
            if self.has_gradients and other.has_gradients:
                gx = lambda x, xi: self.grad_x(x, xi) + s * other.grad_x(x, xi)
                gxi = lambda x, xi: self.grad_xi(x, xi) + s * other.grad_xi(x, xi)
            terms = None
            if self.terms is not None and other.terms is not None:
                terms = list(self.terms) + [(_scale(a, s), b) for a, b in other.terms]
        return Symbol(fn, order, self.d, grad_x=gx, grad_xi=gxi, terms=terms,
                      x_independent=self.x_independent and other.x_independent,
                      shape=self.shape or other.shape)

    def __mul__(self, other):
        o = other.order if isinstance(other, Symbol) else 0.0
        return self._combine(other, "mul", self.order + o)

    __rmul__ = __mul__

    def __add__(self, other):
        o = other.order if isinstance(other, Symbol) else 0.0
        return self._combine(other, "add", max(self.order, o))

    def __sub__(self, other):
        o = other.order if isinstance(other, Symbol) else 0.0
        return self._combine(other, "sub", max(self.order, o))

    def conj(self) -> "Symbol":
        fn = lambda x, xi: np.conj(self(x, xi))
        if self.shape:
            fn = lambda x, xi: np.conj(np.swapaxes(self(x, xi), -1, -2))
        terms = None
        if self.terms is not None and not self.shape:
            terms = [(_conjf(a), _conjf(b)) for a, b in self.terms]
        gx = gxi = None
        if self.has_gradients:
            gx = lambda x, xi: np.conj(self.grad_x(x, xi))
            gxi = lambda x, xi: np.conj(self.grad_xi(x, xi))
        return Symbol(fn, self.order, self.d, grad_x=gx, grad_xi=gxi, terms=terms,
                      x_independent=self.x_independent, shape=self.shape, name=f"conj({self.name})")

    # derivatives
    @property
    def has_gradients(self) -> bool:
        return self._gx is not None and self._gxi is not None

    def _fd_grad(self, x, xi, which: str):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        offs, w = _stencil(1)
        out = []
        for l in range(self.d):
            acc = 0.0
            for o, c in zip(offs, w):
                if c == 0:
                    continue
                if which == "x":
                    hh = 1e-3
                    xs = x.copy() if x.ndim else x
                    xs = np.array(np.broadcast_to(x, np.broadcast_shapes(x.shape, xi.shape)))
                    xs[..., l] += o * hh
                    acc = acc + c * self(xs, xi)
                else:
                    hh = 1e-3 * japanese(xi)
                    xs = np.array(np.broadcast_to(xi, np.broadcast_shapes(x.shape, xi.shape)))
                    xs[..., l] += o * hh
                    acc = acc + c * self(x, xs)
            out.append(acc / hh)
        return np.stack(out, axis=-1)

    def grad_x(self, x, xi):
        if self._gx is not None:
            return self._gx(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
        return self._fd_grad(x, xi, "x")

    def grad_xi(self, x, xi):
        if self._gxi is not None:
            return self._gxi(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
        return self._fd_grad(x, xi, "xi")

    def sample(self, grid: Grid) -> np.ndarray:
        """Values on the phase-space lattice, shape ``(N_x, N_xi) + shape``."""
        X = grid.points()
        XI = _lattice_xi(grid)
        return np.asarray(self(X[:, None, :], XI[None, :, :]), dtype=complex)


def _mul2(f, g):
    return lambda z: f(z) * g(z)


def _scale(f, s):
    return lambda z: s * f(z)


def _conjf(f):
    return lambda z: np.conj(f(z))


def _lattice_xi(grid: Grid) -> np.ndarray:
    return np.stack([k.ravel() for k in grid.wavevectors()], axis=-1)


def poisson_bracket(a1: Symbol, a2: Symbol) -> Symbol:
    """``{a1, a2} = grad_xi a1 . grad_x a2 - grad_xi a2 . grad_x a1`` (order m1 + m2 - 1)."""
    def fn(x, xi):
        return ((a1.grad_xi(x, xi) * a2.grad_x(x, xi)).sum(axis=-1)
                - (a2.grad_xi(x, xi) * a1.grad_x(x, xi)).sum(axis=-1))

    return Symbol(fn, a1.order + a2.order - 1.0, a1.d, name=f"{{{a1.name},{a2.name}}}")


# -------------------------------------------------------------- quantization

class QuantizedOperator:
    """Reusable ``Op(a)`` on a grid with an adjoint.

    Acts on arrays of shape ``grid.shape`` (scalar symbols) or
    ``(p,) + grid.shape`` (``p x p`` matrix symbols).
    """

    def __init__(self, a: Symbol, grid: Grid, method: str = "auto", rank_tol: float = 1e-13,
                 max_rank: Optional[int] = None, block: int = 256):
        self.a, self.grid = a, grid
        self.shape = a.shape
        if a.d != grid.d:
            raise ValueError("symbol and grid dimensions differ")
        N = grid.size
        if method == "auto":
            if a.x_independent:
                method = "multiplier"
            elif a.terms is not None and not a.shape:
                method = "separable"
            elif not a.shape and N <= 4096:
                method = "svd"
            else:
                method = "dense"
        self.method = method
        X = grid.points()
        XI = _lattice_xi(grid)
        self.rank = None
        self.dropped = 0.0
        if method == "multiplier":
            self._mult = np.asarray(a(X[:1], XI), dtype=complex)
            self._mult = np.moveaxis(self._mult.reshape(grid.shape + self.shape), tuple(range(grid.d)),
                                     tuple(range(-grid.d, 0))) if self.shape else self._mult.reshape(grid.shape)
        elif method == "separable":
            self._alpha = [np.asarray(np.broadcast_to(al(X), (N,)), dtype=complex).reshape(grid.shape)
                           for al, _ in a.terms]
            self._beta = [np.asarray(np.broadcast_to(be(XI), (N,)), dtype=complex).reshape(grid.shape)
                          for _, be in a.terms]
            self.rank = len(self._alpha)
        elif method == "svd":
            U, sv, Vh, self.dropped = _low_rank(a.sample(grid), rank_tol, max_rank)
            self._alpha = [(U[:, i] * sv[i]).reshape(grid.shape) for i in range(sv.size)]
            self._beta = [Vh[i].reshape(grid.shape) for i in range(sv.size)]
            self.rank = int(sv.size)
            self.method = "separable"
        elif method == "dense":
            self._block = block
            self._X, self._XI = X, XI
            idx = np.stack(np.meshgrid(*([np.arange(grid.n)] * grid.d), indexing="ij"), -1).reshape(-1, grid.d)
            self._jidx = idx
        else:
            raise ValueError(f"unknown method {method!r}")

    @classmethod
    def from_terms(cls, grid: Grid, alphas, betas, col_index=None, col_values=None) -> "QuantizedOperator":
        """Scalar operator from tabulated separable terms plus optional dense columns.

        ``alphas``/``betas`` hold ``alpha_i(x)`` and ``beta_i(xi)`` on the grid
        and lattice (``grid.shape`` each).  ``col_index`` are flat lattice
        indices whose symbol values ``col_values[:, j]`` (``(N, n_cols)``) are
        used verbatim; the separable terms must vanish there.
        """
        op = cls.__new__(cls)
        op.a, op.grid, op.shape = None, grid, ()
        op.method = "separable"
        op._alpha = [np.asarray(a, dtype=complex).reshape(grid.shape) for a in alphas]
        op._beta = [np.asarray(b, dtype=complex).reshape(grid.shape) for b in betas]
        op.rank = len(op._alpha)
        op.dropped = 0.0
        op._cols = None
        if col_index is not None and len(col_index):
            idx = np.asarray(col_index)
            jidx = np.stack(np.meshgrid(*([np.arange(grid.n)] * grid.d), indexing="ij"), -1).reshape(-1, grid.d)
            phase = np.exp(2j * np.pi / grid.n * (jidx @ jidx[idx].T))
            op._cols = (idx, np.asarray(col_values, dtype=complex) * phase / grid.size)
        return op

    # helpers over the last d axes
    def _fft(self, v):
        return np.fft.fftn(v, axes=tuple(range(-self.grid.d, 0)))

    def _ifft(self, v):
        return np.fft.ifftn(v, axes=tuple(range(-self.grid.d, 0)))

    def _dense_rows(self, rows: np.ndarray) -> np.ndarray:
        g = self.grid
        S = np.asarray(self.a(self._X[rows][:, None, :], self._XI[None, :, :]), dtype=complex)
        phase = np.exp(2j * np.pi / g.n * (self._jidx[rows] @ self._jidx.T))
        if self.shape:
            return S * phase[..., None, None] / g.size
        return S * phase / g.size

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=complex)
        if self.method == "multiplier":
            F = self._fft(v)
            if self.shape:
                return self._ifft(np.einsum("ij...,j...->i...", self._mult, F))
            return self._ifft(self._mult * F)
        if self.method == "separable":
            F = self._fft(v)
            out = sum(al * self._ifft(be * F) for al, be in zip(self._alpha, self._beta))
            cols = getattr(self, "_cols", None)
            if cols is not None:
                out = out + (cols[1] @ F.ravel()[cols[0]]).reshape(self.grid.shape)
            return out
        # dense
        g = self.grid
        F = self._fft(v)
        if self.shape:
            Ff = F.reshape(self.shape[0], -1)
            out = np.empty((self.shape[0], g.size), dtype=complex)
            for r0 in range(0, g.size, self._block):
                rows = np.arange(r0, min(r0 + self._block, g.size))
                K = self._dense_rows(rows)
                out[:, rows] = np.einsum("rkij,jk->ir", K, Ff)
            return out.reshape(v.shape)
        Ff = F.ravel()
        out = np.empty(g.size, dtype=complex)
        for r0 in range(0, g.size, self._block):
            rows = np.arange(r0, min(r0 + self._block, g.size))
            out[rows] = self._dense_rows(rows) @ Ff
        return out.reshape(g.shape)

    def adjoint(self, w: np.ndarray) -> np.ndarray:
        """Euclidean (equivalently L^2) adjoint."""
        w = np.asarray(w, dtype=complex)
        g = self.grid
        if self.method == "multiplier":
            if self.shape:
                return self._ifft(np.einsum("ji...,j...->i...", np.conj(self._mult), self._fft(w)))
            return self._ifft(np.conj(self._mult) * self._fft(w))
        if self.method == "separable":
            # (alpha ifft(beta fft .))^* = ifft(conj(beta) fft(conj(alpha) .))
            out = sum(self._ifft(np.conj(be) * self._fft(np.conj(al) * w))
                      for al, be in zip(self._alpha, self._beta))
            cols = getattr(self, "_cols", None)
            if cols is not None:
                Fh = np.zeros(g.size, dtype=complex)
                Fh[cols[0]] = np.conj(cols[1]).T @ w.ravel()
                out = out + g.size * self._ifft(Fh.reshape(g.shape))
            return out
        # dense: v = fft^H-weighted sum; build K^H row blocks
        if self.shape:
            wf = w.reshape(self.shape[0], -1)
            acc = np.zeros((self.shape[0], g.size), dtype=complex)
            for r0 in range(0, g.size, self._block):
                rows = np.arange(r0, min(r0 + self._block, g.size))
                K = self._dense_rows(rows)
                acc += np.einsum("rkij,ir->jk", np.conj(K), wf[:, rows])
            Fh = acc.reshape((self.shape[0],) + g.shape)
        else:
            wf = w.ravel()
            acc = np.zeros(g.size, dtype=complex)
            for r0 in range(0, g.size, self._block):
                rows = np.arange(r0, min(r0 + self._block, g.size))
                acc += np.conj(self._dense_rows(rows)).T @ wf[rows]
            Fh = acc.reshape(g.shape)
        # adjoint of fftn is N * ifftn
        return g.size * self._ifft(Fh)

    def __call__(self, v):
        return self.apply(v)


def _low_rank(S: np.ndarray, tol: float, max_rank: Optional[int] = None, seed: int = 0):
    """Truncated SVD by an adaptive randomized range finder.

    The rank doubles until the residual of the captured range, measured on a
    fresh Gaussian probe block, is below ``tol`` times the leading singular
    value.  Returns ``U, s, Vh, relative residual``.
    """
    rng = np.random.default_rng(seed)
    n = S.shape[1]
    r = 8
    cap = min(S.shape) if max_rank is None else min(max_rank, *S.shape)
    while True:
        r = min(r, cap)
        Om = rng.standard_normal((n, r + 8))
        Q, _ = np.linalg.qr(S @ Om)
        B = np.conj(Q.T) @ S
        Ub, sv, Vh = np.linalg.svd(B, full_matrices=False)
        test = rng.standard_normal((n, 8))
        Y = S @ test
        resid = np.linalg.norm(Y - Q @ (np.conj(Q.T) @ Y)) / max(np.linalg.norm(test), 1e-300)
        rel = resid / max(sv[0], 1e-300) if sv.size else 0.0
        if rel <= tol or r >= cap:
            keep = max(1, int((sv > tol * max(sv[0], 1e-300)).sum()))
            keep = min(keep, cap)
            return Q @ Ub[:, :keep], sv[:keep], Vh[:keep], float(rel)
        r *= 2


def _aliasing_guard(f: Field, frac: float = 0.5, tol: float = 1e-20):
    F = np.abs(np.fft.fftn(f.physical().values)) ** 2
    out = F[f.grid.kmag() > frac * f.grid.nyquist].sum()
    if out > tol * max(F.sum(), 1e-300):
        raise ResolutionError("input is not band-limited below Nyquist/2")


def quantize_apply(a: Symbol, f: Field, method: str = "auto", guard: bool = True) -> Field:
    """``Op(a) f`` for a scalar symbol."""
    if guard and not a.x_independent:
        _aliasing_guard(f)
    op = QuantizedOperator(a, f.grid, method)
    return Field(f.grid, op.apply(f.physical().values))


# -------------------------------------------------------------- seminorms

@dataclass
class ProbeLattice:
    """Phase-space probe points: an x grid times a radial-angular xi set."""

    x: np.ndarray
    xi: np.ndarray

    @classmethod
    def build(cls, d: int, x_extent: float = math.pi, n_x: int = 9, xi_max: float = 256.0,
              n_r: int = 24, n_dir: int = 8) -> "ProbeLattice":
        ax = np.linspace(-x_extent, x_extent, n_x)
        X = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
        r = np.concatenate([[0.0], np.geomspace(0.25, xi_max, n_r)])
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
        elif d == 2:
            th = 2 * np.pi * (np.arange(n_dir) + 0.25) / n_dir
            dirs = np.column_stack([np.cos(th), np.sin(th)])
        else:
            rng = np.random.default_rng(5)
            dirs = rng.standard_normal((n_dir, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        XI = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        XI = np.unique(XI, axis=0)
        return cls(X, XI)


def _multi_indices(d: int, j: int):
    for tot in range(j + 1):
        for combo in itertools.product(range(tot + 1), repeat=2 * d):
            if sum(combo) == tot:
                yield combo[:d], combo[d:]


def seminorm(a: Symbol, m: float, j: int, lattice: Optional[ProbeLattice] = None,
             h_x: Optional[float] = None, h_xi_rel: float = 0.05) -> float:
    """Sampled ``sup <xi>^{|alpha| - m} |d_x^beta d_xi^alpha a|`` over ``|alpha| + |beta| <= j``.

    Derivatives use fourth-order central stencils.  The x step is tied to
    the probe spacing and the xi step is ``h_xi_rel * <xi>``.
    """
    if j > 4:
        raise ValueError("finite-difference seminorms are limited to j <= 4")
    lat = lattice or ProbeLattice.build(a.d)
    d = a.d
    if h_x is None:
        ux = np.unique(lat.x[:, 0])
        h_x = min(0.05, 0.25 * (ux[1] - ux[0])) if ux.size > 1 else 0.05
    X = lat.x[:, None, :]
    XI = lat.xi[None, :, :]
    jx = japanese(XI)
    hxi = h_xi_rel * jx
    best = 0.0
    for beta, alpha in _multi_indices(d, j):
        stens = [_stencil(p) for p in tuple(beta) + tuple(alpha)]
        acc = 0.0
        for pts in itertools.product(*[range(len(s[0])) for s in stens]):
            coef = 1.0
            dx = np.zeros(d)
            dxi_units = np.zeros(d)
            for ax, p in enumerate(pts):
                o, w = stens[ax][0][p], stens[ax][1][p]
                coef *= w
                if ax < d:
                    dx[ax] = o * h_x
                else:
                    dxi_units[ax - d] = o
            if coef == 0.0:
                continue
            acc = acc + coef * a(X + dx, XI + hxi[..., None] * dxi_units)
        na = int(sum(alpha))
        nb = int(sum(beta))
        val = np.abs(acc) / (h_x ** nb * hxi ** na)
        if a.shape:
            val = val.reshape(val.shape[:2] + (-1,)).max(axis=-1)
        best = max(best, float((jx ** (na - m) * val).max()))
        a.cache[(m, sum(alpha) + sum(beta))] = best
    return best


# ---------------------------------------------------------- operator norms

NormSpec = Union[str, Tuple[str, float]]


def _sobolev_mult(grid: Grid, spec: NormSpec, inverse: bool = False) -> Optional[np.ndarray]:
    if spec == "L2" or spec is None:
        return None
    kind, s = spec
    if kind != "Hs":
        raise ValueError(f"unsupported norm spec {spec!r}")
    w = (1.0 + grid.kmag() ** 2) ** (s / 2.0)
    return 1.0 / w if inverse else w


def operator_norm(apply: Callable, adjoint: Callable, grid: Grid, source: NormSpec = "L2",
                  target: NormSpec = "L2", trials: int = 8, iters: int = 30, seed: int = 0,
                  restrict: Optional[np.ndarray] = None, components: int = 0) -> float:
    """Randomized lower bound for ``||A||_{source -> target}`` by subspace iteration.

    ``restrict`` is an optional Fourier multiplier applied to inputs.
    ``components > 0`` means vector fields of that many components.
    """
    if trials < 8:
        raise ValueError("operator_norm needs at least 8 trials")
    src = _sobolev_mult(grid, source, inverse=True)
    tgt = _sobolev_mult(grid, target)
    pre = src if restrict is None else (restrict if src is None else src * restrict)
    axes = tuple(range(-grid.d, 0))

    def mult(v, m):
        if m is None:
            return v
        return np.fft.ifftn(np.fft.fftn(v, axes=axes) * m, axes=axes)

    def B(v):
        return mult(apply(mult(v, pre)), tgt)

    def Bh(w):
        return mult(adjoint(mult(w, np.conj(tgt) if tgt is not None else None)),
                    np.conj(pre) if pre is not None else None)

    rng = np.random.default_rng(seed)
    shape = ((components,) if components else ()) + grid.shape
    V = rng.standard_normal((trials,) + shape) + 1j * rng.standard_normal((trials,) + shape)
    V = V.reshape(trials, -1)

    def orth(M):
        q, _ = np.linalg.qr(M.T)
        return q.T

    V = orth(V)
    for _ in range(iters):
        W = np.array([Bh(B(v.reshape(shape))).ravel() for v in V])
        if not np.any(W):
            return 0.0
        V = orth(W)
    BV = np.array([B(v.reshape(shape)).ravel() for v in V])
    return float(np.linalg.svd(BV, compute_uv=False)[0]) if np.any(BV) else 0.0


def op_norm(op: QuantizedOperator, **kw) -> float:
    return operator_norm(op.apply, op.adjoint, op.grid, components=op.shape[0] if op.shape else 0, **kw)


# -------------------------------------------------------------- probe reports

@dataclass
class OperatorProbeReport:
    kind: str
    shells: List[int]
    trials: int
    measured: List[float]
    reference: List[float]
    margin: float
    passed: bool
    extra: Dict[str, object] = dc_field(default_factory=dict)

    def rows(self):
        return [(k, m, r, self.margin) for k, m, r in zip(self.shells, self.measured, self.reference)]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=lambda o: np.asarray(o).tolist())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,measured,reference,margin\n")
            for row in self.rows():
                fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")


def sup_abs(a: Symbol, grid: Grid) -> float:
    return float(np.abs(a.sample(grid)).max())


def cv_highfreq_probe(a: Symbol, grid: Grid, k_list: Sequence[int], trials: int = 8, margin: float = 4.0,
                      iters: int = 30, seed: int = 0, op: Optional[QuantizedOperator] = None) -> OperatorProbeReport:
    """``||Op(a) S_{>=k}||`` per ``k`` against ``margin * sup|a|``."""
    op = op or QuantizedOperator(a, grid)
    amax = sup_abs(a, grid)
    curve = []
    for k in k_list:
        hi = 1.0 - below_multiplier(grid, k)
        curve.append(op_norm(op, trials=trials, iters=iters, seed=seed, restrict=hi))
    ok = [c <= margin * amax for c in curve]
    k0 = None
    for i in range(len(ok)):
        if all(ok[i:]):
            k0 = list(k_list)[i]
            break
    return OperatorProbeReport("cv_highfreq", list(k_list), trials, curve, [amax] * len(curve), margin,
                               k0 is not None, {"k0": k0, "sup_abs": amax})


def garding_probe(a: Symbol, grid: Grid, R_g: float, shells: Sequence[int], trials: int = 16,
                  seed: int = 0, margin: Optional[float] = None,
                  lattice: Optional[ProbeLattice] = None) -> OperatorProbeReport:
    """Worst ``Re <Op(a) f, f> / |f|^2`` over random fields, per shell.

    Each trial field mixes a random low-frequency part with a shell-``k`` part,
    so low-frequency negativity of ``a`` is exercised at every shell.
    """
    op = QuantizedOperator(a, grid)
    comps = a.shape[0] if a.shape else 0
    lat = lattice or ProbeLattice.build(a.d, x_extent=grid.box_length / 2 * (1 - 1.0 / grid.n),
                                        xi_max=grid.nyquist)
    far = np.linalg.norm(lat.xi, axis=-1) >= R_g
    vals = a(lat.x[:, None, :], lat.xi[None, far, :])
    if comps:
        herm = 0.5 * (vals + np.conj(np.swapaxes(vals, -1, -2)))
        low = float(np.linalg.eigvalsh(herm).min())
    else:
        low = float(np.real(vals).min())
    if low < -1e-12:
        raise PreconditionError(f"Re a is negative ({low:.3e}) for |xi| >= R_g")
    rng = np.random.default_rng(seed)
    worst, growth = [], []
    for k in shells:
        wk, gk = np.inf, -np.inf
        for _ in range(trials):
            parts = []
            for _c in range(max(comps, 1)):
                hi = np.fft.ifftn(np.fft.fftn(random_bandlimited(grid, grid.nyquist, rng).values)
                                  * shell_multiplier(grid, k))
                lo = random_bandlimited(grid, 2.0 * R_g + 1.0, rng).values
                parts.append(hi / max(np.linalg.norm(hi), 1e-300) + rng.uniform(0, 2) * lo / np.linalg.norm(lo))
            f = np.array(parts) if comps else parts[0]
            q = float(np.real(np.vdot(f, op.apply(f)))) / float(np.vdot(f, f).real)
            wk = min(wk, q)
            gk = max(gk, q)
        worst.append(wk)
        growth.append(gk)
    if margin is None:
        margin = 4.0 * (1.0 + float(np.abs(a(lat.x[:, None, :], lat.xi[None, ~far, :])).max()) if np.any(~far) else 1.0)
    passed = min(worst) >= -margin
    return OperatorProbeReport("garding", list(shells), trials, worst, [-margin] * len(worst), margin, passed,
                               {"max_quadratic_form": growth, "worst_constant": min(worst)})


# ---------------------------------------------------------- calculus probes

def _shell_norm(apply, adjoint, grid, k, trials, iters, seed, components=0):
    return operator_norm(apply, adjoint, grid, restrict=shell_multiplier(grid, k), trials=trials,
                         iters=iters, seed=seed, components=components)


def fit_slope(shells: Sequence[int], values: Sequence[float]) -> float:
    """Least-squares slope of ``log2(values)`` against the shell index."""
    v = np.asarray(values, dtype=float)
    return float(np.polyfit(np.asarray(shells, dtype=float), np.log2(v), 1)[0])


def calculus_remainder_probe(a1: Symbol, a2: Symbol, grid: Grid, shells: Sequence[int], trials: int = 8,
                             iters: int = 20, seed: int = 0, slope_tol: float = 0.3,
                             zero_tol: float = 1e-10) -> OperatorProbeReport:
    """Shell norms of the composition, adjoint and commutator remainders.

    A remainder whose shell norms are all below ``zero_tol`` times the
    scale of the operators involved is exactly zero and passes.
    """
    A1 = QuantizedOperator(a1, grid)
    A2 = QuantizedOperator(a2, grid)
    A12 = QuantizedOperator(a1 * a2, grid)
    A1c = QuantizedOperator(a1.conj(), grid)
    pb = poisson_bracket(a1, a2)
    Apb = QuantizedOperator(Symbol(lambda x, xi: -1j * pb(x, xi), pb.order, a1.d), grid)
    m1, m2 = a1.order, a2.order
    comps = a1.shape[0] if a1.shape else 0

    rems = {
        "composition": (lambda v: A1.apply(A2.apply(v)) - A12.apply(v),
                        lambda w: A2.adjoint(A1.adjoint(w)) - A12.adjoint(w), m1 + m2 - 1.0),
        "adjoint": (lambda v: A1.adjoint(v) - A1c.apply(v),
                    lambda w: A1.apply(w) - A1c.adjoint(w), m1 - 1.0),
        "commutator": (lambda v: A1.apply(A2.apply(v)) - A2.apply(A1.apply(v)) - Apb.apply(v),
                       lambda w: A2.adjoint(A1.adjoint(w)) - A1.adjoint(A2.adjoint(w)) - Apb.adjoint(w),
                       m1 + m2 - 2.0),
    }
    measured, reference, extra = [], [], {}
    passed = True
    for name, (ap, ad, order) in rems.items():
        vals = [_shell_norm(ap, ad, grid, k, trials, iters, seed, comps) for k in shells]
        scale = max(2.0 ** (max(shells) * max(m1 + m2, m1, 0.0)), 1.0)
        if max(vals) <= zero_tol * scale:
            slope, ok = None, True
        else:
            slope = fit_slope(shells, np.maximum(vals, 1e-300))
            ok = abs(slope - order) <= slope_tol
        passed &= ok
        extra[name] = {"norms": vals, "slope": slope, "expected": order, "passed": ok}
        measured.append(float("nan") if slope is None else slope)
        reference.append(order)
    return OperatorProbeReport("calculus_remainder", list(shells), trials, measured, reference, slope_tol,
                               passed, extra)


def _paraproduct_adjoint(grid: Grid, g: np.ndarray, h: np.ndarray, gap: int = 4) -> np.ndarray:
    """``T_g^* h = sum_k S_k(conj(S_{<k-gap} g) h)``."""
    gh = np.fft.fftn(g)
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(gap + 1, top_shell(grid) + 1):
        low = np.conj(np.fft.ifftn(gh * below_multiplier(grid, k - gap)))
        out += np.fft.ifftn(np.fft.fftn(low * h) * shell_multiplier(grid, k))
    return out


def coifman_meyer_probe(g: Field, m: float, shells: Sequence[int], trials: int = 8, iters: int = 20,
                        seed: int = 0) -> OperatorProbeReport:
    """Shell norms of ``[<D>^m, T_g]`` scaled by ``|g|_{W^{1,inf}} 2^{k(m-1)}``."""
    grid = g.grid
    gv = g.physical().values
    jm = (1.0 + grid.kmag() ** 2) ** (m / 2.0)
    axes = tuple(range(grid.d))
    P = lambda v: np.fft.ifftn(np.fft.fftn(v) * jm)
    T = lambda v: paraproduct_values(grid, gv, v)
    Tad = lambda w: _paraproduct_adjoint(grid, gv, w)
    ap = lambda v: P(T(v)) - T(P(v))
    ad = lambda w: Tad(P(w)) - P(Tad(w))
    grads = [np.fft.ifftn(1j * kk * np.fft.fftn(gv)) for kk in grid.wavevectors()]
    w1 = float(np.abs(gv).max() + max(np.abs(gr).max() for gr in grads))
    vals, refs = [], []
    for k in shells:
        nk = _shell_norm(ap, ad, grid, k, trials, iters, seed)
        vals.append(nk / (w1 * 2.0 ** (k * (m - 1.0))))
        refs.append(1.0)
    spread = max(vals) / max(min(vals), 1e-300)
    return OperatorProbeReport("coifman_meyer", list(shells), trials, vals, refs, spread, True,
                               {"w1inf": w1})
