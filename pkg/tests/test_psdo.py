import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrahyp.grid_core import Field, Grid, field_from_function, random_bandlimited
from ultrahyp.littlewood_paley import project
from ultrahyp.psdo import (
    QuantizedOperator, Symbol, calculus_remainder_probe, coifman_meyer_probe, japanese,
    op_norm, operator_norm, poisson_bracket, quantize_apply, seminorm,
)

G = Grid(1, 256, 2 * np.pi)
x = G.axis()
U = field_from_function(G, lambda x: np.sin(x) + 0.5 * np.cos(3 * x))


def test_identity_derivative_multiplication():
    ident = quantize_apply(Symbol.constant(1.0, 1), U).values
    deriv = quantize_apply(Symbol.multiplier(lambda xi: 1j * xi[..., 0], 1, 1), U).values
    mult = quantize_apply(Symbol.function(lambda y: np.cos(y[..., 0]), 1), U).values
    assert np.abs(ident - U.values).max() <= 1e-10
    assert np.abs(deriv - (np.cos(x) - 1.5 * np.sin(3 * x))).max() <= 1e-10
    assert np.abs(mult - np.cos(x) * U.values).max() <= 1e-10


def test_separable_matches_dense():
    a = Symbol.separable([(lambda y: np.cos(y[..., 0]), lambda xi: japanese(xi))], 1, 1)
    v = random_bandlimited(G, 30, np.random.default_rng(2)).values
    fast = QuantizedOperator(a, G, "separable").apply(v)
    dense = QuantizedOperator(a, G, "dense").apply(v)
    assert np.abs(fast - dense).max() <= 1e-9 * np.abs(dense).max()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_quantization_is_linear(seed, c):
    rng = np.random.default_rng(seed)
    f, g = random_bandlimited(G, 40, rng), random_bandlimited(G, 40, rng)
    a = Symbol.separable([(lambda y: 1 + 0.3 * np.sin(y[..., 0]), lambda xi: japanese(xi) ** 0.5)], 0.5, 1)
    lhs = quantize_apply(a, Field(G, f.values + c * g.values)).values
    rhs = quantize_apply(a, f).values + c * quantize_apply(a, g).values
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(lhs).max())


def test_adjoint_is_adjoint(rng):
    a = Symbol.separable([(lambda y: np.exp(1j * y[..., 0]), lambda xi: japanese(xi))], 1, 1)
    op = QuantizedOperator(a, G)
    v, w = (random_bandlimited(G, 40, rng).values for _ in range(2))
    assert np.vdot(w, op.apply(v)) == pytest.approx(np.vdot(op.adjoint(w), v), rel=1e-10)


@pytest.mark.parametrize("k", [2, 4, 6])
def test_multiplier_commutes_with_shells(k, rng):
    a = Symbol.multiplier(lambda xi: japanese(xi) ** 1.5, 1.5, 1)
    v = random_bandlimited(G, 100, rng)
    lhs = project(quantize_apply(a, v), k).values
    rhs = quantize_apply(a, project(v, k)).values
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


def test_multiplier_pair_has_zero_remainders():
    a1 = Symbol.multiplier(lambda xi: japanese(xi) ** 2, 2, 1)
    a2 = Symbol.multiplier(lambda xi: japanese(xi) ** 0.5, 0.5, 1)
    rep = calculus_remainder_probe(a1, a2, G, [3, 4, 5])
    assert rep.passed
    assert all(v["slope"] is None for v in rep.extra.values())


def test_matrix_constant_symbols_commutator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0, 0.0], [1.0, 0.0]])
    sa = Symbol(lambda x, xi: np.broadcast_to(A, xi.shape[:-1] + (2, 2)), 0, 1, shape=(2, 2),
                x_independent=True)
    sb = Symbol(lambda x, xi: np.broadcast_to(B, xi.shape[:-1] + (2, 2)), 0, 1, shape=(2, 2),
                x_independent=True)
    v = np.stack([np.sin(x), np.cos(2 * x)]).astype(complex)
    oa, ob = QuantizedOperator(sa, G), QuantizedOperator(sb, G)
    comm = oa.apply(ob.apply(v)) - ob.apply(oa.apply(v))
    assert np.allclose(comm, np.einsum("ij,jn->in", A @ B - B @ A, v), atol=1e-12)


def test_poisson_bracket_closed_form():
    a1 = Symbol.multiplier(lambda xi: xi[..., 0] ** 2, 2, 1, grad_xi=lambda xi: 2 * xi)
    a2 = Symbol.function(lambda y: np.sin(y[..., 0]), 1, grad_x=lambda y: np.cos(y))
    X = np.array([[0.3], [1.1]])
    XI = np.array([[2.0], [-1.0]])
    pb = poisson_bracket(a1, a2)(X, XI)
    assert np.allclose(pb, 2 * XI[:, 0] * np.cos(X[:, 0]))


def test_seminorm_of_japanese_bracket():
    a = Symbol.multiplier(lambda xi: japanese(xi) ** 2, 2, 1)
    assert seminorm(a, 2, 0) == pytest.approx(1.0, rel=1e-12)
    assert 1.0 <= seminorm(a, 2, 2) <= 3.0


def test_operator_norm_of_multiplier():
    mult = 1 + 0.5 * np.cos(G.freq_axis())
    ap = lambda v: np.fft.ifft(mult * np.fft.fft(v))
    est = operator_norm(ap, ap, G, trials=8, iters=30)
    assert est <= mult.max() * (1 + 1e-12)
    assert est >= 0.99 * mult.max()
    with pytest.raises(ValueError):
        operator_norm(ap, ap, G, trials=4)


def test_op_norm_nonnegative():
    a = Symbol.function(lambda y: 2 + np.cos(y[..., 0]), 1)
    assert op_norm(QuantizedOperator(a, G), trials=8, iters=20) == pytest.approx(3.0, rel=1e-2)


def test_coifman_meyer_bounded():
    g = field_from_function(Grid(1, 1024, 2 * np.pi), lambda x: 1 + 0.5 * np.cos(x))
    rep = coifman_meyer_probe(g, 1.0, [4, 5, 6, 7], iters=10)
    ratios = np.asarray(rep.measured) / np.asarray(rep.reference)
    # bounded over k: a uniform cap and no growth across the top shells
    assert ratios.max() <= 1.0
    assert ratios[-1] <= 1.1 * ratios[-2]


def test_coifman_meyer_order_zero_vanishes():
    # <D>^0 is the identity, so the commutator is zero up to roundoff
    g = field_from_function(Grid(1, 1024, 2 * np.pi), lambda x: 1 + 0.5 * np.cos(x))
    assert max(coifman_meyer_probe(g, 0.0, [4, 6], iters=5).measured) <= 1e-12
