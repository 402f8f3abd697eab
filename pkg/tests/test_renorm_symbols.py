import numpy as np
import pytest
from scipy.integrate import quad

from ultrahyp.grid_core import Grid, chi, chi_hi
from ultrahyp.hamilton_flow import BumpMetric, ConstantMetric
from ultrahyp.renorm_symbols import (
    AngularWeight, BumpVector, CheckLattice, DependencyError, EscapeIntegral, Eta,
    FrozenCoefficients, PsiOne, RenormParams, ZeroVector, angle_identity_check, build_eta,
    build_psi2, calibrate_O, flat_coefficients, hamilton_derivative, materialize_O,
    positive_commutator_check_O, psi1_hamilton_closed_form,
)

R = 1.0
PARAMS = RenormParams(R=R, R_prime=8.0, k0=2, k1=10)
B1 = BumpVector([0.6], 0.5, [0.2])
FLAT_B = FrozenCoefficients(ConstantMetric(np.eye(1)), B1, ZeroVector(1))


def _straight_psi1(x, xi):
    """-1/2 chi_{>1} chi_{<2R} (backward - forward) along x - 2 t sign(xi)."""
    w = np.sign(xi)
    f = lambda t: np.real(B1(np.array([[x - 2 * t * w]])))[0, 0] * w * chi(abs(x - 2 * t * w) / (4 * R))
    back = quad(f, -10, 0, limit=200, epsabs=1e-13)[0]
    fwd = quad(f, 0, 10, limit=200, epsabs=1e-13)[0]
    return -0.5 * chi_hi(abs(xi)) * chi(abs(x) / (2 * R)) * (back - fwd)


def test_params_ordering():
    with pytest.raises(ValueError):
        RenormParams(R=4, R_prime=16).validate()
    with pytest.raises(ValueError):
        RenormParams(k0=4, k1=10).validate()
    with pytest.raises(ValueError):
        RenormParams(K=2.0, K_prime=1.0, K_dprime=3.0).validate()
    with pytest.raises(ValueError):
        RenormParams(R=1, R_prime=8).validate(box_length=40.0)
    RenormParams(R=1, R_prime=8, k0=2, k1=10).validate(box_length=100.0)


def test_psi1_vanishes_without_coefficients():
    ps = PsiOne(flat_coefficients(np.eye(2)), PARAMS)
    X = np.array([[0.1, 0.2], [0.5, -0.4]])
    assert np.all(ps.evaluate(X, np.array([[3.0, 1.0], [0.0, 4.0]])) == 0.0)


@pytest.mark.parametrize("x,xi", [(0.0, 3.0), (0.3, -2.0), (-0.5, 5.0), (0.9, 1.5)])
def test_psi1_straight_line_oracle(x, xi):
    val = PsiOne(FLAT_B, PARAMS).evaluate([[x]], [[xi]])[0]
    assert val == pytest.approx(_straight_psi1(x, xi), abs=1e-6)


def test_psi1_support():
    ps = PsiOne(FLAT_B, PARAMS)
    assert np.all(ps.evaluate([[4.0 * R], [-4.5 * R]], [[3.0], [2.0]]) == 0.0)


def test_psi1_even_in_xi():
    ps = PsiOne(FLAT_B, PARAMS)
    X = np.array([[-1.2], [0.05], [0.4], [1.7]])
    assert np.allclose(ps.evaluate(X, 4.0), ps.evaluate(X, -4.0), atol=1e-9)


def test_psi2_plateaus():
    K = 2.0
    sym = build_psi2(flat_coefficients(np.eye(2)), RenormParams(K_prime=K, R=R))
    # incoming: x along +e1, A xi along -e1, far out
    assert sym(np.array([5 * R, 0.0]), np.array([-3.0, 0.0])) == pytest.approx(K, abs=1e-12)
    # small r on the outgoing branch
    assert sym(np.array([R / 10, 0.0]), np.array([3.0, 0.0])) == 0.0


def test_psi2_continuous_across_phi_transition():
    K, r = 2.0, 2 * R
    w = AngularWeight(np.eye(2), R, K)
    th = np.linspace(0, np.pi, 20001)
    vals = w(np.column_stack([r * np.cos(th), r * np.sin(th)]), np.array([3.0, 0.0]))
    # the phi transition has width delta0 in cos(theta); sampled jumps stay small
    assert np.abs(np.diff(vals)).max() <= K * 0.01


@pytest.mark.parametrize("G", [np.eye(2), np.diag([1.0, -1.0])])
def test_angle_identity_constant_metric(G):
    rng = np.random.default_rng(3)
    X = rng.uniform(-3, 3, (200, 2))
    XI = rng.standard_normal((200, 2))
    assert angle_identity_check(flat_coefficients(G), X, XI) <= 1e-8


def test_angle_identity_small_bump():
    amp = 0.02
    fz = FrozenCoefficients(BumpMetric(np.eye(2), amp, 1.0), ZeroVector(2), ZeroVector(2))
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (400, 2))
    X = X[np.linalg.norm(X, axis=1) > R / 8]
    XI = rng.standard_normal((X.shape[0], 2))
    assert angle_identity_check(fz, X, XI) <= 10 * amp


def test_beta_vanishes_for_constant_metric():
    from ultrahyp.renorm_symbols import AngleSet
    ang = AngleSet(flat_coefficients(np.diag([1.0, -1.0])))
    X = np.array([[1.0, 0.3], [-0.2, 2.0]])
    XI = np.array([[0.4, 1.0], [1.0, -1.0]])
    assert np.abs(ang.beta(X, XI)).max() <= 1e-7
    assert np.allclose(ang.alpha(X, XI), ang.theta(X, XI))


def test_eta_zero_coefficients():
    fz = flat_coefficients(np.eye(2))
    eta = Eta(fz, 8.0, 4.0)
    X = np.array([[0.0, 0.0], [10.0, 0.0], [32.0, 1.0]])
    assert eta(X)[0] == pytest.approx(0.25)
    assert eta(X)[1] == pytest.approx(chi(10.0 / 16.0) / 4.0)
    assert eta(X)[2] == 0.0
    with pytest.raises(DependencyError):
        build_eta(fz, RenormParams())


def test_eta_domination():
    fz = FrozenCoefficients(BumpMetric(np.eye(2), 0.2, 0.5), BumpVector([0.4, -0.3], 0.5),
                            ZeroVector(2))
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, (500, 2))
    XI = rng.standard_normal((500, 2))
    assert Eta(fz, 8.0, 16.0).domination_constant(X, XI) <= 4.0


def test_escape_transport_identity():
    # d/dt of int_t^inf G(x^s)|xi| ds along the flow is -G |xi|
    fz = flat_coefficients(np.eye(2))
    esc = EscapeIntegral(fz, PARAMS, None, use_eta=False)
    X = np.array([[0.3, -0.2], [1.2, 0.5], [0.0, 1.9]])
    XI = np.array([[2.0, 1.0], [-1.0, 3.0], [0.5, -0.5]])
    H = hamilton_derivative(fz, esc.evaluate, X, XI, h=1e-3)
    expect = -esc.G(X) * np.linalg.norm(XI, axis=1)
    assert np.allclose(H, expect, rtol=1e-6, atol=1e-9)


def test_psi1_closed_form_matches_ray_differencing():
    fz = FrozenCoefficients(ConstantMetric(np.eye(2)), BumpVector([0.4, -0.3], 0.5), ZeroVector(2))
    X = np.array([[0.1, 0.2], [1.5, -0.4], [-2.5, 0.3]])
    XI = np.array([[3.0, 1.0], [-2.0, 2.0], [4.0, 0.5]])
    ps = PsiOne(fz, PARAMS)
    num = hamilton_derivative(fz, lambda x, xi: ps.evaluate(x, xi), X, XI, h=1e-3)
    closed = psi1_hamilton_closed_form(fz, PARAMS, X, XI)
    assert np.allclose(num, closed, rtol=1e-4, atol=1e-6)


@pytest.fixture(scope="module")
def calibrated_1d():
    return calibrate_O(FLAT_B, PARAMS)


def test_calibration_ordering(calibrated_1d):
    p = calibrated_1d
    assert p.K < p.K_prime < p.K_dprime
    assert p.K_prime == pytest.approx(8 * p.K / FLAT_B.min_A_xi())


def test_commutator_check_and_sabotage(calibrated_1d):
    lat = CheckLattice.build(1, [(5 * R, 60)], n_phi=1, n_dir=2, k1=8)
    assert positive_commutator_check_O(FLAT_B, calibrated_1d, lat).passed
    assert not positive_commutator_check_O(FLAT_B, calibrated_1d, lat, K_prime=0.0).passed


def test_materialized_O_bounds(calibrated_1d):
    grid = Grid(1, 512, 20.0)
    sym = materialize_O(FLAT_B, calibrated_1d, grid)
    psi = sym.psi(grid.freq_axis())
    assert np.exp(psi).max() <= np.exp(calibrated_1d.K / 2 + 2 * calibrated_1d.K_prime)
    # tapered to zero well inside the box
    assert np.all(psi[np.abs(grid.axis()) >= 9 * R] == 0.0)


def test_zero_symbol_quantizes_to_identity():
    grid = Grid(1, 256, 20.0)
    p = RenormParams(R=R, R_prime=8.0, k0=2, k1=10, K=0.0, K_prime=0.0, K_dprime=0.0)
    sym = materialize_O(FrozenCoefficients(ConstantMetric(np.eye(1)), ZeroVector(1), ZeroVector(1)), p, grid)
    v = np.random.default_rng(0).standard_normal(256) + 0j
    assert np.abs(sym.operator(+1.0).apply(v) - v).max() <= 1e-12
