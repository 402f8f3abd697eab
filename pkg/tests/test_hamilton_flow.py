import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrahyp.grid_core import Field, Grid, chi_below
from ultrahyp.hamilton_flow import (
    BumpMetric, ConformalTrap, ConstantMetric, SamplerSpec, flat_asymptotics_check, flow,
    flow_derivatives, flow_many, homogeneity_check, integrate_along_flow, nontrapping_parameter,
)

FLAT = ConstantMetric(np.eye(2))
ULTRA = ConstantMetric(np.diag([1.0, -1.0]))
BUMP = BumpMetric(np.diag([1.0, -1.0]), 0.1, 1.0, shape=[[1, 0.3], [0.3, -0.5]])


@pytest.mark.parametrize("metric", [FLAT, ULTRA])
def test_flat_rays_are_straight(metric):
    x0, xi0 = np.array([0.2, -0.1]), np.array([0.6, 0.8])
    ray = flow(metric, x0, xi0, (0.0, 1.5), t_eval=[0.0, 0.5, 1.5])
    expect = x0 - 2 * np.outer(ray.t, metric.g_inf @ xi0)
    assert np.allclose(ray.x, expect, atol=1e-10)
    assert np.allclose(ray.xi, xi0, atol=1e-12)


def test_flat_jacobian_closed_form():
    t = 0.7
    fd = flow_derivatives(ULTRA, [0.1, 0.2], [1.0, 0.5], t)
    assert np.allclose(fd.dx_dxi, -2 * t * ULTRA.g_inf, atol=1e-9)
    assert np.allclose(fd.dxi_dxi, np.eye(2), atol=1e-9)
    assert np.allclose(flow_derivatives(BUMP, [0.1, 0.2], [1.0, 0.5], 0.0).jacobian, np.eye(4))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_hamiltonian_drift_and_reversibility(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1, 1, 2)
    xi0 = rng.standard_normal(2)
    xi0 /= np.linalg.norm(xi0)
    fwd = flow(BUMP, x0, xi0, (0.0, 1.0), tol=1e-9)
    assert fwd.max_drift <= 1e-8
    back = flow(BUMP, fwd.x[-1], fwd.xi[-1], (1.0, 0.0), tol=1e-9)
    assert np.allclose(back.x[-1], x0, atol=1e-7) and np.allclose(back.xi[-1], xi0, atol=1e-7)


@pytest.mark.parametrize("lam", [0.5, 2.0, 3.0])
def test_homogeneity(lam):
    assert homogeneity_check(BUMP, [0.3, 0.1], [0.8, -0.6], lam, 0.5) <= 1e-7


def test_batch_matches_single():
    X = np.array([[0.0, 0.0], [0.5, -0.2]])
    XI = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = flow_many(BUMP, X, XI, 0.8, tol=1e-10)
    for i in range(2):
        one = flow(BUMP, X[i], XI[i], (0.0, 0.8), tol=1e-10)
        assert np.allclose(res.y[i], np.concatenate([one.x[-1], one.xi[-1]]), atol=1e-8)


@pytest.mark.parametrize("metric", [FLAT, ULTRA])
def test_flat_chord_oracle(metric):
    rep = nontrapping_parameter(metric, 2.0, SamplerSpec(256))
    assert rep.verdict == "nontrapping-estimate"
    assert rep.L == pytest.approx(2.0, rel=0.05)
    assert rep.L <= rep.T_cap


def test_L_monotone_in_R():
    Ls = [nontrapping_parameter(BUMP, R, SamplerSpec(128)).L for R in (1.0, 1.5, 2.0)]
    assert Ls[0] <= Ls[1] <= Ls[2]


def test_trap_is_flagged():
    rep = nontrapping_parameter(ConformalTrap(), 3.0, SamplerSpec(256), T_cap=40.0)
    assert rep.verdict == "trapped-suspect"


def test_flat_asymptotics_bump():
    assert flat_asymptotics_check(BUMP, 0.75, n_samples=64).passed


def test_integral_along_flat_ray():
    g = Grid(2, 128, 8.0)
    v = Field(g, chi_below(g.radius(), 0.5))
    val = integrate_along_flow(FLAT, v, [0.0, 0.0], [1.0, 0.0])
    # straight line at speed 2: time integral is the line integral over 2
    s = np.linspace(-2, 2, 40001)
    ref = np.trapezoid(chi_below(np.abs(s), 0.5), s) / 2
    assert val == pytest.approx(ref, rel=0.1)


def test_asymmetric_metric_rejected():
    with pytest.raises(ValueError):
        ConstantMetric([[1.0, 0.5], [0.0, 1.0]])
