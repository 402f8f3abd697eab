import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrahyp.grid_core import Field, Grid, SpaceTimeField, random_bandlimited
from ultrahyp.littlewood_paley import (
    CubePartition, EnvelopeError, UnsupportedNorm, envelope, norm, paraproduct, project,
    resonant, shell_multiplier, shells, top_shell, y_surrogate,
)

G1 = Grid(1, 256, 2 * np.pi)
G2 = Grid(2, 64, 2 * np.pi)


def _plane(g, k):
    return Field(g, np.exp(1j * k * g.axis()))


@pytest.mark.parametrize("g", [G1, G2])
def test_partition_of_unity(g):
    total = sum(shell_multiplier(g, k) for k in range(top_shell(g) + 1))
    assert np.abs(total - 1.0).max() <= 1e-12


def test_shell_pieces_sum_to_field(rng):
    u = random_bandlimited(G2, 30, rng)
    assert np.abs(shells(u).sum(axis=0) - u.values).max() <= 1e-12 * np.abs(u.values).max()


def test_plane_wave_lands_in_its_shell():
    u = _plane(G1, 12)  # 2^3 < 12 < 2^4: shells 3 and 4 only
    pieces = np.abs(shells(u)).max(axis=tuple(range(1, 2)))
    live = set(np.flatnonzero(pieces > 1e-12))
    assert live <= {3, 4}


def test_shell_beyond_lattice_rejected():
    from ultrahyp.grid_core import ResolutionError
    with pytest.raises(ResolutionError):
        project(_plane(G1, 1), top_shell(G1) + 3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), kf=st.integers(4, 30), kg=st.integers(4, 30))
def test_bony_identity(seed, kf, kg):
    rng = np.random.default_rng(seed)
    f = random_bandlimited(G2, kf, rng)
    g = random_bandlimited(G2, kg, rng)
    total = paraproduct(f, g).values + paraproduct(g, f).values + resonant(f, g).values
    prod = f.values * g.values
    assert np.abs(total - prod).max() <= 1e-12 * max(1.0, np.abs(prod).max())


def test_paraproduct_low_high():
    # low-frequency g times a single high mode is all paraproduct
    g = Field(G1, 1 + 0.5 * np.cos(G1.axis()))
    f = _plane(G1, 100)
    assert np.abs(paraproduct(g, f).values - g.values * f.values).max() < 1e-12


@pytest.mark.parametrize("k", [0, 1, 2])
def test_cube_partition_sums_to_one(k):
    assert CubePartition(G2, k).sum_check() <= 1e-12
    assert CubePartition(G2, k, "sharp").sum_check() == 0.0


def test_sharp_cube_l2_reproduces_l2(rng):
    u = random_bandlimited(G2, 20, rng)
    a = norm(u, "l2cube", k=1, partition="sharp").value
    assert a == pytest.approx(norm(u, "L2").value, rel=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["Hs", "l1Hs", "Xs", "calX", "calZ"]))
def test_norm_recombines_breakdown(seed, kind):
    u = random_bandlimited(G1, 40, np.random.default_rng(seed))
    rep = norm(u, kind, s=1.0, sigma=0.5)
    assert rep.value >= 0
    assert rep.recombine() == pytest.approx(rep.value, rel=1e-10)


def test_hs_norm_of_plane_wave():
    u = _plane(G1, 5)
    L2 = np.sqrt(2 * np.pi)
    assert norm(u, "Hs", s=1.0).value == pytest.approx(np.sqrt(26) * L2, rel=1e-12)


def test_y_norm_unsupported():
    with pytest.raises(UnsupportedNorm):
        norm(_plane(G1, 1), "Y")


def test_y_surrogate_ordered(rng):
    data = np.stack([random_bandlimited(G1, 20, rng).values for _ in range(5)])
    f = SpaceTimeField(G1, data, 0.0, 0.05)
    for k in (1, 3):
        lo, hi = y_surrogate(f, k)
        assert 0 <= lo <= hi


def test_single_shell_envelope_closed_form():
    # xi = 2^k0 sits where S_k0 has symbol exactly one and every other shell zero
    k0, de, se = 4, 0.125, 0.5
    env = envelope(_plane(G1, 2 ** k0), de, se)
    a = env.shell_norms
    assert np.count_nonzero(a > 1e-12) == 1 and np.argmax(a) == k0
    j = np.arange(len(a))
    shape = np.where(j <= k0, 2.0 ** (-de * (k0 - j)), 2.0 ** (-se * (j - k0)))
    assert np.allclose(env.c / env.c[k0], shape, rtol=1e-12)


def test_two_shell_envelope_is_max():
    de = se = 1.0  # steep enough that no size rescaling occurs
    e1 = envelope(_plane(G1, 8), de, se)
    e2 = envelope(_plane(G1, 64), de, se)
    both = envelope(Field(G1, _plane(G1, 8).values + _plane(G1, 64).values), de, se)
    assert np.sqrt((both.c ** 2).sum()) <= 2.0
    scale = both.base_norm / e1.base_norm
    assert np.allclose(both.c * scale, np.maximum(e1.c, e2.c), rtol=1e-12)


def test_envelope_invariants_random(rng):
    for _ in range(20):
        env = envelope(random_bandlimited(G1, 120, rng))
        assert all(env.check().values())


def test_zero_field_has_no_envelope():
    with pytest.raises(EnvelopeError):
        envelope(Field(G1, np.zeros(256)))
