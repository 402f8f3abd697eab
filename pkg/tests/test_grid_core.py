import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ultrahyp.grid_core import (
    DELTA0, Field, FieldFormatError, Grid, GridError, ResolutionError, SpaceTimeField,
    chi_above, chi_below, dump_field, field_from_function, load_field, make_cutoff,
    phi_below, random_bandlimited, rho, transform,
)


def test_grid_rejects_bad_sizes():
    with pytest.raises(GridError):
        Grid(2, 48, 1.0)
    with pytest.raises(GridError):
        Grid(4, 16, 1.0)
    with pytest.raises(GridError):
        Grid(1, 16, 0.0)


def test_spacing_and_symmetric_lattice():
    g = Grid(1, 64, 2 * np.pi)
    assert g.h * g.n == g.box_length
    k = np.sort(g.freq_axis())
    # symmetric about zero apart from the single Nyquist mode
    assert np.allclose(k[1:], -k[1:][::-1])
    assert k[0] == -g.nyquist


def test_constant_field_is_dc_only():
    g = Grid(2, 16, 4.0)
    F = transform(Field(g, np.ones(g.shape)), "forward")
    mass = np.abs(F.values)
    assert mass[0, 0] > 0
    assert np.abs(mass.ravel()[1:]).max() == 0.0


def test_character_maps_to_single_mode():
    g = Grid(1, 32, 2 * np.pi)
    x = g.axis()
    F = transform(Field(g, np.exp(3j * x)), "forward")
    idx = np.flatnonzero(np.abs(F.values) > 1e-9)
    assert list(g.freq_axis()[idx]) == [3.0]


def test_wrong_direction_rejected():
    g = Grid(1, 16, 1.0)
    with pytest.raises(ValueError):
        transform(Field(g, np.zeros(16)), "inverse")


@settings(max_examples=25, deadline=None)
@given(d=st.sampled_from([1, 2, 3]), logn=st.integers(2, 4), seed=st.integers(0, 2**31))
def test_round_trip_and_parseval(d, logn, seed):
    g = Grid(d, 2 ** logn, 3.0)
    rng = np.random.default_rng(seed)
    f = Field(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    back = transform(transform(f, "forward"), "inverse")
    assert np.abs(back.values - f.values).max() <= 1e-12 * np.abs(f.values).max()
    assert abs(f.l2() - f.frequency().l2()) <= 1e-12 * f.l2()


def test_spacetime_times_uniform():
    g = Grid(1, 8, 1.0)
    st_ = SpaceTimeField(g, np.zeros((5, 8)), 0.5, 0.25)
    t = st_.times
    assert np.allclose(np.diff(t), 0.25) and t[0] == 0.5
    assert st_.horizon == pytest.approx(1.0)


def test_cutoff_plateau_and_support():
    assert chi_below(np.array([0.0]), 1.0)[0] == 1.0
    assert chi_below(np.array([3.0]), 1.0)[0] == 0.0
    r = np.linspace(0, 5, 1001)
    assert np.abs(chi_below(r, 1.3) + chi_above(r, 1.3) - 1).max() <= 1e-12


def test_phi_below_margin():
    c = -0.5
    assert phi_below(np.array([c]), c)[0] == 1.0
    assert phi_below(np.array([c + DELTA0 + 0.01]), c)[0] == 0.0


def test_rho_profile_support():
    r = np.linspace(0, 6, 6001)
    v = rho(r)
    assert np.all(v[r <= 1 / 8] == 0.0)
    assert np.all(v[r >= 4.5] == 1.0)
    assert np.all(np.diff(v) >= -1e-15)


@pytest.mark.parametrize("kind,params", [("chi_below", {"rho": 1.0}), ("chi_above", {"rho": 0.7}),
                                         ("rho", {"scale": 1.0})])
def test_cutoffs_bounded_and_monotone(kind, params):
    r = np.linspace(0, 8, 4001)
    v = make_cutoff(kind, params, samples=r)
    assert v.min() >= 0.0 and v.max() <= 1.0
    dv = np.diff(v)
    assert np.all(dv <= 1e-15) or np.all(dv >= -1e-15)


def test_cutoff_resolution_error():
    with pytest.raises(ResolutionError):
        make_cutoff("chi_below", {"rho": 0.01}, grid=Grid(1, 32, 10.0))


def test_cutoff_refinement_is_second_order():
    # compare the grid cutoff against a fine reference via linear interpolation
    ref_r = np.linspace(0, 4, 200001)
    ref = chi_below(ref_r, 1.0)
    errs = []
    for n in (64, 128):
        g = Grid(1, n, 8.0)
        x = np.abs(g.axis())
        mid = 0.5 * (x[:-1] + x[1:])
        v = chi_below(x, 1.0)
        lin = 0.5 * (v[:-1] + v[1:])
        errs.append(np.abs(lin - np.interp(mid, ref_r, ref)).max())
    assert errs[0] / errs[1] > 3.0


def test_raw_round_trip_bit_exact(tmp_path, rng):
    g = Grid(2, 8, 2.5)
    f = Field(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    p = tmp_path / "f.raw"
    dump_field(f, p)
    assert len(p.read_bytes()) == 32 + 16 * g.size
    h = load_field(p)
    assert h.grid == g and h.rep == f.rep
    assert np.array_equal(h.values.view(np.uint8), f.values.view(np.uint8))


def test_csv_layout(tmp_path):
    g = Grid(2, 2, 1.0)
    f = Field(g, np.arange(4) + 0.5j)
    p = tmp_path / "f.csv"
    dump_field(f, p, "csv")
    lines = p.read_text().splitlines()
    assert lines[1] == "ix,iy,re,im"
    assert len(lines[2:]) == 4
    assert np.allclose(load_field(p).values, f.values, rtol=1e-16)


def test_truncated_raw_is_format_error(tmp_path):
    g = Grid(1, 8, 1.0)
    p = tmp_path / "f.raw"
    dump_field(Field(g, np.ones(8)), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FieldFormatError):
        load_field(p)
    p.write_bytes(b"garbage!" * 3)
    with pytest.raises(FieldFormatError):
        load_field(p)


def test_field_from_function_and_bandlimit(rng):
    g = Grid(2, 32, 2 * np.pi)
    f = field_from_function(g, lambda x, y: np.cos(x) * np.sin(2 * y))
    assert f.values.shape == (32, 32)
    u = random_bandlimited(g, 5.0, rng)
    spec = np.abs(u.frequency().values)
    assert spec[g.kmag() >= 5.0].max() < 1e-10
