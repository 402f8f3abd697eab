"""Acceptance criteria 1-13, each at its stated tolerance.

Every test prints one ``Cnn PASS|FAIL`` line with the measured numbers,
so a run of ``pytest -v`` doubles as the acceptance report.
"""

import pytest

from ultrahyp.acceptance import run_criterion


def _check(number, capsys):
    res = run_criterion(number)
    with capsys.disabled():
        print("\n" + res.line() + f" ({res.seconds:.1f}s)")
    assert res.passed, res.line()


def test_c01_hamiltonian_conservation(capsys):
    _check(1, capsys)


@pytest.mark.slow
def test_c02_flat_nontrapping_chord_time(capsys):
    _check(2, capsys)


def test_c03_flat_asymptotics(capsys):
    _check(3, capsys)


def test_c04_perturbation_stability(capsys):
    _check(4, capsys)


def test_c05_bony_partition_envelopes(capsys):
    _check(5, capsys)


@pytest.mark.slow
def test_c06_quantization_oracles_and_calculus(capsys):
    _check(6, capsys)


@pytest.mark.slow
def test_c07_high_frequency_bound_uniform_in_R(capsys):
    _check(7, capsys)


@pytest.mark.slow
def test_c08_positive_commutators_and_sabotage(capsys):
    _check(8, capsys)


@pytest.mark.slow
def test_c09_approximate_inverse_slope(capsys):
    _check(9, capsys)


def test_c10_solver_oracles(capsys):
    _check(10, capsys)


def test_c11_local_smoothing_signature(capsys):
    _check(11, capsys)


@pytest.mark.slow
def test_c12_paradifferential_remainder(capsys):
    _check(12, capsys)


@pytest.mark.slow
def test_c13_nonlinear_iteration(capsys):
    _check(13, capsys)
