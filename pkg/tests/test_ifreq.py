import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afd_ecg.afd import AFDDecomposition, SearchGrid, decompose, tm_basis
from afd_ecg.analytic import analytic_signal, circle_grid
from afd_ecg.ifreq import (evaluator_phase_term, instantaneous_frequency, numeric_phase_derivative,
                           phase_derivative, poisson_term, tfr, write_tfr_csv)

REFINE = 64


def refined_numeric_if(poles, n, M, refine=REFINE):
    """Numeric oracle on a grid ``refine`` times finer, read back at the M points."""
    mono = tm_basis(poles, n, M * refine)
    return numeric_phase_derivative(mono)[::refine]


def test_all_zero_poles_give_integer_frequencies():
    for n in range(1, 11):
        np.testing.assert_allclose(phase_derivative(np.zeros(10), n, circle_grid(301)), n - 1,
                                   atol=1e-9)


def test_hand_value():
    assert evaluator_phase_term(0.5, 0.0) == pytest.approx(1.0)
    assert poisson_term(0.5, 0.0) == pytest.approx(3.0)   # (1-.25)/(1-1+.25)


def test_poisson_term_differs_from_printed_typo():
    # the misprinted denominator 1 - r cos + r^2 would give 0.75/0.75 = 1 here
    assert poisson_term(0.5, 0.0) != pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 0.999), st.floats(-np.pi, np.pi), st.floats(0, 2 * np.pi))
def test_poisson_term_positive(r, th, t):
    assert poisson_term(r * np.exp(1j * th), t) > 0


def test_index_errors():
    with pytest.raises(IndexError):
        phase_derivative([0, 0.2], 3, 0.0)
    d = decompose(analytic_signal(np.cos(circle_grid(64))), 2)
    with pytest.raises(IndexError):
        instantaneous_frequency(d, 0)


def test_numeric_oracle_examples():
    t = circle_grid(301)
    np.testing.assert_allclose(numeric_phase_derivative(np.exp(3j * t))[1:-1], 3.0, atol=1e-6)
    ref = 1 + 0.3 * np.cos(t)
    got = numeric_phase_derivative(np.exp(1j * (t + 0.3 * np.sin(t))))
    assert np.max(np.abs(got - ref)[1:-1]) < 1e-3
    np.testing.assert_allclose(numeric_phase_derivative(np.full(16, 2 - 1j)), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        numeric_phase_derivative(np.r_[np.ones(5), 0.0])


def test_single_pole_cross_check():
    M = 301
    t = circle_grid(M)
    closed = phase_derivative([0.5], 1, t)
    assert closed[0] == pytest.approx(1.0)
    assert np.max(np.abs(closed - refined_numeric_if([0.5], 1, M))[1:-1]) < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_closed_form_matches_numeric(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 11))
    poles = 0.9 * np.sqrt(rng.uniform(size=N)) * np.exp(2j * np.pi * rng.uniform(size=N))
    t = circle_grid(301)
    for n in range(1, N + 1):
        err = np.abs(phase_derivative(poles, n, t) - refined_numeric_if(poles, n, 301))
        assert err[1:-1].max() < 1e-3


def test_closed_form_on_ecg_like_decomposition():
    rng = np.random.default_rng(3)
    s = np.convolve(rng.standard_normal(320), np.hanning(20), "valid")[:301]
    d = decompose(analytic_signal(s), 10, SearchGrid.for_length(301, r_max=0.9))
    for n in range(1, 11):
        err = np.abs(instantaneous_frequency(d, n) - refined_numeric_if(d.poles, n, 301))
        assert err[1:-1].max() < 1e-3


def test_coarse_grid_central_difference_is_not_enough():
    # documents why the oracle samples more finely than the signal grid
    a = 0.9
    t = circle_grid(301)
    coarse = numeric_phase_derivative(tm_basis([a], 1, 301))
    assert np.max(np.abs(coarse - phase_derivative([a], 1, t))[1:-1]) > 1e-3


# -- TFR ----------------------------------------------------------------------

def _decomp(poles, coeffs, M=128):
    return AFDDecomposition(poles, coeffs, M, np.zeros(len(poles) + 1), 1.0)


def test_tfr_single_monomial():
    d = _decomp([0, 0], [0, 1.5 - 0.5j])
    g = tfr(d, freq_bins=8, f_max=4.0)   # width 0.5, so 1.0 opens bin 2
    assert g.energy.shape == (128, 8)
    np.testing.assert_allclose(g.energy[:, 2], abs(1.5 - 0.5j) ** 2)
    assert np.count_nonzero(g.energy[:, [0, 1, 3, 4, 5, 6, 7]]) == 0


def test_tfr_disjoint_ridges():
    poles = [0, 0.3]
    d = _decomp(poles, [1.0, 0.7])
    t = circle_grid(128)
    f2 = phase_derivative(poles, 2, t)
    assert f2.min() > 0.5                          # component 1 sits at 0
    g = tfr(d, freq_bins=np.linspace(0, 3, 31))
    ridge1 = np.flatnonzero(g.energy[:, :5].sum(axis=0))
    ridge2 = np.flatnonzero(g.energy[:, 5:].sum(axis=0))
    assert ridge1.tolist() == [0] and ridge2.size > 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 64))
def test_tfr_marginal_conservation(seed, bins):
    rng = np.random.default_rng(seed)
    s = np.convolve(rng.standard_normal(140), np.hanning(12), "valid")[:128]
    d = decompose(analytic_signal(s), 6)
    g = tfr(d, freq_bins=bins)
    expected = sum(np.abs(d.component(n)) ** 2 for n in range(1, 7))
    np.testing.assert_allclose(g.marginal(), expected, rtol=1e-12, atol=1e-15)
    assert np.all(g.energy >= 0)


def test_tfr_single_bin_is_energy_curve():
    s = np.sin(3 * circle_grid(64)) + 0.2
    d = decompose(analytic_signal(s), 4)
    g = tfr(d, 1, f_max=100.0)
    assert g.energy.shape == (64, 1)
    np.testing.assert_allclose(g.energy[:, 0],
                               sum(np.abs(d.component(n)) ** 2 for n in range(1, 5)))


def test_tfr_clamps_and_counts(caplog):
    d = _decomp([0, 0, 0, 0], [1, 1, 1, 1])   # IFs 0, 1, 2, 3
    with caplog.at_level(logging.WARNING):
        g = tfr(d, freq_bins=np.array([0.5, 1.5, 2.5]))
    assert g.clamped == 2 * 128
    assert "clamped" in caplog.text
    np.testing.assert_allclose(g.marginal(), 4.0)


def test_tfr_bad_bins():
    d = _decomp([0], [1])
    with pytest.raises(ValueError):
        tfr(d, 0)
    with pytest.raises(ValueError):
        tfr(d, np.array([1.0]))
    with pytest.raises(ValueError):
        tfr(d, np.array([0.0, 2.0, 1.0]))


def test_tfr_csv(tmp_path):
    d = _decomp([0, 0.2], [1, 0.5], M=301)
    g = tfr(d, 16)
    write_tfr_csv(g, tmp_path / "g.csv", sample_rate=360)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0].startswith("# freq_unit=cycles_per_segment hz_per_unit=1.196")
    head = lines[1].split(",")
    assert head[:2] == ["t_rad", "t_s"] and len(head) == 18
    body = np.loadtxt(tmp_path / "g.csv", delimiter=",", skiprows=2)
    assert body.shape == (301, 18)
    np.testing.assert_allclose(body[:, 2:], g.energy, rtol=1e-9)
