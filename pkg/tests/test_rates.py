import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import constants as sc

from emitterlab import rates
from emitterlab.errors import DomainError, FitError


def test_contrast():
    assert rates.cavity_contrast(0.5) == 0.0
    assert rates.cavity_contrast(0.26) == pytest.approx(0.2304)
    assert rates.cavity_efficiency_from_contrast(0.2304) == pytest.approx(0.26)
    assert rates.cavity_efficiency_from_contrast(0.2304, overcoupled=True) == pytest.approx(0.74)


@given(st.floats(0, 0.5))
def test_contrast_roundtrip(eta):
    assert rates.cavity_efficiency_from_contrast(rates.cavity_contrast(eta)) == pytest.approx(eta, abs=1e-12)


def test_photon_budget():
    pre, post = rates.photon_budget(rates.EfficiencyChain(0.26, 0.36, 0.61, 0.85, 0.07))
    assert pre == pytest.approx(0.049, abs=0.001)
    assert post == pytest.approx(0.045, abs=0.001)
    assert rates.photon_budget(rates.EfficiencyChain(0.26, 0.0, 0.61, 0.85, 0.07))[1] == 0
    assert rates.photon_budget(rates.EfficiencyChain(1, 1, 1, 1, 0)) == (1, 1)


unit = st.floats(0, 1)


@given(unit, unit, unit, unit, unit, st.integers(0, 4), st.floats(0, 0.5))
def test_budget_monotone(a, b, c, d, gl, k, bump):
    x = [a, b, c, d]
    lo = rates.photon_budget(rates.EfficiencyChain(*x, gl))[1]
    x[k % 4] = min(1.0, x[k % 4] + bump)
    assert rates.photon_budget(rates.EfficiencyChain(*x, gl))[1] >= lo


def test_hom_coincidence():
    assert rates.hom_coincidence_prob(rates.HomBudget(0.75, 0.2, 0.035)) == pytest.approx(1.4e-5, abs=0.05e-5)
    assert rates.hom_coincidence_prob(rates.HomBudget(0.75, 0.2, 0.0)) == 0
    p1 = 0.3
    assert rates.hom_coincidence_prob(rates.HomBudget(0.75, 0.2, p1)) == pytest.approx(0.01125 * p1**2)


def _per_point(f, T, t1):
    x = sc.h * f * 1e9 / (2 * sc.k * T)
    return 1 / (t1 * f**5 / np.tanh(x))


def test_t1_fit_two_measurements():
    pts = [rates.DirectProcessPoint(7.0, 0.47, 3.7), rates.DirectProcessPoint(11.08, 0.47, 0.393)]
    A = rates.t1_direct_fit(pts)
    assert A == pytest.approx(6.4e-6, rel=0.25)
    assert A == pytest.approx(np.sqrt(_per_point(7.0, 0.47, 3.7) * _per_point(11.08, 0.47, 0.393)), rel=1e-12)


def test_t1_zero_temperature_point():
    A = rates.t1_direct_fit([rates.DirectProcessPoint(7.881, 0.0, 4.8)])
    assert A == pytest.approx(1 / (4.8 * 7.881**5), rel=1e-12)
    assert A == pytest.approx(7.2e-6, rel=0.05)


def test_f5_law():
    assert rates.t1_direct(6.4e-6, 5.0, 0.0) / rates.t1_direct(6.4e-6, 10.0, 0.0) == pytest.approx(32)


@given(st.floats(1e-7, 1e-4), st.lists(st.tuples(st.floats(1, 20), st.floats(0, 5)), min_size=1, max_size=6))
def test_t1_fit_noiseless(A, grid):
    pts = [rates.DirectProcessPoint(f, T, float(rates.t1_direct(A, f, T))) for f, T in grid]
    assert rates.t1_direct_fit(pts) == pytest.approx(A, rel=1e-10)


@given(st.floats(0.1, 50), st.floats(0, 5), st.floats(0.01, 5))
def test_coth_and_monotone(f, T, dT):
    assert rates.phonon_coth(f, T) >= 1
    assert rates.t1_direct(1e-5, f, T + dT) <= rates.t1_direct(1e-5, f, T)


def test_cyclicity():
    assert rates.cyclicity_decay(1030, 0) == 1
    n = np.arange(0, 3000, 10)
    C, a = rates.fit_cyclicity(n, 40 * rates.cyclicity_decay(1030, n))
    assert C == pytest.approx(1030, rel=0.01) and a == pytest.approx(40)
    assert 1030 * np.log(2) == pytest.approx(714, abs=1)
    assert rates.cyclicity_decay(1030, 1030 * np.log(2)) == pytest.approx(0.5)
    with pytest.raises(FitError):
        rates.fit_cyclicity([0, 1, 2], [1, 1, 1])


def test_readout_fidelity():
    fb, fd, fa = rates.poisson_readout_fidelity(6.4, 0.0, 1)
    assert fb == pytest.approx(1 - np.exp(-6.4))
    assert fb == pytest.approx(0.9983, abs=1e-4)
    assert fd == 1.0
    assert rates.poisson_readout_fidelity(200.0, 0.0)[0] == pytest.approx(1.0)


@given(st.floats(0.01, 30), st.integers(1, 40))
def test_readout_symmetric(nbar, k):
    fb, fd, fa = rates.poisson_readout_fidelity(nbar, nbar, k)
    assert fa == pytest.approx(0.5, abs=1e-12)
    # direct summation of the Poisson pmf
    pmf = [np.exp(-nbar) * nbar**i / np.prod(np.arange(1, i + 1, dtype=float)) for i in range(k)]
    assert fd == pytest.approx(sum(pmf), rel=1e-9)


def test_validation():
    with pytest.raises(DomainError):
        rates.cavity_contrast(1.5)
    with pytest.raises(DomainError):
        rates.DirectProcessPoint(-1, 0.5, 1)
    with pytest.raises(DomainError):
        rates.t1_direct_fit([])
