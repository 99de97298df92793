import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from emitterlab import hom
from emitterlab.errors import DomainError, FitError

W43 = 2 * np.pi * 43.0  # rad/ms
PERIOD = 2 * np.pi / W43 * 1e3  # us


def fmod_brute(A_m, omega_m, tau, n=200_000):
    """Dense midpoint rule over one period with arcsin(sin) triangle waves."""
    w = omega_m * 1e-3
    t0 = (np.arange(n) + 0.5) / n * (2 * np.pi / w)
    tri = lambda x: np.arcsin(np.sin(x))  # noqa: E731
    return np.mean(np.cos(2 * A_m / np.pi * (tri(w * (tau + t0)) - tri(w * t0))))


# ---- dephasing functions

def test_f_lor_values():
    assert hom.f_lor(96.0, 0.0) == 1.0
    assert hom.f_lor(96.0, 48.0) == pytest.approx(np.exp(-1))


def test_dephasing_time_from_t2():
    # 1/T_dep = 1/15.3 - 1/18.2
    assert hom.dephasing_time(15.3, 9.1) == pytest.approx(96.02, abs=0.01)
    assert hom.dephasing_time(18.2, 9.1) == np.inf


def test_f_gau_values():
    assert np.all(hom.f_gau(0.0, np.linspace(-50, 50, 11)) == 1.0)
    assert hom.f_gau(0.039, 1 / 0.039) == pytest.approx(np.exp(-1))


def test_f_mod_limits():
    tau = np.linspace(-40, 40, 33)
    assert np.allclose(hom.f_mod(0.0, W43, tau), 1.0, atol=1e-14)
    assert hom.f_mod(0.73 * np.pi, W43, PERIOD) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("A_m", [0.3, 0.73 * np.pi, 2.0 * np.pi])
@pytest.mark.parametrize("tau", [0.0, 1.7, 5.0, 11.6, 17.3])
def test_f_mod_vs_brute_force(A_m, tau):
    assert hom.f_mod(A_m, W43, tau) == pytest.approx(fmod_brute(A_m, W43, tau), abs=1e-8)


@given(st.floats(0.01, 3 * np.pi))
def test_f_mod_half_period_closed_form(A_m):
    # at half a period the two triangle waves are opposite: mean of cos(2 c x) over x ~ U(-pi/2, pi/2)
    assert hom.f_mod(A_m, W43, PERIOD / 2) == pytest.approx(np.sin(2 * A_m) / (2 * A_m), abs=1e-10)


def test_f_mod_073pi_shape():
    tau = np.linspace(0, PERIOD, 2001)
    F = hom.f_mod(0.73 * np.pi, W43, tau)
    assert F[1000] == pytest.approx(np.sin(1.46 * np.pi) / (1.46 * np.pi), abs=1e-10)
    # the dip is a single well symmetric about the half period
    assert np.allclose(F, F[::-1], atol=1e-10)
    assert F.min() < 0


@given(st.floats(0, 3 * np.pi), st.floats(-100, 100), st.integers(-3, 3))
def test_f_mod_even_and_periodic(A_m, tau, k):
    f = hom.f_mod(A_m, W43, tau)
    assert hom.f_mod(A_m, W43, -tau) == pytest.approx(f, abs=1e-10)
    assert hom.f_mod(A_m, W43, tau + k * PERIOD) == pytest.approx(f, abs=1e-9)
    assert abs(f) <= 1 + 1e-12


@given(st.floats(0.1, 1e4), st.floats(0, 10), st.floats(-1e3, 1e3))
def test_f_bounds(T_dep, sigma, tau):
    for v in (hom.f_lor(T_dep, tau), hom.f_gau(sigma, tau)):
        assert 0 <= v <= 1


# ---- histogram model

def _model(**kw):
    base = dict(A=100.0, R=0.5, P_dc=0.0, t_rep=175.0, T1=9.1, dephasing=hom.NoDephasing())
    base.update(kw)
    return hom.HomModel(**base)


def test_central_peak_vanishes_when_ideal():
    m = _model(P_dc=2.0)
    tau = np.linspace(-60, 60, 241)
    side = 2.0 + 100 * (0.75 * np.exp(-np.abs(tau + 175) / 9.1) + 0.75 * np.exp(-np.abs(tau - 175) / 9.1))
    side += sum(100 * (np.exp(-np.abs(tau - k * 175) / 9.1) + np.exp(-np.abs(tau + k * 175) / 9.1))
                for k in range(2, 11))
    assert np.allclose(hom.hom_histogram(m, tau), side, rtol=1e-13)


@pytest.mark.parametrize("R,T_dep", [(0.5, 96.0), (0.43, 96.0), (0.43, 5.0), (0.3, 1000.0)])
def test_central_area_closed_form(R, T_dep):
    T1 = 9.1
    m = _model(R=R, t_rep=4000.0, dephasing=hom.Lorentzian(T_dep))
    f = lambda x: hom.hom_histogram(m, x)  # noqa: E731
    c = quad(f, -400, 400, points=[0.0], limit=500, epsabs=1e-12)[0]
    s = quad(f, 4000 * 3 - 400, 4000 * 3 + 400, points=[12000.0], limit=500, epsabs=1e-12)[0]
    T = 1 - R
    assert c / s == pytest.approx(R**2 + T**2 - 2 * R * T * T_dep / (2 * T1 + T_dep), abs=1e-6)
    A0 = 100 * (2 * T1 * (R**2 + T**2) - 4 * R * T * T1 * T_dep / (2 * T1 + T_dep))
    assert c == pytest.approx(A0, rel=1e-6)


def test_side_peak_asymmetry():
    m = _model(R=0.43)
    f = lambda x: hom.hom_histogram(m, x)  # noqa: E731
    am1 = quad(f, -175 - 80, -175 + 80, points=[-175.0])[0]
    ap1 = quad(f, 175 - 80, 175 + 80, points=[175.0])[0]
    # the peak at -t_rep carries 1 - R^2, the one at +t_rep carries 1 - T^2
    assert am1 / ap1 == pytest.approx((1 - 0.43**2) / (1 - 0.57**2), rel=1e-4)
    assert ap1 / am1 == pytest.approx(0.82, abs=0.01)


@given(st.floats(0, 1), st.floats(0, 50), st.floats(0.5, 500), st.floats(0, 3 * np.pi),
       st.sampled_from(["lor", "gau", "mod"]))
def test_histogram_above_background(R, P_dc, T_dep, A_m, kind):
    dep = {"lor": hom.Lorentzian(T_dep), "gau": hom.Gaussian(1 / T_dep), "mod": hom.PhaseModulation(A_m)}[kind]
    m = _model(R=R, P_dc=P_dc, dephasing=dep)
    tau = np.linspace(-400, 400, 801)
    assert np.all(hom.hom_histogram(m, tau) >= P_dc - 1e-12)


def test_wavepacket_normalized():
    wp = hom.PhotonWavepacket(9.1)
    assert quad(lambda t: abs(wp.amplitude(t)) ** 2, 0, np.inf)[0] == pytest.approx(1.0, rel=1e-9)


# ---- closed-form visibilities

def test_lorentzian_visibility_limits():
    assert hom.visibility_lorentzian(0.5, 0.5, 9.1, 18.2) == pytest.approx(1.0)
    assert hom.visibility_from_intrinsic(1.0, 0.43, 0.57) == pytest.approx(0.96, abs=0.005)


def test_t2_inversion():
    T2 = hom.t2_from_visibility(0.84, 0.5, 0.5, 9.1)
    assert T2 == pytest.approx(15.3, abs=0.2)
    assert 20.4 <= hom.lorentzian_linewidth(T2) <= 21.0


def _v_quad(F, T1):
    num = quad(lambda t: np.exp(-t / T1) * F(t), 0, np.inf, limit=400, epsabs=1e-13, epsrel=1e-12)[0]
    return num / T1


@given(st.floats(1e-3, 1.0), st.floats(1, 20))
def test_lorentzian_quadrature(frac, T1):
    T2 = frac * 2 * T1
    Tdep = hom.dephasing_time(T2, T1)
    F = (lambda t: 1.0) if np.isinf(Tdep) else (lambda t: hom.f_lor(Tdep, t))
    assert hom.visibility_lorentzian(0.5, 0.5, T1, T2) == pytest.approx(_v_quad(F, T1), abs=1e-6)


@given(st.floats(1e-3, 10), st.floats(1, 20))
def test_gaussian_quadrature(sT1, T1):
    s = sT1 / T1
    assert hom.intrinsic_visibility_gaussian(s, T1) == pytest.approx(_v_quad(lambda t: hom.f_gau(s, t), T1), abs=1e-6)


def test_gaussian_values():
    assert hom.intrinsic_visibility_gaussian(0.0, 9.1) == 1.0
    assert hom.intrinsic_visibility_gaussian(1e-9, 9.1) == pytest.approx(1.0, abs=1e-7)
    assert hom.visibility_gaussian(0.5, 0.5, 9.1, 0.039) == pytest.approx(0.84, abs=0.005)
    s = hom.sigma_from_visibility(0.84, 9.1)
    assert s == pytest.approx(0.039, abs=0.002)
    assert hom.intrinsic_visibility_gaussian(s, 9.1) == pytest.approx(0.84, abs=1e-12)
    assert hom.gaussian_fwhm(s) == pytest.approx(21.0, abs=1.0)


def test_voigt():
    assert hom.voigt_width(9.1, 0.0) == pytest.approx((0.535 + np.sqrt(0.217)) * 1e3 / (2 * np.pi * 9.1))
    assert hom.voigt_width(9.2, 21.0) == pytest.approx(31.4, abs=0.5)


@given(st.floats(0, 100), st.floats(0.01, 10))
def test_voigt_monotone(nu, dnu):
    assert hom.voigt_width(9.2, nu + dnu) > hom.voigt_width(9.2, nu)


# ---- visibility extraction

def _edges(bw=0.1, span=2000.0):
    return np.arange(-span, span + bw / 2, bw)


def test_extract_recovers_closed_form():
    T2 = 15.3
    m = _model(dephasing=hom.Lorentzian.from_T2(T2, 9.1))
    h = hom.simulate_histogram(m, _edges())
    v = hom.extract_visibility(h, 175.0, 10, 6 * 9.1, background=0.0)
    assert v.V_bg_subtracted == pytest.approx(T2 / 18.2, rel=0.01)
    vinf = hom.extract_visibility(h, 175.0, 10, 87.0, background=0.0)
    assert vinf.V_bg_subtracted == pytest.approx(T2 / 18.2, abs=2e-3)


def test_distinguishable_photons():
    m = _model(A=400.0, P_dc=1.0, dephasing=hom.Gaussian(1e6))
    h = hom.simulate_histogram(m, _edges(0.5), seed=4)
    v = hom.extract_visibility(h, 175.0, 10, 3 * 9.1)
    assert abs(v.V_bg_subtracted) < 0.03


def test_acceptance_fraction_one_lifetime():
    m = _model(P_dc=0.5)
    h = hom.simulate_histogram(m, _edges(0.05))
    v = hom.extract_visibility(h, 175.0, 10, 9.1)
    assert v.acceptance_fraction == pytest.approx(1 - np.exp(-1), abs=0.01)


def test_background_subtraction():
    m = _model(P_dc=3.0, dephasing=hom.Lorentzian(96.0))
    h = hom.simulate_histogram(m, _edges(0.5))
    # valleys start 0.35 t_rep from the peaks; residual peak tails bias the estimate upward
    tail = 2 * 100 * np.exp(-0.35 * 175 / 9.1)
    assert 3.0 <= hom.estimate_background(h, 175.0) <= 3.0 + tail
    v = hom.extract_visibility(h, 175.0, 10, 30.0)
    assert v.V_bg_subtracted > v.V_raw


def test_extract_validation():
    h = hom.simulate_histogram(_model(), _edges(1.0, 300.0))
    with pytest.raises(DomainError):
        hom.extract_visibility(h, 175.0, 10, 9.1, background=0.0)
    with pytest.raises(DomainError):
        hom.extract_visibility(h, 175.0, 10, 100.0)


# ---- fits

def test_fit_lorentzian_tdep():
    truth = _model(A=200.0, P_dc=0.5, R=0.43, dephasing=hom.Lorentzian.from_T2(15.3, 9.1))
    h = hom.simulate_histogram(truth, _edges(0.5, 1000.0))
    fit = hom.fit_hom(h, truth, ("A", "P_dc", "T_dep"))
    assert fit.dephasing.T_dep == pytest.approx(truth.dephasing.T_dep, rel=0.03)
    assert fit.A == pytest.approx(200.0, rel=1e-4)


def test_fit_modulation_noiseless():
    truth = _model(A=50.0, P_dc=0.2, R=0.43, dephasing=hom.PhaseModulation(0.73 * np.pi))
    h = hom.simulate_histogram(truth, _edges(0.5, 1000.0))
    fit = hom.fit_hom(h, _model(R=0.43, dephasing=hom.PhaseModulation(1.0)), ("A", "P_dc", "A_m"))
    assert fit.dephasing.A_m == pytest.approx(0.73 * np.pi, abs=1e-4)


def test_fit_zero_counts():
    h = hom.CoincidenceHistogram(_edges(1.0, 500.0), np.zeros(1000))
    with pytest.raises(FitError):
        hom.fit_hom(h, _model())


def test_fit_rejects_wrong_parameter():
    h = hom.simulate_histogram(_model(), _edges(1.0, 1000.0))
    with pytest.raises(DomainError):
        hom.fit_hom(h, _model(), ("A", "sigma"))


def test_simulation_deterministic():
    m = _model(P_dc=1.0)
    a = hom.simulate_histogram(m, _edges(1.0, 500.0), seed=9).counts
    b = hom.simulate_histogram(m, _edges(1.0, 500.0), seed=9).counts
    assert np.array_equal(a, b)
