"""Photon budget, cavity contrast, direct-process spin relaxation, cyclicity and readout."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import poisson

from .constants import H_PLANCK, K_B
from .errors import DomainError, FitError


def _unit_interval(**kw):
    for k, v in kw.items():
        if not 0 <= v <= 1:
            raise DomainError(f"{k} must lie in [0, 1]")


def cavity_contrast(eta_cav):
    """On/off-resonance reflection contrast ``(1 - 2 eta)^2``."""
    _unit_interval(eta_cav=eta_cav)
    return (1 - 2 * eta_cav) ** 2


def cavity_efficiency_from_contrast(C, overcoupled=False):
    """Inverse of :func:`cavity_contrast`; the undercoupled branch ``eta <= 1/2`` by default."""
    if not 0 <= C <= 1:
        raise DomainError("contrast must lie in [0, 1]")
    s = np.sqrt(C)
    return (1 + s) / 2 if overcoupled else (1 - s) / 2


@dataclass(frozen=True)
class EfficiencyChain:
    eta_cav: float
    eta_gc: float
    eta_net: float
    eta_det: float
    gating_loss: float = 0.0

    def __post_init__(self):
        _unit_interval(eta_cav=self.eta_cav, eta_gc=self.eta_gc, eta_net=self.eta_net,
                       eta_det=self.eta_det, gating_loss=self.gating_loss)


def photon_budget(chain):
    """``(P1_pre_gating, P1)``; the gating loss is applied last."""
    pre = chain.eta_cav * chain.eta_gc * chain.eta_net * chain.eta_det
    return pre, pre * (1 - chain.gating_loss)


@dataclass(frozen=True)
class HomBudget:
    input_split: float = 0.75
    spool_transmission: float = 0.2
    P1: float = 0.035

    def __post_init__(self):
        _unit_interval(input_split=self.input_split, spool_transmission=self.spool_transmission, P1=self.P1)


def hom_coincidence_prob(budget):
    """Zero-delay two-photon coincidence probability ``0.5 (split P1 T)^2``."""
    return 0.5 * (budget.input_split * budget.P1 * budget.spool_transmission) ** 2


@dataclass(frozen=True)
class DirectProcessPoint:
    spin_frequency: float  # GHz
    temperature: float  # K
    T1: float  # s

    def __post_init__(self):
        if not (self.spin_frequency > 0 and self.temperature >= 0 and self.T1 > 0):
            raise DomainError("frequency and T1 must be positive, temperature non-negative")


def phonon_coth(f_ghz, T):
    """``coth(h f / 2 k_B T)``; 1 at T = 0."""
    f_ghz, T = np.asarray(f_ghz, dtype=float), np.asarray(T, dtype=float)
    with np.errstate(divide="ignore"):
        x = np.where(T > 0, H_PLANCK * f_ghz * 1e9 / (2 * K_B * np.where(T > 0, T, 1.0)), np.inf)
    return np.where(np.isinf(x), 1.0, 1 / np.tanh(np.minimum(x, 700)))


def t1_direct(A_d, f_ghz, T):
    """Direct-process lifetime in s, ``1/T1 = A_d f^5 coth(h f / 2 k_B T)``."""
    return 1 / (A_d * np.asarray(f_ghz, dtype=float) ** 5 * phonon_coth(f_ghz, T))


def t1_direct_fit(points):
    """Best ``A_d`` (s^-1 GHz^-5) for a set of T1 measurements.

    Lifetimes spanning decades are compared on a log scale: the fit minimizes
    ``sum (ln T1_model - ln T1_obs)^2``, whose minimizer is the geometric
    mean of the per-point estimates.
    """
    points = list(points)
    if not points:
        raise DomainError("need at least one point")
    f = np.array([p.spin_frequency for p in points])
    T = np.array([p.temperature for p in points])
    t1 = np.array([p.T1 for p in points])
    per_point = 1 / (t1 * f**5 * phonon_coth(f, T))
    return float(np.exp(np.mean(np.log(per_point))))


def cyclicity_decay(C, n):
    """Fraction of initial count rate left after ``n`` readout pulses, ``exp(-n/C)``."""
    if not C > 0 or np.any(np.asarray(n) < 0):
        raise DomainError("need C > 0 and n >= 0")
    return np.exp(-np.asarray(n, dtype=float) / C)


def fit_cyclicity(n, counts):
    """Fit ``counts = a exp(-n/C)``; returns ``(C, a)``."""
    n, y = np.asarray(n, dtype=float), np.asarray(counts, dtype=float)
    ok = y > 0
    if ok.sum() < 2:
        raise FitError("need at least two positive samples")
    slope, icpt = np.polyfit(n[ok], np.log(y[ok]), 1)
    if slope >= 0:
        raise FitError("trace does not decay")
    sol = least_squares(lambda p: p[1] * np.exp(-n / p[0]) - y, [-1 / slope, np.exp(icpt)],
                        bounds=([1e-9, 0], [np.inf, np.inf]), xtol=1e-14, ftol=1e-14)
    if sol.status <= 0:
        raise FitError(sol.message, last=tuple(sol.x))
    return float(sol.x[0]), float(sol.x[1])


def poisson_readout_fidelity(nbar_bright, nbar_dark, threshold=1):
    """Threshold readout of Poissonian photon counts.

    Returns ``(F_bright, F_dark, F_avg)`` with ``F_bright = P(N >= threshold)``
    for the bright state and ``F_dark = P(N < threshold)`` for the dark state.
    """
    if nbar_bright < 0 or nbar_dark < 0 or threshold < 1:
        raise DomainError("need non-negative means and threshold >= 1")
    fb = float(poisson.sf(threshold - 1, nbar_bright))
    fd = float(poisson.cdf(threshold - 1, nbar_dark))
    return fb, fd, 0.5 * (fb + fd)
