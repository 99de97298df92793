"""Hong-Ou-Mandel coincidence histograms for time-delayed photons.

Photons from successive excitation pulses meet at the output beamsplitter
(reflectance R, transmittance T_bs) of an unbalanced Mach-Zehnder
interferometer whose delay equals the repetition period ``t_rep``. Peak
``i`` of the coincidence histogram sits at ``tau = i t_rep``; the
central peak is suppressed by two-photon interference with weight
``R^2 + T^2 - 2 R T F(tau)`` where ``F`` encodes dephasing.

Units: times in us, sigma in rad/us, omega_m in rad/ms, linewidths in kHz.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, least_squares
from scipy.special import erfcx

from . import rng as _rng
from .errors import DomainError, FitError


def f_lor(T_dep, tau):
    """Pure-dephasing overlap ``exp(-2|tau|/T_dep)``."""
    if not T_dep > 0:
        raise DomainError("T_dep must be positive")
    return np.exp(-2 * np.abs(np.asarray(tau, dtype=float)) / T_dep)


def f_gau(sigma, tau):
    """Slow spectral-diffusion overlap ``exp(-sigma^2 tau^2)``, sigma in rad/us."""
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    return np.exp(-((sigma * np.asarray(tau, dtype=float)) ** 2))


def _tri(x):
    """arcsin(sin x): triangle wave of unit slope, range [-pi/2, pi/2]."""
    return np.abs(np.mod(x - np.pi / 2, 2 * np.pi) - np.pi) - np.pi / 2


def f_mod(A_m, omega_m, tau):
    """Overlap under triangle-wave phase modulation of one interferometer arm.

    Mean over one modulation period of ``cos(dphi)`` with
    ``dphi = (2 A_m / pi) [tri(w (tau + t0)) - tri(w t0)]``. ``dphi`` is
    piecewise linear in ``t0`` with kinks at the triangle-wave vertices, so
    the integral is summed exactly piece by piece:
    ``int cos = L cos(mid) sin(h)/h`` with ``h`` half the phase change.

    Parameters
    ----------
    A_m : float
        Modulation amplitude, rad.
    omega_m : float
        Angular modulation frequency, rad/ms (``2 pi x kHz``).
    tau : array_like
        Delay, us.
    """
    if not omega_m > 0:
        raise DomainError("omega_m must be positive")
    tau = np.asarray(tau, dtype=float)
    d = np.mod(omega_m * 1e-3 * tau.ravel(), 2 * np.pi)
    c = 2 * A_m / np.pi
    # kinks of tri(u) at pi/2, 3pi/2 and of tri(u + d) at pi/2 - d, 3pi/2 - d (mod 2 pi)
    br = np.concatenate([
        np.zeros((d.size, 1)), np.full((d.size, 1), 2 * np.pi),
        np.broadcast_to([np.pi / 2, 1.5 * np.pi], (d.size, 2)),
        np.mod(np.stack([np.pi / 2 - d, 1.5 * np.pi - d], 1), 2 * np.pi),
    ], 1)
    br.sort(1)
    phase = c * (_tri(br + d[:, None]) - _tri(br))
    a, b = phase[:, :-1], phase[:, 1:]
    length = np.diff(br, axis=1)
    out = np.sum(length * np.cos(0.5 * (a + b)) * np.sinc((b - a) / (2 * np.pi)), -1) / (2 * np.pi)
    return out.reshape(tau.shape)


@dataclass(frozen=True)
class NoDephasing:
    def __call__(self, tau):
        return np.ones_like(np.asarray(tau, dtype=float))


@dataclass(frozen=True)
class Lorentzian:
    """Markovian pure dephasing; ``T_dep = inf`` is lifetime-limited."""

    T_dep: float

    def __post_init__(self):
        if not self.T_dep > 0:
            raise DomainError("T_dep must be positive")

    @classmethod
    def from_T2(cls, T2, T1):
        return cls(dephasing_time(T2, T1))

    def __call__(self, tau):
        return f_lor(self.T_dep, tau)


@dataclass(frozen=True)
class Gaussian:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")

    def __call__(self, tau):
        return f_gau(self.sigma, tau)


@dataclass(frozen=True)
class PhaseModulation:
    A_m: float
    omega_m: float = 2 * np.pi * 43.0

    def __post_init__(self):
        if not self.omega_m > 0:
            raise DomainError("omega_m must be positive")

    def __call__(self, tau):
        return f_mod(self.A_m, self.omega_m, tau)


@dataclass(frozen=True)
class PhotonWavepacket:
    """Exponentially decaying single-photon amplitude."""

    T1: float
    center_frequency: float = 0.0  # MHz offset
    phase: float = 0.0

    def __post_init__(self):
        if not self.T1 > 0:
            raise DomainError("T1 must be positive")

    def amplitude(self, t):
        t = np.asarray(t, dtype=float)
        env = np.where(t >= 0, np.exp(-np.clip(t, 0, None) / (2 * self.T1)) / np.sqrt(self.T1), 0.0)
        return env * np.exp(-1j * (2 * np.pi * self.center_frequency * t + self.phase))


@dataclass(frozen=True)
class HomModel:
    """Parameters of the coincidence function ``P(tau)``.

    ``A`` and ``P_dc`` are expected counts per histogram bin at the peak
    apex and in the flat background.
    """

    A: float
    R: float = 0.5
    T_bs: float | None = None
    P_dc: float = 0.0
    t_rep: float = 175.0
    T1: float = 9.1
    dephasing: object = field(default_factory=NoDephasing)
    n_side_peaks: int = 10

    def __post_init__(self):
        if self.T_bs is None:
            object.__setattr__(self, "T_bs", 1.0 - self.R)
        if abs(self.R + self.T_bs - 1) > 1e-9:
            raise DomainError("R + T_bs must equal 1")
        if self.A < 0 or self.P_dc < 0:
            raise DomainError("A and P_dc must be non-negative")
        if not (self.t_rep > 0 and self.T1 > 0):
            raise DomainError("t_rep and T1 must be positive")
        if self.n_side_peaks < 2:
            raise DomainError("need at least two side peaks per side")


def hom_histogram(model, taus):
    """Expected coincidences ``P(tau)`` at the delays ``taus`` (us)."""
    tau = np.asarray(taus, dtype=float)
    m = model
    peak = lambda c: np.exp(-np.abs(tau - c) / m.T1)  # noqa: E731
    P = np.full(tau.shape, float(m.P_dc))
    for k in range(2, m.n_side_peaks + 1):
        P += m.A * (peak(k * m.t_rep) + peak(-k * m.t_rep))
    P += m.A * (1 - m.R**2) * peak(-m.t_rep) + m.A * (1 - m.T_bs**2) * peak(m.t_rep)
    P += m.A * peak(0.0) * (m.R**2 + m.T_bs**2 - 2 * m.R * m.T_bs * m.dephasing(tau))
    return P


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        if e.ndim != 1 or np.any(np.diff(e) <= 0):
            raise DomainError("bin edges must be strictly increasing")
        if c.shape != (len(e) - 1,):
            raise DomainError("need len(counts) == len(edges) - 1")
        if np.any(c < 0):
            raise DomainError("counts must be non-negative")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "counts", c)

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


def simulate_histogram(model, bin_edges, seed=None):
    """Histogram with expected counts ``P(bin center)``; Poisson draws if ``seed`` is given."""
    edges = np.asarray(bin_edges, dtype=float)
    mu = hom_histogram(model, 0.5 * (edges[1:] + edges[:-1]))
    if seed is not None:
        mu = _rng.stream(seed, _rng.TAG_HISTOGRAM).poisson(mu).astype(float)
    return CoincidenceHistogram(edges, mu)


@dataclass(frozen=True)
class VisibilityResult:
    V_raw: float
    V_bg_subtracted: float
    window: float
    acceptance_fraction: float


def estimate_background(hist, t_rep):
    """Mean counts per bin in the valleys, farther than 0.35 t_rep from every peak."""
    c = hist.centers
    off = np.abs(c - t_rep * np.round(c / t_rep))
    sel = off >= 0.35 * t_rep
    if not np.any(sel):
        raise DomainError("histogram has no inter-peak valley")
    return float(np.mean(hist.counts[sel]))


def _peak_sums(hist, t_rep, n_side_peaks, half_width):
    c, n = hist.centers, hist.counts
    lo, hi = hist.bin_edges[0], hist.bin_edges[-1]
    sums, nb = {}, {}
    for i in range(-n_side_peaks, n_side_peaks + 1):
        x0 = i * t_rep
        if x0 - half_width < lo or x0 + half_width > hi:
            continue
        sel = np.abs(c - x0) <= half_width
        sums[i], nb[i] = float(n[sel].sum()), int(sel.sum())
    return sums, nb


def extract_visibility(hist, t_rep, n_side_peaks, window, background=None):
    """Visibility ``1 - 2 A_0 / mean(A_|i|>=2)`` from counts within ``+-window`` of each peak.

    Parameters
    ----------
    hist : CoincidenceHistogram
    t_rep : float
        Peak spacing, us.
    n_side_peaks : int
        Largest peak index considered on each side.
    window : float
        Half-width of the coincidence window, us.
    background : float, optional
        Flat background per bin; estimated from the valleys when omitted.

    Returns
    -------
    VisibilityResult
        ``acceptance_fraction`` is the share of a distinguishable (side) peak
        that falls inside the window, after background subtraction.
    """
    if not window > 0:
        raise DomainError("window must be positive")
    if window > t_rep / 2:
        raise DomainError("window exceeds t_rep/2; peaks overlap")
    if background is None:
        background = estimate_background(hist, t_rep)
    sums, nb = _peak_sums(hist, t_rep, n_side_peaks, window)
    side = [i for i in sums if abs(i) >= 2]
    if 0 not in sums or not ({-2, 2} <= set(side)):
        raise DomainError("histogram must cover the central peak and |i| >= 2 on both sides")
    a_side = np.mean([sums[i] for i in side])
    a_side_bg = np.mean([sums[i] - background * nb[i] for i in side])
    V_raw = 1 - 2 * sums[0] / a_side if a_side > 0 else np.nan
    a0_bg = sums[0] - background * nb[0]
    V_bg = 1 - 2 * a0_bg / a_side_bg if a_side_bg > 0 else np.nan
    full, nfull = _peak_sums(hist, t_rep, n_side_peaks, 0.5 * t_rep * (1 - 1e-12))
    tot = [full[i] - background * nfull[i] for i in side if i in full]
    acc = a_side_bg / np.mean(tot) if tot and np.mean(tot) > 0 else np.nan
    return VisibilityResult(float(V_raw), float(V_bg), float(window), float(np.clip(acc, 0, 1)))


# ---- closed-form visibilities and linewidth conversions

def _check_bs(R, T_bs):
    if abs(R + T_bs - 1) > 1e-9 or not 0 <= R <= 1:
        raise DomainError("need 0 <= R <= 1 and R + T_bs = 1")


def visibility_from_intrinsic(V_int, R=0.5, T_bs=0.5):
    _check_bs(R, T_bs)
    return 1 - 2 * (R**2 + T_bs**2) + 4 * R * T_bs * V_int


def intrinsic_from_visibility(V, R=0.5, T_bs=0.5):
    _check_bs(R, T_bs)
    return (V - 1 + 2 * (R**2 + T_bs**2)) / (4 * R * T_bs)


def visibility_lorentzian(R, T_bs, T1, T2):
    """``V = 1 - 2(R^2 + T^2) + 4 R T T2 / (2 T1)``."""
    if not 0 < T2 <= 2 * T1 * (1 + 1e-12):
        raise DomainError("need 0 < T2 <= 2 T1")
    return visibility_from_intrinsic(T2 / (2 * T1), R, T_bs)


def t2_from_visibility(V, R, T_bs, T1):
    """Inverse of :func:`visibility_lorentzian`."""
    T2 = 2 * T1 * intrinsic_from_visibility(V, R, T_bs)
    if not 0 < T2 <= 2 * T1 * (1 + 1e-12):
        raise DomainError("visibility outside the range reachable by Lorentzian dephasing")
    return T2


def dephasing_time(T2, T1):
    """``1/T_dep = 1/T2 - 1/(2 T1)``; infinite at the lifetime limit."""
    if not 0 < T2 <= 2 * T1 * (1 + 1e-12):
        raise DomainError("need 0 < T2 <= 2 T1")
    rate = 1 / T2 - 1 / (2 * T1)
    return np.inf if rate <= 0 else 1 / rate


def lorentzian_linewidth(T2):
    """Homogeneous FWHM ``1/(pi T2)`` in kHz for T2 in us."""
    return 1e3 / (np.pi * T2)


def intrinsic_visibility_gaussian(sigma, T1):
    """``sqrt(pi) x erfcx(x)`` with ``x = 1/(2 sigma T1)``; 1 at sigma = 0."""
    if sigma < 0 or not T1 > 0:
        raise DomainError("need sigma >= 0 and T1 > 0")
    if sigma == 0:
        return 1.0
    x = 1 / (2 * sigma * T1)
    return float(np.sqrt(np.pi) * x * erfcx(x))


def visibility_gaussian(R, T_bs, T1, sigma):
    return visibility_from_intrinsic(intrinsic_visibility_gaussian(sigma, T1), R, T_bs)


def sigma_from_visibility(V_int, T1):
    """Inverse of :func:`intrinsic_visibility_gaussian` by bracketed root finding (rad/us)."""
    if not 0 < V_int <= 1:
        raise DomainError("V_int must lie in (0, 1]")
    if V_int == 1:
        return 0.0
    f = lambda s: intrinsic_visibility_gaussian(s, T1) - V_int  # noqa: E731
    hi = 1.0 / T1
    while f(hi) > 0:
        hi *= 4
    return brentq(f, 0.0 if f(1e-300) > 0 else 1e-300, hi, xtol=1e-15, rtol=1e-14)


def gaussian_fwhm(sigma):
    """Linear FWHM in kHz of a Gaussian spectral distribution, ``2 sqrt(2 ln 2) sqrt(2) sigma / 2 pi``."""
    return 2 * np.sqrt(2 * np.log(2)) * np.sqrt(2) * sigma / (2 * np.pi) * 1e3


def voigt_width(T1, nu_G):
    """Olivero-Longbothum Voigt FWHM (kHz) for lifetime T1 (us) and Gaussian FWHM nu_G (kHz)."""
    if not T1 > 0 or nu_G < 0:
        raise DomainError("need T1 > 0 and nu_G >= 0")
    fL = 1e3 / (2 * np.pi * T1)
    return 0.535 * fL + np.sqrt(0.217 * fL**2 + nu_G**2)


# ---- fitting

_DEPHASING_PARAM = {Lorentzian: "T_dep", Gaussian: "sigma", PhaseModulation: "A_m"}


def _assemble(model, names, x):
    kw, dk = {}, {}
    for name, v in zip(names, x):
        if name in ("T_dep",):
            dk[name] = float(np.exp(v))
        elif name in ("sigma", "A_m"):
            dk[name] = float(v)
        elif name == "R":
            kw["R"], kw["T_bs"] = float(v), float(1 - v)
        else:
            kw[name] = float(v)
    if dk:
        kw["dephasing"] = replace(model.dephasing, **dk)
    return replace(model, **kw)


def fit_hom(hist, fixed, free=("A", "P_dc")):
    """Poisson-weighted least-squares fit of a HomModel to a histogram.

    Parameters
    ----------
    hist : CoincidenceHistogram
    fixed : HomModel
        Supplies the fixed parameters; the values of the free ones are
        ignored and re-initialized deterministically from the data.
    free : sequence of str
        Any of ``A``, ``R``, ``P_dc`` and the parameter of the dephasing
        model (``T_dep``, ``sigma`` or ``A_m``).

    Returns
    -------
    HomModel
    """
    c, y = hist.centers, hist.counts
    if y.sum() <= 0:
        raise FitError("histogram contains no counts")
    dparam = _DEPHASING_PARAM.get(type(fixed.dephasing))
    for name in free:
        if name not in ("A", "R", "P_dc") and name != dparam:
            raise DomainError(f"parameter {name!r} cannot be fitted with {type(fixed.dephasing).__name__}")
    names = list(free)
    try:
        bg = estimate_background(hist, fixed.t_rep)
    except DomainError:
        bg = float(np.min(y))
    near = lambda x0: np.abs(c - x0) <= max(fixed.T1 / 2, np.min(np.diff(hist.bin_edges)))  # noqa: E731
    tops = [y[near(k * fixed.t_rep)].mean() for k in range(-fixed.n_side_peaks, fixed.n_side_peaks + 1)
            if abs(k) >= 2 and near(k * fixed.t_rep).any()]
    A0 = max(float(np.mean(tops)) - bg, 1.0) if tops else max(float(y.max()) - bg, 1.0)
    init = dict(A=A0, P_dc=max(bg, 0.0), R=0.5, T_dep=np.log(10 * fixed.T1), sigma=0.5 / fixed.T1, A_m=np.pi / 2)
    lo = dict(A=0.0, P_dc=0.0, R=0.0, T_dep=np.log(1e-3 * fixed.T1), sigma=0.0, A_m=0.0)
    hi = dict(A=np.inf, P_dc=np.inf, R=1.0, T_dep=np.log(1e6 * fixed.T1), sigma=100.0 / fixed.T1, A_m=3 * np.pi)

    def resid(x):
        m = hom_histogram(_assemble(fixed, names, x), c)
        return (m - y) / np.sqrt(np.maximum(m, 1.0))

    x0 = np.array([init[n] for n in names], dtype=float)
    if "A_m" in names:
        # F_mod is not monotone in A_m: seed the local fit from a coarse scan
        k = names.index("A_m")
        best = None
        for a in np.linspace(0.05, 1.5, 30) * np.pi:
            x0[k] = a
            r = resid(x0)
            if best is None or r @ r < best[0]:
                best = (r @ r, a)
        x0[k] = best[1]
    sol = least_squares(resid, x0, bounds=([lo[n] for n in names], [hi[n] for n in names]),
                        x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitError(f"HOM fit did not converge: {sol.message}", last=_assemble(fixed, names, sol.x))
    return _assemble(fixed, names, sol.x)
