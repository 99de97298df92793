"""Central-spin coherence by cluster-correlation expansion.

Each nuclear spin evolves under one of two conditional Hamiltonians,
``h_+- = +-(A_par I_z + A_perp I_x) + f_L I_z``, selected by the electron
state. A pulse sequence is a list of free-evolution segments; every
pi pulse swaps the conditioning. The coherence of a cluster is
``Tr(U_1^+ U_0) / d`` with ``U_0``/``U_1`` the propagators of the two
electron branches.

Couplings are linear frequencies in kHz and times are in us; the factor
``2 pi 1e-3`` converting kHz*us to radians is applied inside propagators.
For Hahn and XY sequences the time axis is the total free evolution.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .constants import H_PLANCK, MU0_4PI, khz_per_gauss_to_hz_per_tesla
from .errors import DomainError, FitError

KHZ_US = 2 * np.pi * 1e-3
_CHUNK = 2000


@dataclass(frozen=True)
class PulseSequence:
    """Ideal instantaneous pi pulses, equally spaced (CPMG timing).

    ``kind`` is ``"ramsey"``, ``"hahn"`` or ``"xy"``; ``n`` is the number of
    pi pulses (0, 1, or a positive multiple of 4 respectively).
    """

    kind: str = "hahn"
    n: int = 1

    def __post_init__(self):
        expected = {"ramsey": 0, "hahn": 1}
        if self.kind in expected:
            object.__setattr__(self, "n", expected[self.kind])
        elif self.kind == "xy":
            if self.n < 1 or self.n % 4:
                raise DomainError("XY-N needs N a positive multiple of 4")
        else:
            raise DomainError(f"unknown sequence kind {self.kind!r}")

    @classmethod
    def ramsey(cls):
        return cls("ramsey", 0)

    @classmethod
    def hahn(cls):
        return cls("hahn", 1)

    @classmethod
    def xy(cls, n):
        return cls("xy", n)

    def segments(self):
        """Fractions of the total time and the branch-0 sign of each segment."""
        if self.n == 0:
            return np.array([1.0]), np.array([1])
        f = np.full(self.n + 1, 1.0 / self.n)
        f[0] = f[-1] = 0.5 / self.n
        return f, (-1) ** np.arange(self.n + 1)

    @property
    def label(self):
        return {"ramsey": "Ramsey", "hahn": "Hahn"}.get(self.kind, f"XY-{self.n}")


@dataclass(frozen=True)
class CoherenceCurve:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise DomainError("times and values must be 1-D of equal length")
        if np.any(np.diff(t) <= 0):
            raise DomainError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __mul__(self, other):
        if not np.array_equal(self.times, other.times):
            raise DomainError("curves sampled on different time grids")
        return CoherenceCurve(self.times, self.values * other.values)


@dataclass(frozen=True)
class StretchedExpFit:
    T2: float
    n: float
    residual: float

    def __call__(self, t):
        return np.exp(-((np.asarray(t) / self.T2) ** self.n))


@dataclass(frozen=True)
class HyperfineFitResult:
    A_par: float
    A_perp: float
    cost: float


def _times(times):
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or np.any(t < 0):
        raise DomainError("times must be a 1-D array of non-negative values")
    return t


# ---- single spins: SU(2) as unit quaternions (q0, q) meaning q0 - i q.sigma

def _qmul(a, b):
    a0, av = a[..., 0], a[..., 1:]
    b0, bv = b[..., 0], b[..., 1:]
    s = a0 * b0 - np.sum(av * bv, -1)
    v = a0[..., None] * bv + b0[..., None] * av + np.cross(av, bv)
    return np.concatenate([s[..., None], v], -1)


def _qprop(omega, t):
    """exp(-i t omega.sigma/2) for omega (S, 3) rad/us and t (T,) us -> (S, T, 4)."""
    w = np.linalg.norm(omega, axis=1)
    th = 0.5 * w[:, None] * t[None, :]
    nhat = np.divide(omega, w[:, None], out=np.zeros_like(omega), where=w[:, None] > 0)
    return np.concatenate([np.cos(th)[..., None], np.sin(th)[..., None] * nhat[:, None, :]], -1)


def _single_signals(A_par, A_perp, larmor, seq, t):
    """Per-spin coherence (S, T); real by construction."""
    A_par, A_perp = np.atleast_1d(A_par).astype(float), np.atleast_1d(A_perp).astype(float)
    om = {s: KHZ_US * np.stack([s * A_perp, np.zeros_like(A_perp), larmor + s * A_par], 1) for s in (1, -1)}
    frac, signs = seq.segments()
    U = [None, None]
    for f, s in zip(frac, signs):
        for branch, sb in ((0, s), (1, -s)):
            q = _qprop(om[sb], f * t)
            U[branch] = q if U[branch] is None else _qmul(q, U[branch])
    return np.sum(U[0] * U[1], -1)


def single_spin_signal(spin, larmor, seq, times):
    """Coherence of one nuclear spin (maximally mixed) under ``seq``.

    Parameters
    ----------
    spin : BathSpin
    larmor : float
        kHz.
    seq : PulseSequence
    times : array_like
        Total free-evolution times, us.
    """
    t = _times(times)
    return CoherenceCurve(t, _single_signals(spin.A_par, spin.A_perp, larmor, seq, t)[0])


def _chunked_product(func, n, workers, chunk=_CHUNK):
    """Ordered product of ``func(slice)`` over chunks of ``range(n)``."""
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if workers and workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(func, slices))
    else:
        parts = [func(s) for s in slices]
    out = parts[0]
    for p in parts[1:]:
        out = out * p
    return out


def cce1(bath, seq, times, workers=1):
    """First-order CCE: product of single-spin signals."""
    t = _times(times)
    if len(bath) == 0:
        return CoherenceCurve(t, np.ones_like(t))
    f = lambda s: np.prod(_single_signals(bath.A_par[s], bath.A_perp[s], bath.larmor, seq, t), 0)  # noqa: E731
    return CoherenceCurve(t, _chunked_product(f, len(bath), workers))


# ---- pairs: batched 4x4 conditional propagators

_sx = np.array([[0, 1], [1, 0]], complex) / 2
_sy = np.array([[0, -1j], [1j, 0]], complex) / 2
_sz = np.array([[1, 0], [0, -1]], complex) / 2
_I2 = np.eye(2)
_OPS1 = np.stack([np.kron(s, _I2) for s in (_sx, _sy, _sz)])
_OPS2 = np.stack([np.kron(_I2, s) for s in (_sx, _sy, _sz)])
_FLIPFLOP = _OPS1[2] @ _OPS2[2] - 0.5 * (_OPS1[0] @ _OPS2[0] + _OPS1[1] @ _OPS2[1])


def nuclear_dipolar(r1, r2, b_direction, gamma_n):
    """Secular nuclear-nuclear coupling ``b (1 - 3 cos^2)`` in kHz.

    Multiplies ``I1z I2z - (I1x I2x + I1y I2y)/2``. Positions in Angstrom,
    gamma_n in kHz/G.
    """
    d = (np.atleast_2d(r2) - np.atleast_2d(r1)) * 1e-10
    rn = np.linalg.norm(d, axis=1)
    ct = d @ np.asarray(b_direction) / rn
    gam = khz_per_gauss_to_hz_per_tesla(gamma_n)
    return MU0_4PI * H_PLANCK * gam**2 / rn**3 * (1 - 3 * ct**2) / 1e3


def _pair_hamiltonians(A1, A2, bnn, larmor, sign):
    H = sign * (np.einsum("pk,kij->pij", A1, _OPS1) + np.einsum("pk,kij->pij", A2, _OPS2))
    H = H + larmor * (_OPS1[2] + _OPS2[2]) + bnn[:, None, None] * _FLIPFLOP
    return KHZ_US * H


def _expm_batch(E, V, t):
    """V exp(-i E t) V^+ for E (P, d), V (P, d, d), t (T,) -> (P, T, d, d)."""
    ph = np.exp(-1j * E[:, None, :] * t[None, :, None])
    return np.einsum("pij,ptj,pkj->ptik", V, ph, V.conj())


def _sequence_propagators(Us, Ul, seq, first):
    """Chronological product for one branch.

    Us/Ul map sign -> propagator over the short (end) and long (interior)
    segment; ``first`` is the sign of the first segment.
    """
    if seq.n == 0:
        return Us[first]
    last = first * (-1) ** seq.n
    inner = seq.n - 1
    if inner == 0:
        M = None
    else:
        pair = Ul[first] @ Ul[-first]  # one "-first then first" cycle, later on the left
        M = np.linalg.matrix_power(pair, inner // 2) if inner // 2 else None
        if inner % 2:
            M = Ul[-first] if M is None else Ul[-first] @ M
    U = Us[first] if M is None else M @ Us[first]
    return Us[last] @ U


def _pair_signals(A1, A2, bnn, larmor, seq, t):
    """Complex pair coherence (P, T)."""
    frac, _ = seq.segments()
    eig = {s: np.linalg.eigh(_pair_hamiltonians(A1, A2, bnn, larmor, s)) for s in (1, -1)}
    Us = {s: _expm_batch(*eig[s], frac[0] * t) for s in (1, -1)}
    Ul = {s: _expm_batch(*eig[s], frac[1] * t) for s in (1, -1)} if seq.n > 1 else None
    U0 = _sequence_propagators(Us, Ul, seq, 1)
    U1 = _sequence_propagators(Us, Ul, seq, -1)
    return np.einsum("ptij,ptij->pt", U1.conj(), U0) / 4


def bath_pairs(bath, pair_cutoff):
    """Index pairs (i < j) closer than ``pair_cutoff`` nm, lexicographically sorted."""
    if len(bath) < 2:
        return np.zeros((0, 2), int)
    p = cKDTree(bath.positions).query_pairs(10.0 * pair_cutoff, output_type="ndarray")
    return p[np.lexsort((p[:, 1], p[:, 0]))] if len(p) else np.zeros((0, 2), int)


def pair_correction(bath, seq, times, pair_cutoff=1.5, couplings=None, workers=1, singles_floor=1e-12):
    """Product over close pairs of ``L_ij / (L_i L_j)`` (complex).

    Parameters
    ----------
    couplings : callable, optional
        ``couplings(i, j) -> kHz`` array overriding the dipolar pair coupling;
        used for diagnostics such as switching interactions off.
    singles_floor : float
        Pairs whose single-spin product falls below this magnitude at a time
        point contribute a factor 1 there instead of dividing by ~0.

    Returns
    -------
    values : ndarray (T,), complex
    n_pairs : int
    """
    t = _times(times)
    pairs = bath_pairs(bath, pair_cutoff)
    if len(pairs) == 0:
        return np.ones_like(t, dtype=complex), 0
    A = bath.hyperfine_vectors()
    L1 = _single_signals(bath.A_par, bath.A_perp, bath.larmor, seq, t)
    if couplings is None:
        bnn = nuclear_dipolar(bath.positions[pairs[:, 0]], bath.positions[pairs[:, 1]],
                              bath.b_direction, bath.gamma_n)
    else:
        bnn = np.asarray(couplings(pairs[:, 0], pairs[:, 1]), dtype=float)

    def chunk(s):
        i, j = pairs[s, 0], pairs[s, 1]
        Lp = _pair_signals(A[i], A[j], bnn[s], bath.larmor, seq, t)
        den = L1[i] * L1[j]
        ok = np.abs(den) > singles_floor
        r = np.where(ok, Lp / np.where(ok, den, 1.0), 1.0)
        return np.prod(r, 0)

    return _chunked_product(chunk, len(pairs), workers), len(pairs)


def cce2(bath, seq, times, pair_cutoff=1.5, workers=1, couplings=None):
    """Second-order CCE: CCE-1 times pair corrections within ``pair_cutoff`` nm.

    The returned values are the real part; ``meta`` records the number of
    pairs, the largest imaginary part and the pair envelope itself.
    """
    if not pair_cutoff > 0:
        raise DomainError("pair_cutoff must be positive")
    t = _times(times)
    L1 = cce1(bath, seq, t, workers)
    corr, npairs = pair_correction(bath, seq, t, pair_cutoff, couplings=couplings, workers=workers)
    full = L1.values * corr
    meta = dict(n_pairs=npairs, max_imag=float(np.max(np.abs(full.imag))) if len(t) else 0.0,
                pair_envelope=corr.real)
    return CoherenceCurve(t, full.real, meta)


# ---- fits

def fit_stretched_exp(curve, n=None, tol=1e-10, max_iter=200):
    """Least-squares fit of ``exp(-(t/T2)^n)``.

    Initialization from the linearization ``ln(-ln y) = n ln t - n ln T2``,
    then Levenberg-Marquardt steps in (ln T2, ln n), so both stay positive.
    Pass ``n`` to hold the exponent fixed (e.g. 2 for a Gaussian).

    Raises
    ------
    FitError
        If the step size has not dropped below ``tol`` after ``max_iter``
        iterations; ``err.last`` holds the last StretchedExpFit.
    """
    t, y = curve.times, curve.values
    if len(t) < 4:
        raise DomainError("need at least 4 points")
    sel = (t > 0) & (y > 1e-6) & (y < 1 - 1e-9)
    if sel.sum() >= 2:
        X, Y = np.log(t[sel]), np.log(-np.log(y[sel]))
        if n is None:
            slope, icpt = np.polyfit(X, Y, 1)
            n0 = float(np.clip(slope, 0.1, 10))
        else:
            n0 = float(n)
            icpt = np.mean(Y - n0 * X)
        T0 = float(np.exp(-icpt / n0))
    else:
        raise FitError("curve shows no usable decay", last=None)
    free_n = n is None
    p = np.array([np.log(T0), np.log(n0)])
    lo, hi = np.log([1e-3, 1e-3]), np.log([1e300, 50.0])

    def model(p):
        T, nn = np.exp(p)
        x = (t / T) ** nn
        m = np.exp(-x)
        r = m - y
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.where(t > 0, np.log(t / T), 0.0)
        J = np.stack([m * x * nn, -m * x * nn * lt], 1)
        return r, (J if free_n else J[:, :1])

    r, J = model(p)
    cost = r @ r
    lam = 1e-3
    for _ in range(max_iter):
        g = J.T @ r
        A = J.T @ J
        step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-300), -g)
        if not free_n:
            step = np.array([step[0], 0.0])
        trial = np.clip(p + step, lo, hi)
        rt, Jt = model(trial)
        ct = rt @ rt
        if ct <= cost:
            done = np.all(np.abs(trial - p) <= tol * (1 + np.abs(p)))
            p, r, J, cost = trial, rt, Jt, ct
            lam = max(lam / 3, 1e-12)
            if done:
                break
        else:
            lam *= 4
            if lam > 1e12:
                break
    else:
        T, nn = np.exp(p)
        raise FitError("stretched-exponential fit did not converge",
                       last=StretchedExpFit(float(T), float(nn), float(np.sqrt(cost / len(t)))))
    T, nn = np.exp(p)
    return StretchedExpFit(float(T), float(nn), float(np.sqrt(cost / len(t))))


def _golden(f, a, b, tol=1e-6):
    gr = (np.sqrt(5) - 1) / 2
    c, d = b - gr * (b - a), a + gr * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = f(d)
    return (a + b) / 2


def fit_hyperfine(exp_data, baths, envelope, A_par_range=(-60.0, 60.0), A_perp_range=(0.0, 60.0),
                  step=1.0, sweeps=4):
    """Hyperfine parameters of one strongly coupled spin from a Hahn echo.

    Minimizes ``C = sum_k sum_j (E(t_j) S_k(t_j) S(t_j; A_par, A_perp) - S_exp(t_j))^2``
    where ``E`` is the stretched-exponential envelope, ``S_k`` the CCE-1 Hahn
    signal of bath ``k`` and ``S`` the single-spin signal. Coarse grid search
    followed by alternating golden-section refinement on each axis.

    The Hahn signal is even in A_par, so the minimum is doubly degenerate;
    the non-negative A_par branch is returned.

    Parameters
    ----------
    exp_data : CoherenceCurve
        Measured echo versus total time, us.
    baths : list of NuclearSpinBath
        Background baths; their Larmor frequency is used for the fitted spin.
    envelope : StretchedExpFit
    """
    if len(baths) == 0:
        raise DomainError("need at least one bath")
    seq = PulseSequence.hahn()
    t, y = exp_data.times, exp_data.values
    larmor = baths[0].larmor
    E = envelope(t)
    W = np.stack([E * cce1(b, seq, t).values for b in baths])  # (K, T)

    def cost_of(S):  # S (..., T)
        return np.sum((W[:, None, :] * S[None] - y) ** 2, axis=(0, -1))

    ap = np.arange(A_par_range[0], A_par_range[1] + step / 2, step)
    aq = np.arange(A_perp_range[0], A_perp_range[1] + step / 2, step)
    P, Q = np.meshgrid(ap, aq, indexing="ij")
    C = np.concatenate([cost_of(_single_signals(P.ravel()[s], Q.ravel()[s], larmor, seq, t))
                        for s in np.array_split(np.arange(P.size), max(1, P.size // 1000))])
    cmin = C.min()
    cand = np.flatnonzero(C <= cmin + 1e-12 * max(cmin, 1e-300) + 1e-15)
    k = cand[np.argmax(P.ravel()[cand])]
    x = np.array([abs(P.ravel()[k]), Q.ravel()[k]])

    def f(v):
        return float(cost_of(_single_signals(v[0], v[1], larmor, seq, t))[0])

    bounds = [(max(A_par_range[0], x[0] - step), min(A_par_range[1], x[0] + step)),
              (max(A_perp_range[0], x[1] - step), min(A_perp_range[1], x[1] + step))]
    for _ in range(sweeps):
        for ax in (0, 1):
            def g(u, ax=ax):
                v = x.copy()
                v[ax] = u
                return f(v)
            x[ax] = _golden(g, *bounds[ax])
    return HyperfineFitResult(float(x[0]), float(x[1]), f(x))

