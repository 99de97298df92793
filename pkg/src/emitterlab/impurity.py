"""Paramagnetic-impurity density from a Ramsey T2* by Monte-Carlo inversion.

Each impurity (S = 1/2, g = 2) couples to the Er spin through the secular
point-dipole interaction ``J S_z' s_z``. With frozen impurities the Er
precession frequency takes ``2^N`` values ``omega_k = sum_i +-J_i/2`` whose
variance is ``sum (J_i/2)^2``; the Ramsey decay time is ``pi / d_omega``, i.e.
``1/sqrt(sum J_i^2)`` for J in linear units.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as _rng
from .constants import H_PLANCK, MU0_4PI, MU_B, default_b_direction
from .crystalfield import GTensor
from .errors import DomainError, EstimationError
from .lattice import Geometry, bath_to_crystal, sample_electron_bath

G_IMPURITY = 2.0
SURFACE_NORMAL = (1.0, 0.0, 0.0)  # polished face spanned by the a and c axes
DIPOLAR_KHZ_NM3 = MU0_4PI * MU_B**2 / H_PLANCK * 1e27 / 1e3


def _moments(er_gtensor, b_direction, g_imp):
    b = np.asarray(b_direction, dtype=float)
    b = b / np.linalg.norm(b)
    return er_gtensor.matrix @ er_gtensor.quantization_axis(b), g_imp * b


def ising_couplings(positions, er_gtensor=None, b_direction=None, g_imp=G_IMPURITY):
    """Secular zz couplings (kHz) for impurities at ``positions`` (nm, shape (N, 3))."""
    er_gtensor = er_gtensor or GTensor.axial(8.6, 1.4)
    b_direction = default_b_direction() if b_direction is None else b_direction
    m1, m2 = _moments(er_gtensor, b_direction, g_imp)
    r = np.atleast_2d(np.asarray(positions, dtype=float))
    rn = np.linalg.norm(r, axis=1)
    if np.any(rn == 0):
        raise DomainError("zero-length separation")
    rh = r / rn[:, None]
    return DIPOLAR_KHZ_NM3 / rn**3 * (m1 @ m2 - 3 * (rh @ m1) * (rh @ m2))


def ising_coupling(r, er_gtensor=None, b_direction=None, g_imp=G_IMPURITY):
    """Secular zz coupling in kHz for one impurity at ``r`` (nm).

    The Er moment per unit effective spin is ``g.l`` with ``l`` the
    quantization axis along ``g.B``; the impurity moment is ``g_imp B/|B|``.
    """
    return float(ising_couplings(r, er_gtensor, b_direction, g_imp)[0])


@dataclass(frozen=True)
class IsingBathInstance:
    couplings: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.couplings, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise DomainError("couplings must be finite")
        object.__setattr__(self, "couplings", c)


def t2star_of_instance(instance):
    """Ramsey T2* in us; ``math.inf`` for an empty bath."""
    s = float(np.sum(instance.couplings**2))
    return math.inf if s == 0 else 1e3 / math.sqrt(s)


@dataclass(frozen=True)
class Posterior:
    grid: np.ndarray
    density: np.ndarray
    ci70: tuple
    mode: float
    accepted: np.ndarray
    n_instances: int


def hdi(grid, density, mass=0.7):
    """Smallest set of grid points holding ``mass``, reported as its (min, max)."""
    order = np.argsort(-density, kind="stable")
    k = int(np.searchsorted(np.cumsum(density[order]), mass - 1e-12)) + 1
    sel = grid[order[:k]]
    return float(sel.min()), float(sel.max())


def _coupling_bound(er_gtensor, b_direction, g_imp):
    m1, m2 = _moments(er_gtensor, b_direction, g_imp)
    return 2 * DIPOLAR_KHZ_NM3 * np.linalg.norm(m1) * np.linalg.norm(m2)


def truncation_radius(geometry, t2star_obs, er_gtensor, b_direction, g_imp=G_IMPURITY, tail_tol=0.01):
    """Radius (nm) beyond which the expected sum of J^2 is below ``tail_tol / T2*^2``.

    Uses ``|J| <= Cmax / r^3``; 3D tail ``rho Cmax^2 4 pi / (3 R^3)``, 2D tail
    ``sigma Cmax^2 pi / (2 (d^2 + R^2)^2)``.
    """
    c2 = _coupling_bound(er_gtensor, b_direction, g_imp) ** 2
    budget = tail_tol * (1e3 / t2star_obs) ** 2
    if geometry.geometry is Geometry.BULK_3D:
        rho = geometry.concentration * 1e-21
        R = np.cbrt(rho * c2 * 4 * np.pi / (3 * budget))
    else:
        q = np.sqrt(geometry.concentration * c2 * np.pi / (2 * budget))
        R = np.sqrt(max(q - geometry.surface_depth**2, 0.0))
    return float(max(R, 2 * geometry.min_distance))


def forward_t2star(geometry, n_instances, seed=0, grid_index=0, er_gtensor=None, b_direction=None,
                   surface_normal=SURFACE_NORMAL, g_imp=G_IMPURITY, radius=None):
    """T2* (us) of ``n_instances`` random baths at one concentration.

    Instance ``j`` draws from stream ``(seed, grid_index, j)``; the result
    is independent of scheduling.
    """
    er_gtensor = er_gtensor or GTensor.axial(8.6, 1.4)
    b_direction = default_b_direction() if b_direction is None else np.asarray(b_direction, dtype=float)
    if radius is not None:
        geometry = replace(geometry, sample_radius=max(radius, 2 * geometry.min_distance))
    out = np.empty(n_instances)
    for j in range(n_instances):
        pos = sample_electron_bath(geometry, _rng.stream(seed, _rng.TAG_IMPURITY, grid_index, j))
        if geometry.geometry is Geometry.SURFACE_2D:
            pos = bath_to_crystal(pos, surface_normal)
        J = ising_couplings(pos, er_gtensor, b_direction, g_imp) if len(pos) else np.zeros(0)
        out[j] = t2star_of_instance(IsingBathInstance(J))
    return out


def default_grid(geometry, n=40):
    if Geometry(geometry) is Geometry.BULK_3D:
        return np.logspace(15, 18, n)
    return np.logspace(np.log10(0.05), np.log10(5.0), n)


def estimate_concentration(t2star_obs, geometry, grid=None, n_instances=2000, seed=0, sigma_obs=0.009,
                           n_sigma=3.0, er_gtensor=None, b_direction=None, surface_normal=SURFACE_NORMAL,
                           g_imp=G_IMPURITY, tail_tol=0.01, workers=1):
    """Posterior over impurity concentration given an observed T2*.

    Parameters
    ----------
    t2star_obs, sigma_obs : float
        Observed T2* and its standard deviation, us.
    geometry : ElectronBathConfig
        Template; its concentration is replaced by each grid value. The bath
        radius is the smaller of ``sample_radius`` and the truncation radius
        of :func:`truncation_radius`.
    grid : array_like, optional
        Increasing concentrations (cm^-3 for 3D, nm^-2 for 2D).
    n_instances : int
        Random baths per grid point.

    Returns
    -------
    Posterior
        Flat prior; the likelihood of a grid point is its fraction of
        instances with ``|T2* - t2star_obs| <= n_sigma sigma_obs``.
    """
    grid = default_grid(geometry.geometry) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be non-empty and increasing")
    if n_instances < 100:
        raise DomainError("need at least 100 instances per grid point")
    er_gtensor = er_gtensor or GTensor.axial(8.6, 1.4)
    b_direction = default_b_direction() if b_direction is None else np.asarray(b_direction, dtype=float)

    def run(i):
        geo = replace(geometry, concentration=float(grid[i]))
        R = min(geometry.sample_radius, truncation_radius(geo, t2star_obs, er_gtensor, b_direction, g_imp, tail_tol))
        t2 = forward_t2star(geo, n_instances, seed, i, er_gtensor, b_direction, surface_normal, g_imp, R)
        return int(np.sum(np.abs(t2 - t2star_obs) <= n_sigma * sigma_obs))

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            accepted = np.array(list(ex.map(run, range(len(grid)))))
    else:
        accepted = np.array([run(i) for i in range(len(grid))])
    if accepted.sum() == 0:
        raise EstimationError("no simulated bath matches the observed T2*; widen the grid")
    like = accepted / n_instances
    density = like / like.sum()
    mode = float(grid[int(np.argmax(density))])
    return Posterior(grid, density, hdi(grid, density), mode, accepted, n_instances)
