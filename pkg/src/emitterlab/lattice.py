"""CaWO4 geometry, spin-bath sampling and point-dipole couplings.

Positions of lattice sites are in Angstrom relative to the erbium
(substitutional Ca) site; electron-bath positions are in nm. Couplings are
linear frequencies in kHz.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import rng as _rng
from .constants import (
    A_LATTICE, C_LATTICE, FIELD_GAUSS, GAMMA_W183, H_PLANCK, MU0_4PI, MU_B,
    khz_per_gauss_to_hz_per_tesla,
)
from .crystalfield import GTensor
from .errors import DomainError

# scheelite I4_1/a, origin choice 2: W on 4a, Ca on 4b
SCHEELITE_W = ((0.0, 0.25, 0.125), (0.5, 0.75, 0.625), (0.5, 0.25, 0.375), (0.0, 0.75, 0.875))
SCHEELITE_CA = (0.0, 0.25, 0.625)

_SITE_TOL = 1e-6  # Angstrom


@dataclass(frozen=True)
class LatticeSpec:
    """Tetragonal cell with W fractional sites and the Er host-site origin."""

    a: float = A_LATTICE
    c: float = C_LATTICE
    tungsten_sites: tuple = SCHEELITE_W
    calcium_origin: tuple = SCHEELITE_CA

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0):
            raise DomainError("lattice constants must be positive")
        fr = np.asarray(self.tungsten_sites + (self.calcium_origin,), dtype=float)
        if fr.ndim != 2 or fr.shape[1] != 3 or np.any(fr < 0) or np.any(fr >= 1):
            raise DomainError("fractional coordinates must lie in [0, 1)^3")

    @property
    def cell(self):
        return np.diag([self.a, self.a, self.c])

    @property
    def w_density(self):
        """W sites per cubic Angstrom."""
        return len(self.tungsten_sites) / (self.a**2 * self.c)


def enumerate_w_sites(spec, radius):
    """All W positions with 0 < |r| <= radius, nearest first.

    Parameters
    ----------
    spec : LatticeSpec
    radius : float
        Radius in nm.

    Returns
    -------
    ndarray, shape (N, 3)
        Cartesian positions in Angstrom, sorted by distance with ties broken
        lexicographically on (x, y, z).
    """
    if radius < 0:
        raise DomainError("radius must be non-negative")
    R = 10.0 * radius
    if R == 0:
        return np.zeros((0, 3))
    rel = np.asarray(spec.tungsten_sites) - np.asarray(spec.calcium_origin)
    na, nc = int(np.ceil(R / spec.a)) + 1, int(np.ceil(R / spec.c)) + 1
    ia, ic = np.arange(-na, na + 1), np.arange(-nc, nc + 1)
    cells = np.stack(np.meshgrid(ia, ia, ic, indexing="ij"), -1).reshape(-1, 1, 3)
    frac = (cells + rel[None]).reshape(-1, 3)
    pos = frac @ spec.cell
    d = np.linalg.norm(pos, axis=1)
    keep = (d > _SITE_TOL) & (d <= R * (1 + 1e-12))
    pos, d = pos[keep], d[keep]
    # round distances so symmetry-equivalent sites tie exactly
    order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0], np.round(d, 9)))
    return pos[order]


@dataclass(frozen=True)
class BathSpin:
    """Nuclear spin with hyperfine components in kHz.

    ``phi`` is the azimuth of the transverse hyperfine component in the
    nuclear frame; single-spin signals do not depend on it but pair
    evolution does.
    """

    position: np.ndarray
    A_par: float
    A_perp: float
    phi: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if p.shape != (3,):
            raise DomainError("position must be a 3-vector")
        if np.linalg.norm(p) == 0:
            raise DomainError("bath spin cannot sit at the origin")
        if self.A_perp < 0:
            raise DomainError("A_perp must be non-negative")
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class NuclearBathConfig:
    abundance: float = 0.143
    radius: float = 11.0  # nm
    excluded_nearest_sites: int = 10
    pinned_spin: BathSpin | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.abundance <= 1:
            raise DomainError("abundance must lie in [0, 1]")
        if not self.radius > 0:
            raise DomainError("radius must be positive")
        if self.excluded_nearest_sites < 0:
            raise DomainError("excluded_nearest_sites must be >= 0")


@dataclass(frozen=True)
class NuclearSpinBath:
    """Immutable bath stored column-wise.

    Attributes
    ----------
    positions : ndarray (N, 3)
        Angstrom.
    A_par, A_perp, phi : ndarray (N,)
        kHz, kHz, rad.
    larmor : float
        Nuclear Larmor frequency, kHz.
    config_seed : int
    b_direction : ndarray (3,)
        Unit field direction, the nuclear quantization axis.
    gamma_n : float
        Nuclear gyromagnetic ratio, kHz/G, used for nuclear-nuclear couplings.
    """

    positions: np.ndarray
    A_par: np.ndarray
    A_perp: np.ndarray
    phi: np.ndarray
    larmor: float
    config_seed: int = 0
    b_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    gamma_n: float = GAMMA_W183

    def __post_init__(self):
        for name in ("positions", "A_par", "A_perp", "phi", "b_direction"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.A_par)
        if self.positions.shape != (n, 3) or len(self.A_perp) != n or len(self.phi) != n:
            raise DomainError("inconsistent bath array lengths")

    def __len__(self):
        return len(self.A_par)

    @property
    def spins(self):
        return [BathSpin(p, a, b, f) for p, a, b, f in zip(self.positions, self.A_par, self.A_perp, self.phi)]

    @classmethod
    def from_spins(cls, spins, larmor, **kw):
        spins = list(spins)
        if not spins:
            return cls(np.zeros((0, 3)), [], [], [], larmor, **kw)
        return cls(
            np.array([s.position for s in spins]),
            [s.A_par for s in spins], [s.A_perp for s in spins], [s.phi for s in spins],
            larmor, **kw,
        )

    def hyperfine_vectors(self):
        """Hyperfine vectors (kHz) in the nuclear frame (e1, e2, b)."""
        return np.stack([self.A_perp * np.cos(self.phi), self.A_perp * np.sin(self.phi), self.A_par], 1)

    def without(self, index):
        keep = np.ones(len(self), bool)
        keep[index] = False
        return NuclearSpinBath(self.positions[keep], self.A_par[keep], self.A_perp[keep], self.phi[keep],
                               self.larmor, self.config_seed, self.b_direction, self.gamma_n)


def nuclear_frame(b_direction):
    """Orthonormal (e1, e2, b) with e1 perpendicular to both b and the crystal c axis when possible."""
    b = np.asarray(b_direction, dtype=float)
    b = b / np.linalg.norm(b)
    ref = np.array([0.0, 0.0, 1.0]) if abs(b[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, b)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(b, e1), b


def hyperfine_vectors(positions, er_gtensor, b_direction, gamma_n=GAMMA_W183):
    """Secular electron-nuclear dipolar vectors ``S_z' (a . I)`` in kHz.

    The electron moment is ``-mu_B g.l S_z'`` with ``l`` the unit vector along
    ``g.B``; the spin label is taken along the moment so that a nucleus on the
    moment axis has positive A_par. Returned components are in the
    :func:`nuclear_frame` basis and carry the 1/2 of ``h_+- = +-(a.I) + ...``.

    Parameters
    ----------
    positions : array_like (N, 3)
        Angstrom.
    """
    r = np.atleast_2d(np.asarray(positions, dtype=float)) * 1e-10
    rn = np.linalg.norm(r, axis=1)
    if np.any(rn == 0):
        raise DomainError("zero-length position")
    rh = r / rn[:, None]
    m = er_gtensor.matrix @ er_gtensor.quantization_axis(b_direction)
    gam = khz_per_gauss_to_hz_per_tesla(gamma_n)
    pref = MU0_4PI * MU_B * gam / rn**3
    a = pref[:, None] * (m[None] - 3 * rh * (rh @ m)[:, None]) / 2e3
    return a @ np.stack(nuclear_frame(b_direction), 1)


def dipolar_hyperfine(position, er_gtensor, b_direction, gamma_n=GAMMA_W183):
    """``(A_par, A_perp)`` in kHz for one nuclear site (Angstrom)."""
    v = hyperfine_vectors(position, er_gtensor, b_direction, gamma_n)[0]
    return float(v[2]), float(np.hypot(v[0], v[1]))


def sample_nuclear_bath(spec, config, b_direction, er_gtensor, field_gauss=FIELD_GAUSS,
                        gamma_n=GAMMA_W183):
    """Random occupation of W sites with spin-1/2 isotopes.

    Each site inside ``config.radius`` except the ``excluded_nearest_sites``
    nearest is occupied with probability ``abundance``; the draw uses one
    uniform number per site from the nuclear-bath stream of ``config.seed``.
    A pinned spin is appended unchanged.
    """
    b = np.asarray(b_direction, dtype=float)
    if abs(np.linalg.norm(b) - 1) > 1e-9:
        raise DomainError("b_direction must be a unit vector")
    sites = enumerate_w_sites(spec, config.radius)
    u = _rng.stream(config.seed, _rng.TAG_NUCLEAR_BATH).random(len(sites))
    occ = u < config.abundance
    occ[: config.excluded_nearest_sites] = False
    pos = sites[occ]
    if len(pos):
        v = hyperfine_vectors(pos, er_gtensor, b, gamma_n)
        A_par, A_perp, phi = v[:, 2], np.hypot(v[:, 0], v[:, 1]), np.arctan2(v[:, 1], v[:, 0])
    else:
        A_par = A_perp = phi = np.zeros(0)
    p = config.pinned_spin
    if p is not None:
        if len(pos) and np.min(np.linalg.norm(pos - p.position, axis=1)) < _SITE_TOL:
            raise DomainError("pinned spin coincides with an occupied sampled site")
        pos = np.vstack([pos, p.position])
        A_par, A_perp, phi = np.append(A_par, p.A_par), np.append(A_perp, p.A_perp), np.append(phi, p.phi)
    return NuclearSpinBath(pos, A_par, A_perp, phi, gamma_n * field_gauss, config.seed, b, gamma_n)


class Geometry(str, Enum):
    BULK_3D = "3d"
    SURFACE_2D = "2d"


@dataclass(frozen=True)
class ElectronBathConfig:
    """Paramagnetic impurity bath.

    ``concentration`` is in cm^-3 for BULK_3D and nm^-2 for SURFACE_2D. The 2D
    bath is a disk in the plane ``z = surface_depth`` of the bath frame; use
    :func:`bath_to_crystal` to orient it.
    """

    geometry: Geometry = Geometry.BULK_3D
    concentration: float = 0.0
    surface_depth: float = 10.0  # nm
    sample_radius: float = 100.0  # nm
    min_distance: float = 1.0  # nm
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        if self.concentration < 0:
            raise DomainError("concentration must be non-negative")
        if self.geometry is Geometry.SURFACE_2D and not self.surface_depth > 0:
            raise DomainError("surface_depth must be positive")
        if not self.min_distance > 0:
            raise DomainError("min_distance must be positive")
        if not self.sample_radius > self.min_distance:
            raise DomainError("sample_radius must exceed min_distance")

    def mean_count(self):
        R, d = self.sample_radius, self.min_distance
        if self.geometry is Geometry.BULK_3D:
            return self.concentration * 1e-21 * 4 * np.pi / 3 * (R**3 - d**3)
        r0 = np.sqrt(max(d**2 - self.surface_depth**2, 0.0))
        return self.concentration * np.pi * (R**2 - r0**2)


def sample_electron_bath(config, rng=None):
    """Poisson-distributed uniform impurity positions in nm.

    3D: shell ``min_distance < |r| <= sample_radius``. 2D: annulus of the
    plane ``z = surface_depth`` with in-plane radius up to ``sample_radius``
    and ``|r| > min_distance``.
    """
    if rng is None:
        rng = _rng.stream(config.seed, _rng.TAG_ELECTRON_BATH)
    n = rng.poisson(config.mean_count())
    R, d = config.sample_radius, config.min_distance
    if config.geometry is Geometry.BULK_3D:
        r = np.cbrt(d**3 + (R**3 - d**3) * rng.random(n))
        v = rng.standard_normal((n, 3))
        return r[:, None] * v / np.linalg.norm(v, axis=1, keepdims=True)
    r0 = np.sqrt(max(d**2 - config.surface_depth**2, 0.0))
    rho = np.sqrt(r0**2 + (R**2 - r0**2) * rng.random(n))
    ang = 2 * np.pi * rng.random(n)
    return np.stack([rho * np.cos(ang), rho * np.sin(ang), np.full(n, float(config.surface_depth))], 1)


def bath_to_crystal(positions, normal):
    """Map bath-frame positions (disk normal along z) so the normal points along ``normal``."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, n)
    u /= np.linalg.norm(u)
    R = np.stack([u, np.cross(n, u), n], 1)
    return np.asarray(positions) @ R.T


def electron_larmor(er_gtensor, b_direction, field_gauss=FIELD_GAUSS):
    """Er Zeeman splitting in GHz along the field."""
    return er_gtensor.effective_g(b_direction) * MU_B * field_gauss * 1e-4 / H_PLANCK * 1e-9
