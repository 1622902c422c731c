"""Analytic compression phantom with exact ground truth, and its RF rendering.

The strain field is prescribed, not solved: axial strain is uniform in the
background and scaled inside stiff circular inclusions, with a smoothstep
transition of configurable width standing in for the boundary eigenstrain.
Lateral strain follows the uniaxial relation ``e22 = -v * e11`` pixelwise.

Sign convention: compression gives ``e11 < 0`` and ``e22 > 0``, so the
EPR ``-e22 / e11`` is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.ndimage

from .grid import DispField, GridSpec, UsFrame, _check_shape, _frozen, seeded_rng
from .signal import psf_kernel
from .strain import StrainField, compute_strain

POISSON_RANGE = (0.2, 0.5)


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Inclusion:
    center: tuple[float, float]  # (axial mm from top, lateral mm from left)
    radius: float
    poisson: float = 0.45
    strain_contrast: float = 0.5
    edge_width: float = 0.5


@dataclass(frozen=True)
class PsfParams:
    f0_over_fs: float = 0.2
    sigma_ax: float = 3.0
    sigma_lat: float = 1.5


@dataclass(frozen=True)
class PhantomSpec:
    grid: GridSpec
    scatterer_density: float = 12.0
    bg_poisson: float = 0.35
    bg_strain: float = 0.02
    inclusions: tuple[Inclusion, ...] = ()
    seed: int = 0
    psf: PsfParams = field(default_factory=PsfParams)

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        lo, hi = POISSON_RANGE
        for v in [self.bg_poisson] + [inc.poisson for inc in self.inclusions]:
            if not lo <= v <= hi:
                raise PhantomError(f"Poisson's ratio {v} outside [{lo}, {hi}]")
        if not 0 < self.bg_strain <= 0.05:
            raise PhantomError(f"bg_strain {self.bg_strain} outside (0, 0.05]")
        if self.scatterer_density <= 0:
            raise PhantomError("scatterer density must be positive")
        g = self.grid
        depth, width = (g.height - 1) * g.dz, (g.width - 1) * g.dx
        for inc in self.inclusions:
            if not 0 < inc.strain_contrast <= 1:
                raise PhantomError(f"strain_contrast {inc.strain_contrast} outside (0, 1]")
            if inc.radius <= 0 or inc.edge_width < 0:
                raise PhantomError("inclusion radius must be positive and edge width non-negative")
            cz, cx = inc.center
            if cz - inc.radius < 0 or cz + inc.radius > depth or cx - inc.radius < 0 or cx + inc.radius > width:
                raise PhantomError(f"inclusion at {inc.center} with radius {inc.radius} leaves the grid")
        for i, p in enumerate(self.inclusions):
            for q in self.inclusions[i + 1:]:
                if math.dist(p.center, q.center) < p.radius + q.radius:
                    raise PhantomError(f"overlapping inclusions at {p.center} and {q.center}")


@dataclass(frozen=True)
class GroundTruth:
    disp: DispField
    strain: StrainField
    poisson_map: np.ndarray
    epr_map: np.ndarray

    def __post_init__(self):
        for name in ("poisson_map", "epr_map"):
            arr = _frozen(getattr(self, name))
            _check_shape(self.disp.grid, arr, name)
            object.__setattr__(self, name, arr)


def uniaxial_strain(v: float, sigma11: float, e_mod: float) -> tuple[float, float, float]:
    """Strains under uniaxial axial stress: ``(s/E, -v s/E, -v s/E)``."""
    if e_mod <= 0:
        raise ValueError(f"non-positive modulus: {e_mod}")
    if not 0 <= v < 0.5 + 1e-9:
        raise ValueError(f"Poisson's ratio {v} outside [0, 0.5]")
    e11 = sigma11 / e_mod
    return e11, -v * e11, -v * e11


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def material_maps(spec: PhantomSpec, a: np.ndarray, l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Axial strain and Poisson's ratio at index coordinates ``a`` (rows) x ``l`` (cols)."""
    g = spec.grid
    z = np.asarray(a, dtype=np.float64)[:, None] * g.dz
    x = np.asarray(l, dtype=np.float64)[None, :] * g.dx
    factor = np.ones((z.shape[0], x.shape[1]))
    poisson = np.full_like(factor, spec.bg_poisson)
    for inc in spec.inclusions:
        r = np.hypot(z - inc.center[0], x - inc.center[1])
        if inc.edge_width > 0:
            inside = 1.0 - _smoothstep((r - (inc.radius - 0.5 * inc.edge_width)) / inc.edge_width)
        else:
            inside = (r <= inc.radius).astype(np.float64)
        factor -= inside * (1.0 - inc.strain_contrast)
        poisson += inside * (inc.poisson - spec.bg_poisson)
    return -spec.bg_strain * factor, poisson


def build_truth(spec: PhantomSpec) -> GroundTruth:
    g = spec.grid
    a = np.arange(g.height, dtype=np.float64)
    l = np.arange(g.width, dtype=np.float64)
    e11, v = material_maps(spec, a, l)
    e22 = -v * e11
    w1 = scipy.integrate.cumulative_trapezoid(e11, dx=1.0, axis=0, initial=0.0)
    w2 = scipy.integrate.cumulative_trapezoid(e22, dx=1.0, axis=1, initial=0.0)
    # anchor lateral expansion at the vertical centerline
    c = 0.5 * (g.width - 1)
    lo, hi = int(math.floor(c)), int(math.ceil(c))
    w2 = w2 - 0.5 * (w2[:, lo:lo + 1] + w2[:, hi:hi + 1])
    disp = DispField(g, w1, w2)
    strain = compute_strain(disp)
    # EPR of the prescribed fields: the recomputed strains use different
    # stencils along the two axes and their ratio rings at sharp edges
    epr = -e22 / e11
    return GroundTruth(disp, strain, v, epr)


def _bilinear_extrap(field: np.ndarray, a: np.ndarray, l: np.ndarray) -> np.ndarray:
    """Bilinear interpolation, extended linearly beyond the border."""
    H, W = field.shape
    i0 = np.clip(np.floor(a).astype(int), 0, H - 2)
    j0 = np.clip(np.floor(l).astype(int), 0, W - 2)
    t = a - i0
    u = l - j0
    f00 = field[i0, j0]
    f01 = field[i0, j0 + 1]
    f10 = field[i0 + 1, j0]
    f11 = field[i0 + 1, j0 + 1]
    return (1 - t) * ((1 - u) * f00 + u * f01) + t * ((1 - u) * f10 + u * f11)


@dataclass(frozen=True)
class Scatterers:
    """Point scatterers in grid index coordinates, before and after motion."""

    pre: np.ndarray  # (N, 2) axial, lateral
    post: np.ndarray
    amplitude: np.ndarray
    origin: tuple[int, int]  # canvas index of grid sample (0, 0)
    canvas_shape: tuple[int, int]


def footprint_density(spec: PhantomSpec) -> float:
    """Expected scatterers inside the +-3 sigma PSF support."""
    k = psf_kernel(spec.psf.f0_over_fs, spec.psf.sigma_ax, spec.psf.sigma_lat)
    n_ax, n_lat = k.footprint
    return spec.scatterer_density * (n_ax * spec.grid.dz) * (n_lat * spec.grid.dx)


def draw_scatterers(spec: PhantomSpec, truth: GroundTruth, rng: np.random.Generator) -> Scatterers:
    g = spec.grid
    k = psf_kernel(spec.psf.f0_over_fs, spec.psf.sigma_ax, spec.psf.sigma_lat)
    half_ax, half_lat = k.axial.size // 2, k.lateral.size // 2
    move_ax = int(math.ceil(np.abs(truth.disp.axial).max()))
    move_lat = int(math.ceil(np.abs(truth.disp.lateral).max()))
    # tissue must cover everything the PSF can see after motion
    m_ax, m_lat = half_ax + move_ax + 2, half_lat + move_lat + 2
    lo = np.array([-m_ax, -m_lat], dtype=np.float64)
    hi = np.array([g.height - 1 + m_ax, g.width - 1 + m_lat], dtype=np.float64)
    area_mm2 = (hi[0] - lo[0]) * g.dz * (hi[1] - lo[1]) * g.dx
    n = int(round(spec.scatterer_density * area_mm2))
    pre = lo + rng.random((n, 2)) * (hi - lo)
    amp = rng.standard_normal(n)
    post = pre + np.stack([
        _bilinear_extrap(truth.disp.axial, pre[:, 0], pre[:, 1]),
        _bilinear_extrap(truth.disp.lateral, pre[:, 0], pre[:, 1]),
    ], axis=1)
    pad_ax, pad_lat = m_ax + move_ax + 2, m_lat + move_lat + 2
    shape = (g.height + 2 * pad_ax, g.width + 2 * pad_lat)
    return Scatterers(pre, post, amp, (pad_ax, pad_lat), shape)


def splat(pos: np.ndarray, values: np.ndarray, origin, shape) -> np.ndarray:
    """Distribute point ``values`` onto a canvas with bilinear weights."""
    canvas = np.zeros(shape)
    a = pos[:, 0] + origin[0]
    l = pos[:, 1] + origin[1]
    i0 = np.floor(a).astype(int)
    j0 = np.floor(l).astype(int)
    t = a - i0
    u = l - j0
    for di, wi in ((0, 1 - t), (1, t)):
        for dj, wj in ((0, 1 - u), (1, u)):
            np.add.at(canvas, (i0 + di, j0 + dj), values * wi * wj)
    return canvas


def render_pair(
    spec: PhantomSpec, truth: GroundTruth, rng: np.random.Generator | None = None
) -> tuple[UsFrame, UsFrame]:
    """Pre- and post-compression frames of one scatterer realisation."""
    if footprint_density(spec) < 2.0:
        raise PhantomError(
            f"density too low: {footprint_density(spec):.2f} scatterers per PSF footprint (< 2)"
        )
    if rng is None:
        rng = seeded_rng(spec.seed)
    sc = draw_scatterers(spec, truth, rng)
    k = psf_kernel(spec.psf.f0_over_fs, spec.psf.sigma_ax, spec.psf.sigma_lat)
    g = spec.grid
    oa, ol = sc.origin
    frames = []
    for pos in (sc.pre, sc.post):
        canvas = splat(pos, sc.amplitude, sc.origin, sc.canvas_shape)
        canvas = scipy.ndimage.correlate1d(canvas, k.axial[::-1], axis=0, mode="constant")
        canvas = scipy.ndimage.correlate1d(canvas, k.lateral[::-1], axis=1, mode="constant")
        frames.append(UsFrame.from_rf(g, canvas[oa:oa + g.height, ol:ol + g.width]))
    return frames[0], frames[1]


def simulate(spec: PhantomSpec) -> tuple[UsFrame, UsFrame, GroundTruth]:
    truth = build_truth(spec)
    pre, post = render_pair(spec, truth, seeded_rng(spec.seed))
    return pre, post, truth
