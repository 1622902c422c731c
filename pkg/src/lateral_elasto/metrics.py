"""Error and image-quality metrics for displacement and strain estimates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .grid import DispField, same_grid
from .picture import EprField
from .strain import StrainField

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
MIN_WINDOW_PIXELS = 16


def mae(estimate, truth) -> float:
    """Mean absolute elementwise difference of two same-shape arrays."""
    a = np.asarray(estimate, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def disp_mae_um(estimate: DispField, truth: DispField) -> tuple[float, float]:
    """Axial and lateral displacement MAE in micrometres."""
    same_grid(estimate.grid, truth.grid)
    g = estimate.grid
    return (1000.0 * g.dz * mae(estimate.axial, truth.axial),
            1000.0 * g.dx * mae(estimate.lateral, truth.lateral))


def strain_mae(estimate: StrainField, truth: StrainField, component: str = "e22") -> float:
    same_grid(estimate.grid, truth.grid)
    return mae(getattr(estimate, component), getattr(truth, component))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def ssim_map(a, b, data_range: float | None = None) -> np.ndarray:
    """Local SSIM at every position where the full window fits.

    ``data_range`` defaults to ``max(b) - min(b)``: ``b`` is the reference.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    L = float(b.max() - b.min()) if data_range is None else float(data_range)
    if not L > 0:
        raise ValueError("reference image is constant: SSIM dynamic range is 0")
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    g = gaussian_window()
    r = SSIM_WINDOW // 2

    def filt(x):
        x = scipy.ndimage.correlate1d(x, g, axis=0, mode="constant")
        x = scipy.ndimage.correlate1d(x, g, axis=1, mode="constant")
        return x[r:-r, r:-r]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a, b, data_range: float | None = None) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5) of ``a`` against reference ``b``."""
    return float(ssim_map(a, b, data_range).mean())


# -- CNR / SR ------------------------------------------------------------------


@dataclass(frozen=True)
class ContrastResult:
    """CNR and SR of a target window against a background window.

    ``None`` marks an undefined value (zero joint variance for CNR, zero
    background mean for SR).
    """

    cnr: float | None
    sr: float | None
    mean_target: float
    mean_background: float
    std_target: float
    std_background: float


def _window(img: np.ndarray, rect, name: str) -> np.ndarray:
    a0, l0, h, w = (int(v) for v in rect)
    H, W = img.shape
    if a0 < 0 or l0 < 0 or h <= 0 or w <= 0 or a0 + h > H or l0 + w > W:
        raise ValueError(f"{name} window {tuple(rect)} outside the {H}x{W} image")
    if h * w < MIN_WINDOW_PIXELS:
        raise ValueError(f"{name} window has {h * w} pixels (< {MIN_WINDOW_PIXELS})")
    return img[a0:a0 + h, l0:l0 + w]


def _disjoint(p, q) -> bool:
    return (p[0] + p[2] <= q[0] or q[0] + q[2] <= p[0]
            or p[1] + p[3] <= q[1] or q[1] + q[3] <= p[1])


def cnr_sr(strain, target_win, background_win) -> ContrastResult:
    """Contrast-to-noise ratio and strain ratio; windows are ``(a0, l0, h, w)``."""
    img = np.asarray(strain, dtype=np.float64)
    t = _window(img, target_win, "target")
    b = _window(img, background_win, "background")
    if not _disjoint(tuple(target_win), tuple(background_win)):
        raise ValueError("target and background windows overlap")
    mt, mb = float(t.mean()), float(b.mean())
    st, sb = float(t.std()), float(b.std())
    joint = sb**2 + st**2
    cnr = math.sqrt(2.0 * (mb - mt) ** 2 / joint) if joint > 0 else None
    sr = mt / mb if mb != 0 else None
    return ContrastResult(cnr, sr, mt, mb, st, sb)


# -- EPR histogram -------------------------------------------------------------


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def rows(self) -> list[dict]:
        out = [{"bin_lo": "-inf", "bin_hi": repr(float(self.edges[0])), "count": self.underflow}]
        out += [{"bin_lo": repr(float(lo)), "bin_hi": repr(float(hi)), "count": int(c)}
                for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)]
        out.append({"bin_lo": repr(float(self.edges[-1])), "bin_hi": "inf", "count": self.overflow})
        return out


def histogram(values, bins: int = 20, range: tuple[float, float] = (0.0, 1.0)) -> Histogram:
    """Uniform half-open bins ``[lo, hi)`` plus under/overflow buckets.

    Non-finite values count as overflow (NaN included) or underflow (-inf).
    """
    lo, hi = float(range[0]), float(range[1])
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if not lo < hi:
        raise ValueError(f"empty histogram range ({lo}, {hi})")
    v = np.asarray(values, dtype=np.float64).ravel()
    under = v < lo
    over = (v >= hi) | np.isnan(v)
    inside = v[~under & ~over]
    idx = np.floor((inside - lo) / (hi - lo) * bins).astype(np.int64)
    counts = np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)
    edges = np.linspace(lo, hi, bins + 1)
    return Histogram(edges, counts, int(under.sum()), int(over.sum()))


def epr_histogram(epr: EprField, bins: int = 20, range: tuple[float, float] = (0.0, 1.0)) -> Histogram:
    return histogram(epr.v_e, bins, range)


# -- strain scatter ------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _left_turn(o, a, b) -> bool:
    """Strict left turn; turns within rounding of collinear count as straight."""
    c = _cross(o, a, b)
    scale = math.hypot(a[0] - o[0], a[1] - o[1]) * math.hypot(b[0] - o[0], b[1] - o[1])
    return c > 1e-12 * scale


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain), collinear points dropped.

    Collinear input yields its two extreme points; a single point yields itself.
    """
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).reshape(-1, 2))))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2 and not _left_turn(chain[-2], chain[-1], p):
                chain.pop()
            chain.append(p)
        return chain

    lower, upper = half(pts), half(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 or not any(_left_turn(hull[i - 1], hull[i], hull[(i + 1) % len(hull)])
                                 for i in range(len(hull))):
        return np.array([pts[0], pts[-1]], dtype=np.float64)
    return np.array(hull, dtype=np.float64)


@dataclass(frozen=True)
class StrainScatter:
    points: np.ndarray  # (N, 2): e11, e22
    hull: np.ndarray  # (M, 2), counter-clockwise


def strain_scatter(strain: StrainField, sample_stride: int = 4) -> StrainScatter:
    """Subsampled ``(e11, e22)`` pairs and their convex hull."""
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    s = slice(None, None, sample_stride)
    pts = np.stack([strain.e11[s, s].ravel(), strain.e22[s, s].ravel()], axis=1)
    return StrainScatter(pts, convex_hull(pts))


# -- CSV -----------------------------------------------------------------------

METRIC_COLUMNS = ("mae_axial_um", "mae_lateral_um", "ssim_axial_pct", "ssim_lateral_pct",
                  "cnr_axial", "sr_axial", "cnr_lateral", "sr_lateral")
HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "count")
HULL_COLUMNS = ("vertex", "e11", "e22")


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows: list[dict], columns) -> None:
    """UTF-8 CSV with a header; missing keys become empty cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if c not in row else _fmt(row[c]) for c in columns])


def hull_rows(sc: StrainScatter) -> list[dict]:
    return [{"vertex": i, "e11": float(p[0]), "e22": float(p[1])} for i, p in enumerate(sc.hull)]


def evaluate_against_truth(est_disp: DispField, est_strain: StrainField, truth_disp: DispField,
                           truth_strain: StrainField) -> dict:
    """MAE (um) and SSIM (%) of an estimate against ground truth."""
    ax, lat = disp_mae_um(est_disp, truth_disp)
    return {
        "mae_axial_um": ax,
        "mae_lateral_um": lat,
        "ssim_axial_pct": 100.0 * ssim(est_strain.e11, truth_strain.e11),
        "ssim_lateral_pct": 100.0 * ssim(est_strain.e22, truth_strain.e22),
    }


def evaluate_windows(strain: StrainField, target_win, background_win) -> dict:
    ax = cnr_sr(strain.e11, target_win, background_win)
    lat = cnr_sr(strain.e22, target_win, background_win)
    return {"cnr_axial": ax.cnr, "sr_axial": ax.sr, "cnr_lateral": lat.cnr, "sr_lateral": lat.sr}

