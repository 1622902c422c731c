"""Coarse-to-fine variational displacement estimation.

The unknowns are per-pixel axial/lateral displacements at every pyramid
level. Each level minimises

    L_D + lambda_s (L_s1 + gamma L_s2) + lambda_v (L_vd + lambda_vs L_vs) + lambda_sl L_SSL

with Adam. The step starts at ``step_size`` on the coarsest level, halves
with each finer level, and is halved again (from the best iterate) when
the total stops improving. The EPR and consistency terms are only switched
on at the finest ``constraint_levels`` levels; coarser strains are too
smooth for the EPR to mean anything. A constrained level that starts from
the zero field is first solved without those terms.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.ndimage
import torch

from ._ops import DTYPE, d_axial, d_lateral, tensor, to_numpy
from .grid import MIN_SIZE, DispField, GridSpec, UsFrame, make_grid, same_grid, seeded_rng
from .picture import epr_tensors, guarded_axial, default_floor, feasibility, picture_data_term, picture_smooth_term
from .ssl import ssl_term
from .strain import smoothness_kink_args, smoothness_terms, strain_tensors
from .warp import channel_deltas, data_terms, sample_bicubic, warp_tensor

log = logging.getLogger(__name__)

HALVING_WINDOW = 10
STOP_WINDOW = 20
TERMS = ("L_D", "L_s1", "L_s2", "L_vd", "L_vs", "L_SSL")


class SolverDivergence(RuntimeError):
    def __init__(self, message: str, iteration: int, report: "LossReport"):
        super().__init__(message)
        self.iteration = iteration
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    lambda_s: float = 4.0
    lambda_v: float = 0.5
    lambda_sl: float = 0.5
    lambda_vs: float = 0.01
    gamma: float = 0.05
    beta: float = 0.1
    pyramid_levels: int = 4
    iters_per_level: int = 300
    step_size: float = 0.1
    tol: float = 1e-4
    window: int = 3
    constraint_levels: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_s", "lambda_v", "lambda_sl", "lambda_vs", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.pyramid_levels < 1 or self.iters_per_level < 1:
            raise ValueError("pyramid_levels and iters_per_level must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be odd")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    """Per-iteration loss log of one solve.

    Terms inactive at a level (or with zero weight) are logged as 0.
    """

    config: SolverConfig
    history: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    iterations: list[int] = field(default_factory=list)  # coarsest level first
    level_start: list[float] = field(default_factory=list)
    level_end: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    diverged: bool = False

    COLUMNS = ("level", "iteration", *TERMS, "total", "step")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.history:
                w.writerow([row["level"], row["iteration"]] +
                           [repr(float(row[k])) for k in (*TERMS, "total", "step")])


def combine(parts: dict, c: SolverConfig) -> float:
    """Weighted total of logged term values."""
    return (parts["L_D"] + c.lambda_s * (parts["L_s1"] + c.gamma * parts["L_s2"])
            + c.lambda_v * (parts["L_vd"] + c.lambda_vs * parts["L_vs"]) + c.lambda_sl * parts["L_SSL"])


# -- pyramid -------------------------------------------------------------------


def _decimate(img: np.ndarray) -> np.ndarray:
    return scipy.ndimage.gaussian_filter(img, 1.0, mode="nearest")[::2, ::2]


def usable_levels(grid: GridSpec, requested: int) -> int:
    n = 1
    g = grid
    while n < requested and min(g.height, g.width) >= 2 * MIN_SIZE:
        g = g.coarsen()
        n += 1
    return n


def build_pyramid(pre: UsFrame, post: UsFrame, levels: int) -> list[tuple[torch.Tensor, torch.Tensor, GridSpec]]:
    """Finest level first. Coarse levels carry the envelope channel only.

    The finest level is scaled by the pre-frame RF RMS; each coarse level
    by the standard deviation of its own pre-frame envelope, which keeps
    the data term comparable to the smoothness terms as speckle blurs out.
    """
    scale = float(np.sqrt(np.mean(pre.rf**2))) or 1.0
    i1 = pre.stack() / scale
    i2 = post.stack() / scale
    out = [(tensor(i1), tensor(i2), pre.grid)]
    e1, e2, g = i1[1], i2[1], pre.grid
    for _ in range(1, levels):
        e1, e2, g = _decimate(e1), _decimate(e2), g.coarsen()
        k = float(e1.std()) or 1.0
        out.append((tensor(e1[None] / k), tensor(e2[None] / k), g))
    return out


def upsample_disp(w: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Bicubic x2 upsampling of a displacement field, values doubled."""
    H, W = shape
    y = (torch.arange(H, dtype=DTYPE) / 2).view(H, 1).expand(H, W)
    x = (torch.arange(W, dtype=DTYPE) / 2).view(1, W).expand(H, W)
    return 2.0 * sample_bicubic(w, y, x)


# -- objective -----------------------------------------------------------------


class Objective:
    """Total loss at one pyramid level as a function of the displacement."""

    def __init__(self, i1, i2, grid: GridSpec, cfg: SolverConfig, constrained: bool,
                 anchor: torch.Tensor | None = None, lambda_sl: float = 0.0):
        self.i1, self.i2, self.grid, self.cfg = i1, i2, grid, cfg
        self.deltas = channel_deltas(i1)
        self.use_picture = constrained and cfg.lambda_v > 0
        self.use_ssl = constrained and anchor is not None and lambda_sl > 0
        self.anchor = anchor
        self.lambda_sl = lambda_sl if self.use_ssl else 0.0

    def __call__(self, w: torch.Tensor) -> tuple[torch.Tensor, dict]:
        c = self.cfg
        warped, valid = warp_tensor(self.i2, w)
        ld = data_terms(self.i1, warped, valid, c.window, self.deltas)
        s = strain_tensors(w, self.grid)
        ls1, ls2 = smoothness_terms(s, self.grid, c.beta)
        zero = torch.zeros((), dtype=DTYPE)
        lvd = lvs = lssl = zero
        if self.use_picture:
            v_e, s11, mask, v_bar = epr_tensors(s)
            lvd = picture_data_term(s["e22"], s11, mask, v_bar)
            lvs = picture_smooth_term(v_e, self.grid, c.beta)
        if self.use_ssl:
            lssl = ssl_term(w, self.anchor)
        total = (ld + c.lambda_s * (ls1 + c.gamma * ls2)
                 + c.lambda_v * (lvd + c.lambda_vs * lvs) + self.lambda_sl * lssl)
        parts = {"L_D": ld, "L_s1": ls1, "L_s2": ls2, "L_vd": lvd, "L_vs": lvs, "L_SSL": lssl}
        return total, {k: float(v.detach()) for k, v in parts.items()}


# -- solve ---------------------------------------------------------------------


def _window_decrease(totals: list[float], n: int) -> float:
    """Relative decrease of the lowest total in the last ``n`` iterations
    against the lowest in the ``n`` before them (``inf`` until both exist).

    The starting iterate is left out: Adam's first steps from a fresh
    start can overshoot before descending.
    """
    if len(totals) < 2 * n + 1:
        return math.inf
    prev = min(totals[-2 * n:-n])
    return (prev - min(totals[-n:])) / abs(prev) if prev else 0.0


def _run_level(obj: Objective, w0: torch.Tensor, cfg: SolverConfig, level: int, report: LossReport,
               step: float) -> torch.Tensor:
    w = torch.nn.Parameter(w0.clone())
    opt = torch.optim.Adam([w], lr=step)
    best_val, best_w = math.inf, w0.clone()
    # best iterate after the start; halving restarts from here so that a
    # zero start, which pays no regularisation, cannot undo all progress
    moved_val, moved_w = math.inf, w0.clone()
    last_finite = w0.clone()
    last_cut = 0
    restores = 0
    totals: list[float] = []
    it = 0
    for it in range(cfg.iters_per_level):
        opt.zero_grad(set_to_none=True)
        total, parts = obj(w)
        val = float(total.detach())
        if not math.isfinite(val):
            restores += 1
            if restores > 5:
                report.diverged = True
                raise SolverDivergence(f"total loss not finite at level {level}, iteration {it}", it, report)
            with torch.no_grad():
                w.copy_(last_finite)
            step *= 0.5
            opt = torch.optim.Adam([w], lr=step)
            continue
        restores = 0
        last_finite = w.detach().clone()
        report.history.append({"level": level, "iteration": it, **parts, "total": val, "step": step})
        if not totals:
            report.level_start.append(val)
        totals.append(val)
        if val < best_val:
            best_val, best_w = val, w.detach().clone()
        if len(totals) > 1 and val < moved_val:
            moved_val, moved_w = val, w.detach().clone()
        if _window_decrease(totals, STOP_WINDOW) < cfg.tol:
            break
        if len(totals) - last_cut >= 2 * HALVING_WINDOW and _window_decrease(totals, HALVING_WINDOW) <= 0:
            # the last window brought no progress: back to the best iterate, half the step
            step *= 0.5
            last_cut = len(totals)
            with torch.no_grad():
                w.copy_(moved_w)
            for grp in opt.param_groups:
                grp["lr"] = step
        total.backward()
        opt.step()
    report.iterations.append(it + 1)
    report.level_end.append(best_val)
    return best_w


def _coarse_anchor(anchor: torch.Tensor, level: int) -> torch.Tensor:
    f = 2**level
    return anchor[:, ::f, ::f] / f


def solve(pair: tuple[UsFrame, UsFrame], config: SolverConfig = SolverConfig(),
          anchor: tuple[DispField, float] | None = None) -> tuple[DispField, LossReport]:
    """Estimate the displacement mapping the post frame onto the pre frame.

    ``anchor=(field, lambda_sl)`` adds the consistency penalty toward a
    frozen field on the same grid.
    """
    pre, post = pair
    same_grid(pre.grid, post.grid)
    if anchor is not None:
        same_grid(pre.grid, anchor[0].grid)
    t0 = time.perf_counter()
    report = LossReport(config)
    levels = usable_levels(pre.grid, config.pyramid_levels)
    pyr = build_pyramid(pre, post, levels)
    a_full = tensor(anchor[0].stack()) if anchor is not None else None
    lam_sl = float(anchor[1]) if anchor is not None else 0.0
    w = None
    for level in range(levels - 1, -1, -1):
        i1, i2, g = pyr[level]
        if w is None:
            w = torch.zeros((2, g.height, g.width), dtype=DTYPE)
        else:
            w = upsample_disp(w, g.shape)
        constrained = level < config.constraint_levels
        a = _coarse_anchor(a_full, level) if a_full is not None else None
        obj = Objective(i1, i2, g, config, constrained, a, lam_sl)
        # the correction left after upsampling shrinks level by level
        step = config.step_size * 0.5 ** (levels - 1 - level)
        if constrained and level == levels - 1 and (obj.use_picture or obj.use_ssl):
            # the EPR of a zero field is noise: reach a rough estimate first
            warm = Objective(i1, i2, g, config, False)
            w = _run_level(warm, w, config, level, report, step)
            w = _run_level(obj, w, config, level, report, step)
            report.iterations[-2:] = [sum(report.iterations[-2:])]
            report.level_start.pop(-2)
            report.level_end.pop(-2)
        else:
            w = _run_level(obj, w, config, level, report, step)
        log.debug("level %d: %d iterations, total %.6g", level, report.iterations[-1], report.level_end[-1])
    with torch.no_grad():
        total, parts = obj(w)
    report.final = {**parts, "total": float(total)}
    report.wall_time = time.perf_counter() - t0
    disp = to_numpy(w)
    return DispField(pre.grid, disp[0], disp[1]), report


# -- gradient verification -----------------------------------------------------

GRADIENT_TERMS = ("data", "smoothness", "picture_data", "picture_smooth", "picture", "ssl")


def _smooth_random(rng, shape, sigma=2.5) -> np.ndarray:
    f = scipy.ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return f / f.std()


@dataclass
class _Instance:
    w0: torch.Tensor
    loss: object  # w -> scalar tensor
    signature: object  # w -> bool tensor; must not change under the FD step


def _instance(term: str, size: tuple[int, int], rng: np.random.Generator) -> _Instance:
    h, wd = size
    grid = make_grid(h, wd, 0.05, 0.2)
    a = np.arange(h, dtype=np.float64)[:, None]
    l = np.arange(wd, dtype=np.float64)[None, :]

    if term == "data":
        # monotone trend in both axes keeps every image gradient away from 0,
        # so no unknown's derivative is dominated by FD truncation error
        img = tensor(np.stack([
            rng.uniform(0.5, 1.0) * a + rng.uniform(0.5, 1.0) * l + 0.3 * _smooth_random(rng, size, 2.5)
            for _ in range(3)
        ]))
        # fractional parts stay in (0.27, 0.47): no tap or validity switch under the step
        w0 = tensor(np.stack([0.37 + 0.1 * np.tanh(_smooth_random(rng, size)) for _ in range(2)]))
        with torch.no_grad():
            warped, valid = warp_tensor(img, w0)
        # residual sign varies per pixel, shared by the channels
        sign = np.sign(rng.standard_normal((1, h, wd)))
        i1 = warped + tensor(sign * rng.uniform(0.5, 1.5, (3, h, wd)))
        deltas = channel_deltas(i1)

        def loss(w):
            iw, v = warp_tensor(img, w)
            return data_terms(i1, iw, v, 3, deltas)

        def signature(w):
            iw, v = warp_tensor(img, w)
            return torch.cat([v.flatten() > 0, (i1 - iw).flatten() > 0])

        return _Instance(w0, loss, signature)

    if term == "smoothness":
        # large amplitudes keep |.| arguments far from 0 relative to the step
        w0 = tensor(np.stack([20.0 * _smooth_random(rng, size, 3.0) + 3.0 * a,
                              20.0 * _smooth_random(rng, size, 3.0) - 1.0 * l]))

        def loss(w):
            ls1, ls2 = smoothness_terms(strain_tensors(w, grid), grid, 0.1)
            return ls1 + 1.0 * ls2

        def signature(w):
            return torch.cat([x.flatten() > 0 for x in smoothness_kink_args(strain_tensors(w, grid), grid)])

        return _Instance(w0, loss, signature)

    if term in ("picture_data", "picture_smooth", "picture"):
        # strong compression, EPR spread over roughly (-0.6, 1.4): feasible and infeasible pixels
        w1 = -0.5 * a * (1 + 0.2 * np.tanh(_smooth_random(rng, size, 3.0)))
        v = 0.4 + 1.0 * np.tanh(_smooth_random(rng, size, 2.0))
        w2 = np.cumsum(0.5 * v, axis=1)
        w0 = tensor(np.stack([w1, w2 + 0.5 * _smooth_random(rng, size, 1.0)]))
        s0 = strain_tensors(w0, grid)
        floor = default_floor(s0["e11"])
        s11 = guarded_axial(s0["e11"], floor)
        # mask and mean EPR are constants within a gradient step
        mask, v_bar = feasibility(-s0["e22"] / s11)

        def v_e(w):
            return -strain_tensors(w, grid)["e22"] / s11

        def loss(w):
            s = strain_tensors(w, grid)
            lvd = picture_data_term(s["e22"], s11, mask, v_bar)
            lvs = picture_smooth_term(-s["e22"] / s11, grid, 0.1)
            return {"picture_data": lvd, "picture_smooth": lvs, "picture": lvd + lvs}[term]

        def signature(w):
            ve = v_e(w)
            return torch.cat([d_axial(ve, grid.dz).flatten() > 0, d_lateral(ve, grid.dx).flatten() > 0])

        return _Instance(w0, loss, signature)

    if term == "ssl":
        anchor = tensor(np.stack([_smooth_random(rng, size) for _ in range(2)]))
        off = np.sign(rng.standard_normal((2, h, wd))) * rng.uniform(0.2, 1.0, (2, h, wd))
        w0 = anchor + tensor(off)

        def loss(w):
            return ssl_term(w, anchor)

        def signature(w):
            return (w - anchor).flatten() > 0

        return _Instance(w0, loss, signature)

    raise ValueError(f"unknown loss term {term!r}; choose from {GRADIENT_TERMS}")


def analytic_gradient(term: str, size: tuple[int, int] = (16, 16), seed: int = 0) -> np.ndarray:
    """Autograd gradient of ``term`` at its random instance, shape (2, h, w)."""
    inst = _instance(term, size, seeded_rng(seed))
    w = inst.w0.clone().requires_grad_(True)
    inst.loss(w).backward()
    return to_numpy(w.grad)


def gradient_check(term: str, size: tuple[int, int] = (16, 16), seed: int = 0, step: float = 1e-3,
                   max_attempts: int = 20) -> float:
    """Max relative error between autograd and central differences.

    Compared over unknowns with ``|grad| > 1e-8``. An instance on which the
    finite-difference step crosses a kink of |.| (or flips a validity or
    feasibility switch) is discarded and redrawn.
    """
    if max(size) > 32:
        raise ValueError("gradient checks are limited to 32 x 32")
    for attempt in range(max_attempts):
        inst = _instance(term, size, seeded_rng(seed + 7919 * attempt))
        w = inst.w0.clone().requires_grad_(True)
        inst.loss(w).backward()
        ad = w.grad.detach().flatten()
        base = inst.w0.flatten()
        sig0 = inst.signature(inst.w0)
        fd = torch.zeros_like(base)
        tied = False
        with torch.no_grad():
            for k in range(base.numel()):
                vals = []
                for sgn in (1.0, -1.0):
                    x = base.clone()
                    x[k] += sgn * step
                    x = x.view_as(inst.w0)
                    if not torch.equal(inst.signature(x), sig0):
                        tied = True
                        break
                    vals.append(float(inst.loss(x)))
                if tied:
                    break
                fd[k] = (vals[0] - vals[1]) / (2 * step)
        if tied:
            continue
        sel = ad.abs() > 1e-8
        if not bool(sel.any()):
            return 0.0
        return float(((ad[sel] - fd[sel]).abs() / ad[sel].abs()).max())
    raise RuntimeError(f"no tie-free instance for {term!r} after {max_attempts} draws")
