"""Self-supervised consistency: input transforms and a two-pass solve.

With per-pair optimisation there is no network to share between passes,
so the consistency term acts as a penalty in a second solve on the
transformed pair, anchored to the frozen first-pass field.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from ._ops import DISP_DELTA, smooth_abs, tensor
from .grid import DispField, UsFrame, seeded_rng


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]  # (a, l) in samples
    radius: float
    noise_std: float  # multiple of the frame's RF RMS


@dataclass(frozen=True)
class SslTransform:
    kind: str = "crop"  # "crop" | "noise_discs" | "both"
    crop_rect: tuple[int, int, int, int] | None = None  # (a0, l0, h, w)
    discs: tuple[Disc, ...] = ()
    seed: int = 0

    def validate(self, height: int, width: int):
        """Check against a ``height`` x ``width`` input; discs are checked in output coordinates."""
        if self.kind not in ("crop", "noise_discs", "both"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.crop_rect is not None:
            a0, l0, h, w = self.crop_rect
            if a0 < 0 or l0 < 0 or a0 + h > height or l0 + w > width:
                raise ValueError(f"crop rect {self.crop_rect} leaves the {height}x{width} grid")
            if 2 * h < height or 2 * w < width:
                raise ValueError(f"crop rect {self.crop_rect} keeps less than half the frame")
            if self.crops:
                height, width = h, w
        for d in self.discs:
            a, l = d.center
            if d.radius <= 0 or a - d.radius < 0 or l - d.radius < 0 \
                    or a + d.radius > height - 1 or l + d.radius > width - 1:
                raise ValueError(f"disc {d} leaves the grid")
            if d.noise_std < 0:
                raise ValueError("disc noise_std must be non-negative")

    @property
    def crops(self) -> bool:
        return self.kind in ("crop", "both") and self.crop_rect is not None

    @property
    def adds_noise(self) -> bool:
        return self.kind in ("noise_discs", "both") and any(d.noise_std > 0 for d in self.discs)


IDENTITY = SslTransform(kind="crop", crop_rect=None)


def random_transform(height: int, width: int, seed: int, keep: float = 0.75, n_discs: int = 3,
                     disc_radius: float = 0.05, noise_std: float = 2.0) -> SslTransform:
    """Random crop keeping ``keep`` of each dimension, plus noise discs.

    Disc radius is a fraction of the frame height, noise in RF RMS units.
    """
    rng = seeded_rng(seed)
    h, w = int(round(keep * height)), int(round(keep * width))
    a0 = int(rng.integers(0, height - h + 1))
    l0 = int(rng.integers(0, width - w + 1))
    r = max(disc_radius * height, 1.0)
    # discs live in the cropped frame's coordinates
    discs = tuple(
        Disc((float(rng.uniform(r, h - 1 - r)), float(rng.uniform(r, w - 1 - r))), r, noise_std)
        for _ in range(n_discs)
    ) if 2 * r < min(h, w) - 1 else ()
    return SslTransform("both", (a0, l0, h, w), discs, seed)


@dataclass(frozen=True)
class CoordMap:
    """Transformed-grid index ``(a, l)`` maps to ``(a + a0, l + l0)`` in the original."""

    a0: int = 0
    l0: int = 0
    height: int | None = None
    width: int | None = None

    def crop(self, arr: np.ndarray) -> np.ndarray:
        return arr[..., self.a0:self.a0 + self.height, self.l0:self.l0 + self.width]


def _crop_frame(frame: UsFrame, rect) -> UsFrame:
    a0, l0, h, w = rect
    g = frame.grid.sub(h, w)
    sl = (slice(a0, a0 + h), slice(l0, l0 + w))
    return UsFrame(g, frame.rf[sl], frame.env[sl], frame.imag[sl])


def _noise_discs(frame: UsFrame, discs, rng: np.random.Generator) -> UsFrame:
    rms = float(np.sqrt(np.mean(frame.rf**2)))
    rf = frame.rf.copy()
    a = np.arange(frame.grid.height)[:, None]
    l = np.arange(frame.grid.width)[None, :]
    for d in discs:
        inside = (a - d.center[0]) ** 2 + (l - d.center[1]) ** 2 <= d.radius**2
        rf[inside] += rng.normal(0.0, d.noise_std * rms, size=int(inside.sum()))
    return UsFrame.from_rf(frame.grid, rf)


def apply_transform(frame: UsFrame, t: SslTransform, rng: np.random.Generator | None = None,
                    noise: bool = True) -> tuple[UsFrame, CoordMap]:
    """Crop and/or add noise discs; returns the frame and its coordinate map.

    Disc centres are given in the coordinates of the (cropped) output.
    """
    g = frame.grid
    t.validate(g.height, g.width)
    if rng is None:
        rng = seeded_rng(t.seed)
    out = frame
    cmap = CoordMap(0, 0, g.height, g.width)
    if t.crops:
        out = _crop_frame(frame, t.crop_rect)
        a0, l0, h, w = t.crop_rect
        cmap = CoordMap(a0, l0, h, w)
    if noise and t.adds_noise:
        out = _noise_discs(out, [d for d in t.discs if d.noise_std > 0], rng)
    return out, cmap


def ssl_term(w_second: torch.Tensor, anchor: torch.Tensor, overlap: torch.Tensor | None = None,
             delta: float = DISP_DELTA) -> torch.Tensor:
    """Mean |anchor - w| per component over the overlap, averaged over components.

    ``anchor`` is detached: no gradient reaches the first-pass field.
    """
    a = anchor.detach()
    if overlap is None:
        overlap = torch.ones(w_second.shape[-2:], dtype=w_second.dtype)
    n = overlap.sum()
    if n <= 0:
        raise ValueError("empty overlap")
    per = (overlap * smooth_abs(a - w_second, delta)).sum(dim=(-2, -1)) / n
    return per.mean()


def ssl_loss(w_first: DispField, w_second: DispField, coord_map: CoordMap | None = None,
             overlap_mask: np.ndarray | None = None) -> float:
    """Consistency between a second-pass field and the mapped first-pass field."""
    if coord_map is None:
        coord_map = CoordMap(0, 0, w_second.grid.height, w_second.grid.width)
    mapped = coord_map.crop(w_first.stack())
    if mapped.shape[1:] != w_second.grid.shape:
        raise ValueError(f"mapped first field {mapped.shape[1:]} does not match {w_second.grid.shape}")
    ov = None if overlap_mask is None else tensor(overlap_mask)
    return float(ssl_term(tensor(w_second.stack()), tensor(mapped), ov, delta=0.0))


@dataclass
class TwoStageResult:
    w_first: DispField
    w_second: DispField
    report: "object"
    report_second: "object"
    transform: SslTransform
    coord_map: CoordMap


def two_stage_solve(pair: tuple[UsFrame, UsFrame], config, transform: SslTransform | None = None,
                    noise_on: str = "post", first=None) -> TwoStageResult:
    """First pass on the raw pair, second pass on the transformed pair.

    Both frames are cropped identically; noise discs go on the frames named
    by ``noise_on`` ("post", "pre" or "both"). The second pass adds
    ``config.lambda_sl`` times :func:`ssl_loss` against the frozen first
    field. The first-pass field is the reported estimate; pass ``first``
    as a ``(DispField, LossReport)`` from an identical unconstrained-SSL
    solve to skip recomputing it.
    """
    from .solver import solve

    pre, post = pair
    g = pre.grid
    if transform is None:
        transform = random_transform(g.height, g.width, config.seed)
    w1, rep1 = first if first is not None else solve(pair, replace(config, lambda_sl=0.0))
    rng = seeded_rng(transform.seed + 1)
    pre_t, cmap = apply_transform(pre, transform, rng, noise=noise_on in ("pre", "both"))
    post_t, _ = apply_transform(post, transform, rng, noise=noise_on in ("post", "both"))
    anchor = DispField(pre_t.grid, *cmap.crop(w1.stack()))
    w2, rep2 = solve((pre_t, post_t), config, anchor=(anchor, config.lambda_sl))
    return TwoStageResult(w1, w2, rep1, rep2, transform, cmap)
