"""Catmull-Rom image warping and the windowed L1 data term."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ._ops import smooth_abs, tensor, to_numpy
from .grid import DispField, Field2D, UsFrame, same_grid


def catmull_rom_weights(t: torch.Tensor) -> torch.Tensor:
    """Weights for taps ``i-1, i, i+1, i+2`` at fractional offset ``t``."""
    t2 = t * t
    t3 = t2 * t
    return torch.stack([
        0.5 * (-t3 + 2 * t2 - t),
        0.5 * (3 * t3 - 5 * t2 + 2),
        0.5 * (-3 * t3 + 4 * t2 + t),
        0.5 * (t3 - t2),
    ])


def sample_bicubic(img: torch.Tensor, y: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Sample ``(C, H, W)`` ``img`` at index positions ``(y, x)``.

    Positions are clamped to the image, so samples outside it take edge
    values. Differentiable in ``y`` and ``x``.
    """
    C, H, W = img.shape
    yc = y.clamp(0, H - 1)
    xc = x.clamp(0, W - 1)
    y0 = torch.floor(yc).detach()
    x0 = torch.floor(xc).detach()
    wy = catmull_rom_weights(yc - y0)
    wx = catmull_rom_weights(xc - x0)
    taps = torch.arange(-1, 3).view(4, *([1] * y.dim()))
    iy = (y0.long().unsqueeze(0) + taps).clamp(0, H - 1)
    ix = (x0.long().unsqueeze(0) + taps).clamp(0, W - 1)
    flat = iy.unsqueeze(1) * W + ix.unsqueeze(0)  # (4, 4, *out)
    g = img.reshape(C, -1)[:, flat.reshape(-1)].reshape(C, 4, 4, *y.shape)
    return torch.einsum("cij...,i...,j...->c...", g, wy, wx)


def warp_tensor(img: torch.Tensor, disp: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Warp ``img`` by ``disp`` (2, H, W); returns (warped, validity 0/1)."""
    _, H, W = img.shape
    a = torch.arange(H, dtype=disp.dtype).view(H, 1)
    l = torch.arange(W, dtype=disp.dtype).view(1, W)
    y = a + disp[0]
    x = l + disp[1]
    warped = sample_bicubic(img, y, x)
    with torch.no_grad():
        valid = ((y >= 1) & (y <= H - 2) & (x >= 1) & (x <= W - 2)).to(disp.dtype)
    return warped, valid


def _stack(frame) -> np.ndarray:
    if isinstance(frame, UsFrame):
        return frame.stack()
    if isinstance(frame, Field2D):
        return frame.data.astype(np.float64)
    return np.asarray(frame, dtype=np.float64)


def warp_frame(frame: UsFrame, disp: DispField) -> tuple[Field2D, np.ndarray]:
    """Sample every channel of ``frame`` at ``(a + W1, l + W2)``.

    The result is a plain 3-channel field: interpolated channels no longer
    obey the envelope identity of a :class:`UsFrame`.
    """
    same_grid(frame.grid, disp.grid)
    warped, valid = warp_tensor(tensor(frame.stack()), tensor(disp.stack()))
    return Field2D(frame.grid, to_numpy(warped), "warped"), to_numpy(valid)


def channel_deltas(i1: torch.Tensor, rel: float = 1e-6) -> torch.Tensor:
    """Per-channel smoothing offset: ``rel`` times the channel RMS."""
    return rel * torch.sqrt((i1 * i1).mean(dim=(-2, -1)))


def data_terms(
    i1: torch.Tensor, i2w: torch.Tensor, valid: torch.Tensor, window: int = 3, deltas=None
) -> torch.Tensor:
    """Validity-weighted N x N window mean of the channel-summed |I1 - I2w|,
    averaged over valid pixels."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    n_valid = valid.sum()
    if n_valid <= 0:
        raise ValueError("empty valid region")
    diff = i1 - i2w
    if deltas is None:
        r = diff.abs().sum(0)
    else:
        r = sum(smooth_abs(diff[c], float(deltas[c])) for c in range(diff.shape[0]))
    if window > 1:
        pad = window // 2
        num = F.avg_pool2d((valid * r)[None, None], window, stride=1, padding=pad)[0, 0]
        den = F.avg_pool2d(valid[None, None], window, stride=1, padding=pad)[0, 0]
        r = num / den.clamp_min(1e-12)
    return (valid * r).sum() / n_valid


def data_loss(i1, i2_warped, validity, window: int = 3) -> float:
    """Windowed L1 data loss between a reference frame and a warped frame."""
    v = tensor(validity)
    return float(data_terms(tensor(_stack(i1)), tensor(_stack(i2_warped)), v, window))
