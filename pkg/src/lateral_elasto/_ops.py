"""Torch helpers shared by the differentiable loss terms (float64, CPU)."""

from __future__ import annotations

import numpy as np
import torch

DTYPE = torch.float64

# Smoothing offsets for |x| in terms whose arguments are not image data.
STRAIN_DELTA = 1e-9
DISP_DELTA = 1e-9


def tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def smooth_abs(x: torch.Tensor, delta: float) -> torch.Tensor:
    """``sqrt(x^2 + delta^2) - delta``: exact 0 at 0, |x| - O(delta) elsewhere."""
    if delta <= 0:
        return x.abs()
    return torch.sqrt(x * x + delta * delta) - delta


def d_axial(t: torch.Tensor, spacing: float) -> torch.Tensor:
    """Derivative along axis -2: central inside, one-sided at the edges."""
    return torch.gradient(t, spacing=spacing, dim=-2, edge_order=1)[0]


def d_lateral(t: torch.Tensor, spacing: float) -> torch.Tensor:
    return torch.gradient(t, spacing=spacing, dim=-1, edge_order=1)[0]


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float64)
