"""In-plane strain tensor and the first/second-order smoothness penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ._ops import STRAIN_DELTA, d_axial, d_lateral, smooth_abs, tensor, to_numpy
from .grid import DispField, GridSpec, _check_shape, _frozen


@dataclass(frozen=True)
class StrainField:
    """Dimensionless strains ``e_xy = dW_x / dy`` (1 = axial, 2 = lateral)."""

    grid: GridSpec
    e11: np.ndarray
    e12: np.ndarray
    e21: np.ndarray
    e22: np.ndarray

    def __post_init__(self):
        for name in ("e11", "e12", "e21", "e22"):
            arr = _frozen(getattr(self, name))
            _check_shape(self.grid, arr, name)
            object.__setattr__(self, name, arr)

    @property
    def shear(self) -> np.ndarray:
        return 0.5 * (self.e12 + self.e21)


@dataclass(frozen=True)
class SmoothWeights:
    beta: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def strain_tensors(disp: torch.Tensor, grid: GridSpec) -> dict[str, torch.Tensor]:
    """Strains of a ``(2, H, W)`` sample-unit displacement tensor.

    Displacements are converted to mm and differentiated with physical
    spacing, so every component is dimensionless.
    """
    w1 = disp[0] * grid.dz
    w2 = disp[1] * grid.dx
    return {
        "e11": d_axial(w1, grid.dz),
        "e12": d_lateral(w1, grid.dx),
        "e21": d_axial(w2, grid.dz),
        "e22": d_lateral(w2, grid.dx),
    }


def compute_strain(disp: DispField) -> StrainField:
    s = strain_tensors(tensor(disp.stack()), disp.grid)
    return StrainField(disp.grid, **{k: to_numpy(v) for k, v in s.items()})


def smoothness_terms(
    s: dict[str, torch.Tensor], grid: GridSpec, beta: float, delta: float = STRAIN_DELTA
) -> tuple[torch.Tensor, torch.Tensor]:
    """``(ls1, ls2)`` from strain tensors, mean-reduced over pixels."""
    e11, e12, e21, e22 = s["e11"], s["e12"], s["e21"], s["e22"]

    def m(x):
        return smooth_abs(x, delta).mean()

    ls1 = m(e11 - e11.mean()) + beta * m(e12) + 0.5 * m(e21) + 0.5 * beta * m(e22)
    ls2 = (
        m(d_axial(e11, grid.dz))
        + beta * m(d_lateral(e11, grid.dx))
        + 0.5 * m(d_axial(e22, grid.dz))
        + 0.5 * beta * m(d_lateral(e22, grid.dx))
    )
    return ls1, ls2


def smoothness_kink_args(s: dict[str, torch.Tensor], grid: GridSpec) -> list[torch.Tensor]:
    """Arguments of every |.| in :func:`smoothness_terms` (for tie detection)."""
    e11, e22 = s["e11"], s["e22"]
    return [
        e11 - e11.mean(), s["e12"], s["e21"], e22,
        d_axial(e11, grid.dz), d_lateral(e11, grid.dx),
        d_axial(e22, grid.dz), d_lateral(e22, grid.dx),
    ]


def smoothness_loss(strain: StrainField, w: SmoothWeights) -> tuple[float, float, float]:
    """Return ``(ls1, ls2, ls1 + gamma * ls2)``."""
    s = {k: tensor(getattr(strain, k)) for k in ("e11", "e12", "e21", "e22")}
    ls1, ls2 = smoothness_terms(s, strain.grid, w.beta, delta=0.0)
    ls1, ls2 = float(ls1), float(ls2)
    return ls1, ls2, ls1 + w.gamma * ls2
