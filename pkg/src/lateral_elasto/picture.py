"""Effective Poisson's ratio (EPR) and the feasibility constraint on it.

The axial strain enters only through a stop-gradient: penalties here can
move the lateral displacement but never the axial one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ._ops import STRAIN_DELTA, d_axial, d_lateral, smooth_abs, tensor, to_numpy
from .grid import GridSpec, _check_shape, _frozen
from .strain import StrainField

EPR_MIN = 0.1
EPR_MAX = 0.6


@dataclass(frozen=True)
class EprField:
    grid: GridSpec
    v_e: np.ndarray
    mask: np.ndarray
    v_bar: float
    bounds: tuple[float, float] = (EPR_MIN, EPR_MAX)

    def __post_init__(self):
        for name in ("v_e", "mask"):
            arr = _frozen(getattr(self, name))
            _check_shape(self.grid, arr, name)
            object.__setattr__(self, name, arr)

    @property
    def infeasible_fraction(self) -> float:
        return float(self.mask.mean())


def default_floor(e11) -> float:
    """``1e-4 * median|e11|`` (never below 1e-12)."""
    e = e11.detach().numpy() if isinstance(e11, torch.Tensor) else np.asarray(e11)
    return max(1e-4 * float(np.median(np.abs(e))), 1e-12)


def guarded_axial(e11: torch.Tensor, eps_floor: float) -> torch.Tensor:
    """Sign-preserving floor on ``|e11|``, detached (stop-gradient)."""
    e = e11.detach()
    sign = torch.where(e < 0, -1.0, 1.0).to(e.dtype)
    return sign * e.abs().clamp_min(eps_floor)


def feasibility(v_e: torch.Tensor, bounds=(EPR_MIN, EPR_MAX)) -> tuple[torch.Tensor, torch.Tensor]:
    """Mask (1 = infeasible) and mean feasible EPR; midpoint if none."""
    lo, hi = bounds
    v = v_e.detach()
    feasible = (v > lo) & (v < hi)
    mask = (~feasible).to(v.dtype)
    n = int(feasible.sum())
    v_bar = v[feasible].mean() if n else torch.tensor(0.5 * (lo + hi), dtype=v.dtype)
    return mask, v_bar


def epr_tensors(s: dict[str, torch.Tensor], eps_floor: float | None = None, bounds=(EPR_MIN, EPR_MAX)):
    """``(v_e, s_e11, mask, v_bar)``; ``v_e`` carries gradient through e22 only."""
    if eps_floor is None:
        eps_floor = default_floor(s["e11"].detach())
    s11 = guarded_axial(s["e11"], eps_floor)
    v_e = -s["e22"] / s11
    mask, v_bar = feasibility(v_e, bounds)
    return v_e, s11, mask, v_bar


def compute_epr(strain: StrainField, eps_floor: float | None = None, bounds=(EPR_MIN, EPR_MAX)) -> EprField:
    s = {"e11": tensor(strain.e11), "e22": tensor(strain.e22)}
    v_e, _, mask, v_bar = epr_tensors(s, eps_floor, bounds)
    return EprField(strain.grid, to_numpy(v_e), to_numpy(mask), float(v_bar), tuple(bounds))


def picture_data_term(e22: torch.Tensor, s11: torch.Tensor, mask: torch.Tensor, v_bar) -> torch.Tensor:
    """RMS over all pixels of ``mask * (e22 + v_bar * S(e11))``."""
    r = mask * (e22 + v_bar * s11)
    ms = (r * r).mean()
    # sqrt has no derivative at 0; the residual is then identically 0 anyway
    return torch.sqrt(ms) if float(ms.detach()) > 0 else ms


def picture_smooth_term(v_e: torch.Tensor, grid: GridSpec, beta: float, delta: float = STRAIN_DELTA) -> torch.Tensor:
    return (smooth_abs(d_axial(v_e, grid.dz), delta).mean()
            + beta * smooth_abs(d_lateral(v_e, grid.dx), delta).mean())


def picture_data_loss(strain: StrainField, epr: EprField, eps_floor: float | None = None) -> float:
    e11 = tensor(strain.e11)
    floor = default_floor(e11) if eps_floor is None else eps_floor
    return float(picture_data_term(tensor(strain.e22), guarded_axial(e11, floor),
                                   tensor(epr.mask), float(epr.v_bar)))


def picture_smooth_loss(epr: EprField, beta: float) -> float:
    return float(picture_smooth_term(tensor(epr.v_e), epr.grid, beta, delta=0.0))


def picture_loss(strain: StrainField, epr: EprField, lambda_vs: float, beta: float = 0.1) -> float:
    return picture_data_loss(strain, epr) + lambda_vs * picture_smooth_loss(epr, beta)
