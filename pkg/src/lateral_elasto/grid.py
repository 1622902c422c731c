"""Grids, multi-channel fields and seeded random streams.

Index convention: axis 0 is axial (index ``a``, pitch ``dz``), axis 1 is
lateral (index ``l``, pitch ``dx``). Displacements are stored in sample
units; strain computations convert to millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_SIZE = 8


class GridError(ValueError):
    """Raised for invalid grids or mismatched fields."""


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    dz: float
    dx: float

    def __post_init__(self):
        if self.height < MIN_SIZE or self.width < MIN_SIZE:
            raise GridError(
                f"dimension-too-small: grid {self.height}x{self.width} is below {MIN_SIZE}x{MIN_SIZE}"
            )
        if not (self.dz > 0 and self.dx > 0) or not np.isfinite([self.dz, self.dx]).all():
            raise GridError(f"non-positive-pitch: dz={self.dz}, dx={self.dx}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def aspect(self) -> float:
        """Lateral-to-axial pitch ratio ``dx / dz``."""
        return self.dx / self.dz

    def coarsen(self, factor: int = 2) -> "GridSpec":
        """Grid of a ``factor``-decimated field (samples ``0, factor, ...``)."""
        return GridSpec(
            -(-self.height // factor), -(-self.width // factor), self.dz * factor, self.dx * factor
        )

    def sub(self, height: int, width: int) -> "GridSpec":
        return GridSpec(height, width, self.dz, self.dx)


def make_grid(height: int, width: int, dz: float, dx: float) -> GridSpec:
    """Validated grid; raises :class:`GridError` on bad dimensions or pitch."""
    return GridSpec(int(height), int(width), float(dz), float(dx))


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic stream: numpy ``Generator`` over PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_shape(grid: GridSpec, arr: np.ndarray, name: str):
    if arr.shape != grid.shape:
        raise GridError(f"{name} has shape {arr.shape}, grid is {grid.shape}")
    if not np.isfinite(arr).all():
        raise GridError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class Field2D:
    """Channel-stacked float32 samples ``data[channel, a, l]`` on a grid."""

    grid: GridSpec
    data: np.ndarray
    label: str = "field"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[1:] != self.grid.shape:
            raise GridError(f"field data shape {data.shape} does not match grid {self.grid.shape}")
        if not np.isfinite(data).all():
            raise GridError("field contains non-finite values")
        object.__setattr__(self, "data", _frozen(data, np.float32))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def channel(self, i: int) -> np.ndarray:
        return self.data[i]


@dataclass(frozen=True)
class UsFrame:
    """RF frame with its envelope and analytic-signal imaginary part."""

    grid: GridSpec
    rf: np.ndarray
    env: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        for name in ("rf", "env", "imag"):
            arr = _frozen(getattr(self, name))
            _check_shape(self.grid, arr, name)
            object.__setattr__(self, name, arr)
        lhs = self.env**2
        rhs = self.rf**2 + self.imag**2
        # float32 storage of each channel bounds the mismatch well below 1e-6
        atol = 1e-12 * max(float(rhs.max()), 1e-300)
        if not np.allclose(lhs, rhs, rtol=1e-6, atol=atol):
            raise GridError("envelope does not satisfy env^2 = rf^2 + imag^2")

    @classmethod
    def from_rf(cls, grid: GridSpec, rf) -> "UsFrame":
        from .signal import analytic_signal_2d

        rf = np.asarray(rf, dtype=np.float64)
        imag, env = analytic_signal_2d(rf)
        return cls(grid, rf, env, imag)

    def stack(self) -> np.ndarray:
        """``(3, H, W)`` array ordered rf, env, imag."""
        return np.stack([self.rf, self.env, self.imag])

    def to_field(self, label: str = "frame") -> Field2D:
        return Field2D(self.grid, self.stack(), label)

    @classmethod
    def from_field(cls, f: Field2D) -> "UsFrame":
        if f.channels != 3:
            raise GridError(f"a frame needs 3 channels, got {f.channels}")
        d = f.data.astype(np.float64)
        return cls(f.grid, d[0], d[1], d[2])


@dataclass(frozen=True)
class DispField:
    """Axial and lateral displacement in samples (``W1``, ``W2``)."""

    grid: GridSpec
    axial: np.ndarray
    lateral: np.ndarray

    def __post_init__(self):
        for name in ("axial", "lateral"):
            arr = _frozen(getattr(self, name))
            _check_shape(self.grid, arr, name)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "DispField":
        z = np.zeros(grid.shape)
        return cls(grid, z, z)

    def stack(self) -> np.ndarray:
        return np.stack([self.axial, self.lateral])

    @property
    def axial_mm(self) -> np.ndarray:
        return self.axial * self.grid.dz

    @property
    def lateral_mm(self) -> np.ndarray:
        return self.lateral * self.grid.dx

    def to_field(self, label: str = "displacement") -> Field2D:
        return Field2D(self.grid, self.stack(), label)

    @classmethod
    def from_field(cls, f: Field2D) -> "DispField":
        if f.channels != 2:
            raise GridError(f"a displacement field needs 2 channels, got {f.channels}")
        d = f.data.astype(np.float64)
        return cls(f.grid, d[0], d[1])


def same_grid(*grids: GridSpec):
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridError(f"grid mismatch: {first} vs {g}")
