"""Field files: raw little-endian float32 samples plus a YAML sidecar.

``name.f32`` holds ``channels * height * width`` values in (channel, a, l)
C order. ``name.yaml`` records the grid, channel count and a label.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .grid import DispField, Field2D, GridError, GridSpec, UsFrame
from .picture import EPR_MAX, EPR_MIN, EprField
from .strain import StrainField

DATA_SUFFIX = ".f32"
HEADER_SUFFIX = ".yaml"
_DTYPE = np.dtype("<f4")


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (DATA_SUFFIX, HEADER_SUFFIX):
        p = p.with_suffix("")
    return p.with_suffix(DATA_SUFFIX), p.with_suffix(HEADER_SUFFIX)


def write_field(field: Field2D, path) -> tuple[Path, Path]:
    data_path, header_path = _paths(path)
    data_path.parent.mkdir(parents=True, exist_ok=True)
    data_path.write_bytes(np.ascontiguousarray(field.data, dtype=_DTYPE).tobytes())
    g = field.grid
    header = {
        "height": g.height,
        "width": g.width,
        "dz": g.dz,
        "dx": g.dx,
        "channels": field.channels,
        "label": field.label,
        "dtype": "float32-le",
        "order": "channel,a,l",
    }
    header_path.write_text(yaml.safe_dump(header, sort_keys=False))
    return data_path, header_path


def read_field(path) -> Field2D:
    data_path, header_path = _paths(path)
    header = yaml.safe_load(header_path.read_text())
    grid = GridSpec(int(header["height"]), int(header["width"]), float(header["dz"]), float(header["dx"]))
    channels = int(header["channels"])
    raw = np.frombuffer(data_path.read_bytes(), dtype=_DTYPE)
    expected = channels * grid.height * grid.width
    if raw.size != expected:
        raise ValueError(f"{data_path}: {raw.size} values, header implies {expected}")
    data = raw.reshape(channels, grid.height, grid.width).astype(np.float32)
    return Field2D(grid, data, str(header.get("label", "field")))


def write_frame(frame: UsFrame, path, label: str = "frame"):
    return write_field(frame.to_field(label), path)


def read_frame(path) -> UsFrame:
    return UsFrame.from_field(read_field(path))


def write_disp(disp: DispField, path, label: str = "displacement"):
    return write_field(disp.to_field(label), path)


def read_disp(path) -> DispField:
    return DispField.from_field(read_field(path))


STRAIN_CHANNELS = ("e11", "e12", "e21", "e22")


def write_strain(strain: StrainField, path, label: str = "strain"):
    data = np.stack([getattr(strain, k) for k in STRAIN_CHANNELS])
    return write_field(Field2D(strain.grid, data, label), path)


def read_strain(path) -> StrainField:
    f = read_field(path)
    if f.channels != 4:
        raise GridError(f"a strain field needs 4 channels, got {f.channels}")
    d = f.data.astype(np.float64)
    return StrainField(f.grid, *d)


def write_epr(epr: EprField, path, label: str = "epr"):
    """Two channels: the EPR map and its infeasibility mask."""
    return write_field(Field2D(epr.grid, np.stack([epr.v_e, epr.mask]), label), path)


def read_epr(path, bounds: tuple[float, float] = (EPR_MIN, EPR_MAX)) -> EprField:
    """Read an EPR file; the mean feasible EPR is recomputed from the mask."""
    f = read_field(path)
    if f.channels != 2:
        raise GridError(f"an EPR field needs 2 channels (v_e, mask), got {f.channels}")
    v_e, mask = f.data.astype(np.float64)
    feasible = mask == 0
    v_bar = float(v_e[feasible].mean()) if feasible.any() else 0.5 * (bounds[0] + bounds[1])
    return EprField(f.grid, v_e, mask, v_bar, tuple(bounds))
