"""YAML configuration files for phantoms, the solver and SSL transforms.

A file may hold any of the top-level sections ``grid``, ``phantom``,
``noise``, ``solver``, ``ssl`` and ``windows``; each consumer reads the
sections it needs and rejects unknown keys inside them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .grid import GridSpec, make_grid
from .phantom import Inclusion, PhantomSpec, PsfParams
from .solver import SolverConfig

SECTIONS = ("grid", "phantom", "noise", "solver", "ssl", "windows")


class ConfigError(ValueError):
    pass


def load(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return data


def dump(data: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")


def _build(cls, d: dict | None, what: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def grid_from(data: dict) -> GridSpec:
    g = data.get("grid")
    if not g:
        raise ConfigError("missing 'grid' section")
    try:
        return make_grid(int(g["height"]), int(g["width"]), float(g["dz"]), float(g["dx"]))
    except KeyError as exc:
        raise ConfigError(f"grid needs height, width, dz, dx (missing {exc})") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def phantom_from(data: dict) -> PhantomSpec:
    grid = grid_from(data)
    p = dict(data.get("phantom") or {})
    psf = _build(PsfParams, p.pop("psf", None), "psf")
    incs = []
    for raw in p.pop("inclusions", None) or []:
        raw = dict(raw)
        if "center" in raw:
            raw["center"] = tuple(float(c) for c in raw["center"])
        incs.append(_build(Inclusion, raw, "inclusion"))
    return _build(PhantomSpec, {**p, "grid": grid, "psf": psf, "inclusions": tuple(incs)}, "phantom")


def phantom_to_dict(spec: PhantomSpec) -> dict:
    g = spec.grid
    return {
        "grid": {"height": g.height, "width": g.width, "dz": g.dz, "dx": g.dx},
        "phantom": {
            "scatterer_density": spec.scatterer_density,
            "bg_poisson": spec.bg_poisson,
            "bg_strain": spec.bg_strain,
            "seed": spec.seed,
            "psf": asdict(spec.psf),
            "inclusions": [{**asdict(i), "center": list(i.center)} for i in spec.inclusions],
        },
    }


def snr_from(data: dict) -> float:
    """Frame SNR in dB from the ``noise`` section; ``inf`` (noiseless) by default."""
    n = data.get("noise") or {}
    unknown = set(n) - {"snr_db"}
    if unknown:
        raise ConfigError(f"unknown noise keys: {sorted(unknown)}")
    v = n.get("snr_db", math.inf)
    return math.inf if v in (None, "inf", "Infinity") else float(v)


def solver_from(data: dict) -> SolverConfig:
    return _build(SolverConfig, data.get("solver"), "solver")


@dataclass(frozen=True)
class SslSettings:
    """Parameters of the default random transform and where its noise goes."""

    keep: float = 0.75
    n_discs: int = 3
    disc_radius: float = 0.05
    noise_std: float = 2.0
    noise_on: str = "post"

    def __post_init__(self):
        if not 0.5 <= self.keep <= 1.0:
            raise ValueError("keep must be in [0.5, 1]")
        if self.n_discs < 0 or self.disc_radius <= 0 or self.noise_std < 0:
            raise ValueError("disc settings must be non-negative (radius positive)")
        if self.noise_on not in ("pre", "post", "both"):
            raise ValueError("noise_on must be pre, post or both")


def ssl_from(data: dict) -> SslSettings:
    return _build(SslSettings, data.get("ssl"), "ssl")


def windows_from(data: dict) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
    w = data.get("windows")
    if not w:
        return None
    try:
        return tuple(int(v) for v in w["target"]), tuple(int(v) for v in w["background"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("windows need 'target' and 'background' as [a0, l0, h, w]") from exc
