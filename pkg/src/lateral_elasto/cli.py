"""Command line: simulate, solve, evaluate and sweep.

Exit codes: 0 success, 2 usage, 3 bad data or config, 4 solver divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import config as cfgio
from . import fieldio, metrics
from .grid import Field2D, GridError
from .phantom import PhantomError, simulate
from .picture import compute_epr
from .pipeline import ARMS, SWEEP_COLUMNS, noisy_pair, solve_arm, sweep
from .solver import SolverConfig, SolverDivergence
from .strain import compute_strain

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

# colormap name and fixed value range of every PNG rendering
PNG_STYLES = {
    "strain_axial": ("gray", (-0.05, 0.0)),
    "strain_lateral": ("RdBu_r", (-0.03, 0.03)),
    "epr": ("viridis", (0.0, 1.0)),
}

log = logging.getLogger("lateral_elasto")


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, info: dict) -> Path:
    """List every file in ``out_dir`` with its SHA-256; no timestamps."""
    files = {p.relative_to(out_dir).as_posix(): _sha256(p)
             for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps({"command": command, **info, "files": files}, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def render_png(img: np.ndarray, cmap: str, vrange: tuple[float, float], path: Path) -> None:
    """8-bit RGB rendering with a fixed value range."""
    from matplotlib import colormaps

    lo, hi = vrange
    t = np.clip((np.asarray(img, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    rgb = (colormaps[cmap](t)[..., :3] * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(rgb).save(path, format="PNG")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


# -- simulate ------------------------------------------------------------------


def cmd_simulate(config_path, out_dir) -> Path:
    """Simulate a phantom pair; writes 7 field files and a manifest."""
    data = cfgio.load(config_path)
    spec = cfgio.phantom_from(data)
    snr = cfgio.snr_from(data)
    out = _out_dir(out_dir)
    pre, post, truth = simulate(spec)
    pre, post = noisy_pair(pre, post, snr, spec.seed)
    fieldio.write_frame(pre, out / "pre", "pre")
    fieldio.write_frame(post, out / "post", "post")
    fieldio.write_disp(truth.disp, out / "truth_disp", "truth displacement")
    fieldio.write_strain(truth.strain, out / "truth_strain", "truth strain")
    fieldio.write_field(Field2D(spec.grid, truth.epr_map, "truth epr"), out / "truth_epr")
    fieldio.write_field(Field2D(spec.grid, truth.poisson_map, "truth poisson"), out / "truth_poisson")
    fieldio.write_field(Field2D(spec.grid, inclusion_mask(spec), "inclusion mask"), out / "truth_inclusions")
    cfg = cfgio.phantom_to_dict(spec)
    cfg["noise"] = {"snr_db": None if math.isinf(snr) else snr}
    return write_manifest(out, "simulate", {"config": cfg})


def inclusion_mask(spec) -> np.ndarray:
    """1 inside any inclusion disc, else 0."""
    g = spec.grid
    z = np.arange(g.height)[:, None] * g.dz
    x = np.arange(g.width)[None, :] * g.dx
    m = np.zeros(g.shape)
    for inc in spec.inclusions:
        m[np.hypot(z - inc.center[0], x - inc.center[1]) <= inc.radius] = 1.0
    return m


# -- solve ---------------------------------------------------------------------


def effective_config(cfg: SolverConfig, picture: str | None, ssl: str | None) -> tuple[SolverConfig, str]:
    """Apply the on/off flags to ``cfg`` and name the resulting arm.

    Flags win over the config: ``off`` zeroes the weight whatever the file
    says, ``on`` keeps the configured weight (or the default one if the
    file set it to 0). Without a flag the configured weight decides.
    """
    default = SolverConfig()
    if picture == "off":
        cfg = replace(cfg, lambda_v=0.0)
    elif picture == "on" and cfg.lambda_v == 0:
        cfg = replace(cfg, lambda_v=default.lambda_v)
    if ssl == "off":
        cfg = replace(cfg, lambda_sl=0.0)
    elif ssl == "on" and cfg.lambda_sl == 0:
        cfg = replace(cfg, lambda_sl=default.lambda_sl)
    if cfg.lambda_v > 0:
        arm = "spicture" if cfg.lambda_sl > 0 else "picture"
    else:
        arm = "ssl-only" if cfg.lambda_sl > 0 else "unsupervised"
    return cfg, arm


def _pair_paths(pair: list[str]) -> tuple[Path, Path]:
    if len(pair) == 1:
        d = Path(pair[0])
        return d / "pre", d / "post"
    if len(pair) == 2:
        return Path(pair[0]), Path(pair[1])
    raise UsageError("give a simulation directory or the pre and post field paths")


def cmd_solve(pair: list[str], out_dir, config_path=None, picture: str | None = None,
              ssl: str | None = None) -> Path:
    data = cfgio.load(config_path) if config_path else {}
    cfg, arm = effective_config(cfgio.solver_from(data), picture, ssl)
    settings = cfgio.ssl_from(data)
    pre_path, post_path = _pair_paths(pair)
    pre, post = fieldio.read_frame(pre_path), fieldio.read_frame(post_path)
    if pre.grid != post.grid:
        raise GridError(f"pre and post grids differ: {pre.grid} vs {post.grid}")
    out = _out_dir(out_dir)
    solver_arm = "spicture" if cfg.lambda_sl > 0 else "picture"
    try:
        res = solve_arm((pre, post), cfg, solver_arm, settings)
    except SolverDivergence as exc:
        exc.report.write_csv(out / "loss_report.csv")
        raise
    strain = compute_strain(res.disp)
    epr = compute_epr(strain)
    fieldio.write_disp(res.disp, out / "displacement")
    fieldio.write_strain(strain, out / "strain")
    fieldio.write_epr(epr, out / "epr")
    res.report.write_csv(out / "loss_report.csv")
    if res.report_second is not None:
        res.report_second.write_csv(out / "loss_report_ssl.csv")
    for name, img in (("strain_axial", strain.e11), ("strain_lateral", strain.e22), ("epr", epr.v_e)):
        cmap, vr = PNG_STYLES[name]
        render_png(img, cmap, vr, out / f"{name}.png")
    info = {
        "arm": arm,
        "solver": cfg.to_dict(),
        "ssl": asdict(settings) if cfg.lambda_sl > 0 else None,
        "iterations": res.report.iterations,
        "final": res.report.final,
        "png_ranges": {k: {"colormap": c, "range": list(r)} for k, (c, r) in PNG_STYLES.items()},
    }
    return write_manifest(out, "solve", info)


# -- evaluate ------------------------------------------------------------------


def cmd_evaluate(estimate_dir, out_csv, truth_dir=None, windows_path=None, bins: int = 20,
                 epr_range=(0.0, 1.0), stride: int = 4) -> Path:
    if truth_dir is None and windows_path is None:
        raise UsageError("evaluate needs --truth or --windows")
    est = Path(estimate_dir)
    disp = fieldio.read_disp(est / "displacement")
    strain = fieldio.read_strain(est / "strain")
    epr = fieldio.read_epr(est / "epr")
    row: dict = {}
    if truth_dir is not None:
        truth = Path(truth_dir)
        row.update(metrics.evaluate_against_truth(disp, strain, fieldio.read_disp(truth / "truth_disp"),
                                                  fieldio.read_strain(truth / "truth_strain")))
    if windows_path is not None:
        wins = cfgio.windows_from(cfgio.load(windows_path))
        if wins is None:
            raise cfgio.ConfigError(f"{windows_path} has no 'windows' section")
        row.update(metrics.evaluate_windows(strain, *wins))
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(out, [row], metrics.METRIC_COLUMNS)
    hist = metrics.epr_histogram(epr, bins, tuple(epr_range))
    metrics.write_csv(out.with_name(out.stem + "_epr_hist.csv"), hist.rows(), metrics.HISTOGRAM_COLUMNS)
    sc = metrics.strain_scatter(strain, stride)
    metrics.write_csv(out.with_name(out.stem + "_hull.csv"), metrics.hull_rows(sc), metrics.HULL_COLUMNS)
    return out


# -- sweep ---------------------------------------------------------------------

DEFAULT_VALUES = {"snr": (5.0, 10.0, 15.0, 20.0, math.inf), "compression": (0.005, 0.01, 0.02, 0.03, 0.04)}


def _parse_value(s: str) -> float:
    return math.inf if s.strip().lower() in ("inf", "infinity") else float(s)


def cmd_sweep(kind: str, config_path, out_csv, values=None, arms=ARMS) -> Path:
    data = cfgio.load(config_path)
    spec = cfgio.phantom_from(data)
    cfg = cfgio.solver_from(data) if data.get("solver") else SolverConfig()
    values = DEFAULT_VALUES[kind] if values is None else values
    rows = sweep(kind, spec, cfg, values, arms, cfgio.snr_from(data), cfgio.ssl_from(data))
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(out, rows, SWEEP_COLUMNS)
    return out


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lateral-elasto", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a phantom pair with ground truth")
    s.add_argument("config")
    s.add_argument("out_dir")

    s = sub.add_parser("solve", help="estimate displacement, strain and EPR")
    s.add_argument("pair", nargs="+", help="simulation directory, or pre and post field paths")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("-c", "--config")
    s.add_argument("--picture", choices=("on", "off"))
    s.add_argument("--ssl", choices=("on", "off"))

    s = sub.add_parser("evaluate", help="metrics of a solve against truth or windows")
    s.add_argument("estimate_dir")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--truth")
    s.add_argument("--windows")
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--epr-range", type=float, nargs=2, default=(0.0, 1.0))
    s.add_argument("--stride", type=int, default=4)

    s = sub.add_parser("sweep", help="SNR or compression sweep over the ablation arms")
    s.add_argument("kind", choices=("snr", "compression"))
    s.add_argument("config")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--values", type=_parse_value, nargs="+")
    s.add_argument("--arms", nargs="+", choices=ARMS, default=list(ARMS))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            path = cmd_simulate(args.config, args.out_dir)
        elif args.command == "solve":
            path = cmd_solve(args.pair, args.out, args.config, args.picture, args.ssl)
        elif args.command == "evaluate":
            path = cmd_evaluate(args.estimate_dir, args.out, args.truth, args.windows, args.bins,
                                args.epr_range, args.stride)
        else:
            path = cmd_sweep(args.kind, args.config, args.out, args.values, tuple(args.arms))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverDivergence as exc:
        print(f"error: solver diverged at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (cfgio.ConfigError, PhantomError, GridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
