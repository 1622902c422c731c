"""Ablation arms and sweep experiments on simulated phantoms."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import SslSettings
from .grid import DispField, UsFrame, seeded_rng
from .metrics import evaluate_against_truth, strain_mae
from .phantom import GroundTruth, PhantomSpec, simulate
from .picture import compute_epr
from .signal import add_noise
from .solver import LossReport, SolverConfig, solve
from .ssl import random_transform, two_stage_solve
from .strain import compute_strain

ARMS = ("unsupervised", "picture", "spicture")
SWEEP_KINDS = ("snr", "compression")
SWEEP_COLUMNS = ("kind", "value", "arm", "seed", "mae_axial_um", "mae_lateral_um", "ssim_axial_pct",
                 "ssim_lateral_pct", "strain_mae_axial", "strain_mae_lateral", "epr_mean", "epr_out_of_range")


def arm_config(cfg: SolverConfig, arm: str) -> SolverConfig:
    """Config of an ablation arm: PICTURE and SSL weights zeroed where the arm omits them."""
    if arm == "unsupervised":
        return replace(cfg, lambda_v=0.0, lambda_sl=0.0)
    if arm == "picture":
        return replace(cfg, lambda_sl=0.0)
    if arm == "spicture":
        return cfg
    raise ValueError(f"unknown arm {arm!r}; choose from {ARMS}")


@dataclass
class ArmResult:
    disp: DispField
    report: LossReport
    report_second: LossReport | None = None


def solve_arm(pair: tuple[UsFrame, UsFrame], cfg: SolverConfig, arm: str,
              ssl: SslSettings = SslSettings(), first: ArmResult | None = None) -> ArmResult:
    """Solve one arm; ``first`` is the PICTURE-arm result, reused as the SSL first pass."""
    c = arm_config(cfg, arm)
    if arm != "spicture" or c.lambda_sl == 0:
        disp, rep = solve(pair, c)
        return ArmResult(disp, rep)
    g = pair[0].grid
    t = random_transform(g.height, g.width, c.seed, ssl.keep, ssl.n_discs, ssl.disc_radius, ssl.noise_std)
    prior = None if first is None else (first.disp, first.report)
    res = two_stage_solve(pair, c, t, noise_on=ssl.noise_on, first=prior)
    return ArmResult(res.w_first, res.report, res.report_second)


def noisy_pair(pre: UsFrame, post: UsFrame, snr_db: float, seed: int) -> tuple[UsFrame, UsFrame]:
    """Independent white noise on both frames; a no-op for infinite SNR."""
    if math.isinf(snr_db):
        return pre, post
    rng = seeded_rng(seed + 1_000_003)
    return add_noise(pre, snr_db, rng), add_noise(post, snr_db, rng)


def score(disp: DispField, truth: GroundTruth) -> dict:
    strain = compute_strain(disp)
    epr = compute_epr(strain)
    row = evaluate_against_truth(disp, strain, truth.disp, truth.strain)
    row.update(
        strain_mae_axial=strain_mae(strain, truth.strain, "e11"),
        strain_mae_lateral=strain_mae(strain, truth.strain, "e22"),
        epr_mean=epr.v_bar,
        epr_out_of_range=epr.infeasible_fraction,
    )
    return row


def sweep(kind: str, spec: PhantomSpec, cfg: SolverConfig, values, arms=ARMS, snr_db: float = math.inf,
          ssl: SslSettings = SslSettings()) -> list[dict]:
    """One row per (value, arm).

    ``snr`` varies the frame SNR in dB; ``compression`` varies the
    background (maximum) axial strain.
    """
    if kind not in SWEEP_KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}; choose from {SWEEP_KINDS}")
    rows = []
    for value in values:
        value = float(value)
        point_spec = replace(spec, bg_strain=value) if kind == "compression" else spec
        pre, post, truth = simulate(point_spec)
        pre, post = noisy_pair(pre, post, value if kind == "snr" else snr_db, spec.seed)
        done: dict[str, ArmResult] = {}
        for arm in arms:
            res = solve_arm((pre, post), cfg, arm, ssl, first=done.get("picture"))
            done[arm] = res
            rows.append({"kind": kind, "value": value, "arm": arm, "seed": spec.seed, **score(res.disp, truth)})
    return rows


def summarize(rows: list[dict], column: str) -> dict[tuple[float, str], float]:
    """Mean of ``column`` per (value, arm)."""
    acc: dict[tuple[float, str], list[float]] = {}
    for r in rows:
        acc.setdefault((r["value"], r["arm"]), []).append(float(r[column]))
    return {k: float(np.mean(v)) for k, v in acc.items()}
