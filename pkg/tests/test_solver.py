import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from lateral_elasto.grid import UsFrame, make_grid
from lateral_elasto.phantom import PhantomSpec, simulate
from lateral_elasto.solver import (GRADIENT_TERMS, TERMS, LossReport, SolverConfig, SolverDivergence,
                                   _window_decrease, analytic_gradient, build_pyramid, combine, gradient_check,
                                   solve, upsample_disp, usable_levels)

FAST = SolverConfig(pyramid_levels=2, iters_per_level=80)


@pytest.mark.parametrize("term", GRADIENT_TERMS)
def test_gradient_matches_finite_differences(term):
    assert gradient_check(term, (16, 16), seed=0) < 1e-4


@pytest.mark.parametrize("term", ["picture_data", "picture_smooth", "picture"])
def test_picture_gradient_ignores_axial_unknowns(term):
    g = analytic_gradient(term, (16, 16), seed=1)
    assert not g[0].any()
    assert np.abs(g[1]).max() > 0


def test_gradient_check_size_limit():
    with pytest.raises(ValueError):
        gradient_check("data", (40, 16))
    with pytest.raises(ValueError):
        gradient_check("nope")


@pytest.mark.parametrize("bad", [dict(lambda_s=-1), dict(beta=0), dict(pyramid_levels=0),
                                 dict(iters_per_level=0), dict(window=2), dict(step_size=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)


def test_config_dict_roundtrip():
    c = SolverConfig(lambda_s=3.0, seed=7)
    assert SolverConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError, match="unknown"):
        SolverConfig.from_dict({"lamda_s": 1.0})


def test_window_decrease():
    assert _window_decrease([1.0] * 40, 20) == math.inf
    totals = [10.0] + [2.0] * 20 + [1.0] * 20
    assert _window_decrease(totals, 20) == pytest.approx(0.5)
    assert _window_decrease([5.0] + [1.0] * 40, 20) == 0.0


def test_pyramid_and_upsampling():
    g = make_grid(64, 40, 0.02, 0.15)
    assert usable_levels(g, 4) == 3  # 40 -> 20 -> 10 stops at the 8-sample minimum
    fr = UsFrame.from_rf(g, np.random.default_rng(0).standard_normal(g.shape))
    pyr = build_pyramid(fr, fr, 3)
    assert [p[2].shape for p in pyr] == [(64, 40), (32, 20), (16, 10)]
    assert pyr[0][0].shape[0] == 3 and pyr[1][0].shape[0] == 1
    w = torch.full((2, 16, 10), 1.5, dtype=torch.float64)
    up = upsample_disp(w, (32, 20))
    torch.testing.assert_close(up, torch.full((2, 32, 20), 3.0, dtype=torch.float64))


@pytest.fixture(scope="module")
def phantom_pair():
    g = make_grid(128, 48, 0.02, 0.15)
    return simulate(PhantomSpec(g, scatterer_density=50, bg_strain=0.02, seed=0))


def test_identical_frames_fixed_point(phantom_pair):
    pre = phantom_pair[0]
    disp, rep = solve((pre, pre), FAST)
    assert np.abs(disp.stack()).mean() < 0.05
    assert rep.final["L_D"] < 1e-3


def test_report_identity_every_iteration(phantom_pair):
    pre, post, _ = phantom_pair
    cfg = replace(FAST, lambda_v=0.7, lambda_vs=0.2)
    _, rep = solve((pre, post), cfg)
    assert len(rep.history) == sum(rep.iterations) or len(rep.history) <= sum(rep.iterations)
    for row in rep.history:
        assert row["total"] == pytest.approx(combine(row, cfg), rel=1e-9)
    # constraint terms only appear on the constrained levels
    assert any(r["L_vd"] > 0 or r["L_vs"] > 0 for r in rep.history if r["level"] == 0)
    for i, (start, end) in enumerate(zip(rep.level_start, rep.level_end)):
        assert end <= start


def test_deterministic(phantom_pair):
    pre, post, _ = phantom_pair
    _, a = solve((pre, post), FAST)
    _, b = solve((pre, post), FAST)
    assert [r["total"] for r in a.history] == [r["total"] for r in b.history]


def test_recovers_compression(phantom_pair):
    pre, post, truth = phantom_pair
    disp, _ = solve((pre, post), SolverConfig(pyramid_levels=3, iters_per_level=150))
    inner = (slice(10, -10), slice(5, -5))
    err = np.abs(disp.axial - truth.disp.axial)[inner].mean()
    assert err < 0.1


def test_csv_export(phantom_pair, tmp_path):
    pre, post, _ = phantom_pair
    _, rep = solve((pre, post), replace(FAST, iters_per_level=25))
    path = tmp_path / "report.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(LossReport.COLUMNS)
    assert len(lines) == len(rep.history) + 1


def test_divergence_reported(monkeypatch):
    import lateral_elasto.solver as solver_mod

    g = make_grid(32, 32, 0.02, 0.15)
    fr = UsFrame.from_rf(g, np.random.default_rng(0).standard_normal(g.shape))
    monkeypatch.setattr(solver_mod, "data_terms", lambda *a, **k: torch.tensor(float("nan"), dtype=torch.float64))
    with pytest.raises(SolverDivergence) as exc:
        solve((fr, fr), replace(FAST, pyramid_levels=1))
    assert exc.value.report.diverged
    assert exc.value.iteration == 5  # six consecutive restorations
