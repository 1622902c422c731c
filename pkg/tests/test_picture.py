import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from lateral_elasto._ops import tensor
from lateral_elasto.grid import make_grid, seeded_rng
from lateral_elasto.picture import (EprField, compute_epr, epr_tensors, feasibility, picture_data_loss,
                                    picture_data_term, picture_loss, picture_smooth_loss, picture_smooth_term)
from lateral_elasto.strain import StrainField
from oracles import gradient_direct, mask_direct, v_bar_direct



def _strain(grid, e11, e22):
    z = np.zeros(grid.shape)
    return StrainField(grid, np.broadcast_to(e11, grid.shape), z, z, np.broadcast_to(e22, grid.shape))


def test_uniform_epr():
    g = make_grid(8, 8, 0.05, 0.2)
    epr = compute_epr(_strain(g, 0.1, -0.035))
    np.testing.assert_allclose(epr.v_e, 0.35, rtol=1e-12)
    assert not epr.mask.any()
    assert epr.v_bar == pytest.approx(0.35)


def test_mask_and_mean_2x2():
    mask, v_bar = feasibility(tensor([[0.3, 0.7], [-0.2, 0.5]]))
    assert mask.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert float(v_bar) == pytest.approx(0.4, rel=1e-12)


def test_all_infeasible_midpoint():
    _, v_bar = feasibility(tensor(np.full((3, 3), 0.9)))
    assert float(v_bar) == pytest.approx(0.35)


@given(st.integers(0, 100_000))
def test_mask_and_mean_match_oracle(seed):
    v = seeded_rng(seed).uniform(-0.5, 1.2, (9, 7))
    mask, v_bar = feasibility(tensor(v))
    np.testing.assert_array_equal(mask.numpy(), mask_direct(v))
    np.testing.assert_array_equal(mask.numpy() + ((v > 0.1) & (v < 0.6)), 1.0)
    assert float(v_bar) == pytest.approx(v_bar_direct(v), rel=1e-9)
    if (mask.numpy() == 0).any():
        assert 0.1 < float(v_bar) < 0.6


def test_data_loss_examples():
    s11 = tensor(np.full((2, 2), 0.1))
    e22 = tensor([[-0.03, -0.07], [0.02, -0.05]])
    mask = tensor([[0.0, 1.0], [1.0, 0.0]])
    got = float(picture_data_term(e22, s11, mask, 0.4))
    assert got == pytest.approx(np.sqrt((0.0009 + 0.0036) / 4), rel=1e-12)
    assert float(picture_data_term(e22, s11, torch.zeros(2, 2, dtype=torch.float64), 0.4)) == 0.0
    assert float(picture_data_term(-0.4 * s11, s11, torch.ones(2, 2, dtype=torch.float64), 0.4)) == 0.0


def test_smooth_loss_examples():
    g = make_grid(10, 8, 0.05, 0.2)
    const = EprField(g, np.full(g.shape, 0.3), np.zeros(g.shape), 0.3)
    assert picture_smooth_loss(const, 0.1) == 0.0
    ramp = 0.01 * np.arange(10)[:, None] * g.dz * np.ones((1, 8))
    assert picture_smooth_loss(EprField(g, ramp, np.zeros(g.shape), 0.3), 0.1) == pytest.approx(0.01, rel=1e-9)


def test_smooth_loss_matches_stencil_oracle(rng):
    g = make_grid(8, 8, 0.05, 0.2)
    v = rng.standard_normal(g.shape)
    ref = np.abs(gradient_direct(v, g.dz, 0)).mean() + 0.1 * np.abs(gradient_direct(v, g.dx, 1)).mean()
    assert picture_smooth_loss(EprField(g, v, np.zeros(g.shape), 0.3), 0.1) == pytest.approx(ref, rel=1e-9)


def test_picture_loss_is_weighted_sum(rng):
    g = make_grid(8, 8, 0.05, 0.2)
    s = _strain(g, -0.02 + 0.001 * rng.standard_normal(g.shape), 0.01 * rng.standard_normal(g.shape))
    epr = compute_epr(s)
    lvd, lvs = picture_data_loss(s, epr), picture_smooth_loss(epr, 0.1)
    assert picture_loss(s, epr, 0.0) == pytest.approx(lvd, rel=1e-12)
    assert picture_loss(s, epr, 2.0) == pytest.approx(lvd + 2.0 * lvs, rel=1e-12)


def test_stop_gradient_on_axial_strain(rng):
    e11 = tensor(-0.02 + 0.002 * rng.standard_normal((8, 8))).requires_grad_(True)
    e22 = tensor(0.01 * rng.standard_normal((8, 8))).requires_grad_(True)
    g = make_grid(8, 8, 0.05, 0.2)
    v_e, s11, mask, v_bar = epr_tensors({"e11": e11, "e22": e22})
    loss = picture_data_term(e22, s11, mask, v_bar) + 0.01 * picture_smooth_term(v_e, g, 0.1)
    loss.backward()
    assert e11.grad is None or not e11.grad.any()
    assert e22.grad.abs().sum() > 0


def test_gradient_wrt_lateral_unchanged_by_axial_perturbation(rng):
    # mask and mean held fixed, dv_e/de22 = -1/S(e11) only
    e22 = tensor(0.01 * rng.standard_normal((6, 6))).requires_grad_(True)
    e11 = tensor(np.full((6, 6), -0.02))
    v_e, *_ = epr_tensors({"e11": e11, "e22": e22})
    v_e.sum().backward()
    np.testing.assert_allclose(e22.grad.numpy(), 50.0, rtol=1e-12)


def test_sign_preserving_floor():
    e = tensor([[0.0, -1e-12], [1e-12, -0.02]])
    v_e, s11, *_ = epr_tensors({"e11": e, "e22": torch.zeros(2, 2, dtype=torch.float64)}, eps_floor=1e-6)
    assert torch.isfinite(v_e).all()
    assert s11.tolist() == [[1e-6, -1e-6], [1e-6, -0.02]]
