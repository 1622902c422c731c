import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lateral_elasto.grid import DispField, make_grid, seeded_rng
from lateral_elasto.strain import SmoothWeights, StrainField, compute_strain, smoothness_loss
from oracles import gradient_direct

G = make_grid(16, 12, 0.02, 0.15)
A = np.arange(16, dtype=float)[:, None] * np.ones((1, 12))
L = np.ones((16, 1)) * np.arange(12, dtype=float)[None, :]


def test_linear_fields():
    s = compute_strain(DispField(G, 0.1 * A, np.zeros(G.shape)))
    np.testing.assert_allclose(s.e11, 0.1, rtol=1e-12)
    for k in ("e12", "e21", "e22"):
        assert np.abs(getattr(s, k)).max() < 1e-14
    s = compute_strain(DispField(G, 0.1 * A, -0.035 * L))
    np.testing.assert_allclose(s.e22, -0.035, rtol=1e-12)
    np.testing.assert_allclose(s.e11, 0.1, rtol=1e-12)


def test_cross_terms_scaled_by_pitch():
    s = compute_strain(DispField(G, 0.2 * L, 0.3 * A))
    np.testing.assert_allclose(s.e12, 0.2 * G.dz / G.dx, rtol=1e-12)
    np.testing.assert_allclose(s.e21, 0.3 * G.dx / G.dz, rtol=1e-12)


def test_polynomial_oracle():
    rng = seeded_rng(4)
    c = rng.uniform(-0.01, 0.01, 6)
    w1 = c[0] * A**2 + c[1] * A * L + c[2] * L**2
    w2 = c[3] * A**2 + c[4] * A * L + c[5] * L**2
    s = compute_strain(DispField(G, w1, w2))
    inner = (slice(1, -1), slice(1, -1))
    # central differences are exact for quadratics
    np.testing.assert_allclose(s.e11[inner], (2 * c[0] * A + c[1] * L)[inner], rtol=1e-3, atol=1e-12)
    np.testing.assert_allclose(s.e22[inner], (c[4] * A + 2 * c[5] * L)[inner], rtol=1e-3, atol=1e-12)


def test_matches_direct_stencils(rng):
    w1, w2 = rng.standard_normal((2, *G.shape))
    s = compute_strain(DispField(G, w1, w2))
    np.testing.assert_allclose(s.e11, gradient_direct(w1 * G.dz, G.dz, 0), rtol=1e-12)
    np.testing.assert_allclose(s.e12, gradient_direct(w1 * G.dz, G.dx, 1), rtol=1e-12)
    np.testing.assert_allclose(s.e21, gradient_direct(w2 * G.dx, G.dz, 0), rtol=1e-12)
    np.testing.assert_allclose(s.e22, gradient_direct(w2 * G.dx, G.dx, 1), rtol=1e-12)


def _strain(e11, e12=0.0, e21=0.0, e22=0.0):
    f = lambda v: np.broadcast_to(np.asarray(v, dtype=float), G.shape)
    return StrainField(G, f(e11), f(e12), f(e21), f(e22))


def test_smoothness_examples():
    np.testing.assert_allclose(smoothness_loss(_strain(0.02), SmoothWeights()), 0.0, atol=1e-15)
    assert smoothness_loss(_strain(0.0), SmoothWeights()) == (0.0, 0.0, 0.0)
    s = 0.003
    ramp = s * A * G.dz  # slope s per mm of depth
    ls1, ls2, ls = smoothness_loss(_strain(ramp), SmoothWeights(beta=0.1, gamma=1.0))
    assert ls2 == pytest.approx(abs(s), rel=1e-9)
    assert ls1 == pytest.approx(np.abs(ramp - ramp.mean()).mean(), rel=1e-12)
    assert ls == pytest.approx(ls1 + ls2)


def test_smoothness_formula(rng):
    e = rng.standard_normal((4, *G.shape))
    st_ = StrainField(G, *e)
    b = 0.1
    ls1, ls2, ls = smoothness_loss(st_, SmoothWeights(beta=b, gamma=0.3))
    m = lambda x: np.abs(x).mean()
    ref1 = m(e[0] - e[0].mean()) + b * m(e[1]) + 0.5 * m(e[2]) + 0.5 * b * m(e[3])
    ref2 = (m(gradient_direct(e[0], G.dz, 0)) + b * m(gradient_direct(e[0], G.dx, 1))
            + 0.5 * m(gradient_direct(e[3], G.dz, 0)) + 0.5 * b * m(gradient_direct(e[3], G.dx, 1)))
    assert ls1 == pytest.approx(ref1, rel=1e-12)
    assert ls2 == pytest.approx(ref2, rel=1e-12)
    assert ls == pytest.approx(ref1 + 0.3 * ref2, rel=1e-12)


@given(st.floats(-1.0, 1.0), st.integers(0, 1000))
def test_invariant_to_constant_axial_offset(c, seed):
    e = seeded_rng(seed).standard_normal((4, *G.shape))
    w = SmoothWeights()
    base = smoothness_loss(StrainField(G, *e), w)
    shifted = smoothness_loss(StrainField(G, e[0] + c, e[1], e[2], e[3]), w)
    np.testing.assert_allclose(shifted[:2], base[:2], rtol=1e-9)


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_monotone_in_gamma(g1, g2):
    e = seeded_rng(1).standard_normal((4, *G.shape))
    lo, hi = sorted((g1, g2))
    s = StrainField(G, *e)
    assert smoothness_loss(s, SmoothWeights(gamma=lo))[2] <= smoothness_loss(s, SmoothWeights(gamma=hi))[2]


def test_weights_validation():
    with pytest.raises(ValueError):
        SmoothWeights(beta=0.0)
    with pytest.raises(ValueError):
        SmoothWeights(gamma=-1.0)
