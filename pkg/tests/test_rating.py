import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ovkv.core import ModelDims
from ovkv.rating import ActivationGrid, activation_score, gaussian_blur, gaussian_kernel_2d, smooth

DIMS = ModelDims(num_layers=1, num_heads=1, head_dim=4, patch_rows=4, patch_cols=4, num_aux=2)

# 3x3, sigma=1 normalized Gaussian, computed by hand from exp(-x^2/2)
KERNEL_3_SIGMA_1 = np.array([
    [0.07511360795411152, 0.12384140315297398, 0.07511360795411152],
    [0.12384140315297398, 0.2041799555716581, 0.12384140315297398],
    [0.07511360795411152, 0.12384140315297398, 0.07511360795411152],
])


def direct_conv(s, kernel):
    """Test-only 2-D convolution over a reflect-padded map."""
    r = kernel.shape[0] // 2
    p = np.pad(s, r, mode="reflect")
    out = np.zeros_like(s, dtype=float)
    for i in range(s.shape[0]):
        for j in range(s.shape[1]):
            out[i, j] = (p[i:i + 2 * r + 1, j:j + 2 * r + 1] * kernel).sum()
    return out


def row_norms(x):
    return np.array([np.sqrt(sum(v * v for v in row)) for row in x])


def grid(patch, aux=(0.0, 0.0)):
    return ActivationGrid(np.asarray(patch, float), np.asarray(aux, float))


def test_zero_residuals_score_zero():
    g = activation_score(np.zeros((18, 8)), DIMS)
    assert not g.flat().any()


def test_unit_vector_scores_one():
    res = np.zeros((18, 8))
    res[np.arange(18), np.arange(18) % 8] = 1.0
    np.testing.assert_array_equal(activation_score(res, DIMS).flat(), np.ones(18))


def test_scores_match_row_norm_oracle(rng):
    res = rng.normal(size=(18, 16))
    g = activation_score(res, DIMS)
    expected = row_norms(res)
    np.testing.assert_allclose(g.aux_scores, expected[:2], rtol=1e-12)
    np.testing.assert_allclose(g.patch_scores, expected[2:].reshape(4, 4), rtol=1e-12)


def test_non_finite_residual_names_slot():
    res = np.zeros((18, 4))
    res[7, 2] = np.nan
    with pytest.raises(ValueError, match="slot 7"):
        activation_score(res, DIMS)


def test_wrong_token_count_rejected():
    with pytest.raises(ValueError):
        activation_score(np.zeros((17, 4)), DIMS)


def test_alpha_zero_is_identity(rng):
    g = grid(rng.uniform(size=(4, 4)))
    out = smooth(g, 0.0, 3, 1.0)
    np.testing.assert_array_equal(out.patch_scores, g.patch_scores)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
@pytest.mark.parametrize("size", [3, 5, 7])
def test_constant_map_is_fixed_point(alpha, size):
    g = grid(np.full((5, 6), 2.5))
    np.testing.assert_allclose(smooth(g, alpha, size, 1.3).patch_scores, 2.5, rtol=1e-12)


def test_spike_reproduces_kernel():
    s = np.zeros((5, 5))
    s[2, 2] = 1.0
    out = smooth(grid(s), 1.0, 3, 1.0).patch_scores
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = KERNEL_3_SIGMA_1
    np.testing.assert_allclose(out, expected, atol=1e-15)
    np.testing.assert_allclose(direct_conv(s, KERNEL_3_SIGMA_1), expected, atol=1e-15)


def test_aux_scores_untouched(rng):
    g = grid(rng.uniform(size=(4, 4)), aux=(3.0, 7.0))
    np.testing.assert_array_equal(smooth(g, 1.0, 3, 1.0).aux_scores, [3.0, 7.0])


@pytest.mark.parametrize("size,sigma", [(5, 1.0), (3, 0.5), (7, 2.0)])
def test_kernel_sums_to_one(size, sigma):
    assert abs(gaussian_kernel_2d(size, sigma).sum() - 1.0) < 1e-9


def test_rejects_bad_kernel():
    g = grid(np.ones((4, 4)))
    with pytest.raises(ValueError):
        smooth(g, 0.5, 4, 1.0)
    with pytest.raises(ValueError):
        smooth(g, 0.5, 3, 0.0)
    with pytest.raises(ValueError):
        smooth(g, 1.5, 3, 1.0)


def test_separable_matches_direct(rng):
    for _ in range(20):
        h, w = rng.integers(3, 12, size=2)
        s = rng.uniform(size=(h, w))
        size = int(rng.choice([3, 5]))
        direct = direct_conv(s, gaussian_kernel_2d(size, 1.0))
        np.testing.assert_allclose(gaussian_blur(s, size, 1.0), direct, atol=1e-9, rtol=0)


grids = arrays(np.float64, (6, 5), elements=st.floats(0, 100, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(grids, grids, st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_smoothing_is_linear(s1, s2, a, b, alpha):
    lhs = smooth(grid(a * s1 + b * s2), alpha).patch_scores
    rhs = a * smooth(grid(s1), alpha).patch_scores + b * smooth(grid(s2), alpha).patch_scores
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1.0)
    assert np.abs(lhs - rhs).max() <= 1e-7 * scale


@settings(max_examples=60, deadline=None)
@given(grids, st.floats(0, 1))
def test_smoothing_keeps_non_negativity(s, alpha):
    assert (smooth(grid(s), alpha).patch_scores >= 0).all()
