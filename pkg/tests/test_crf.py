import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskprop.crf import (
    UNARY_EPS,
    CrfParams,
    PermutohedralLattice,
    _features,
    _gauss_matrix,
    clamp_prob,
    mean_field_brute,
    mean_field_lattice,
    permutohedral_filter,
    refine,
    unary_from_prob,
)
from maskprop.metrics import jaccard

from conftest import crf_scene as scene


def test_params_validated():
    with pytest.raises(ValueError):
        CrfParams(w_app=-1)
    with pytest.raises(ValueError):
        CrfParams(theta_beta=0)
    with pytest.raises(ValueError):
        CrfParams(iterations=0)


def test_unary_examples():
    u = unary_from_prob(np.array([[0.5, 1.0, 0.0]]))
    np.testing.assert_allclose(u[0, 0], [np.log(2), np.log(2)])
    assert u[0, 1, 1] == pytest.approx(-np.log(1 - UNARY_EPS))
    assert np.isfinite(u).all()


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_unary_softmax_round_trip(seed):
    p = np.random.default_rng(seed).random((6, 7))
    u = unary_from_prob(p)
    e = np.exp(-u)
    np.testing.assert_allclose(e[..., 1] / e.sum(-1), clamp_prob(p), atol=1e-12)


def test_zero_weights_clamped_identity(rng):
    p = rng.random((40, 40))
    p[0, 0], p[0, 1] = 0.0, 1.0
    out = refine(p, rng.random((40, 40, 3)), CrfParams(w_app=0, w_smooth=0))
    assert np.array_equal(out, clamp_prob(p))
    brute = mean_field_brute(unary_from_prob(p[:20, :20]), rng.random((20, 20, 3)), CrfParams(w_app=0, w_smooth=0))
    np.testing.assert_allclose(brute, clamp_prob(p[:20, :20]), atol=1e-12)


@pytest.mark.parametrize("size", [24, 80])
def test_uniform_half_is_fixed_point(size, rng):
    out = refine(np.full((size, size), 0.5), rng.random((size, size, 3)))
    assert np.abs(out - 0.5).max() <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_marginals_normalised_and_label_symmetric(seed):
    r = np.random.default_rng(seed)
    p, img = r.random((10, 12)), r.random((10, 12, 3))
    q = mean_field_brute(unary_from_prob(p), img, CrfParams(), return_both=True)
    np.testing.assert_allclose(q.sum(-1), 1.0, atol=1e-12)
    assert q.min() >= 0.0 and q.max() <= 1.0
    swapped = mean_field_brute(unary_from_prob(1.0 - p), img, CrfParams())
    np.testing.assert_allclose(swapped, 1.0 - q[..., 1], atol=1e-9)


def test_brute_matches_literal_loop(rng):
    """Mean field written pixel by pixel from the energy definition."""
    h, w = 4, 5
    p, img, params = rng.random((h, w)), rng.random((h, w, 3)), CrfParams(w_app=1.5, w_smooth=0.7, iterations=3)
    u = unary_from_prob(p).reshape(-1, 2)
    pos = [(x, y) for y in range(h) for x in range(w)]
    col = img.reshape(-1, 3)
    n = h * w

    def k(i, j):
        dp = (pos[i][0] - pos[j][0]) ** 2 + (pos[i][1] - pos[j][1]) ** 2
        dc = float(((col[i] - col[j]) ** 2).sum())
        return (params.w_app * np.exp(-dp / (2 * params.theta_alpha**2) - dc / (2 * params.theta_beta**2))
                + params.w_smooth * np.exp(-dp / (2 * params.theta_gamma**2)))

    q = np.exp(-u) / np.exp(-u).sum(1, keepdims=True)
    for _ in range(params.iterations):
        new = np.empty_like(q)
        for i in range(n):
            m = [sum(k(i, j) * q[j, lab] for j in range(n) if j != i) for lab in range(2)]
            e = np.array([u[i, 0] + m[1], u[i, 1] + m[0]])
            new[i] = np.exp(-e) / np.exp(-e).sum()
        q = new
    np.testing.assert_allclose(mean_field_brute(unary_from_prob(p), img, params), q[:, 1].reshape(h, w), atol=1e-10)


def test_brute_size_limit():
    with pytest.raises(ValueError):
        mean_field_brute(np.zeros((70, 70, 2)), np.zeros((70, 70, 3)), CrfParams())


def test_lattice_identical_features_gives_mean(rng):
    v = rng.random(50)
    out = permutohedral_filter(v, np.zeros((50, 3)))
    np.testing.assert_allclose(out, v.mean(), rtol=1e-3)


@pytest.mark.parametrize("theta_alpha,theta_beta", [(30.0, 0.1), (5.0, 0.2)])
def test_lattice_filter_close_to_brute(rng, theta_alpha, theta_beta):
    img, values = rng.random((32, 32, 3)), rng.random(1024)
    for feats in _features(img, CrfParams(theta_alpha=theta_alpha, theta_beta=theta_beta)):
        k = _gauss_matrix(feats)
        exact = k @ values / k.sum(1)
        approx = permutohedral_filter(values, feats)
        assert np.mean(np.abs(approx - exact) / np.abs(exact)) <= 0.05


def test_lattice_multichannel_matches_single(rng):
    feats = rng.random((200, 3)) * 3
    lat = PermutohedralLattice(feats)
    v = rng.random((200, 2))
    both = lat.filter(v)
    np.testing.assert_allclose(both[:, 0], lat.filter(v[:, 0]), atol=1e-12)
    np.testing.assert_allclose(both[:, 1], lat.filter(v[:, 1]), atol=1e-12)


def test_lattice_rejects_high_dimension():
    with pytest.raises(ValueError):
        PermutohedralLattice(np.zeros((4, 9)))


@pytest.mark.parametrize("seed", range(6))
def test_lattice_mean_field_matches_brute(seed):
    img, _, prob = scene(seed)
    u = unary_from_prob(prob)
    a = mean_field_brute(u, img, CrfParams())
    b = mean_field_lattice(u, img, CrfParams())
    assert np.abs(a - b).max() <= 0.05


def test_lattice_deterministic():
    img, _, prob = scene(3, size=72)
    a = refine(prob, img)
    b = refine(prob, img)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("seed,size", [(1, 32), (2, 32), (5, 80)])
def test_refine_improves_noisy_mask(seed, size):
    img, gt, prob = scene(seed, size=size, noise=0.35)
    before = jaccard(prob >= 0.5, gt)
    after = jaccard(refine(prob, img) >= 0.5, gt)
    assert after > before


def test_refine_shape_mismatch():
    with pytest.raises(ValueError):
        refine(np.zeros((8, 8)), np.zeros((8, 9, 3)))
