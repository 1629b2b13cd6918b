import numpy as np

from tsagg.attention import BlockWeights, feed_forward, spatial_attention, temporal_attention
from tsagg.tensors import layer_norm, matmul
from tsagg.tokenization import TokenGrid

from conftest import random_grid


def weights(seed=0, d=8, h=2):
    return BlockWeights.random(np.random.default_rng(seed), d, h)


def zero(w):
    for part in (w.temporal, w.spatial):
        for m in (part.q, part.k, part.v, part.o):
            m[...] = 0
    w.ffn.fc1[...] = 0
    w.ffn.fc2[...] = 0
    return w


def test_temporal_single_frame_is_value_path(rng):
    g = random_grid(rng, t=1, l=5)
    w = weights()
    out, stats = temporal_attention(g, w)
    y = layer_norm(g.features, w.temporal.ln_g, w.temporal.ln_b)
    expect = g.features + matmul(matmul(y, w.temporal.v), w.temporal.o)
    np.testing.assert_allclose(out.features, expect, atol=1e-5)
    assert stats.attn.shape == (1, 1) and stats.attn[0, 0] == 1.0


def test_temporal_rows_sum_to_one():
    for seed in range(50):
        r = np.random.default_rng(seed)
        g = random_grid(r, t=5, l=3)
        _, st = temporal_attention(g, weights(seed))
        np.testing.assert_allclose(st.attn.sum(axis=1), 1.0, atol=1e-5)
        assert st.keys.shape == (5, 8)


def test_temporal_identical_frames_uniform(rng):
    frame = rng.standard_normal((1, 4, 8)).astype(np.float32)
    g = TokenGrid.fresh(np.repeat(frame, 6, axis=0), np.zeros(8))
    _, st = temporal_attention(g, weights())
    np.testing.assert_allclose(st.attn, np.full((6, 6), 1 / 6), atol=1e-6)


def test_temporal_position_equivariance(rng):
    g = random_grid(rng, t=4, l=6)
    w = weights(3)
    perm = rng.permutation(6)
    out, _ = temporal_attention(g, w)
    gp = TokenGrid.fresh(g.features[:, perm].copy(), g.cls)
    outp, _ = temporal_attention(gp, w)
    np.testing.assert_allclose(outp.features, out.features[:, perm], atol=1e-6)


def test_spatial_zero_weights_single_patch(rng):
    g = random_grid(rng, t=3, l=1)
    out, _ = spatial_attention(g, zero(weights()))
    np.testing.assert_array_equal(out.features, g.features)
    np.testing.assert_array_equal(out.cls, g.cls)


def test_spatial_cls_shape_and_rows():
    for seed in range(50):
        r = np.random.default_rng(seed)
        g = random_grid(r, t=3, l=5)
        out, st = spatial_attention(g, weights(seed))
        assert out.cls.shape == (8,) and np.all(np.isfinite(out.cls))
        np.testing.assert_allclose(st.full_attn.sum(axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(st.frame_attn.shape, (3, 5, 5))
        assert st.keys.shape == (5, 8) and st.attn.shape == (5, 5)


def test_spatial_frame_equivariance(rng):
    g = random_grid(rng, t=5, l=4)
    w = weights(5)
    perm = rng.permutation(5)
    out, _ = spatial_attention(g, w)
    outp, _ = spatial_attention(TokenGrid.fresh(g.features[perm].copy(), g.cls), w)
    np.testing.assert_allclose(outp.features, out.features[perm], atol=1e-6)
    np.testing.assert_allclose(outp.cls, out.cls, atol=1e-6)


def test_feed_forward(rng):
    g = random_grid(rng, t=2, l=3)
    np.testing.assert_array_equal(feed_forward(g, zero(weights())).features, g.features)
    w = weights(9)
    out = feed_forward(g, w)
    assert out.features.shape == g.features.shape
    g.features[1, 2] = g.features[0, 0]
    out = feed_forward(g, w)
    np.testing.assert_array_equal(out.features[1, 2], out.features[0, 0])
