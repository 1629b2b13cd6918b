import dataclasses

import numpy as np
import pytest

from tsagg.aggregation import importance_scores, make_plan
from tsagg.attention import feed_forward, spatial_attention, temporal_attention
from tsagg.encoder import ConfigError, EncoderConfig, ModelWeights, encode, encode_block, init_weights
from tsagg.tokenization import RawVideo, embed, patchify
from tsagg.trajectory import recover_groups

from conftest import silence_sublayers


def rand_video(cfg, seed=0):
    r = np.random.default_rng(seed)
    return RawVideo(r.random((cfg.frames, cfg.height, cfg.width, 3), dtype=np.float32))


def reference(frames, rt, rs, **kw):
    return EncoderConfig(frames=frames, height=224, width=224, patch_size=16, dim=768, heads=12,
                         blocks=12, r_t=rt, r_s=rs, **kw)


def test_reference_schedules():
    cfg = reference(96, 4, 8)
    assert cfg.final_shape() == (48, 100)
    assert 1 - 4800 / cfg.input_tokens == pytest.approx(0.7449, abs=1e-4)
    assert reference(32, 1, 12).final_shape() == (20, 52)


def test_schedule_per_block(small_cfg):
    assert [s[2:] for s in small_cfg.schedule()] == [(6, 13), (4, 10), (2, 7)]


def test_clamping():
    cfg = EncoderConfig(frames=10, height=16, width=16, patch_size=8, dim=8, heads=1, blocks=5,
                        r_t=4, r_s=3, strategy="importance", clamp=True)
    assert [s[2] for s in cfg.schedule()] == [6, 2, 1, 1, 1]
    assert [s[3] for s in cfg.schedule()] == [1, 1, 1, 1, 1]
    geo = dataclasses.replace(cfg, strategy="geometry")
    assert [s[2] for s in geo.schedule()] == [6, 3, 2, 1, 1]


def test_validate_aggregates_errors():
    cfg = reference(96, 4, 100)
    errs = cfg.validate()
    assert any("r_s" in e and "-1004" in e for e in errs)
    assert not dataclasses.replace(cfg, clamp=True).validate()
    bad = EncoderConfig(frames=0, height=30, width=32, patch_size=16, dim=10, heads=4, blocks=1,
                        strategy="kmeans")
    errs = bad.validate()
    assert {e.split(":")[0] for e in errs} >= {"frames", "height", "heads", "strategy"}


def test_geometry_halving_checked():
    cfg = EncoderConfig(frames=8, height=16, width=16, patch_size=8, dim=8, heads=1, blocks=1, r_t=5)
    assert any("half" in e for e in cfg.validate())
    assert not dataclasses.replace(cfg, strategy="importance").validate()


def test_config_text_roundtrip():
    cfg = reference(96, 4, 8, seed=3)
    text = cfg.to_text()
    again = EncoderConfig.from_text(text)
    assert again == cfg and again.to_text() == text


def test_config_text_errors():
    with pytest.raises(ConfigError) as ei:
        EncoderConfig.from_text("")
    assert "frames" in ei.value.errors[0] and "blocks" in ei.value.errors[0]
    with pytest.raises(ConfigError) as ei:
        EncoderConfig.from_text(reference(96, 4, 8).to_text() + "colour = red\n")
    assert any("colour" in e for e in ei.value.errors)
    with pytest.raises(ConfigError) as ei:
        EncoderConfig.from_text(reference(96, 4, 100).to_text())
    assert any("schedule" in e for e in ei.value.errors)


def test_encode_shapes_and_conservation(small_cfg, small_weights):
    out = encode(rand_video(small_cfg), small_cfg, small_weights)
    assert out.grid.shape == small_cfg.final_shape() == (2, 7)
    assert [b.shape_out for b in out.trajectory.blocks] == [(6, 13), (4, 10), (2, 7)]
    assert out.grid.mass().sum() == small_cfg.input_tokens
    assert out.cls.shape == (16,)


def plain_encoder(video, cfg, weights):
    g = embed(patchify(video, cfg.patch_size), weights.embedding)
    for w in weights.blocks:
        g, _ = temporal_attention(g, w)
        g, _ = spatial_attention(g, w)
        g = feed_forward(g, w)
    return g


def test_no_aggregation_equals_plain(small_cfg, small_weights):
    cfg = dataclasses.replace(small_cfg, r_t=0, r_s=0)
    v = rand_video(cfg)
    out = encode(v, cfg, small_weights)
    ref = plain_encoder(v, cfg, small_weights)
    assert out.grid.features.tobytes() == ref.features.tobytes()
    assert out.cls.tobytes() == ref.cls.tobytes()
    assert all(b.temporal is None and b.spatial is None for b in out.trajectory.blocks)


def test_single_block_schedules(small_cfg, small_weights):
    g = embed(patchify(rand_video(small_cfg), 8), small_weights.embedding)
    w = small_weights.blocks[0]
    out, rec, _ = encode_block(g, w, small_cfg, 2, 3)
    assert out.shape == (6, 13)
    out, rec, _ = encode_block(g, w, small_cfg, 0, 3)
    assert out.shape == (8, 13) and rec.temporal is None


@pytest.mark.parametrize("strategy", ["geometry", "importance"])
def test_plans_replay_from_stats(small_cfg, small_weights, strategy):
    cfg = dataclasses.replace(small_cfg, strategy=strategy)
    out = encode(rand_video(cfg), cfg, small_weights, capture_stats=True)
    for (rt, rs, _, _), rec, st in zip(cfg.schedule(), out.trajectory.blocks, out.stats):
        assert make_plan(strategy, st.temporal.keys, st.temporal.attn, rt) == rec.temporal
        assert make_plan(strategy, st.spatial.keys, st.spatial.attn, rs) == rec.spatial[0]


def test_importance_uses_scores(small_cfg, small_weights):
    cfg = dataclasses.replace(small_cfg, strategy="importance")
    out = encode(rand_video(cfg), cfg, small_weights, capture_stats=True)
    st = out.stats[0].temporal
    srcs = [s for s, _ in out.trajectory.blocks[0].temporal.pairs]
    assert sorted(srcs) == sorted(np.argsort(importance_scores(st.attn), kind="stable")[:2].tolist())


def test_determinism(small_cfg):
    v = rand_video(small_cfg, 5)
    a = encode(v, small_cfg, init_weights(small_cfg))
    b = encode(v, small_cfg, init_weights(small_cfg))
    assert a.grid.features.tobytes() == b.grid.features.tobytes()
    assert a.trajectory.to_json() == b.trajectory.to_json()


@pytest.mark.parametrize("strategy", ["geometry", "importance"])
@pytest.mark.parametrize("plan_mode", ["shared", "per_frame"])
def test_mean_of_constituents(small_cfg, strategy, plan_mode):
    cfg = dataclasses.replace(small_cfg, strategy=strategy, spatial_plan=plan_mode)
    w = silence_sublayers(init_weights(cfg))
    v = rand_video(cfg, 2)
    base = embed(patchify(v, cfg.patch_size), w.embedding).features.astype(np.float64)
    out = encode(v, cfg, w)
    groups = recover_groups(out.trajectory)
    np.testing.assert_allclose(groups.sizes(), out.grid.mass(), rtol=1e-12)
    for t, l, g in groups.cells():
        ref = np.mean([base[a, b] for a, b in g], axis=0)
        np.testing.assert_allclose(out.grid.features[t, l], ref, atol=1e-4)


def test_pairwise_weighting_differs(small_cfg):
    cfg = dataclasses.replace(small_cfg, merge_weighting="pairwise")
    w = silence_sublayers(init_weights(cfg))
    v = rand_video(cfg, 2)
    sized = encode(v, small_cfg, w)
    pair = encode(v, cfg, w)
    assert not np.allclose(sized.grid.features, pair.grid.features)


def test_prune_reduction(small_cfg, small_weights):
    cfg = dataclasses.replace(small_cfg, reduction="prune", strategy="importance")
    out = encode(rand_video(cfg), cfg, small_weights)
    assert out.grid.shape == (2, 7)
    assert out.grid.mass().sum() == 14
    recover_groups(out.trajectory)


def test_video_mismatch(small_cfg):
    with pytest.raises(ConfigError):
        encode(RawVideo(np.zeros((2, 32, 32, 3), np.float32)), small_cfg)


def test_weights_file_roundtrip(tmp_path, small_cfg, small_weights):
    small_weights.save(tmp_path / "w.tstw")
    back = ModelWeights.load(tmp_path / "w.tstw", small_cfg)
    v = rand_video(small_cfg)
    a = encode(v, small_cfg, small_weights)
    b = encode(v, small_cfg, back)
    assert a.grid.features.tobytes() == b.grid.features.tobytes()
