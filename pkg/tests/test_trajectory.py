import dataclasses

import numpy as np
import pytest

from tsagg.aggregation import MergePlan
from tsagg.encoder import encode, init_weights
from tsagg.synthdata import generate, make_spec
from tsagg.tokenization import RawVideo
from tsagg.trajectory import (
    BlockRecord,
    GroupMap,
    Trajectory,
    TrajectoryError,
    probe_csv,
    read_ppm,
    recover_groups,
    render_masks,
    similarity_probe,
    write_ppm,
)


def test_single_temporal_merge():
    traj = Trajectory(4, 2, [BlockRecord(temporal=MergePlan(4, ((1, 2),)))])
    g = recover_groups(traj)
    assert g.frame_groups == [{0}, {1, 2}, {3}]
    assert g.token_groups[1][0] == {(1, 0), (2, 0)}


def test_no_merges_singletons():
    g = recover_groups(Trajectory(3, 4, [BlockRecord(), BlockRecord()]))
    assert all(grp == {(t, l)} for t, l, grp in g.cells())


def test_inconsistent_trajectory():
    bad = Trajectory(4, 2, [BlockRecord(temporal=MergePlan(5, ((1, 2),)))])
    with pytest.raises(TrajectoryError):
        recover_groups(bad)
    bad = Trajectory(2, 4, [BlockRecord(spatial=[MergePlan(4, ((0, 1),)), MergePlan(4, ((0, 1), (2, 3)))])])
    with pytest.raises(TrajectoryError):
        recover_groups(bad)
    overlap = GroupMap([frozenset({0})], [[frozenset({(0, 0)}), frozenset({(0, 0)})]])
    with pytest.raises(TrajectoryError):
        overlap.check_partition(1, 2)


def test_json_roundtrip(small_cfg, small_weights):
    v = RawVideo(np.random.default_rng(0).random((8, 32, 32, 3), dtype=np.float32))
    out = encode(v, small_cfg, small_weights)
    again = Trajectory.from_json(out.trajectory.to_json())
    assert again.to_json() == out.trajectory.to_json()
    assert [b.temporal for b in again.blocks] == [b.temporal for b in out.trajectory.blocks]


@pytest.mark.parametrize("seed", range(5))
def test_group_sizes_match_bookkeeping(seed, small_cfg):
    cfg = dataclasses.replace(small_cfg, seed=seed, strategy=["geometry", "importance"][seed % 2])
    v = RawVideo(np.random.default_rng(seed).random((8, 32, 32, 3), dtype=np.float32))
    out = encode(v, cfg)
    g = recover_groups(out.trajectory)
    np.testing.assert_array_equal(g.sizes(), out.grid.mass())
    g.check_partition(8, 16)


def test_group_text_format():
    traj = Trajectory(2, 2, [BlockRecord(spatial=[MergePlan(2, ((0, 1),))])])
    text = recover_groups(traj).to_text()
    assert text.splitlines() == ["0 0 : (0,0) (0,1)", "1 0 : (1,0) (1,1)"]


def test_masks_singletons_distinct():
    g = recover_groups(Trajectory(1, 16, []))
    img = render_masks(g, 1, 32, 32, 8)[0]
    inner = {tuple(img[y + 4, x + 4]) for y in range(0, 32, 8) for x in range(0, 32, 8)}
    assert len(inner) == 16


def test_masks_merged_share_color():
    g = recover_groups(Trajectory(1, 4, [BlockRecord(spatial=[MergePlan(4, ((0, 3),))])]))
    img = render_masks(g, 1, 16, 16, 8)[0]
    np.testing.assert_array_equal(img[0:8, 0:8], img[8:16, 8:16])
    assert not np.array_equal(img[0:8, 0:8], img[0:8, 8:16])


def test_masks_one_per_final_frame():
    g = recover_groups(Trajectory(3, 4, [BlockRecord(temporal=MergePlan(3, ((0, 1),)))]))
    imgs = render_masks(g, 3, 16, 16, 8)
    assert len(imgs) == 2 and imgs[0].shape == (16, 16, 3)
    assert g.frames_text() == "0 : 0 1\n1 : 2\n"


def test_ppm_bytes_deterministic(tmp_path):
    g = recover_groups(Trajectory(2, 4, [BlockRecord(spatial=[MergePlan(4, ((0, 1),))])]))
    for name in ("a", "b"):
        write_ppm(tmp_path / f"{name}.ppm", render_masks(g, 2, 16, 16, 8, seed=3)[1])
    a = (tmp_path / "a.ppm").read_bytes()
    assert a == (tmp_path / "b.ppm").read_bytes()
    assert a.startswith(b"P6\n16 16\n255\n") and len(a) == 13 + 16 * 16 * 3
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), render_masks(g, 2, 16, 16, 8, seed=3)[1])


def encode_planted(sigma, strategy="geometry", seed=0, **kw):
    from tsagg.encoder import EncoderConfig

    cfg = EncoderConfig(frames=12, height=64, width=64, patch_size=16, dim=16, heads=2, blocks=3,
                        r_t=2, r_s=2, strategy=strategy, seed=seed, **kw)
    spec = make_spec(12, 64, 64, 16, 3, 4, sigma, seed=seed)
    video, _ = generate(spec, seed)
    w = init_weights(cfg)
    w.embedding.spatial_pos[...] = 0
    w.embedding.temporal_pos[...] = 0
    return encode(video, cfg, w), spec


@pytest.mark.parametrize("seed", range(6))
def test_probe_merged_dominates(seed):
    out, _ = encode_planted(0.05, seed=seed)
    rows = similarity_probe(out.trajectory)
    assert {r.kind for r in rows} == {"frame", "patch"}
    for r in rows:
        assert r.merged_mean >= r.unmerged_mean


def test_probe_identical_frames():
    out, _ = encode_planted(0.0)
    frames = [r for r in similarity_probe(out.trajectory) if r.kind == "frame"]
    assert frames and all(r.merged_mean == pytest.approx(1.0, abs=1e-5) for r in frames)


def test_probe_csv_format():
    out, _ = encode_planted(0.0)
    text = probe_csv(similarity_probe(out.trajectory))
    assert text.splitlines()[0] == "block,kind,merged_mean,merged_n,unmerged_mean,unmerged_n"
    assert len(text.splitlines()) == 1 + 2 * 3
