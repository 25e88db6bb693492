import warnings

import numpy as np
import pytest

from mevgan.autodiff import generator
from mevgan.data import (
    DatasetSpec, FramePool, VideoClip, coverage, decode_still, dequantize, encode_still, export_frames, export_raw,
    gen_bouncing_video, load_dataset_dir, load_frame_dir, load_raw, make_dataset, quantize, read_manifest,
    resize, sample_training_clip, simulate, write_dataset,
)


def small_spec(**kw):
    base = dict(resolution=16, n_videos=3, frames_per_video=10, size_range=(2.0, 3.0), seed=4)
    base.update(kw)
    return DatasetSpec(**base)


def test_dataset_is_bitwise_deterministic():
    a, b = make_dataset(small_spec()), make_dataset(small_spec())
    for x, y in zip(a, b):
        assert x.frames.tobytes() == y.frames.tobytes() and x.label == y.label
    assert make_dataset(small_spec(seed=5))[0].frames.tobytes() != a[0].frames.tobytes()


def test_frames_in_range_and_labelled():
    for clip in make_dataset(small_spec(n_videos=8)):
        assert clip.frames.shape == (10, 1, 16, 16)
        assert clip.frames.min() >= -1 and clip.frames.max() <= 1
        assert clip.label in (0, 1)


def test_color_channels():
    clip = gen_bouncing_video(small_spec(channels=3), 0)
    assert clip.frames.shape[1] == 3


def test_index_out_of_range():
    with pytest.raises(IndexError):
        gen_bouncing_video(small_spec(), 3)


def test_zero_velocity_gives_identical_frames():
    clip = gen_bouncing_video(small_spec(velocity_range=(0.0, 0.0)), 1)
    assert all(np.array_equal(f, clip.frames[0]) for f in clip.frames)


@pytest.mark.parametrize("kind", ["circle", "square"])
def test_unit_velocity_translates_one_pixel(kind):
    pos, _ = simulate((10.3, 15.6), (1.0, 0.0), 4, 5.0, 27.0)
    frames = [coverage(kind, p, 4.0, 32) for p in pos]
    for a, b in zip(frames, frames[1:]):
        np.testing.assert_array_equal(b[:, 1:], a[:, :-1])


def test_reflection_keeps_speed_and_stays_inside():
    rng = np.random.default_rng(0)
    for _ in range(50):
        lo, hi = 3.0, 29.0
        v0 = rng.uniform(-5, 5, 2)
        pos, vel = simulate(rng.uniform(lo, hi, 2), v0, 200, lo, hi)
        assert np.all((pos >= lo) & (pos <= hi))
        np.testing.assert_allclose(np.linalg.norm(vel, axis=1), np.linalg.norm(v0), atol=1e-6)


def test_overshoot_is_mirrored():
    pos, vel = simulate((9.0, 5.0), (2.0, 0.0), 2, 0.0, 10.0)
    assert pos[1, 0] == 9.0 and vel[1, 0] == -2.0


def test_shape_never_leaves_frame():
    spec = small_spec(velocity_range=(2.0, 2.0), frames_per_video=64)
    for clip in make_dataset(spec):
        # a shape partly outside the frame would lose a large share of its area;
        # sub-pixel placement alone moves the supersampled area by a few percent
        areas = (clip.frames + 1).sum(axis=(1, 2, 3)) / 2
        assert areas.min() > 0.9 * areas.max()


def test_unknown_shape_class():
    with pytest.raises(ValueError):
        coverage("triangle", (5, 5), 2, 16)


def test_clip_validation():
    with pytest.raises(ValueError):
        VideoClip(np.full((2, 1, 4, 4), 1.5))
    with pytest.raises(ValueError):
        VideoClip(np.zeros((0, 1, 4, 4)))
    with pytest.raises(ValueError):
        VideoClip(np.full((1, 1, 4, 4), np.nan))


def _indexed_video(n=64):
    return VideoClip(np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1).repeat(2, 2).repeat(2, 3) / 100)


def test_training_clip_is_contiguous_and_full_length_is_whole_video():
    video = _indexed_video()
    rng = generator(0, "t")
    for _ in range(20):
        f = sample_training_clip(video, 8, rng).frames[:, 0, 0, 0] * 100
        np.testing.assert_allclose(np.diff(f), 1.0, atol=1e-4)
    np.testing.assert_array_equal(sample_training_clip(video, 64, rng).frames, video.frames)
    with pytest.raises(ValueError):
        sample_training_clip(video, 65, rng)


def test_start_offsets_cover_valid_range():
    video, rng = _indexed_video(), generator(1, "offsets")
    starts = [int(round(sample_training_clip(video, 8, rng).frames[0, 0, 0, 0] * 100)) for _ in range(10_000)]
    counts = np.bincount(starts, minlength=57)
    assert len(counts) == 57 and counts.min() > 0
    # uniform: each of 57 starts expects ~175 draws
    assert counts.min() > 100 and counts.max() < 260


def test_quantize_rule():
    np.testing.assert_array_equal(quantize(np.array([-1.0, 0.0, 1.0, -2.0, 2.0])), [0, 128, 255, 0, 255])


def test_p6_header_is_byte_exact():
    frame = np.zeros((3, 4, 5), np.float32)
    buf = encode_still(frame, "ppm")
    assert buf.startswith(b"P6\n5 4\n255\n") and len(buf) == len(b"P6\n5 4\n255\n") + 60
    assert encode_still(np.zeros((1, 4, 5)), "pgm").startswith(b"P5\n5 4\n255\n")


def test_pgm_needs_one_channel():
    with pytest.raises(ValueError):
        encode_still(np.zeros((3, 2, 2)), "pgm")


@pytest.mark.parametrize("fmt,channels", [("pgm", 1), ("ppm", 3)])
def test_still_round_trip_within_quantization(fmt, channels):
    frame = np.random.default_rng(0).uniform(-1, 1, (channels, 6, 7)).astype(np.float32)
    back = decode_still(encode_still(frame, fmt))
    assert np.max(np.abs(back - frame)) <= 1 / 127
    np.testing.assert_array_equal(quantize(back), quantize(frame))


def test_decode_handles_comments_and_rejects_bad_files():
    body = bytes(range(4))
    assert decode_still(b"P5\n# note\n2 2\n255\n" + body).shape == (1, 2, 2)
    with pytest.raises(ValueError):
        decode_still(b"P5\n2 2\n255\n" + body[:3])
    with pytest.raises(ValueError):
        decode_still(b"P2\n2 2\n255\n" + body)
    with pytest.raises(ValueError):
        decode_still(b"P5\n2 2\n65535\n" + body)


def test_dequantize_inverts_quantize_on_codes():
    codes = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(quantize(dequantize(codes)), codes)


def test_raw_round_trip_is_bit_exact(tmp_path):
    clip = gen_bouncing_video(small_spec(), 2)
    export_raw(clip, tmp_path / "clip.mvgn")
    back = load_raw(tmp_path / "clip.mvgn")
    assert back.frames.tobytes() == clip.frames.tobytes() and back.label == clip.label


def test_export_then_load_frame_dir(tmp_path):
    clip = gen_bouncing_video(small_spec(), 0)
    files = export_frames(clip, tmp_path / "v0")
    assert [f.name for f in files[:2]] == ["frame_0000.pgm", "frame_0001.pgm"]
    (loaded,) = load_frame_dir(tmp_path, small_spec())
    assert np.max(np.abs(loaded.frames - clip.frames)) <= 1 / 127


def test_empty_directory_warns(tmp_path):
    with pytest.warns(UserWarning):
        assert load_frame_dir(tmp_path, small_spec()) == []


def test_malformed_files_are_listed(tmp_path):
    export_frames(gen_bouncing_video(small_spec(), 0), tmp_path / "v0")
    (tmp_path / "v0" / "frame_0003.pgm").write_bytes(b"garbage")
    (tmp_path / "v1").mkdir()
    (tmp_path / "v1" / "a.ppm").write_bytes(b"P6\n4 4\n255\n")
    with pytest.raises(ValueError) as info:
        load_frame_dir(tmp_path, small_spec())
    assert "frame_0003.pgm" in str(info.value) and "a.ppm" in str(info.value)


def test_mixed_resolutions_are_resized(tmp_path):
    spec = small_spec()
    for name, size in [("a", 8), ("b", 16), ("c", 32)]:
        frame = np.zeros((1, size, size), np.float32)
        frame[:, :size // 2] = 1.0
        (tmp_path / name).mkdir()
        (tmp_path / name / "f.pgm").write_bytes(encode_still(frame, "pgm"))
    clips = load_frame_dir(tmp_path, spec)
    assert [c.frames.shape for c in clips] == [(1, 1, 16, 16)] * 3
    # half white (1.0), half mid-grey (0.0): the mean stays 0.5 at any source size
    for c in clips:
        assert c.frames.mean() == pytest.approx(0.5, abs=1 / 127)


def test_resize_constant_and_identity():
    f = np.full((1, 5, 5), 0.3, np.float32)
    np.testing.assert_allclose(resize(f, 9), 0.3, atol=1e-6)
    g = np.random.default_rng(0).uniform(-1, 1, (1, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(resize(g, 4), g)


def test_write_dataset_manifest_and_reload(tmp_path):
    spec = small_spec()
    manifest = write_dataset(spec, tmp_path)
    rows = read_manifest(manifest)
    assert [r["path"] for r in rows] == ["video_00000", "video_00001", "video_00002"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        clips = load_dataset_dir(tmp_path, spec)
    assert [c.label for c in clips] == [r["label"] for r in rows]
    original = make_dataset(spec)
    assert max(np.max(np.abs(a.frames - b.frames)) for a, b in zip(clips, original)) <= 1 / 127


def test_frame_pool():
    pool = FramePool.from_clips(make_dataset(small_spec()))
    assert pool.frames.shape == (30, 1, 16, 16) and pool.labels.shape == (30,)
