import numpy as np
import pytest

from videoreid import preproc
from videoreid.preproc import (
    ChannelStats,
    apply_channel_stats,
    assemble_input,
    augment,
    center_crop,
    compute_channel_stats,
    lucas_kanade_flow,
    mirror_sequence,
    normalize_dataset,
    resize_bilinear,
    rgb_to_yuv,
)


def smooth_field(rng, shape, passes=4):
    """Random texture smoothed enough for the local-linearization flow model."""
    field = rng.random(shape)
    for _ in range(passes):
        padded = np.pad(field, 1, mode="reflect")
        field = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:] + padded[1:-1, 1:-1]
        ) / 5.0
    field -= field.min()
    return field / field.max()


# ---------------------------------------------------------------------------
# Color conversion
# ---------------------------------------------------------------------------

def test_yuv_black_white_red():
    black = rgb_to_yuv(np.zeros((2, 2, 3), dtype=np.uint8))
    np.testing.assert_allclose(black, 0.0)

    white = rgb_to_yuv(np.full((2, 2, 3), 255, dtype=np.uint8))
    np.testing.assert_allclose(white[0], 1.0)
    np.testing.assert_allclose(white[1], 0.0, atol=1e-12)
    np.testing.assert_allclose(white[2], 0.0, atol=1e-12)

    red = np.zeros((1, 1, 3), dtype=np.uint8)
    red[..., 0] = 255
    yuv = rgb_to_yuv(red)
    assert yuv[0, 0, 0] == pytest.approx(0.299)
    assert yuv[1, 0, 0] == pytest.approx(0.492 * -0.299)
    assert yuv[2, 0, 0] == pytest.approx(0.877 * 0.701, rel=1e-6)


def test_yuv_rejects_non_rgb():
    with pytest.raises(ValueError):
        rgb_to_yuv(np.zeros((4, 4)))


# ---------------------------------------------------------------------------
# Optical flow
# ---------------------------------------------------------------------------

def test_flow_identical_frames_is_exactly_zero(rng):
    frame = smooth_field(rng, (30, 30))
    flow = lucas_kanade_flow(frame, frame)
    assert np.all(flow.u == 0.0)
    assert np.all(flow.v == 0.0)


def test_flow_recovers_unit_translation(rng):
    field = smooth_field(rng, (80, 80))
    prev = field[10:50, 10:50]
    nxt = field[10:50, 9:49]  # texture moved one column to the right
    flow = lucas_kanade_flow(prev, nxt)
    interior = (slice(5, -5), slice(5, -5))
    assert np.abs(flow.u[interior] - 1.0).mean() < 0.2
    assert np.abs(flow.v[interior]).mean() < 0.2


def test_flow_vertical_translation(rng):
    field = smooth_field(rng, (80, 80))
    prev = field[10:50, 10:50]
    nxt = field[9:49, 10:50]  # texture moved one row down
    flow = lucas_kanade_flow(prev, nxt)
    interior = (slice(5, -5), slice(5, -5))
    assert np.abs(flow.v[interior] - 1.0).mean() < 0.2
    assert np.abs(flow.u[interior]).mean() < 0.2


def test_flow_uniform_frames_all_degenerate():
    uniform = np.full((20, 24), 0.5)
    flow = lucas_kanade_flow(uniform, uniform + 0.001)
    assert flow.degenerate.all()
    assert np.all(flow.u == 0.0) and np.all(flow.v == 0.0)


def test_flow_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="differ"):
        lucas_kanade_flow(np.zeros((4, 4)), np.zeros((4, 5)))


def test_flow_values_always_finite(rng):
    prev = rng.random((25, 25))
    nxt = rng.random((25, 25))
    flow = lucas_kanade_flow(prev, nxt)
    assert np.isfinite(flow.u).all() and np.isfinite(flow.v).all()


# ---------------------------------------------------------------------------
# Resize
# ---------------------------------------------------------------------------

def test_resize_constant_stays_constant():
    out = resize_bilinear(np.full((13, 9), 2.5), 56, 40)
    np.testing.assert_allclose(out, 2.5)


def test_resize_same_size_is_identity(rng):
    grid = rng.random((56, 40))
    assert np.array_equal(resize_bilinear(grid, 56, 40), grid)


def test_resize_halving_preserves_linear_ramp():
    rows = np.linspace(0.0, 3.0, 112)[:, None]
    cols = np.linspace(-1.0, 1.0, 80)[None, :]
    ramp = 2.0 * rows + 0.5 * cols
    out = resize_bilinear(ramp, 56, 40)
    rows_s = np.linspace(0.0, 3.0, 56)[:, None]
    cols_s = np.linspace(-1.0, 1.0, 40)[None, :]
    np.testing.assert_allclose(out, 2.0 * rows_s + 0.5 * cols_s, atol=1e-6)


def test_resize_requires_2x2_source():
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((1, 5)), 4, 4)


# ---------------------------------------------------------------------------
# Assembly and normalization
# ---------------------------------------------------------------------------

def test_assemble_zero_inputs_give_zero_stack():
    stack = assemble_input(np.zeros((3, 56, 40)), np.zeros((56, 40)), np.zeros((56, 40)))
    assert stack.shape == (5, 56, 40)
    assert np.all(stack == 0.0)


def test_assemble_channel_order_fixed(rng):
    yuv = rng.random((3, 6, 5))
    fu = rng.random((6, 5))
    fv = rng.random((6, 5))
    stack = assemble_input(yuv, fu, fv)
    np.testing.assert_array_equal(stack[:3], yuv)
    np.testing.assert_array_equal(stack[3], fu)
    np.testing.assert_array_equal(stack[4], fv)


def test_assemble_rejects_mismatched_grids(rng):
    with pytest.raises(ValueError):
        assemble_input(rng.random((3, 6, 5)), rng.random((6, 6)), rng.random((6, 5)))


def test_normalize_yields_zero_mean_unit_variance(rng):
    stacks = [rng.random((4, 5, 8, 6)) * 3 + 1 for _ in range(3)]
    normalized, stats = normalize_dataset(stacks)
    frames = np.concatenate(normalized, axis=0)
    np.testing.assert_allclose(frames.mean(axis=(0, 2, 3)), 0.0, atol=1e-3)
    np.testing.assert_allclose(frames.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    assert stats.mean.shape == (5,)


def test_normalize_constant_channel_uses_std_one(rng):
    stack = rng.random((3, 5, 4, 4))
    stack[:, 2] = 7.0
    with pytest.warns(RuntimeWarning, match="zero variance"):
        normalized, stats = normalize_dataset([stack])
    assert stats.std[2] == 1.0
    np.testing.assert_allclose(normalized[0][:, 2], 0.0)


def test_stats_match_two_pass_oracle(rng):
    stacks = [rng.random((1, 5, 6, 7)) for _ in range(3)]
    stats = compute_channel_stats(stacks)
    frames = np.concatenate(stacks, axis=0)
    for ch in range(5):
        values = frames[:, ch].ravel()
        mean = values.sum() / values.size
        var = ((values - mean) ** 2).sum() / values.size
        assert stats.mean[ch] == pytest.approx(mean, rel=1e-12)
        assert stats.std[ch] == pytest.approx(np.sqrt(var), rel=1e-12)


def test_test_frames_use_training_statistics(rng):
    train = [rng.random((4, 5, 6, 6)) + 2.0]
    _, stats = normalize_dataset(train)
    test_stack = rng.random((4, 5, 6, 6)) - 5.0
    out = apply_channel_stats(test_stack, stats)
    expected = (test_stack - stats.mean[None, :, None, None]) / stats.std[None, :, None, None]
    np.testing.assert_allclose(out, expected)
    assert abs(out.mean()) > 0.5  # test data is not re-centered on itself


# ---------------------------------------------------------------------------
# Track pipeline
# ---------------------------------------------------------------------------

def test_preprocess_track_shapes_and_last_frame_flow(rng):
    frames = [(rng.random((64, 48, 3)) * 255).astype(np.uint8) for _ in range(4)]
    stacks = preproc.preprocess_track(frames, rows=56, cols=40)
    assert stacks.shape == (4, 5, 56, 40)
    # final frame reuses its predecessor's flow
    np.testing.assert_array_equal(stacks[3, 3:], stacks[2, 3:])


def test_preprocess_single_frame_track_has_zero_flow(rng):
    frames = [(rng.random((32, 24, 3)) * 255).astype(np.uint8)]
    stacks = preproc.preprocess_track(frames, rows=56, cols=40)
    assert np.all(stacks[0, 3:] == 0.0)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def test_mirror_is_an_involution(rng):
    stacks = rng.standard_normal((3, 5, 56, 40))
    np.testing.assert_array_equal(mirror_sequence(mirror_sequence(stacks)), stacks)


def test_mirror_flips_flow_x_sign(rng):
    stacks = rng.standard_normal((2, 5, 8, 6))
    mirrored = mirror_sequence(stacks)
    np.testing.assert_array_equal(mirrored[:, 3], -stacks[:, 3, :, ::-1])
    np.testing.assert_array_equal(mirrored[:, 0], stacks[:, 0, :, ::-1])


def test_augment_deterministic_under_seed(rng):
    stacks = rng.standard_normal((4, 5, 72, 56))
    out1 = augment(stacks, np.random.default_rng(99))
    out2 = augment(stacks, np.random.default_rng(99))
    assert np.array_equal(out1, out2)
    assert out1.shape == (4, 5, 56, 40)


def test_augment_is_sequence_coherent(rng):
    """Every frame of a sequence gets the same crop window and mirror flag."""
    base = rng.standard_normal((1, 5, 72, 56))
    stacks = np.repeat(base, 5, axis=0)
    out = augment(stacks, np.random.default_rng(3))
    for t in range(1, 5):
        np.testing.assert_array_equal(out[t], out[0])


def test_augment_crops_stay_inside_source(rng):
    stacks = np.zeros((2, 5, 72, 56))
    stacks[:, :, 8:-8, 8:-8] = 1.0  # interior marker
    for seed in range(50):
        out = augment(stacks, np.random.default_rng(seed))
        assert out.shape == (2, 5, 56, 40)
    with pytest.raises(ValueError, match="smaller than crop"):
        augment(np.zeros((1, 5, 40, 30)), np.random.default_rng(0))


def test_center_crop_takes_middle_window():
    stacks = np.zeros((1, 5, 72, 56))
    stacks[0, 0, 8:64, 8:48] = 1.0
    out = center_crop(stacks)
    np.testing.assert_array_equal(out[0, 0], np.ones((56, 40)))


def test_stats_round_trip_through_container(tmp_path, rng):
    from videoreid.autograd import load_checkpoint, save_checkpoint

    stats = ChannelStats(mean=rng.standard_normal(5).astype(np.float32).astype(np.float64),
                         std=(np.abs(rng.standard_normal(5)) + 0.5).astype(np.float32).astype(np.float64))
    save_checkpoint(tmp_path / "s.ckpt", {"preproc.mean": stats.mean, "preproc.std": stats.std})
    loaded = load_checkpoint(tmp_path / "s.ckpt")
    np.testing.assert_array_equal(loaded["preproc.mean"], stats.mean.astype(np.float32))
    np.testing.assert_array_equal(loaded["preproc.std"], stats.std.astype(np.float32))
