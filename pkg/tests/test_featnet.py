import numpy as np
import pytest

from videoreid.autograd import ParamStore, Tensor, backward, mul, tensor_sum
from videoreid.autograd.gradcheck import gradient_error, numerical_gradient
from videoreid.featnet import (
    CONV_MAP_SHAPE,
    FEATURE_DIM,
    STAGE_TRACE,
    extract_features,
    extract_sequence,
    init_feature_net,
)
from videoreid.autograd import conv2d, maxpool2d, tanh


def build_params(seed=0, dtype=np.float64):
    store = ParamStore(dtype=dtype)
    init_feature_net(store, np.random.default_rng(seed))
    return store


def test_output_shapes_fixed_by_architecture(rng):
    params = build_params()
    bundle = extract_features(rng.standard_normal((5, 56, 40)), params)
    assert bundle.feature_vec.shape == (FEATURE_DIM,)
    assert bundle.conv_map.shape == CONV_MAP_SHAPE


def test_stage_trace_matches_declared_sizes(rng):
    """Walk the stages by hand and compare each activation shape."""
    params = build_params()
    x = Tensor(rng.standard_normal(STAGE_TRACE[0]))
    shapes = [x.shape]
    for i in range(1, 4):
        x = conv2d(x, params[f"featnet.conv{i}.w"], params[f"featnet.conv{i}.b"], (1, 1), (4, 4))
        shapes.append(x.shape)
        x = maxpool2d(x, (2, 2), (2, 2))
        shapes.append(x.shape)
        x = tanh(x)
    assert tuple(shapes) == STAGE_TRACE
    assert int(np.prod(x.shape)) == 2560


def test_zero_input_zero_bias_gives_zero_features():
    params = build_params()
    bundle = extract_features(np.zeros((5, 56, 40)), params)
    np.testing.assert_array_equal(bundle.feature_vec.data, np.zeros(FEATURE_DIM))
    np.testing.assert_array_equal(bundle.conv_map.data, np.zeros(CONV_MAP_SHAPE))


def test_tanh_head_bounds_features(rng):
    params = build_params()
    bundle = extract_features(rng.standard_normal((5, 56, 40)) * 3, params, fc_activation="tanh")
    assert np.all(np.abs(bundle.feature_vec.data) < 1.0)


def test_fc_activation_none_is_affine_head(rng):
    params = build_params()
    frame = rng.standard_normal((5, 56, 40))
    with_tanh = extract_features(frame, params, fc_activation="tanh").feature_vec.data
    without = extract_features(frame, params, fc_activation="none").feature_vec.data
    np.testing.assert_allclose(np.tanh(without), with_tanh, rtol=1e-12)


def test_wrong_input_shape_rejected():
    with pytest.raises(ValueError, match="shape"):
        extract_features(np.zeros((5, 40, 56)), build_params())


def test_extraction_is_pure_and_bitwise_reproducible(rng):
    params = build_params()
    frame = rng.standard_normal((5, 56, 40))
    first = extract_features(frame, params).feature_vec.data
    second = extract_features(frame, params).feature_vec.data
    assert np.array_equal(first, second)


def test_frames_are_independent_of_batch_context(rng):
    params = build_params()
    frames = [rng.standard_normal((5, 56, 40)) for _ in range(3)]
    batched = extract_sequence(frames, params)
    for frame, bundle in zip(frames, batched):
        alone = extract_features(frame, params)
        assert np.array_equal(alone.feature_vec.data, bundle.feature_vec.data)
        assert np.array_equal(alone.conv_map.data, bundle.conv_map.data)


def test_sequence_permutation_permutes_bundles(rng):
    params = build_params()
    frames = [rng.standard_normal((5, 56, 40)) for _ in range(4)]
    perm = [2, 0, 3, 1]
    direct = extract_sequence([frames[i] for i in perm], params)
    original = extract_sequence(frames, params)
    for k, i in enumerate(perm):
        assert np.array_equal(direct[k].feature_vec.data, original[i].feature_vec.data)


def test_parallel_and_serial_extraction_agree(rng):
    params = build_params()
    frames = [rng.standard_normal((5, 56, 40)) for _ in range(6)]
    serial = extract_sequence(frames, params, workers=1)
    threaded = extract_sequence(frames, params, workers=4)
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.feature_vec.data, b.feature_vec.data)


def test_empty_sequence_and_length_cap_rejected(rng):
    params = build_params()
    with pytest.raises(ValueError, match="empty"):
        extract_sequence([], params)
    frames = [rng.standard_normal((5, 56, 40))] * 3
    with pytest.raises(ValueError, match="maximum"):
        extract_sequence(frames, params, max_frames=2)


def test_backward_through_one_frame_leaves_other_frames_untouched(rng):
    """Per-frame graphs share only parameters; gradients must not leak
    across frames."""
    params = build_params()
    bundles = extract_sequence([rng.standard_normal((5, 56, 40)) for _ in range(2)], params)
    loss = tensor_sum(mul(bundles[0].feature_vec, bundles[0].feature_vec))
    backward(loss)
    assert bundles[0].feature_vec.grad is not None
    assert bundles[1].feature_vec.grad is None
    assert bundles[1].conv_map.grad is None


def test_end_to_end_parameter_gradients_match_finite_differences(rng):
    params = build_params(seed=4)
    frame = rng.standard_normal((5, 56, 40)) * 0.5

    def loss_value():
        vec = extract_features(frame, params).feature_vec
        return tensor_sum(mul(vec, vec)).item()

    params.zero_grads()
    vec = extract_features(frame, params).feature_vec
    backward(tensor_sum(mul(vec, vec)))

    worst = 0.0
    check_rng = np.random.default_rng(0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1)
        for idx in check_rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + 1e-5
            up = loss_value()
            flat[idx] = orig - 1e-5
            down = loss_value()
            flat[idx] = orig
            numeric = (up - down) / 2e-5
            worst = max(worst, gradient_error(analytic[idx], numeric))
    assert worst < 1e-3
