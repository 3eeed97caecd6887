import math

import numpy as np
import pytest

from videoreid.autograd import (
    Graph,
    ParamStore,
    Tensor,
    activate,
    backward,
    check_op_gradients,
    conv2d,
    gradient_error,
    linear,
    maxpool2d,
    mul,
    numerical_gradient,
    relu,
    sgd_step,
    sigmoid,
    softmax_xent,
    sqrt,
    standard_op_audit,
    sub,
    tanh,
    tensor_sum,
)
from videoreid.autograd import ops


def t64(values, requires_grad=False):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------

def test_conv_all_ones_sums_window():
    x = t64(np.ones((1, 3, 3)))
    w = t64(np.ones((1, 1, 3, 3)))
    b = t64(np.zeros(1))
    out = conv2d(x, w, b)
    assert out.shape == (1, 1, 1)
    assert out.item() == 9.0


def test_conv_output_size_with_pad4_kernel5():
    x = t64(np.zeros((5, 56, 40)))
    w = t64(np.zeros((16, 5, 5, 5)))
    b = t64(np.zeros(16))
    out = conv2d(x, w, b, stride=(1, 1), padding=(4, 4))
    assert out.shape == (16, 60, 44)


def test_conv_zero_input_zero_bias_gives_zeros(rng):
    x = t64(np.zeros((3, 9, 7)))
    w = t64(rng.standard_normal((4, 3, 5, 5)))
    b = t64(np.zeros(4))
    out = conv2d(x, w, b, padding=(2, 2))
    assert np.all(out.data == 0.0)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ValueError, match="channels"):
        conv2d(t64(np.zeros((3, 6, 6))), t64(np.zeros((2, 4, 3, 3))), t64(np.zeros(2)))


def test_maxpool_basic_and_window_check():
    out = maxpool2d(t64([[[1.0, 2.0], [3.0, 4.0]]]), (2, 2), (2, 2))
    assert out.data.tolist() == [[[4.0]]]
    with pytest.raises(ValueError, match="larger than input"):
        maxpool2d(t64(np.zeros((1, 2, 2))), (3, 3), (1, 1))


def test_maxpool_tie_routes_to_first_in_row_major():
    x = t64(np.ones((1, 2, 2)), requires_grad=True)
    out = maxpool2d(x, (2, 2), (2, 2))
    backward(tensor_sum(out))
    expected = np.zeros((1, 2, 2))
    expected[0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_linear_identity_and_bias_paths(rng):
    x = t64(rng.standard_normal(6))
    eye = t64(np.eye(6))
    zero_b = t64(np.zeros(6))
    np.testing.assert_allclose(linear(x, eye, zero_b).data, x.data)

    b = rng.standard_normal(4)
    out = linear(x, t64(np.zeros((4, 6))), t64(b))
    np.testing.assert_allclose(out.data, b)

    with pytest.raises(ValueError, match="length"):
        linear(t64(np.zeros(5)), eye, zero_b)


def test_activations_at_zero():
    assert sigmoid(t64(0.0)).item() == 0.5
    assert tanh(t64(0.0)).item() == 0.0
    assert activate(t64(0.0), "sigmoid").item() == 0.5
    with pytest.raises(ValueError):
        activate(t64(0.0), "gelu")


def test_sigmoid_gradient_at_zero_is_quarter():
    x = t64(0.0, requires_grad=True)
    backward(sigmoid(x))
    assert x.grad == pytest.approx(0.25, abs=1e-12)
    numeric = numerical_gradient(lambda: sigmoid(x).item(), x.data)
    assert gradient_error(x.grad, numeric) < 1e-8


def test_softmax_xent_uniform_and_saturated():
    for c in (2, 5, 9):
        loss = softmax_xent(t64(np.zeros(c)), 0)
        assert loss.item() == pytest.approx(math.log(c), rel=1e-12)
    assert softmax_xent(t64([20.0, -20.0]), 0).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="out of range"):
        softmax_xent(t64(np.zeros(3)), 3)


# ---------------------------------------------------------------------------
# Gradients vs the finite-difference oracle
# ---------------------------------------------------------------------------

def test_every_op_passes_randomized_gradient_audit():
    report = standard_op_audit(seed=2024, shapes_per_op=3)
    assert set(report) >= {"conv2d", "maxpool2d", "linear", "tanh", "sigmoid", "relu", "softmax_xent", "sqrt"}
    for name, err in report.items():
        assert err < 1e-4, f"{name} gradient error {err:.3e}"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_conv_gradient_vs_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 8, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    err = check_op_gradients(
        lambda ts: tensor_sum(tanh(conv2d(ts[0], ts[1], ts[2], (1, 1), (1, 1)))), (x, w, b)
    )
    assert err < 1e-4


def test_maxpool_gradient_vs_finite_differences(rng):
    x = Tensor(rng.permutation(36).astype(np.float64).reshape(1, 6, 6) * 0.1, requires_grad=True)
    err = check_op_gradients(lambda ts: tensor_sum(maxpool2d(ts[0], (2, 2), (2, 2))), (x,))
    assert err < 1e-4


def test_linear_gradient_vs_finite_differences(rng):
    x = Tensor(rng.standard_normal(8), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    err = check_op_gradients(lambda ts: tensor_sum(sigmoid(linear(ts[0], ts[1], ts[2]))), (x, w, b))
    assert err < 1e-4


def test_softmax_gradient_vs_finite_differences(rng):
    logits = Tensor(rng.standard_normal(5), requires_grad=True)
    err = check_op_gradients(lambda ts: softmax_xent(ts[0], 3), (logits,))
    assert err < 1e-4


# ---------------------------------------------------------------------------
# Backward mechanics
# ---------------------------------------------------------------------------

def test_backward_of_parameter_itself_is_one():
    p = t64(3.0, requires_grad=True)
    backward(tensor_sum(p))
    assert p.grad == pytest.approx(1.0)


def test_backward_requires_scalar_root():
    p = t64(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(p)


def test_disjoint_subgraphs_get_independent_gradients(rng):
    a = Tensor(rng.standard_normal(4), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    root = tensor_sum(mul(a, a)) + tensor_sum(mul(b, b))
    backward(root)
    np.testing.assert_allclose(a.grad, 2 * a.data, rtol=1e-12)
    np.testing.assert_allclose(b.grad, 2 * b.data, rtol=1e-12)


def test_backward_touches_only_reachable_subgraph(rng):
    """A root built from one branch must leave the other branch's nodes alone."""
    a = Tensor(rng.standard_normal(4), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    mid_a = tanh(a)
    mid_b = tanh(b)
    backward(tensor_sum(mid_a))
    assert a.grad is not None
    assert mid_b.grad is None
    assert b.grad is None


def test_graph_trace_visits_each_node_once_parents_first(rng):
    a = Tensor(rng.standard_normal(3), requires_grad=True)
    y = tanh(a)
    # Diamond: root consumes y twice.
    root = tensor_sum(mul(y, y))
    graph = Graph.trace(root)
    ids = [id(n) for n in graph.nodes]
    assert len(ids) == len(set(ids))
    position = {i: k for k, i in enumerate(ids)}
    for node in graph.nodes:
        for parent in node.parents:
            assert position[id(parent)] < position[id(node)]


def test_forward_determinism_bitwise(rng):
    x = rng.standard_normal((3, 10, 9))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)

    def run():
        return tanh(conv2d(Tensor(x), Tensor(w), Tensor(b), padding=(1, 1))).data

    first, second = run(), run()
    assert np.array_equal(first, second)


def test_rank_limit_enforced():
    with pytest.raises(ValueError, match="rank"):
        Tensor(np.zeros((2, 2, 2, 2, 2)))


# ---------------------------------------------------------------------------
# ParamStore and SGD
# ---------------------------------------------------------------------------

def test_param_store_pairs_gradient_buffers(rng):
    store = ParamStore(dtype=np.float64)
    p = store.add("w", rng.standard_normal((3, 4)))
    assert p.grad.shape == p.data.shape
    assert np.all(p.grad == 0.0)
    with pytest.raises(ValueError, match="already registered"):
        store.add("w", np.zeros(1))


def test_sgd_zero_lr_keeps_parameters(rng):
    store = ParamStore(dtype=np.float64)
    p = store.add("w", rng.standard_normal(5))
    before = p.data.copy()
    backward(tensor_sum(mul(p, p)))
    sgd_step(store, 0.0)
    assert np.array_equal(p.data, before)
    assert np.all(p.grad == 0.0)


def test_sgd_scalar_update_matches_hand_value():
    store = ParamStore(dtype=np.float64)
    p = store.add("p", np.array([1.0]))
    p.grad = np.array([2.0])
    sgd_step(store, 0.1)
    assert p.data[0] == pytest.approx(0.8)


def test_sgd_descends_a_quadratic():
    store = ParamStore(dtype=np.float64)
    p = store.add("p", np.array([3.0, -2.0]))

    def loss_tensor():
        return tensor_sum(mul(p, p))

    start = loss_tensor().item()
    backward(loss_tensor())
    sgd_step(store, 0.01)
    assert loss_tensor().item() < start


def test_gradients_zeroed_after_step(rng):
    store = ParamStore(dtype=np.float64)
    p = store.add("w", rng.standard_normal(4))
    backward(tensor_sum(mul(p, p)))
    assert np.any(p.grad != 0.0)
    sgd_step(store, 1e-3)
    assert np.all(p.grad == 0.0)


# ---------------------------------------------------------------------------
# Misc op plumbing used by the attention stack
# ---------------------------------------------------------------------------

def test_mul_broadcasting_unbroadcasts_gradient(rng):
    a = Tensor(rng.standard_normal((4, 3, 2)), requires_grad=True)
    m = Tensor(rng.standard_normal((1, 3, 2)), requires_grad=True)
    err = check_op_gradients(lambda ts: tensor_sum(mul(ts[0], ts[1])), (a, m))
    assert err < 1e-4


def test_sqrt_and_sub_against_finite_differences(rng):
    a = Tensor(np.abs(rng.standard_normal(5)) + 0.5, requires_grad=True)
    b = Tensor(np.abs(rng.standard_normal(5)) + 0.5, requires_grad=True)
    err = check_op_gradients(lambda ts: tensor_sum(sub(sqrt(mul(ts[0], ts[1])), ts[1])), (a, b))
    assert err < 1e-4


def test_relu_blocks_gradient_below_zero():
    x = t64([-1.0, 2.0], requires_grad=True)
    backward(tensor_sum(relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])
