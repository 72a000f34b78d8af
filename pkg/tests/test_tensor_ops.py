import numpy as np
import pytest

from e3lab import tensor as T
from e3lab.errors import ContractError, DimensionError


def t(x, grad=False):
    return T.tensor(np.asarray(x, dtype=np.float32), requires_grad=grad)


class TestMatmul:
    def test_hand_computed_product(self):
        out = T.matmul(t([[1, 2], [3, 4]]), t([[5, 6], [7, 8]]))
        np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])

    def test_identity(self, rng):
        a = rng.standard_normal((4, 3)).astype(np.float32)
        np.testing.assert_array_equal(T.matmul(t(a), t(np.eye(3))).data, a)

    def test_inner_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_sum_gradient_closed_form(self, rng):
        # d/dA sum(A @ B) = 1 @ B^T
        a = t(rng.standard_normal((3, 4)), grad=True)
        b = t(rng.standard_normal((4, 2)))
        T.backward(T.matmul(a, b).sum())
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-6)

    def test_batched(self, rng):
        a, b = rng.standard_normal((5, 2, 3)), rng.standard_normal((5, 3, 4))
        np.testing.assert_allclose(T.matmul(t(a), t(b)).data, a @ b, rtol=1e-5)


class TestConv2d:
    def test_unit_kernel_is_identity(self, rng):
        x = rng.standard_normal((2, 1, 6, 5)).astype(np.float32)
        out = T.conv2d(t(x), t(np.ones((1, 1, 1, 1))), stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x)

    def test_constant_image_with_ones_kernel(self):
        c = 0.7
        out = T.conv2d(t(np.full((1, 1, 6, 6), c)), t(np.ones((1, 1, 3, 3))))
        np.testing.assert_allclose(out.data, np.full((1, 1, 4, 4), 9 * c), rtol=1e-6)

    def test_same_padding_shape(self):
        out = T.conv2d(t(np.zeros((1, 1, 5, 5))), t(np.zeros((4, 1, 3, 3))), stride=1, padding=1)
        assert out.shape == (1, 4, 5, 5)

    def test_cross_correlation_not_convolution(self):
        x = np.zeros((1, 1, 3, 3), np.float32)
        x[0, 0, 0, 0] = 1.0
        k = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        out = T.conv2d(t(x), t(k), padding=1)
        # output at (1,1) sees the input's (0,0) through kernel entry (0,0)
        assert out.data[0, 0, 1, 1] == k[0, 0, 0, 0]
        assert out.data[0, 0, 0, 0] == k[0, 0, 1, 1]

    def test_matches_direct_loop(self, rng):
        x = rng.standard_normal((2, 3, 7, 7)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        out = T.conv2d(t(x), t(w), t(b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 4, 4, 4))
        for i in range(4):
            for j in range(4):
                patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, w) + b
        np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-5)

    def test_stride_geometry_must_tile(self):
        with pytest.raises(DimensionError):
            T.conv2d(t(np.zeros((1, 1, 6, 6))), t(np.zeros((1, 1, 3, 3))), stride=2)

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            T.conv2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 3))))

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((1, 3, 3, 3))))


class TestElementwise:
    def test_hadamard_with_ones(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        np.testing.assert_array_equal(T.elementwise(t(x), "hadamard", t(np.ones((3, 4)))).data, x)

    def test_sigmoid_value_and_slope_at_zero(self):
        x = t([0.0], grad=True)
        y = T.elementwise(x, "sigmoid")
        assert y.data[0] == 0.5
        T.backward(y.sum())
        assert x.grad[0] == pytest.approx(0.25)

    def test_relu(self):
        np.testing.assert_array_equal(T.elementwise(t([-1.0, 2.0]), "relu").data, [0.0, 2.0])

    def test_scale(self):
        np.testing.assert_allclose(T.elementwise(t([1.0, -2.0]), "scale", 3.0).data, [3.0, -6.0])

    def test_add(self):
        np.testing.assert_array_equal(T.elementwise(t([1.0, 2.0]), "add", t([3.0, 4.0])).data, [4.0, 6.0])

    @pytest.mark.parametrize("op", ["add", "hadamard"])
    def test_binary_shape_mismatch(self, op):
        with pytest.raises(DimensionError):
            T.elementwise(t(np.ones(3)), op, t(np.ones(4)))

    def test_unknown_function(self):
        with pytest.raises(ValueError):
            T.elementwise(t([1.0]), "softplus")

    def test_sigmoid_is_stable_for_large_inputs(self):
        y = T.sigmoid(t([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(y))
        np.testing.assert_array_equal(y, [0.0, 1.0])


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = T.layer_norm(t(np.full((2, 5), 3.0)), t(np.ones(5)), t(np.zeros(5)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_plus_minus_one_row(self):
        out = T.layer_norm(t([[1.0, -1.0]]), t(np.ones(2)), t(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], rtol=1e-6)

    def test_beta_shift(self, rng):
        x = t(rng.standard_normal((3, 4)))
        g = t(rng.standard_normal(4))
        beta = rng.standard_normal(4).astype(np.float32)
        base = T.layer_norm(x, g, t(np.zeros(4))).data
        np.testing.assert_allclose(T.layer_norm(x, g, t(beta)).data, base + beta, rtol=1e-6, atol=1e-6)

    def test_normalised_moments(self, rng):
        out = T.layer_norm(t(rng.standard_normal((10, 64)) * 5 + 2), t(np.ones(64)), t(np.zeros(64))).data
        assert np.abs(out.mean(axis=-1)).max() <= 1e-5
        assert np.abs(out.var(axis=-1) - 1).max() <= 1e-3


class TestAttention:
    def test_single_token_returns_v(self, rng):
        q, k, v = (t(rng.standard_normal((1, 4))) for _ in range(3))
        np.testing.assert_array_equal(T.softmax_attention(q, k, v).data, v.data)

    def test_identical_tokens_average_v(self, rng):
        tok = rng.standard_normal((1, 4))
        q = k = t(np.repeat(tok, 3, axis=0))
        v = rng.standard_normal((3, 4)).astype(np.float32)
        out = T.softmax_attention(q, k, t(v)).data
        np.testing.assert_allclose(out, np.repeat(v.mean(0, keepdims=True), 3, axis=0), rtol=1e-5, atol=1e-6)

    def test_matches_reference(self, rng):
        q, k, v = (rng.standard_normal((3, 4)) for _ in range(3))
        s = q @ k.T / 2.0
        a = np.exp(s - s.max(1, keepdims=True))
        a /= a.sum(1, keepdims=True)
        out = T.softmax_attention(t(q), t(k), t(v)).data
        np.testing.assert_allclose(out, a @ v, atol=1e-6)

    def test_softmax_rows_sum_to_one(self, rng):
        s = T.softmax(t(rng.standard_normal((5, 7)) * 10)).data
        np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-6)


class TestPooling:
    def test_max_pool_values(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(T.max_pool2d(t(x)).data[0, 0], [[5, 7], [13, 15]])

    def test_max_pool_gradient_goes_to_first_maximum(self):
        x = t(np.ones((1, 1, 2, 2)), grad=True)
        T.backward(T.max_pool2d(x).sum())
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_global_average(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        np.testing.assert_allclose(T.global_avg_pool(t(x)).data, x.mean(axis=(2, 3)), rtol=1e-6)


class TestBce:
    def test_matches_naive_formula(self, rng):
        z = rng.standard_normal(6)
        y = rng.integers(0, 2, 6).astype(np.float32)
        w = rng.uniform(0.5, 2, 6)
        p = 1 / (1 + np.exp(-z))
        ref = np.mean(-w * (y * np.log(p) + (1 - y) * np.log(1 - p)))
        assert T.bce_with_logits(t(z), y, w).item() == pytest.approx(ref, rel=1e-5)

    def test_extreme_logits_are_finite(self):
        loss = T.bce_with_logits(t([500.0, -500.0]), np.array([0.0, 1.0]))
        assert np.isfinite(loss.item()) and loss.item() == pytest.approx(500.0)


class TestBackward:
    def test_square(self):
        x = t([3.0], grad=True)
        T.backward((x * x).sum())
        assert x.grad[0] == pytest.approx(6.0)

    def test_unused_parameter_gets_zero(self):
        x, p = t([1.0, 2.0], grad=True), t([5.0], grad=True)
        T.backward((x * x).sum() + p.sum() * 0.0)
        np.testing.assert_array_equal(p.grad, [0.0])

    def test_gradients_accumulate_until_cleared(self):
        x = t([2.0], grad=True)
        T.backward((x * x).sum())
        T.backward((x * x).sum())
        assert x.grad[0] == pytest.approx(8.0)
        x.zero_grad()
        T.backward((x * x).sum())
        assert x.grad[0] == pytest.approx(4.0)

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0], grad=True)
        with pytest.raises(ContractError):
            T.backward(x * x)

    def test_tape_is_topological(self, rng):
        a = t(rng.standard_normal((2, 2)), grad=True)
        b = T.relu(a @ a)
        loss = (b * a).sum()
        tape = T.ComputationTape.record(loss)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                assert pos[id(parent)] < pos[id(node)]
        assert a in tape and loss in tape

    def test_loss_not_on_given_tape(self):
        x = t([1.0], grad=True)
        tape = T.ComputationTape.record((x * x).sum())
        with pytest.raises(ContractError):
            T.backward((x * 3.0).sum(), tape)

    def test_no_grad_builds_no_graph(self):
        x = t([1.0], grad=True)
        with T.no_grad():
            y = x * x
        assert not y.requires_grad and y.is_leaf

    def test_shared_subexpression(self):
        # y = x*x used twice: dL/dx = 2 * 2x
        x = t([1.5], grad=True)
        y = x * x
        T.backward((y + y).sum())
        assert x.grad[0] == pytest.approx(6.0)

    def test_bit_identical_reruns(self, rng):
        data = rng.standard_normal((3, 4)).astype(np.float32)

        def run():
            x = t(data, grad=True)
            T.backward(T.sigmoid(T.matmul(x, t(data.T))).sum())
            return x.grad.tobytes()

        assert run() == run()


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = t([1.0, -2.0], grad=True)
        state = T.AdamState.for_params([p], lr=0.1)
        T.adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        np.testing.assert_array_equal(state.m[0], 0.0)
        assert state.t == 1

    def test_zero_gradient_decays_moments(self):
        p = t([1.0, -2.0], grad=True)
        state = T.AdamState.for_params([p], lr=0.1)
        state.m[0][:] = 0.5
        state.v[0][:] = 0.25
        T.adam_step([p], [np.zeros(2)], state)
        np.testing.assert_allclose(state.m[0], 0.45)
        np.testing.assert_allclose(state.v[0], 0.24975)

    def test_first_step_is_signed_lr(self):
        p = t([1.0, 1.0, 1.0], grad=True)
        state = T.AdamState.for_params([p], lr=1e-2, eps=1e-12)
        T.adam_step([p], [np.array([3.0, -0.2, 1e-3])], state)
        np.testing.assert_allclose(p.data, [1 - 1e-2, 1 + 1e-2, 1 - 1e-2], rtol=1e-6)

    def test_zero_learning_rate(self):
        p = t([0.3], grad=True)
        state = T.AdamState.for_params([p], lr=0.0)
        for _ in range(3):
            T.adam_step([p], [np.array([1.0])], state)
        assert p.data[0] == np.float32(0.3) and state.t == 3

    def test_matches_reference_update(self, rng):
        g_seq = rng.standard_normal((4, 3))
        p = t(np.zeros(3), grad=True)
        state = T.AdamState.for_params([p], lr=0.01)
        m = v = np.zeros(3)
        ref = np.zeros(3)
        for i, g in enumerate(g_seq, 1):
            T.adam_step([p], [g.astype(np.float32)], state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.9 ** i)) / (np.sqrt(v / (1 - 0.999 ** i)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-4, atol=1e-6)

    def test_default_hyperparameters(self):
        s = T.AdamState.for_params([t([0.0], grad=True)])
        assert (s.lr, s.beta1, s.beta2, s.eps) == (5e-5, 0.9, 0.999, 1e-8)

    def test_optimizer_minimises_quadratic(self):
        p = t([4.0, -3.0], grad=True)
        opt = T.Adam([p], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            T.backward((p * p).sum())
            opt.step()
        assert np.abs(p.data).max() < 0.05
