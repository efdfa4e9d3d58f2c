import numpy as np
import pytest

import icrl.autodiff as ad
from icrl.autodiff import Tape, Tensor
from icrl.errors import ShapeMismatch
from icrl.rng import RngStream


def finite_difference(fn, arrays, index, eps=1e-5):
    """Central-difference gradient of scalar fn w.r.t. arrays[index]."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[index])
    flat = grad.reshape(-1)
    for k in range(flat.size):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[index].reshape(-1)[k] += eps
        minus[index].reshape(-1)[k] -= eps
        flat[k] = (fn(*plus) - fn(*minus)) / (2 * eps)
    return grad


def check_gradients(build, arrays, wrt=None):
    """Compare taped gradients of a scalar graph against central differences.

    ``build`` maps Tensors to a scalar Tensor; ``arrays`` are float64 inputs.
    """
    tensors = [Tensor(a.copy()) for a in arrays]
    with Tape() as tape:
        loss = build(*tensors)
    tape.backward(loss)
    for i in wrt if wrt is not None else range(len(arrays)):
        fd = finite_difference(lambda *xs: float(build(*[Tensor(x) for x in xs]).data), arrays, i)
        assert tensors[i].grad is not None, f"input {i} got no gradient"
        np.testing.assert_allclose(tensors[i].grad, fd, rtol=1e-4, atol=1e-6)


def rand(*shape, seed=0):
    return RngStream(seed).generator.normal(0.0, 1.0, size=shape)


def weighted_sum(t: Tensor, seed=9) -> Tensor:
    w = Tensor(RngStream(seed).generator.normal(0.0, 1.0, size=t.data.shape))
    return ad.sum_all(ad.mul(t, w))


class TestForwardValues:
    def test_softmax_constant_row_is_exactly_uniform(self):
        out = ad.softmax(Tensor(np.full((1, 4), 3.7)))
        np.testing.assert_array_equal(out.data, np.full((1, 4), 0.25))

    def test_softmax_rows_sum_to_one(self):
        out = ad.softmax(Tensor(rand(8, 11, seed=3)))
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(8), atol=1e-9)

    def test_layernorm_zero_mean_unit_variance(self):
        out = ad.layernorm(Tensor(rand(6, 32, seed=4))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)

    def test_matmul_identity(self):
        x = rand(5, 5, seed=5)
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(5)), Tensor(x)).data, x)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ad.matmul(Tensor(rand(3, 4)), Tensor(rand(3, 4)))

    def test_log_softmax_matches_log_of_softmax(self):
        x = Tensor(rand(4, 7, seed=6))
        np.testing.assert_allclose(ad.log_softmax(x).data, np.log(ad.softmax(x).data), atol=1e-12)

    def test_masked_softmax_masked_entries_exactly_zero(self):
        mask = np.triu(np.ones((5, 5), dtype=bool), k=1)
        out = ad.masked_softmax(Tensor(rand(2, 5, 5, seed=7)), mask).data
        assert (out[:, mask] == 0.0).all()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)

    def test_mask_fill_replaces_and_blocks_gradient(self):
        mask = np.array([[True, False]])
        x = Tensor(np.array([[1.0, 2.0]]))
        with Tape() as tape:
            out = ad.mask_fill(x, mask, -5.0)
            loss = ad.sum_all(out)
        np.testing.assert_array_equal(out.data, [[-5.0, 2.0]])
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0]])


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        check_gradients(lambda a, b: weighted_sum(ad.add(a, b)), [rand(4, 6, seed=1), rand(6, seed=2)])

    def test_mul_broadcast(self):
        check_gradients(lambda a, b: weighted_sum(ad.mul(a, b)), [rand(4, 6, seed=3), rand(6, seed=4)])

    def test_scale(self):
        check_gradients(lambda a: weighted_sum(ad.scale(a, -1.7)), [rand(5, 3, seed=5)])

    def test_matmul_2d(self):
        check_gradients(lambda a, b: weighted_sum(ad.matmul(a, b)), [rand(4, 3, seed=6), rand(3, 5, seed=7)])

    def test_matmul_batched_times_weight(self):
        check_gradients(
            lambda a, b: weighted_sum(ad.matmul(a, b)), [rand(2, 4, 3, seed=8), rand(3, 5, seed=9)]
        )

    def test_matmul_4d_stacked(self):
        check_gradients(
            lambda a, b: weighted_sum(ad.matmul(a, b)),
            [rand(2, 3, 4, 5, seed=10), rand(2, 3, 5, 4, seed=11)],
        )

    def test_layernorm(self):
        check_gradients(lambda a: weighted_sum(ad.layernorm(a)), [rand(3, 8, seed=12)])

    def test_softmax(self):
        check_gradients(lambda a: weighted_sum(ad.softmax(a)), [rand(3, 6, seed=13)])

    def test_masked_softmax(self):
        mask = np.triu(np.ones((6, 6), dtype=bool), k=1)
        check_gradients(lambda a: weighted_sum(ad.masked_softmax(a, mask)), [rand(2, 6, 6, seed=14)])

    def test_log_softmax(self):
        check_gradients(lambda a: weighted_sum(ad.log_softmax(a)), [rand(3, 6, seed=15)])

    def test_gelu(self):
        check_gradients(lambda a: weighted_sum(ad.gelu(a)), [rand(4, 7, seed=16)])

    def test_embed(self):
        ids = np.array([0, 2, 2, 1])
        check_gradients(lambda t: weighted_sum(ad.embed(t, ids)), [rand(3, 4, seed=17)])

    def test_gather(self):
        idx = np.array([[1], [0], [3]])
        check_gradients(lambda a: weighted_sum(ad.gather(a, idx)), [rand(3, 5, 4, seed=18)])

    def test_concat_and_slice(self):
        def graph(a, b):
            joined = ad.concat([a, b])
            return weighted_sum(ad.slice_last(joined, 1, 5))

        check_gradients(graph, [rand(3, 4, seed=19), rand(3, 2, seed=20)])

    def test_reshape_swap_transpose(self):
        def graph(a):
            r = ad.reshape(a, (2, 3, 4, 5))
            t = ad.transpose(r, (0, 2, 1, 3))
            return weighted_sum(ad.swap_last(t))

        check_gradients(graph, [rand(6, 20, seed=21)])

    def test_mask_fill_gradient(self):
        mask = RngStream(22).generator.random((4, 5)) > 0.5
        check_gradients(lambda a: weighted_sum(ad.mask_fill(a, mask, 3.0)), [rand(4, 5, seed=23)])

    def test_sum_axis_keepdims_variants(self):
        check_gradients(lambda a: weighted_sum(ad.sum_axis(a, 1)), [rand(3, 4, 5, seed=24)])
        check_gradients(
            lambda a: ad.sum_all(ad.sum_axis(a, 1, keepdims=True)), [rand(3, 4, 5, seed=25)]
        )

    def test_grad_accumulates_on_reuse(self):
        x = Tensor(np.array([2.0, 3.0]))
        with Tape() as tape:
            loss = ad.sum_all(ad.add(x, x))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])


class TestMlpGradients:
    def test_three_layer_mlp_matches_finite_differences(self):
        gen = RngStream(77).generator
        x = gen.normal(0, 1, (6, 8))
        params = [
            gen.normal(0, 0.5, (8, 16)),
            gen.normal(0, 0.5, (16,)),
            gen.normal(0, 0.5, (16, 16)),
            gen.normal(0, 0.5, (16,)),
            gen.normal(0, 0.5, (16, 4)),
            gen.normal(0, 0.5, (4,)),
        ]

        def graph(x_t, w1, b1, w2, b2, w3, b3):
            h = ad.gelu(ad.add(ad.matmul(x_t, w1), b1))
            h = ad.gelu(ad.add(ad.matmul(h, w2), b2))
            out = ad.add(ad.matmul(h, w3), b3)
            return weighted_sum(ad.layernorm(out), seed=78)

        check_gradients(graph, [x] + params)


class TestTapeSemantics:
    def test_no_tape_no_recording(self):
        x = Tensor(np.ones(3))
        out = ad.scale(x, 2.0)
        np.testing.assert_array_equal(out.data, [2.0, 2.0, 2.0])
        with Tape() as tape:
            pass
        assert len(tape) == 0

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3))
        with Tape() as tape:
            y = ad.scale(x, 2.0)
        with pytest.raises(ShapeMismatch):
            tape.backward(y)

    def test_nested_tapes_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass

    def test_values_finite_after_ops(self):
        gen = RngStream(5).generator
        x = Tensor(gen.normal(0, 50, (16, 16)))
        for op in (ad.softmax, ad.log_softmax, ad.layernorm, ad.gelu):
            assert np.isfinite(op(x).data).all()
