import numpy as np
import pytest

from dandelion import autodiff as ad
from dandelion.autodiff import GradientTape, Tensor, backward
from dandelion.errors import DegenerateVectorError, GradientContractError

from conftest import central_difference, relative_errors


class TestL2Normalize:
    def test_three_four_five(self):
        out = ad.l2_normalize(Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-12)

    def test_already_unit(self):
        out = ad.l2_normalize(Tensor([1.0, 0.0]))
        np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateVectorError):
            ad.l2_normalize(Tensor([0.0, 0.0]))

    def test_idempotent(self, rng):
        for _ in range(20):
            v = rng.uniform(-1, 1, size=6)
            once = ad.l2_normalize(Tensor(v)).data
            twice = ad.l2_normalize(Tensor(once)).data
            np.testing.assert_allclose(twice, once, atol=1e-9)
            assert abs(np.linalg.norm(once) - 1.0) < 1e-9


class TestCosineSimilarity:
    @pytest.mark.parametrize("a,b,expected", [
        ([1.0, 0.0], [0.0, 1.0], 0.0),
        ([1.0, 2.0], [2.0, 4.0], 1.0),
        ([1.0, 0.0], [-1.0, 0.0], -1.0),
    ])
    def test_examples(self, a, b, expected):
        assert ad.cosine_similarity(Tensor(a), Tensor(b)).item() == pytest.approx(expected, abs=1e-12)

    def test_zero_norm(self):
        with pytest.raises(DegenerateVectorError):
            ad.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_symmetry_and_scale_invariance(self, rng):
        for _ in range(30):
            a = rng.uniform(-1, 1, size=5)
            b = rng.uniform(-1, 1, size=5)
            k = rng.uniform(0.1, 10.0)
            ab = ad.cosine_similarity(Tensor(a), Tensor(b)).item()
            ba = ad.cosine_similarity(Tensor(b), Tensor(a)).item()
            ka = ad.cosine_similarity(Tensor(k * a), Tensor(b)).item()
            assert abs(ab - ba) < 1e-9
            assert abs(ab - ka) < 1e-9
            assert -1.0 <= ab <= 1.0


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(ad.softmax([0.0, 0.0]).data, [[0.5, 0.5]], atol=1e-12)
        np.testing.assert_allclose(ad.softmax([1.0, 1.0, 1.0]).data, [[1 / 3] * 3], atol=1e-12)

    def test_shift_stability(self):
        out = ad.softmax([1000.0, 0.0]).data
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-9)

    def test_sums_to_one(self, rng):
        for _ in range(50):
            logits = rng.uniform(-50, 50, size=rng.integers(2, 9.0))
            out = ad.softmax(logits).data
            assert abs(out.sum() - 1.0) < 1e-9
            assert (out >= 0).all()

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ad.softmax([np.inf, 0.0])


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert ad.cross_entropy(Tensor([1.0, 0.0]), 0).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform(self):
        assert ad.cross_entropy(Tensor([0.5, 0.5]), 1).item() == pytest.approx(np.log(2), abs=1e-12)

    def test_clamp_policy(self):
        assert ad.cross_entropy(Tensor([0.0, 1.0]), 0).item() == pytest.approx(-np.log(1e-9), abs=1e-9)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            ad.cross_entropy(Tensor([0.5, 0.5]), 2)

    def test_nonnegative(self, rng):
        for _ in range(30):
            p = rng.uniform(0.01, 1.0, size=4)
            p /= p.sum()
            label = int(rng.integers(4))
            assert ad.cross_entropy(Tensor(p), label).item() >= 0.0


class TestGradReversal:
    def test_forward_identity(self):
        x = Tensor([1.0, 2.0])
        np.testing.assert_array_equal(ad.grad_reversal(x, 1.0).data, [[1.0, 2.0]])

    @pytest.mark.parametrize("lam", [0.0, 1.0, 2.5])
    def test_backward_scaling(self, lam):
        tape = GradientTape()
        x = tape.watch(Tensor([1.0, 2.0, 3.0]))
        upstream = np.array([[0.3, -0.7, 1.1]])
        loss = ad.tsum(ad.mul(ad.grad_reversal(x, lam), Tensor(upstream)))
        grads = backward(tape, loss)
        np.testing.assert_allclose(grads[x], -lam * upstream, atol=1e-12)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            ad.grad_reversal(Tensor([1.0]), -0.1)


class TestBackward:
    def test_square(self):
        tape = GradientTape()
        w = tape.watch(Tensor(3.0))
        grads = backward(tape, ad.mul(w, w))
        assert grads[w][0, 0] == pytest.approx(6.0, abs=1e-12)

    def test_mean_linearity(self):
        tape = GradientTape()
        x = tape.watch(Tensor([1.0, 2.0, 3.0, 4.0]))
        grads = backward(tape, ad.tmean(x))
        np.testing.assert_allclose(grads[x], np.full((1, 4), 0.25), atol=1e-12)

    def test_cosine_self_gradient_vanishes(self, rng):
        v = rng.uniform(-1, 1, size=5)
        tape = GradientTape()
        x = tape.watch(Tensor(v))
        grads = backward(tape, ad.cosine_similarity(x, x))

        def f(arr):
            return ad.cosine_similarity(Tensor(arr), Tensor(arr)).item()

        fd = central_difference(f, v.reshape(1, -1))
        assert np.max(relative_errors(grads[x], fd)) < 1e-4
        np.testing.assert_allclose(grads[x], np.zeros((1, 5)), atol=1e-9)

    def test_non_scalar_loss_rejected(self):
        tape = GradientTape()
        x = tape.watch(Tensor([1.0, 2.0]))
        y = ad.mul(x, x)
        with pytest.raises(GradientContractError):
            backward(tape, y)

    def test_shared_subexpression_accumulates(self):
        tape = GradientTape()
        x = tape.watch(Tensor(2.0))
        t = ad.mul(x, x)
        grads = backward(tape, ad.add(t, t))
        assert grads[x][0, 0] == pytest.approx(8.0, abs=1e-12)

    def test_unreachable_parameter_gets_zero(self):
        tape = GradientTape()
        x = tape.watch(Tensor(2.0))
        y = tape.watch(Tensor(5.0))
        grads = backward(tape, ad.mul(x, x))
        assert grads[y][0, 0] == 0.0


OPS = {
    "add": (lambda a, b: ad.add(a, b), 2),
    "sub": (lambda a, b: ad.sub(a, b), 2),
    "mul": (lambda a, b: ad.mul(a, b), 2),
    "div": (lambda a, b: ad.div(a, ad.add(b, 3.0)), 2),
    "matmul": (lambda a, b: ad.matmul(a, ad.transpose(b)), 2),
    "log": (lambda a: ad.log(ad.add(ad.mul(a, 0.4), 2.0)), 1),
    "exp": (lambda a: ad.exp(a), 1),
    "cos": (lambda a: ad.cos(a), 1),
    "sin": (lambda a: ad.sin(a), 1),
    "sqrt": (lambda a: ad.sqrt(ad.add(a, 2.0)), 1),
    "sigmoid": (lambda a: ad.sigmoid(a), 1),
    "softmax": (lambda a: ad.softmax_rows(a), 1),
    "l2_normalize_rows": (lambda a: ad.l2_normalize_rows(ad.add(a, 2.0)), 1),
    "transpose": (lambda a: ad.transpose(a), 1),
    "reshape": (lambda a: ad.reshape(a, 1, a.data.size), 1),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), 2),
    "mean_axis0": (lambda a: ad.tmean(a, axis=0), 1),
    "sum_axis1": (lambda a: ad.tsum(a, axis=1), 1),
    "leaky_relu": (lambda a: ad.leaky_relu(a, 0.01), 1),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, rng):
    fn, arity = OPS[name]
    shape = (3, 4)
    inputs = [rng.uniform(-1, 1, size=shape) for _ in range(arity)]
    if name == "leaky_relu":
        # keep inputs away from the kink so the central difference is valid
        inputs = [np.where(np.abs(x) < 1e-3, x + 0.05, x) for x in inputs]
    weights = rng.uniform(-1, 1, size=(1, 1))

    def scalarize(*tensors):
        out = fn(*tensors)
        return ad.tsum(ad.mul(ad.reshape(out, 1, out.data.size),
                              Tensor(np.linspace(0.5, 1.5, out.data.size))))

    for position in range(arity):
        tape = GradientTape()
        taped = [Tensor(x) for x in inputs]
        taped[position] = tape.watch(Tensor(inputs[position]))
        grads = backward(tape, scalarize(*taped))

        def f(arr, position=position):
            args = [Tensor(x) for x in inputs]
            args[position] = Tensor(arr)
            return scalarize(*args).item()

        fd = central_difference(f, inputs[position].copy())
        errs = relative_errors(grads[taped[position]], fd)
        assert np.max(errs) <= 1e-4, f"{name} arg{position}: worst rel err {np.max(errs):.2e}"
    del weights


def test_cross_entropy_rows_gradient(rng):
    probs = rng.uniform(0.05, 1.0, size=(5, 4))
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, 4, size=5)
    tape = GradientTape()
    p = tape.watch(Tensor(probs))
    grads = backward(tape, ad.tmean(ad.cross_entropy_rows(p, labels)))

    def f(arr):
        return ad.tmean(ad.cross_entropy_rows(Tensor(arr), labels)).item()

    fd = central_difference(f, probs.copy())
    assert np.max(relative_errors(grads[p], fd)) <= 1e-4


def test_tape_clear_keeps_parameters():
    tape = GradientTape()
    w = tape.watch(Tensor(2.0))
    backward(tape, ad.mul(w, w))
    tape.clear()
    grads = backward(tape, ad.mul(ad.mul(w, w), w))
    assert grads[w][0, 0] == pytest.approx(12.0, abs=1e-12)


def test_mixed_tapes_rejected():
    t1, t2 = GradientTape(), GradientTape()
    a = t1.watch(Tensor(1.0))
    b = t2.watch(Tensor(2.0))
    with pytest.raises(ValueError):
        ad.add(a, b)
