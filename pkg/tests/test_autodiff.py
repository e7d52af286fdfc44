# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Tests of graformer/autodiff.py"""

import threading

import numpy as np
import pytest

from graformer import autodiff as ad
from graformer.autodiff import Tensor, backward, grad_check, make_rng, no_grad
from graformer.exceptions import GraformerException, ShapeError

from tests.graformertest import GraformerTest


def leaf(values):
    return Tensor(values, requires_grad=True)


def naive_matmul(a, b):
    n, m = a.shape
    m2, p = b.shape
    assert m == m2
    out = np.zeros((n, p))
    for i in range(n):
        for k in range(p):
            for t in range(m):
                out[i, k] += a[i, t] * b[t, k]
    return out


class PrimitiveValueTest(GraformerTest):
    """The forward values of the primitives."""

    run_in_temp_dir = False

    def test_matmul(self, rng):
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((3, 4))
        out = ad.matmul(a, b)
        assert out.shape == (2, 4)
        np.testing.assert_allclose(out.values, naive_matmul(a, b), rtol=1e-13, atol=1e-14)

    def test_matmul_broadcasts(self, rng):
        a = rng.standard_normal((5, 2, 3))
        b = rng.standard_normal((3, 4))
        assert ad.matmul(a, b).shape == (5, 2, 4)

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeError, match="don't align"):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ShapeError, match="don't align"):
            ad.matmul(np.ones(3), np.ones((3, 1)))
        with pytest.raises(ShapeError, match="don't broadcast"):
            ad.matmul(np.ones((2, 2, 3)), np.ones((3, 3, 1)))

    def test_add_shape_error(self):
        with pytest.raises(ShapeError, match="don't broadcast"):
            ad.add(np.ones((2, 3)), np.ones((3, 2)))

    def test_operators(self, rng):
        a = Tensor(rng.standard_normal((2, 2)))
        b = rng.standard_normal((2, 2))
        np.testing.assert_allclose((a @ b).values, a.values @ b)
        np.testing.assert_allclose((b @ a).values, b @ a.values)
        np.testing.assert_allclose((a + b).values, a.values + b)
        np.testing.assert_allclose((b - a).values, b - a.values)
        np.testing.assert_allclose((2.5 * a).values, 2.5 * a.values)
        np.testing.assert_allclose((-a).values, -a.values)

    def test_softmax_rows(self, rng):
        x = rng.standard_normal((6, 7)) * 10
        y = ad.softmax_last_axis(x).values
        assert np.max(np.abs(y.sum(axis=-1) - 1)) <= 1e-12
        assert (y >= 0).all()
        shifted = ad.softmax_last_axis(x + rng.standard_normal((6, 1)) * 100).values
        assert np.max(np.abs(shifted - y)) <= 1e-12

    def test_layer_norm_statistics(self, rng):
        x = rng.standard_normal((4, 5, 8)) * 3 + 2
        y = ad.layer_norm(x, np.ones(8), np.zeros(8), eps=0.0).values
        assert np.max(np.abs(y.mean(axis=-1))) <= 1e-9
        assert np.max(np.abs(y.var(axis=-1) - 1)) <= 1e-9

    def test_layer_norm_shape_error(self):
        with pytest.raises(ShapeError, match="gain and bias"):
            ad.layer_norm(np.ones((2, 4)), np.ones(3), np.zeros(4))

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 3)))
        assert ad.dropout(x, 0.5, rng, training=False) is x
        assert ad.dropout(x, 0.0, rng, training=True) is x

    def test_dropout_training(self):
        x = np.ones((200, 200))
        y = ad.dropout(x, 0.25, make_rng(3), training=True).values
        kept = y != 0
        assert np.allclose(y[kept], 1 / 0.75)
        assert kept.mean() == pytest.approx(0.75, abs=0.01)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_dropout_bad_rate(self, rate, rng):
        with pytest.raises(GraformerException, match="rate must be"):
            ad.dropout(np.ones(3), rate, rng, training=True)

    def test_split_and_concat(self, rng):
        x = rng.standard_normal((2, 6))
        parts = ad.split(x, 3)
        assert [p.shape for p in parts] == [(2, 2)] * 3
        assert np.array_equal(ad.concat(parts).values, x)
        with pytest.raises(ShapeError, match="doesn't divide"):
            ad.split(x, 4)
        with pytest.raises(ShapeError, match="don't match"):
            ad.concat([np.ones((2, 2)), np.ones((3, 2))])

    def test_reshape_error(self):
        with pytest.raises(ShapeError, match="can't reshape"):
            ad.reshape(np.ones(6), (4, 2))

    def test_item(self):
        assert Tensor([[3.5]]).item() == 3.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TapeTest(GraformerTest):
    """How primitives record onto tapes, and how backward replays them."""

    run_in_temp_dir = False

    def test_constants_dont_record(self):
        out = ad.add(np.ones(2), np.ones(2))
        assert out.tape is None
        assert not out.requires_grad

    def test_one_tape_per_computation(self):
        x = leaf([1.0, 2.0])
        y = ad.relu(x)
        z = ad.sum_all(ad.square(y))
        assert y.tape is z.tape
        assert len(z.tape) == 3
        assert [e[1] for e in z.tape.entries] == ["relu", "square", "sum_all"]

    def test_no_grad(self):
        x = leaf([1.0, 2.0])
        with no_grad():
            y = ad.square(x)
        assert y.tape is None
        assert ad.is_recording()

    def test_no_grad_is_per_thread(self):
        seen = []
        with no_grad():
            t = threading.Thread(target=lambda: seen.append(ad.is_recording()))
            t.start()
            t.join()
        assert seen == [True]

    def test_joined_branches_share_a_tape(self):
        x, w0, w1 = leaf([[1.0, 2.0]]), leaf([[3.0], [4.0]]), leaf([[5.0], [6.0]])
        a = ad.matmul(x, w0)
        b = ad.relu(ad.matmul(x, w1))
        c = ad.add(a, b)
        assert a.tape is b.tape is c.tape
        assert [e[1] for e in c.tape.entries] == ["matmul", "matmul", "relu", "add"]
        ad.sum_all(ad.square(c)).backward()
        # c = 11 + 17 = 28, d(c^2)/dc = 56
        assert w0.grad.tolist() == [[56.0], [112.0]]
        assert w1.grad.tolist() == [[56.0], [112.0]]
        assert x.grad.tolist() == [[56.0 * 8, 56.0 * 10]]

    def test_joining_three_tapes(self):
        xs = [leaf([float(i)]) for i in range(1, 4)]
        parts = [ad.square(x) for x in xs]
        total = ad.sum_all(ad.concat(parts))
        assert len(total.tape) == 5
        total.backward()
        assert [x.grad.tolist() for x in xs] == [[2.0], [4.0], [6.0]]

    def test_scalar_loss_required(self):
        y = ad.square(leaf([1.0, 2.0]))
        with pytest.raises(ShapeError, match="must be a scalar"):
            backward(y)
        with pytest.raises(ShapeError, match="doesn't match"):
            backward(y, seed=np.ones(3))

    def test_backward_on_constant(self):
        with pytest.raises(GraformerException, match="needs a gradient"):
            backward(Tensor(1.0))

    def test_shared_input_accumulates(self):
        x = leaf([3.0])
        loss = ad.sum_all(ad.add(ad.square(x), x))
        loss.backward()
        assert x.grad.tolist() == [7.0]

    def test_repeated_backward_accumulates(self):
        x = leaf([3.0])
        ad.sum_all(ad.square(x)).backward()
        ad.sum_all(ad.square(x)).backward()
        assert x.grad.tolist() == [12.0]
        x.zero_grad()
        assert x.grad is None

    def test_broadcast_gradient(self):
        x = leaf(np.ones((4, 3)))
        b = leaf(np.zeros(3))
        ad.sum_all(ad.add(x, b)).backward()
        assert b.grad.tolist() == [4.0, 4.0, 4.0]

    def test_leaf_loss(self):
        x = leaf(2.0)
        backward(x)
        assert x.grad == 1.0


# Functions of one Tensor, for checking gradients.  Inputs are random normal
# unless the function needs something else.
def _matmul_right(x):
    return ad.matmul(x, make_rng(7).standard_normal((x.shape[-1], 3)))


def _matmul_left(x):
    return ad.matmul(make_rng(7).standard_normal((2, x.shape[-2])), x)


def _layer_norm(x):
    d = x.shape[-1]
    rng = make_rng(8)
    return ad.layer_norm(x, rng.standard_normal(d), rng.standard_normal(d))


PRIMITIVE_CASES = {
    "matmul_right": _matmul_right,
    "matmul_left": _matmul_left,
    "add": lambda x: ad.add(x, np.arange(x.shape[-1], dtype=float)),
    "sub": lambda x: ad.sub(np.ones(x.shape[-1]), x),
    "scale": lambda x: ad.scale(x, -1.7),
    "transpose": ad.transpose_last_two,
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "concat": lambda x: ad.concat([x, ad.square(x)]),
    "slice_last": lambda x: ad.slice_last(x, 1, 3),
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "normalize_rows": lambda x: ad.normalize_rows(ad.sigmoid(x)),
    "softmax": ad.softmax_last_axis,
    "layer_norm": _layer_norm,
    "dropout": lambda x: ad.dropout(x, 0.3, make_rng(1), training=True),
    "mean_all": ad.mean_all,
    "sum_all": ad.sum_all,
    "square": ad.square,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    rng = make_rng(99)
    values = rng.standard_normal((3, 4))
    if name == "relu":
        # Keep away from the kink.
        values = np.where(np.abs(values) < 1e-2, 0.5, values)
    report = grad_check(PRIMITIVE_CASES[name], leaf(values), tol=1e-5)
    assert report.passed, report


class GradCheckTest(GraformerTest):
    """Tests of grad_check itself, and of composed chains."""

    run_in_temp_dir = False

    def test_identity(self, rng):
        report = grad_check(lambda x: x, leaf(rng.standard_normal(5)), tol=1e-10)
        assert report.max_rel_error < 1e-10
        assert report.passed
        assert report.as_dict() == {"max_rel_error": report.max_rel_error, "pass": True}

    def test_mean_of_matmul(self, rng):
        w = rng.standard_normal((3, 4))
        report = grad_check(lambda x: ad.mean_all(ad.matmul(x, w)), leaf(rng.standard_normal((2, 3))), tol=1e-6)
        assert report.passed

    def test_weights_side(self, rng):
        x = rng.standard_normal((2, 3))
        report = grad_check(lambda w: ad.mean_all(ad.matmul(x, w)), leaf(rng.standard_normal((3, 4))), tol=1e-6)
        assert report.passed

    def test_composed_chain(self, rng):
        w = rng.standard_normal((4, 6))
        gain, bias = np.ones(6), np.zeros(6)
        x0 = rng.standard_normal((5, 4))

        def f(x):
            return ad.relu(ad.layer_norm(ad.matmul(x, w), gain, bias))

        # Stay away from the ReLU kink.
        pre = ad.layer_norm(ad.matmul(x0, w), gain, bias).values
        assert np.min(np.abs(pre)) > 1e-4
        assert grad_check(f, leaf(x0), tol=1e-5).passed

    def test_detects_wrong_gradient(self, rng):
        def broken(a):
            a = ad.as_tensor(a)
            return ad._record("broken", a.values ** 2, (a,), lambda g: (g,))

        report = grad_check(broken, leaf(rng.standard_normal(4) + 3), tol=1e-5)
        assert not report.passed
        assert report.max_rel_error > 0.1

    def test_requires_grad(self):
        with pytest.raises(GraformerException, match="must require"):
            grad_check(lambda x: x, Tensor([1.0]), tol=1e-5)

    def test_leaves_grad_alone(self, rng):
        x = leaf(rng.standard_normal(3))
        x.grad = np.array([1.0, 2.0, 3.0])
        grad_check(ad.square, x, tol=1e-5)
        assert x.grad.tolist() == [1.0, 2.0, 3.0]
