from unittest import TestCase
import math

import numpy as np

from turbinewatch.exceptions import NumericException, UsageException
from turbinewatch.tensor import (
    ParameterSet,
    Tensor,
    attention,
    attention_weights,
    concat,
    glorot,
    lstm_cell,
    positional_encoding,
    reparam_sample,
    stack,
    value_and_grad,
)


def numeric_grad(loss_fn, params: ParameterSet, eps: float = 1e-6):
    """Central differences, one coordinate at a time."""
    out = {}
    for name, tensor in params.items():
        g = np.zeros_like(tensor.data)
        for i in np.ndindex(tensor.shape):
            plus = {k: Tensor(v.data.copy()) for k, v in params.items()}
            minus = {k: Tensor(v.data.copy()) for k, v in params.items()}
            plus[name].data[i] += eps
            minus[name].data[i] -= eps
            g[i] = (loss_fn(plus).item() - loss_fn(minus).item()) / (2 * eps)
        out[name] = g
    return out


class GradCheck(TestCase):
    def assertGradients(self, loss_fn, params: ParameterSet, rtol=1e-5, atol=1e-7):
        _, analytic = value_and_grad(loss_fn, params)
        numeric = numeric_grad(loss_fn, params)
        for name in params:
            np.testing.assert_allclose(analytic[name].data, numeric[name], rtol=rtol, atol=atol, err_msg=name)


class TestPrimitives(GradCheck):
    def setUp(self):
        g = np.random.default_rng(0)
        self.params = ParameterSet(
            [("a", g.standard_normal((3, 4))), ("b", g.standard_normal((4,))), ("c", g.uniform(0.5, 2.0, (3, 4)))]
        )

    def test_arithmetic(self):
        def loss(p):
            x = (p["a"] + p["b"]) * p["c"] - p["b"] / p["c"]
            return (-(x**2)).sum() + (1.0 - p["a"]).mean()

        self.assertGradients(loss, self.params)

    def test_matmul_and_reshape(self):
        def loss(p):
            y = p["a"] @ p["b"].reshape(4, 1)
            return (y.T @ p["c"]).transpose().sum() + p["a"][1:, ::2].sum()

        self.assertGradients(loss, self.params)

    def test_nonlinearities(self):
        def loss(p):
            return (
                p["a"].tanh().sum()
                + p["a"].sigmoid().mean()
                + (p["c"].log() * p["b"].exp()).sum()
                + (p["a"] * 3.0).relu().sum()
                + (p["a"].softmax(axis=-1) * p["c"]).sum()
            )

        self.assertGradients(loss, self.params)

    def test_concat_and_stack(self):
        def loss(p):
            joined = concat([p["a"], p["c"]], axis=0)
            stacked = stack([p["a"], p["c"]], axis=0)
            return (joined**2).sum() + (stacked * stacked[0:1]).sum()

        self.assertGradients(loss, self.params)

    def test_shared_subexpression(self):
        a = Tensor([2.0, 3.0], requires_grad=True)
        b = a * a
        (b + b).sum().backward()
        assert a.grad.tolist() == [8.0, 12.0]

    def test_numpy_on_the_left(self):
        out = np.ones(2) * Tensor([2.0, 3.0])
        assert isinstance(out, Tensor)
        assert out.data.tolist() == [2.0, 3.0]

    def test_errors(self):
        with self.assertRaises(UsageException):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

        with self.assertRaises(UsageException):
            Tensor(np.ones(3), requires_grad=True).backward()

        with self.assertRaises(NumericException) as ctx:
            Tensor([0.0]).log()
        assert "log" in str(ctx.exception)

        with self.assertRaises(UsageException):
            ParameterSet([("a", 1.0), ("a", 2.0)])


class TestLayers(GradCheck):
    def test_attention_rows_sum_to_one(self):
        g = np.random.default_rng(1)
        q, k = Tensor(g.standard_normal((2, 5, 4))), Tensor(g.standard_normal((2, 5, 4)))
        weights = attention_weights(q, k).data
        assert weights.shape == (2, 5, 5)
        assert np.allclose(weights.sum(axis=-1), 1.0)

    def test_attention_gradients(self):
        g = np.random.default_rng(2)
        params = ParameterSet(
            [("q", g.standard_normal((3, 4))), ("k", g.standard_normal((3, 4))), ("v", g.standard_normal((3, 2)))]
        )
        self.assertGradients(lambda p: (attention(p["q"], p["k"], p["v"]) ** 2).sum(), params)

    def test_lstm_gradients(self):
        g = np.random.default_rng(3)
        params = ParameterSet(
            [
                ("w_x", glorot(g, 3, 8)),
                ("w_h", glorot(g, 2, 8)),
                ("b", g.standard_normal(8)),
                ("x", g.standard_normal((4, 3))),
            ]
        )

        def loss(p):
            h = c = Tensor(np.zeros((4, 2)))
            for _ in range(3):
                h, c = lstm_cell(p["x"], h, c, p["w_x"], p["w_h"], p["b"])
            return (h * h).sum() + c.sum()

        self.assertGradients(loss, params)

    def test_lstm_forget_gate(self):
        # with the input gate shut and the forget gate open the cell state is kept
        w_x, w_h = Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4)))
        b = Tensor([-50.0, 50.0, 0.0, 50.0])
        h, c = lstm_cell(Tensor([[1.0]]), Tensor([[0.0]]), Tensor([[0.7]]), w_x, w_h, b)
        assert np.isclose(c.item(), 0.7)
        assert np.isclose(h.item(), np.tanh(0.7))

        with self.assertRaises(UsageException):
            lstm_cell(Tensor([[1.0]]), Tensor([[0.0]]), Tensor([[0.0]]), w_x, w_h, Tensor(np.zeros(3)))

    def test_lstm_matches_gate_equations(self):
        g = np.random.default_rng(8)
        n_in, hidden, batch = 3, 5, 2
        x = g.standard_normal((batch, n_in))
        h, c = g.standard_normal((2, batch, hidden))
        w_x = g.standard_normal((n_in, 4 * hidden))
        w_h = g.standard_normal((hidden, 4 * hidden))
        b = g.standard_normal(4 * hidden)

        def sigmoid(v):
            return 1.0 / (1.0 + math.exp(-v))

        expected_h, expected_c = np.zeros((batch, hidden)), np.zeros((batch, hidden))
        for r in range(batch):
            for j in range(hidden):
                pre = [
                    sum(x[r, k] * w_x[k, gate * hidden + j] for k in range(n_in))
                    + sum(h[r, k] * w_h[k, gate * hidden + j] for k in range(hidden))
                    + b[gate * hidden + j]
                    for gate in range(4)
                ]
                i, f, cand, o = sigmoid(pre[0]), sigmoid(pre[1]), math.tanh(pre[2]), sigmoid(pre[3])
                expected_c[r, j] = f * c[r, j] + i * cand
                expected_h[r, j] = o * math.tanh(expected_c[r, j])

        h_next, c_next = lstm_cell(Tensor(x), Tensor(h), Tensor(c), Tensor(w_x), Tensor(w_h), Tensor(b))
        assert np.max(np.abs(c_next.data - expected_c)) < 1e-12
        assert np.max(np.abs(h_next.data - expected_h)) < 1e-12

    def test_positional_encoding(self):
        pe = positional_encoding(6, 4).data
        assert pe.shape == (6, 4)
        assert pe[0].tolist() == [0.0, 1.0, 0.0, 1.0]
        assert np.isclose(pe[3, 0], np.sin(3.0))
        assert np.isclose(pe[3, 3], np.cos(3.0 / 100.0))

        with self.assertRaises(UsageException):
            positional_encoding(4, 3)

    def test_reparam(self):
        mu, logvar = Tensor([1.0, -1.0]), Tensor([0.0, np.log(4.0)])
        assert np.allclose(reparam_sample(mu, logvar, [0.5, 0.5]).data, [1.5, 0.0])

        with self.assertRaises(UsageException):
            reparam_sample(mu, logvar, [0.5])

    def test_glorot_bounds(self):
        w = glorot(np.random.default_rng(0), 10, 6)
        assert w.shape == (10, 6)
        assert np.all(np.abs(w) <= np.sqrt(6 / 16))
