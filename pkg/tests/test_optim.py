from unittest import TestCase

import numpy as np

from turbinewatch.exceptions import ConfigurationException, NumericException, UsageException
from turbinewatch.optim import AdamState, adam_step
from turbinewatch.tensor import ParameterSet, Tensor, value_and_grad


class TestAdam(TestCase):
    def test_first_step_moves_by_lr(self):
        params = ParameterSet([("w", [1.0, -2.0, 0.0])])
        grads = {"w": Tensor([0.5, -3.0, 0.0])}
        updated, state = adam_step(params, grads, AdamState(lr=0.1))

        # bias corrected first step is lr * sign(g)
        assert np.allclose(updated["w"].data, [0.9, -1.9, 0.0])
        assert state.t == 1
        assert params["w"].data.tolist() == [1.0, -2.0, 0.0]

    def test_matches_reference(self):
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        w, m, v = np.array([3.0]), 0.0, 0.0
        params, state = ParameterSet([("w", w)]), AdamState(lr=lr)

        for t in range(1, 6):
            g = 2 * w
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)

            grads = {"w": Tensor(2 * params["w"].data)}
            params, state = adam_step(params, grads, state)
            assert np.allclose(params["w"].data, w)

    def test_minimizes_quadratic(self):
        params, state = ParameterSet([("w", [4.0, -3.0])]), AdamState(lr=0.1)
        for _ in range(500):
            _, grads = value_and_grad(lambda p: ((p["w"] - 1.0) ** 2).sum(), params)
            params, state = adam_step(params, grads, state)
        assert np.allclose(params["w"].data, 1.0, atol=5e-2)

    def test_errors(self):
        params = ParameterSet([("w", [1.0])])
        with self.assertRaises(NumericException):
            adam_step(params, {"w": Tensor([np.nan])}, AdamState())

        with self.assertRaises(UsageException):
            adam_step(params, {"v": Tensor([1.0])}, AdamState())

        with self.assertRaises(ConfigurationException):
            adam_step(params, {"w": Tensor([1.0])}, AdamState(lr=0))
