import numpy as np
import numpy.testing as npt
import pytest

from normlab.errors import ConfigError, UsageError
from normlab.optim import SGD, Adam, make_optimizer
from normlab.tensor import Tensor


def scalar_adam_reference(grad_fn, w0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standalone scalar Adam, reimplemented independently of the package."""
    w, m, v = w0, 0.0, 0.0
    history = [w]
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        history.append(w)
    return history


class TestSGD:
    def test_single_step_arithmetic(self):
        w = Tensor([1.0], requires_grad=True)
        w.grad = np.array([0.5])
        SGD([w], lr=0.1).step()
        npt.assert_allclose(w.data, [0.95])

    def test_missing_gradient_rejected(self):
        w = Tensor([1.0], requires_grad=True)
        opt = SGD([w], lr=0.1)
        with pytest.raises(UsageError):
            opt.step()

    def test_step_count_increments(self):
        w = Tensor([1.0], requires_grad=True)
        opt = SGD([w], lr=0.1)
        for expected in (1, 2, 3):
            w.grad = np.array([1.0])
            opt.step()
            assert opt.step_count == expected


class TestAdam:
    def test_first_step_magnitude_approaches_lr(self):
        for g in (0.5, -3.0, 1e-3):
            w = Tensor([2.0], requires_grad=True)
            w.grad = np.array([g])
            Adam([w], lr=0.001, eps=1e-12).step()
            npt.assert_allclose(abs(w.data[0] - 2.0), 0.001, rtol=1e-6)

    def test_matches_scalar_reference_on_quadratic(self):
        # f(w) = w^2, grad = 2w, from w=1 with lr=0.1
        expected = scalar_adam_reference(lambda w: 2.0 * w, 1.0, 0.1, 10)
        w = Tensor([1.0], requires_grad=True)
        opt = Adam([w], lr=0.1)
        seen = [float(w.data[0])]
        for _ in range(10):
            opt.zero_grad()
            loss = (w * w).sum()
            loss.backward()
            opt.step()
            seen.append(float(w.data[0]))
        npt.assert_allclose(seen, expected, rtol=1e-12)
        values = [h * h for h in expected]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_bad_hyperparameters_rejected(self):
        w = Tensor([1.0], requires_grad=True)
        with pytest.raises(ConfigError):
            Adam([w], lr=0.1, beta1=1.0)
        with pytest.raises(ConfigError):
            Adam([w], lr=0.1, eps=0.0)
        with pytest.raises(ConfigError):
            Adam([w], lr=-0.1)


class TestZeroGrad:
    def test_backward_after_clear_matches_fresh_pass(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        opt = SGD([w], lr=0.1)
        (w * w).sum().backward()
        first = w.grad.copy()
        opt.zero_grad()
        (w * w).sum().backward()
        npt.assert_array_equal(w.grad, first)

    def test_idempotent(self):
        w = Tensor([1.0], requires_grad=True)
        opt = SGD([w], lr=0.1)
        opt.zero_grad()
        opt.zero_grad()
        assert w.grad is None

    def test_skipping_clear_doubles_gradient(self):
        w = Tensor([3.0], requires_grad=True)
        (w * w).sum().backward()
        once = w.grad.copy()
        (w * w).sum().backward()
        npt.assert_array_equal(w.grad, 2 * once)


class TestFactory:
    def test_known_kinds(self):
        w = Tensor([1.0], requires_grad=True)
        assert isinstance(make_optimizer("sgd", [w], 0.1), SGD)
        assert isinstance(make_optimizer("adam", [w], 0.1), Adam)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            make_optimizer("rmsprop", [], 0.1)
