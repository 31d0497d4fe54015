import numpy as np


def numerical_gradient(func, x, eps=1e-6):
    """
    Central-difference gradient of the scalar ``func()`` with respect to
    ``x``, which is perturbed in place and restored.
    """
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + eps
        plus = func()
        flat_x[i] = original - eps
        minus = func()
        flat_x[i] = original
        flat_grad[i] = (plus - minus) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-4):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def assert_gradient_close(analytic, numeric, tolerance=1e-3):
    error = max_relative_error(analytic, numeric)
    assert error < tolerance, "max relative error {0:.3e}".format(error)


def projected_loss(output, projection):
    # random linear functional of an output, so every element matters
    return float(np.sum(output * projection))
