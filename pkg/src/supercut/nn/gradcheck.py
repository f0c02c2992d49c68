"""Central finite-difference gradient checking."""
import numpy as np


def numerical_gradient(loss_fn, point, step=1e-4):
    point = np.array(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat, gflat = point.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fplus = loss_fn(point)
        flat[i] = orig - step
        fminus = loss_fn(point)
        flat[i] = orig
        gflat[i] = (fplus - fminus) / (2.0 * step)
    return grad


def finite_diff_check(loss_fn, point, analytic_grad, step=1e-4):
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``."""
    numeric = numerical_gradient(loss_fn, point, step)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
