import numpy as np
import pytest

from detectornet import autograd as ag


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of each array (mutated in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_gradients(build, shapes, seed, h=1e-5):
    """Compare backprop of scalar ``build(*tensors)`` against central differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [ag.Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()

    def value():
        with ag.no_grad():
            return build(*[ag.Tensor(a) for a in arrays]).item()

    numeric = numeric_grad(value, arrays, h)
    return max(max_rel_error(t.grad, n) for t, n in zip(tensors, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
