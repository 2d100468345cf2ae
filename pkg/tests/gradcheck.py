"""Central finite-difference checking for the autograd engine."""

import numpy as np

from arnet.tensor import Tensor

EPS = 1e-5  # near the cube root of machine epsilon, balancing truncation and round-off
TOL = 1e-4


def numeric_grad(fn, arrays, index, eps=EPS):
    """d fn / d arrays[index] by central differences; ``fn`` takes plain arrays."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = fn(*arrays)
        x[i] = old - eps
        down = fn(*arrays)
        x[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check(build, *arrays):
    """Compare backprop of the scalar ``build(*tensors)`` with finite differences.

    Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    assert out.size == 1, "gradient checks need a scalar output"
    out.backward()

    def scalar(*xs):
        return float(build(*[Tensor(x) for x in xs]).data)

    worst = 0.0
    for k, t in enumerate(tensors):
        numeric = numeric_grad(scalar, arrays, k)
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[k])
        worst = max(worst, relative_error(analytic, numeric))
    return worst
