"""Central finite differences for float64 tensors."""

import numpy as np

from acml import tensor as T


def numeric_grad(f, arrays, h=1e-6):
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays):
    ts = [T.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = build(*ts)
    T.backward(out)
    return [t.grad for t in ts]


def rel_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check(build, arrays, h=1e-6):
    """Max relative error between backprop and finite differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def f(*xs):
        with T.no_grad():
            return build(*[T.Tensor(x, dtype=np.float64) for x in xs]).item()

    num = numeric_grad(f, arrays, h)
    ana = analytic_grad(build, arrays)
    return max(rel_error(n, a) for n, a in zip(num, ana))
