"""In-place Adam step on flat contiguous float64 arrays."""
import numpy as np

from .._accel import USE_NUMBA


def adam_step_np(p, g, m, v, lr, b1, b2, eps, step):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


if USE_NUMBA:
    import numba

    @numba.njit(cache=True)
    def adam_step_nb(p, g, m, v, lr, b1, b2, eps, step):
        c1 = 1.0 - b1 ** step
        c2 = 1.0 - b2 ** step
        for i in range(p.shape[0]):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)

    adam_step = adam_step_nb
else:
    adam_step = adam_step_np
