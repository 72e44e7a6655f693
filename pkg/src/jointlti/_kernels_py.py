"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

_CHUNK = 1 << 12


def var_recursion(A, x0, noise, out):
    out[0] = x0
    if not np.all(np.isfinite(x0)):
        return 0
    x = out[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(noise.shape[0]):
            x = A @ x + noise[t]
            out[t + 1] = x
            if not np.all(np.isfinite(x)):
                return t + 1
    return -1


def max_sign_vertex(A):
    p, n = A.shape
    if n == 0:
        return 0.0, np.ones(0)
    half = 1 << (n - 1)
    # bit j of the vertex index set -> coordinate j is -1; last coordinate fixed to +1
    bits = np.arange(n - 1, dtype=np.int64)
    best_val, best_v = -1.0, None
    for start in range(0, half, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, half), dtype=np.int64)
        V = np.ones((idx.size, n))
        if n > 1:
            V[:, :-1] = 1.0 - 2.0 * ((idx[:, None] >> bits) & 1)
        vals = np.einsum("ij,ij->i", V @ A.T, V @ A.T)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_v = float(vals[i]), V[i].copy()
    y = A @ best_v
    return float(y @ y), best_v
