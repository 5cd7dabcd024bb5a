"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``."""

import numpy as np

BACKEND = "python"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


def _philox10(c0, c1, c2, c3, k0, k1):
    # words are carried in uint64 arrays holding 32-bit values
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ np.uint64(k0),
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ np.uint64(k1),
            p0 & _MASK,
        )
    return c0, c1, c2, c3


def philox4x32(counters, k0, k1):
    """Apply Philox4x32-10 to each row of a ``(N, 4)`` counter array."""
    counters = np.asarray(counters, dtype=np.uint32).astype(np.uint64)
    words = _philox10(*(counters[:, j] for j in range(4)), int(k0), int(k1))
    return np.stack(words, axis=1).astype(np.uint32)


_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


def philox_normals(seed, paths, j0, count):
    """Standard normals ``j0 .. j0 + count - 1`` of each path's stream.

    Normal ``j`` is element ``j % 2`` of the Box-Muller pair built from the
    Philox block with counter ``(j // 2, path)`` keyed by ``seed``.
    Returns a ``(P, count)`` float64 array.
    """
    seed = int(seed)
    j0 = int(j0)
    count = int(count)
    paths = np.asarray(paths, dtype=np.uint64)
    b0 = j0 >> 1
    nb = ((j0 + count - 1) >> 1) - b0 + 1 if count > 0 else 0
    blocks = np.uint64(b0) + np.arange(nb, dtype=np.uint64)
    shape = (paths.shape[0], nb)
    c0 = np.broadcast_to((blocks & _MASK)[None, :], shape)
    c1 = np.broadcast_to((blocks >> _SHIFT)[None, :], shape)
    c2 = np.broadcast_to((paths & _MASK)[:, None], shape)
    c3 = np.broadcast_to((paths >> _SHIFT)[:, None], shape)
    w0, w1, w2, w3 = _philox10(c0, c1, c2, c3, seed & 0xFFFFFFFF, seed >> 32)
    m1 = ((w0 | (w1 << _SHIFT)) >> np.uint64(11)).astype(np.float64)
    m2 = ((w2 | (w3 << _SHIFT)) >> np.uint64(11)).astype(np.float64)
    u1 = (m1 + 1.0) * _INV_2_53
    u2 = m2 * _INV_2_53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    z = np.empty((paths.shape[0], nb, 2))
    z[:, :, 0] = r * np.cos(theta)
    z[:, :, 1] = r * np.sin(theta)
    off = j0 - 2 * b0
    return z.reshape(paths.shape[0], 2 * nb)[:, off:off + count]


def gagliardo_lag_sums(values, lag_weight, p):
    """Per-row ``sum_{l>=1} lag_weight[l] * sum_i |v[i+l] - v[i]|**p``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = values.shape[1]
    ip = int(p)
    integer_p = p == ip and 1 <= ip <= 16
    out = np.zeros(values.shape[0])
    for lag in range(1, n):
        d = np.abs(values[:, lag:] - values[:, :-lag])
        if integer_p:
            term = d.copy()
            for _ in range(1, ip):
                term *= d
        else:
            term = d**p
        out += lag_weight[lag] * term.sum(axis=1)
    return out
