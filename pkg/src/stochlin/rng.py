"""Counter-based Gaussian streams.

Every path owns an unbounded stream of standard normals. Normal ``j`` of path
``p`` under key ``seed`` comes from the Philox4x32-10 block with counter
``(j // 2 low, j // 2 high, p low, p high)``: the four output words give two
53-bit uniforms and the Box-Muller pair ``(r cos, r sin)``, of which element
``j % 2`` is taken. Step ``s`` of a ``k``-dimensional driver uses normals
``s*k .. s*k + k - 1``. This layout is the reproducibility contract and must
not change between versions.
"""

import numpy as np

from . import kernels

_MASK64 = (1 << 64) - 1


def standard_normals(seed, path_indices, step0, n_steps, k):
    """Standard normals of shape ``(P, n_steps, k)`` for the given paths.

    Parameters
    ----------
    seed : int
        64-bit key.
    path_indices : array_like of int
        Substream ids, one per returned row.
    step0 : int
        First step.
    n_steps : int
        Number of consecutive steps.
    k : int
        Driver dimension.
    """
    paths = np.ascontiguousarray(path_indices, dtype=np.uint64)
    z = kernels.philox_normals(int(seed) & _MASK64, paths, int(step0) * k, int(n_steps) * k)
    return z.reshape(paths.shape[0], n_steps, k)


def derive_seed(seed, label):
    """Deterministically derive an independent 64-bit seed from ``seed``."""
    label = int(label) & _MASK64
    counter = np.array([[0xA5A5A5A5, 0x5A5A5A5A, label & 0xFFFFFFFF, label >> 32]], dtype=np.uint32)
    seed = int(seed) & _MASK64
    w = kernels.philox4x32(counter, seed & 0xFFFFFFFF, seed >> 32)[0]
    return int(w[0]) | (int(w[1]) << 32)
