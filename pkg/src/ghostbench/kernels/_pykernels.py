"""NumPy implementations of the hot kernels.

These define the reference semantics; the compiled module must agree with
them bit-for-bit on integer outputs and to rounding on float outputs.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 2.0 * np.pi


def mix64(z):
    """SplitMix64 finalizer over a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_words(key, start, count):
    """Words ``mix64(key + GOLDEN * (j + 1))`` for j in [start, start+count)."""
    j = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(key) + GOLDEN * (j + np.uint64(1)))


def cell_bits(key, cell_count):
    return (stream_words(key, 0, cell_count) >> np.uint64(63)).astype(np.uint8)


def pattern_masks(keys, cell_of_pixel):
    """Expand one Bernoulli bit per cell into pixel masks, one row per key.

    keys: uint64 (T,), cell_of_pixel: int (N,). Returns uint8 (T, N).
    """
    cell_of_pixel = np.asarray(cell_of_pixel, dtype=np.intp)
    n_cells = int(cell_of_pixel.max()) + 1 if cell_of_pixel.size else 0
    out = np.empty((len(keys), cell_of_pixel.size), dtype=np.uint8)
    for t, key in enumerate(np.asarray(keys, dtype=np.uint64)):
        out[t] = cell_bits(key, n_cells)[cell_of_pixel]
    return out


def gaussian_stream(key, start, count):
    """Standard normal draws indexed by position (Box-Muller on hashed words)."""
    if count == 0:
        return np.empty(0)
    words = stream_words(key, 2 * start, 2 * count)
    u = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1 = 1.0 - u[0::2]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def grad_forward(img):
    """Forward differences with Neumann boundary; returns (dx, dy)."""
    img = np.asarray(img, dtype=np.float64)
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[:, :-1] = img[:, 1:] - img[:, :-1]
    dy[:-1, :] = img[1:, :] - img[:-1, :]
    return dx, dy


def grad_adjoint(dx, dy):
    """Exact adjoint of :func:`grad_forward`."""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    out = np.zeros_like(dx)
    out[:, :-1] -= dx[:, :-1]
    out[:, 1:] += dx[:, :-1]
    out[:-1, :] -= dy[:-1, :]
    out[1:, :] += dy[:-1, :]
    return out


def shrink(v, t):
    """Elementwise soft threshold."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
