"""Dense float64 array kernels and the seeded RNG.

Everything in the package is a row-major ``numpy.ndarray`` of ``float64``.
Feature maps are laid out ``H x W x C`` (channels last, no batch axis).
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def flat_index(shape: tuple[int, ...], index: tuple[int, ...]) -> int:
    """Row-major offset of ``index`` inside an array of ``shape``."""
    if len(shape) != len(index):
        raise ValueError(f"index rank {len(index)} != shape rank {len(shape)}")
    offset = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise IndexError(f"index {index} out of bounds for shape {shape}")
        offset = offset * extent + i
    return offset


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-extent check.

    Leading axes broadcast as in ``numpy.matmul``.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul inner extents differ: {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})"
        )
    return np.matmul(a, b)


def _check_odd_kernel(k: int) -> None:
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd for 'same' padding, got {k}")


def conv2d_depthwise(f: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel cross-correlation with zero 'same' padding.

    ``f`` is ``H x W x C``, ``kernel`` is ``k x k x C`` with ``k`` odd.
    """
    f = np.asarray(f, dtype=DTYPE)
    kernel = np.asarray(kernel, dtype=DTYPE)
    k = kernel.shape[0]
    if kernel.shape[1] != k:
        raise ValueError(f"kernel must be square, got {kernel.shape}")
    _check_odd_kernel(k)
    if kernel.shape[2] != f.shape[2]:
        raise ValueError(f"channel mismatch: input {f.shape}, kernel {kernel.shape}")
    h, w, _ = f.shape
    p = k // 2
    padded = np.pad(f, ((p, p), (p, p), (0, 0)))
    out = np.zeros_like(f)
    for a in range(k):
        for b in range(k):
            out += padded[a : a + h, b : b + w, :] * kernel[a, b, :]
    return out


def conv2d(f: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Dense cross-correlation, 'same' zero padding.

    ``f``: ``H x W x C_in``; ``weight``: ``k x k x C_in x C_out``.
    """
    f = np.asarray(f, dtype=DTYPE)
    weight = np.asarray(weight, dtype=DTYPE)
    k = weight.shape[0]
    if weight.shape[1] != k:
        raise ValueError(f"kernel must be square, got {weight.shape}")
    _check_odd_kernel(k)
    if weight.shape[2] != f.shape[2]:
        raise ValueError(f"channel mismatch: input {f.shape}, weight {weight.shape}")
    h, w, _ = f.shape
    p = k // 2
    padded = np.pad(f, ((p, p), (p, p), (0, 0)))
    out = np.zeros((h, w, weight.shape[3]), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            if not weight[a, b].any():
                continue
            out += padded[a : a + h, b : b + w, :] @ weight[a, b]
    return out


# elementwise suite


def add(a, b):
    return np.add(a, b, dtype=DTYPE)


def mul(a, b):
    return np.multiply(a, b, dtype=DTYPE)


def exp(x):
    return np.exp(np.asarray(x, dtype=DTYPE))


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # split on sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=DTYPE))


def silu(x):
    x = np.asarray(x, dtype=DTYPE)
    return x * sigmoid(x)


def round_half_even(x):
    return np.rint(np.asarray(x, dtype=DTYPE))


def uniform_noise(x, rng: "Rng", half_width: float = 0.5):
    """``x + U(-half_width, half_width)`` drawn i.i.d. per element."""
    x = np.asarray(x, dtype=DTYPE)
    return x + rng.uniform(-half_width, half_width, x.shape)


class Rng:
    """Seeded generator backed by PCG64 (``numpy.random.PCG64``).

    PCG64 streams are specified bit-for-bit by numpy, so a seed yields the
    same samples on every platform. Use :meth:`spawn` for independent
    sub-streams instead of reusing seeds.
    """

    ALGORITHM = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * std

    def truncated_normal(self, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
        """Normal samples resampled until they fall inside ``+-bound*std``."""
        out = self._gen.standard_normal(shape)
        bad = np.abs(out) > bound
        while bad.any():
            out[bad] = self._gen.standard_normal(int(bad.sum()))
            bad = np.abs(out) > bound
        return out * std

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def random_bytes(self, n: int) -> bytes:
        return self._gen.bytes(n)

    def spawn(self) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = self._gen.spawn(1)[0]
        return child
