"""Dense numerics shared by every mixer: seeded RNG, FFT convolution,
matrix products, numerical rank, softmax, and the sequence flip/shift
primitives.

All arrays are float64 numpy ndarrays (row-major). Operations are pure:
inputs are never mutated and results are freshly allocated. The only
stateful object is ``Rng``, which is single-owner.

Sequence arrays follow the convention ``(batch, length, channels)``;
the 2-D helpers (``flip_seq``, ``shift_right``) also accept ``(length,
channels)`` and operate on the leading length axis in that case.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Rng",
    "as_tensor",
    "check_finite",
    "matmul",
    "circular_conv_fft",
    "linear_conv_fft",
    "numerical_rank",
    "flip_seq",
    "shift_right",
    "softmax_rows",
    "softplus",
    "sigmoid",
    "silu",
    "rel_error",
    "DEFAULT_RANK_TOL",
]

DEFAULT_RANK_TOL = 1e-8


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def as_tensor(x) -> np.ndarray:
    """Coerce to a float64 ndarray without copying when already one."""
    return np.asarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite entries")
    return x


# ---------------------------------------------------------------------------
# Seeded RNG
# ---------------------------------------------------------------------------

class Rng:
    """Counter-based random stream (Philox) with Box-Muller Gaussians.

    The same seed reproduces the exact draw sequence; all randomness in
    the package flows through instances of this class. Not thread-safe:
    one owner per instance.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    def child(self, key: int) -> "Rng":
        """Independent stream derived from (seed, key); order-insensitive."""
        rng = Rng.__new__(Rng)
        rng.seed = self.seed
        rng._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(int(key),)))
        )
        return rng

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.random(shape) * (high - low) + low

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        """Standard normals via Box-Muller on Philox uniforms."""
        n = int(np.prod(shape)) if shape != () else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # in (0, 1], log-safe
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        z = z.reshape(shape) if shape != () else z[0]
        return std * z

    def xavier_normal(self, shape, fan_in: int, fan_out: int) -> np.ndarray:
        return self.normal(shape, std=np.sqrt(2.0 / (fan_in + fan_out)))

    def xavier_uniform(self, shape, fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.uniform(shape, -bound, bound)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform ints in [low, high), derived from the uniform stream."""
        u = self._gen.random(shape)
        return (low + np.floor(u * (high - low))).astype(np.int64)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with 64-bit accumulation; shapes (m,k) x (k,n)."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def numerical_rank(m: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count singular values >= rel_tol * sigma_max; 0 for the zero matrix."""
    m = as_tensor(m)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"numerical_rank expects a non-empty 2-D matrix, got shape {m.shape}")
    if not (0.0 < rel_tol < 1.0):
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s >= rel_tol * s[0]))


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction (last axis)."""
    m = check_finite(as_tensor(m), "softmax input")
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# FFT convolution
# ---------------------------------------------------------------------------

def circular_conv_fft(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Circular convolution of equal-length real signals via the FFT.

    Works on the last axis so stacked (heads, channels) signals convolve
    in one call. Intermediates are 64-bit complex.
    """
    x = as_tensor(x)
    h = as_tensor(h)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("signals must have length >= 1")
    if h.shape[-1] != n:
        raise ValueError(f"length mismatch: {x.shape[-1]} vs {h.shape[-1]}")
    y = np.fft.irfft(np.fft.rfft(x, n=n) * np.fft.rfft(h, n=n), n=n)
    return y


def linear_conv_fft(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution (last axis) via zero-padding to a power of two.

    Output length is ``x.shape[-1] + h.shape[-1] - 1``; the pad amount is
    an internal detail pinned by the direct-sum oracle tests.
    """
    x = as_tensor(x)
    h = as_tensor(h)
    nx, nh = x.shape[-1], h.shape[-1]
    if nx < 1 or nh < 1:
        raise ValueError("signals must have length >= 1")
    full = nx + nh - 1
    nfft = 1 << (full - 1).bit_length()
    y = np.fft.irfft(np.fft.rfft(x, n=nfft) * np.fft.rfft(h, n=nfft), n=nfft)
    return y[..., :full]


# ---------------------------------------------------------------------------
# Sequence primitives
# ---------------------------------------------------------------------------

def _seq_axis(x: np.ndarray) -> int:
    # (L, d) -> axis 0; (B, L, d) -> axis 1
    if x.ndim == 2:
        return 0
    if x.ndim == 3:
        return 1
    raise ValueError(f"expected a (L, d) or (batch, L, d) array, got shape {x.shape}")


def flip_seq(x: np.ndarray) -> np.ndarray:
    """Reverse the sequence: row i of the output is row L-1-i of the input."""
    x = as_tensor(x)
    return np.flip(x, axis=_seq_axis(x)).copy()


def shift_right(x: np.ndarray) -> np.ndarray:
    """Shift the sequence right by one position, zero-padding the start."""
    x = as_tensor(x)
    axis = _seq_axis(x)
    out = np.zeros_like(x)
    if x.shape[axis] > 1:
        if axis == 0:
            out[1:] = x[:-1]
        else:
            out[:, 1:] = x[:, :-1]
    return out


# ---------------------------------------------------------------------------
# Scalar nonlinearities (used by the scan discretization and the block)
# ---------------------------------------------------------------------------

def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x), overflow-safe."""
    x = as_tensor(x)
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


# ---------------------------------------------------------------------------
# Error metric shared by every oracle comparison
# ---------------------------------------------------------------------------

def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max|a-b| normalized by the largest magnitude present (0 if both zero)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0,
                float(np.max(np.abs(b))) if b.size else 0.0)
    if scale == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / scale
