"""The matrix-mixer abstraction: a sequence mixer is an L x L matrix per
head acting on the length axis of a preprocessed value stream.

Conventions frozen here so that oracles are bit-stable:

* value streams are ``(batch, L, D)`` with ``D = H * P``;
* head h owns the contiguous channel block ``[h*P, (h+1)*P)``;
* mixing applies each head's matrix to its block independently;
* residual terms are part of each family's apply contract (see
  ``families``), never of ``apply_mixer`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_tensor, check_finite


@dataclass(frozen=True)
class MixerConfig:
    """Geometry of one mixer layer.

    ``qk_dim`` is the per-head key/query width used by the rank-structured
    families; recurrent families use their own state width instead.
    """

    seq_len: int
    in_channels: int
    inner_dim: int
    n_heads: int
    head_dim: int
    qk_dim: int = 16
    data_dependent: bool = False

    def __post_init__(self):
        dims = (self.seq_len, self.in_channels, self.inner_dim,
                self.n_heads, self.head_dim, self.qk_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {self}")
        if self.n_heads * self.head_dim != self.inner_dim:
            raise ValueError(
                f"n_heads * head_dim must equal inner_dim: "
                f"{self.n_heads} * {self.head_dim} != {self.inner_dim}")


@dataclass
class MaterializedMixer:
    """Per-head dense mixer matrices, shape (H, L, L) — the oracle form."""

    per_head: np.ndarray
    causal: bool = False  # strictly-upper entries exactly zero when True

    def __post_init__(self):
        self.per_head = as_tensor(self.per_head)
        if self.per_head.ndim != 3 or self.per_head.shape[1] != self.per_head.shape[2]:
            raise ValueError(f"expected (H, L, L), got {self.per_head.shape}")
        check_finite(self.per_head, "materialized mixer")
        if self.causal:
            upper = np.triu(self.per_head, k=1)
            if np.any(upper != 0.0):
                raise ValueError("causal mixer has nonzero strictly-upper entries")

    @property
    def n_heads(self) -> int:
        return self.per_head.shape[0]

    @property
    def seq_len(self) -> int:
        return self.per_head.shape[1]


@dataclass
class Preprocessor:
    """Input map f applied before mixing: identity, a C->D projection, or
    projection followed by a centered depthwise short convolution.

    All kinds are linear; activations belong to the block level.
    """

    kind: str  # 'identity' | 'linear_projection' | 'projection_plus_shortconv'
    weight: np.ndarray | None = None       # (C, D) for the projection kinds
    conv_kernel: np.ndarray | None = None  # (D, conv_width), depthwise, centered

    def __post_init__(self):
        if self.kind not in ("identity", "linear_projection", "projection_plus_shortconv"):
            raise ValueError(f"unknown preprocessor kind: {self.kind!r}")
        if self.kind != "identity":
            if self.weight is None:
                raise ValueError(f"{self.kind} requires a projection weight")
            self.weight = as_tensor(self.weight)
        if self.kind == "projection_plus_shortconv":
            if self.conv_kernel is None:
                raise ValueError("projection_plus_shortconv requires a conv kernel")
            self.conv_kernel = as_tensor(self.conv_kernel)
            if self.conv_kernel.shape[1] % 2 != 1:
                raise ValueError("short conv width must be odd (centered kernel)")


def preprocess(p: Preprocessor, x: np.ndarray) -> np.ndarray:
    """Apply f to ``x`` of shape (batch, L, C); returns (batch, L, D)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"expected (batch, L, C), got shape {x.shape}")
    if p.kind == "identity":
        return x.copy()
    if x.shape[2] != p.weight.shape[0]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[2]}, projection expects {p.weight.shape[0]}")
    out = x @ p.weight
    if p.kind == "projection_plus_shortconv":
        out = depthwise_conv_centered(out, p.conv_kernel)
    return out


def depthwise_conv_centered(v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel centered convolution with zero padding.

    ``v``: (batch, L, D); ``kernel``: (D, k) with odd k. Output position t
    sees inputs t-k//2 .. t+k//2, so the receptive field is symmetric.
    """
    v = as_tensor(v)
    kernel = as_tensor(kernel)
    b, length, d = v.shape
    if kernel.shape[0] != d:
        raise ValueError(f"kernel channels {kernel.shape[0]} != input channels {d}")
    k = kernel.shape[1]
    half = k // 2
    padded = np.zeros((b, length + 2 * half, d))
    padded[:, half:half + length] = v
    out = np.zeros_like(v)
    for j in range(k):
        out += padded[:, j:j + length] * kernel[:, j]
    return out


def apply_mixer(m: MaterializedMixer, v: np.ndarray) -> np.ndarray:
    """Mix the value stream: per head h, output block = M^h @ input block.

    ``v``: (batch, L, D) with D = H * P; heads act on contiguous channel
    blocks and are independent of one another.
    """
    v = as_tensor(v)
    if v.ndim != 3:
        raise ValueError(f"expected (batch, L, D), got shape {v.shape}")
    h = m.n_heads
    if v.shape[1] != m.seq_len:
        raise ValueError(f"length mismatch: values have L={v.shape[1]}, mixer L={m.seq_len}")
    if v.shape[2] % h != 0:
        raise ValueError(f"channel count {v.shape[2]} not divisible by {h} heads")
    p = v.shape[2] // h
    out = np.empty_like(v)
    for i in range(h):
        block = v[:, :, i * p:(i + 1) * p]
        out[:, :, i * p:(i + 1) * p] = np.einsum("ts,bsp->btp", m.per_head[i], block)
    return out


def split_heads(v: np.ndarray, n_heads: int) -> np.ndarray:
    """(batch, L, H*P) -> (batch, L, H, P), contiguous-block convention."""
    v = as_tensor(v)
    b, length, d = v.shape
    if d % n_heads != 0:
        raise ValueError(f"channel count {d} not divisible by {n_heads} heads")
    return v.reshape(b, length, n_heads, d // n_heads)


def merge_heads(v: np.ndarray) -> np.ndarray:
    """(batch, L, H, P) -> (batch, L, H*P)."""
    b, length, h, p = v.shape
    return v.reshape(b, length, h * p)


def identity_mixer(n_heads: int, seq_len: int) -> MaterializedMixer:
    eye = np.broadcast_to(np.eye(seq_len), (n_heads, seq_len, seq_len)).copy()
    return MaterializedMixer(per_head=eye)
