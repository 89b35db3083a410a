"""The structured mixer families: dense, Toeplitz, Vandermonde (including
the fixed DFT instance), Cauchy, low-rank, softmax attention, and the
quasiseparable recurrent family.

Each family provides
  * a parameter container with a data-independent (di) construction and,
    where one exists, a sequence-aligned data-dependent (dd) construction
    whose parameters are per-token functions of the input;
  * ``materialize`` — the dense per-head L x L oracle matrices;
  * ``apply`` — the production path (FFT for Toeplitz, factored for
    low-rank, recurrent scans for quasiseparable, naive O(L^2) otherwise),
    which adds the value stream back as a residual.

Data-dependent containers freeze their normalization scale at
construction time, so applying the same parametric functions at a longer
length leaves every leading-block entry unchanged (the basis of the
prefix-consistency and extendability checks in ``sam``).

Entry formulas, with per-head scale s:

    dense         m_ij = s * W_ij
    toeplitz di   m_ij = s * kern_{j-i}
    toeplitz dd   m_ij = s * fwd_{i-j} (i >= j),  s * rev_{j-i} (i < j)
    dft           m_ij = s * cos(2 pi i j / L)
    vandermonde di  m_ij = s * sum_d [cos(2 pi q_di j) + cos(2 pi k_dj i)]
    vandermonde dd  m_ij = s * sum_d [cos(2 pi eps q_di j) - cos(2 pi eps k_dj i)]
    cauchy        m_ij = s * sum_d 1 / (exp(q_di) + exp(k_dj) + 2 bias + tol)
    low-rank      m_ij = s * q_i . k_j
    attention     m_ij = softmax_j(q_i . k_j / sqrt(d))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (Rng, as_tensor, check_finite, circular_conv_fft,
                   numerical_rank, softmax_rows)
from .framework import MaterializedMixer, MixerConfig, merge_heads, split_heads
from .report import VerificationReport
from . import ssm

FAMILY_MODES = {
    "dense": ("di",),
    "toeplitz": ("di", "dd"),
    "vandermonde": ("dft", "di", "dd"),
    "cauchy": ("di", "dd"),
    "lowrank": ("di", "dd"),
    "attention": ("di", "dd"),
    "quasiseparable": ("dd",),
}

FAMILIES = tuple(FAMILY_MODES)


class UnsupportedFamilyError(ValueError):
    """Raised when a family lacks the requested construction."""


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class DenseParams:
    m: np.ndarray       # (H, L, L), free parameter tied to a fixed L
    scale: float


@dataclass
class ToeplitzParams:
    scale: float
    kernel: np.ndarray | None = None  # di: (H, 2L-1), taps indexed j - i
    w_fwd: np.ndarray | None = None   # dd: (C, H), token -> forward tap
    w_rev: np.ndarray | None = None   # dd: (C, H), token -> reverse tap


@dataclass
class VandermondeParams:
    scale: float
    eps: float = 1e-3                  # dd angle scale
    dft_len: int | None = None         # dft mode: fixed cosine matrix
    q_bias: np.ndarray | None = None   # di: (H, d, L) angles
    k_bias: np.ndarray | None = None
    w_q: np.ndarray | None = None      # dd: (C, H * d)
    w_k: np.ndarray | None = None


@dataclass
class CauchyParams:
    """``form='sum_exp'`` (default) uses the guaranteed-positive denominator
    exp(q) + exp(k) + 2 bias + tol; ``form='difference'`` is the textbook
    alternate 1 / (q - k + bias), which can blow up near q = k and is kept
    only as a documented option."""

    scale: float
    bias: float                        # 0.0 for di, 0.5 for dd; trainable scalar
    tol: float = 1e-8
    q: np.ndarray | None = None        # di: (L, H, d)
    k: np.ndarray | None = None
    w_q: np.ndarray | None = None      # dd: (C, H * d)
    w_k: np.ndarray | None = None
    form: str = "sum_exp"


@dataclass
class LowRankParams:
    scale: float
    q: np.ndarray | None = None        # di: (L, H, d)
    k: np.ndarray | None = None
    w_q: np.ndarray | None = None      # dd: (C, H * d)
    w_k: np.ndarray | None = None
    feature_map: str = "linear"        # 'linear' (default) or 'elu1'


@dataclass
class AttentionParams:
    logit_scale: float                 # 1 / sqrt(d)
    q: np.ndarray | None = None        # di: (L, H, d)
    k: np.ndarray | None = None
    w_q: np.ndarray | None = None      # dd: (C, H * d)
    w_k: np.ndarray | None = None


@dataclass
class MixerSpec:
    """One mixer layer: family tag, mode, geometry, and its parameters."""

    family: str
    mode: str
    config: MixerConfig
    params: object
    n_state: int = 0  # quasiseparable only

    @property
    def data_dependent(self) -> bool:
        return self.mode == "dd"


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def ablation_config(seq_len: int, data_dependent: bool, in_channels: int = 768,
                    expand: int = 2) -> MixerConfig:
    """Frozen default geometry for comparable reports: qk_dim 16 with head
    width 128 for dd variants, 64/64 for di."""
    qk_dim, head_dim = (16, 128) if data_dependent else (64, 64)
    inner = expand * in_channels
    return MixerConfig(seq_len=seq_len, in_channels=in_channels, inner_dim=inner,
                       n_heads=inner // head_dim, head_dim=head_dim,
                       qk_dim=qk_dim, data_dependent=data_dependent)


def build_mixer(family: str, mode: str, cfg: MixerConfig, rng: Rng,
                n_state: int = 8) -> MixerSpec:
    """Randomly initialized parameters for the requested family/mode."""
    if family not in FAMILY_MODES:
        raise UnsupportedFamilyError(f"unknown family {family!r}")
    if mode not in FAMILY_MODES[family]:
        raise UnsupportedFamilyError(f"family {family!r} has no {mode!r} construction")
    length, c, h, d = cfg.seq_len, cfg.in_channels, cfg.n_heads, cfg.qk_dim

    if family == "dense":
        params = DenseParams(m=rng.xavier_normal((h, length, length), length, length),
                             scale=1.0 / np.sqrt(length))
    elif family == "toeplitz":
        scale = 0.5 / np.sqrt(length)
        if mode == "di":
            params = ToeplitzParams(scale=scale,
                                    kernel=rng.xavier_uniform((h, 2 * length - 1),
                                                              length, length))
        else:
            params = ToeplitzParams(scale=scale,
                                    w_fwd=rng.xavier_normal((c, h), c, h),
                                    w_rev=rng.xavier_normal((c, h), c, h))
    elif family == "vandermonde":
        if mode == "dft":
            params = VandermondeParams(scale=1.0 / np.sqrt(length), dft_len=length)
        elif mode == "di":
            # Generic angles; the ablation reference initialized these at zero,
            # which collapses the matrix to a constant at step 0.
            params = VandermondeParams(scale=1.0 / np.sqrt(2 * length * d),
                                       q_bias=rng.uniform((h, d, length)),
                                       k_bias=rng.uniform((h, d, length)))
        else:
            params = VandermondeParams(scale=1.0 / np.sqrt(2 * length * d),
                                       w_q=rng.xavier_normal((c, h * d), c, h * d),
                                       w_k=rng.xavier_normal((c, h * d), c, h * d))
    elif family == "cauchy":
        scale = 1.0 / np.sqrt(length * d)
        if mode == "di":
            params = CauchyParams(scale=scale, bias=0.0,
                                  q=rng.xavier_normal((length, h, d), length, d),
                                  k=rng.xavier_normal((length, h, d), length, d))
        else:
            params = CauchyParams(scale=scale, bias=0.5,
                                  w_q=rng.xavier_normal((c, h * d), c, h * d),
                                  w_k=rng.xavier_normal((c, h * d), c, h * d))
    elif family == "lowrank":
        scale = 1.0 / np.sqrt(length * d)
        if mode == "di":
            params = LowRankParams(scale=scale,
                                   q=rng.xavier_normal((length, h, d), length, d),
                                   k=rng.xavier_normal((length, h, d), length, d))
        else:
            params = LowRankParams(scale=scale,
                                   w_q=rng.xavier_normal((c, h * d), c, h * d),
                                   w_k=rng.xavier_normal((c, h * d), c, h * d))
    elif family == "attention":
        logit_scale = 1.0 / np.sqrt(d)
        if mode == "di":
            params = AttentionParams(logit_scale=logit_scale,
                                     q=rng.xavier_normal((length, h, d), length, d),
                                     k=rng.xavier_normal((length, h, d), length, d))
        else:
            params = AttentionParams(logit_scale=logit_scale,
                                     w_q=rng.xavier_normal((c, h * d), c, h * d),
                                     w_k=rng.xavier_normal((c, h * d), c, h * d))
    else:  # quasiseparable
        params = ssm.init_quasi_params(rng, c, h, n_state)
        return MixerSpec(family=family, mode=mode, config=cfg, params=params,
                         n_state=n_state)
    return MixerSpec(family=family, mode=mode, config=cfg, params=params)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _single_sequence(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 2:
        return x
    if x.ndim == 3 and x.shape[0] == 1:
        return x[0]
    raise ValueError("materialization is per-sequence; pass (L, C) or batch size 1")


def _require_x(spec: MixerSpec, x) -> np.ndarray:
    if x is None:
        raise ValueError(f"{spec.family}/{spec.mode} is data-dependent and needs x")
    return as_tensor(x)


def _qk_dd(x_seq: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, h: int, d: int):
    """Per-token projections: (L, C) -> two (L, H, d) query/key stacks."""
    length = x_seq.shape[0]
    q = (x_seq @ w_q).reshape(length, h, d)
    k = (x_seq @ w_k).reshape(length, h, d)
    check_finite(q, "query projection")
    check_finite(k, "key projection")
    return q, k


def _elu1(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def _lowrank_qk(spec: MixerSpec, x) -> tuple[np.ndarray, np.ndarray]:
    p: LowRankParams = spec.params
    if spec.mode == "di":
        q, k = p.q, p.k
    else:
        x_seq = _single_sequence(_require_x(spec, x))
        q, k = _qk_dd(x_seq, p.w_q, p.w_k, spec.config.n_heads, spec.config.qk_dim)
    if p.feature_map == "elu1":
        q, k = _elu1(q), _elu1(k)
    return q, k


def _attention_logits(spec: MixerSpec, x) -> np.ndarray:
    p: AttentionParams = spec.params
    if spec.mode == "di":
        q, k = p.q, p.k
    else:
        x_seq = _single_sequence(_require_x(spec, x))
        q, k = _qk_dd(x_seq, p.w_q, p.w_k, spec.config.n_heads, spec.config.qk_dim)
    return p.logit_scale * np.einsum("ihd,jhd->hij", q, k)


def _cauchy_matrix(spec: MixerSpec, x) -> np.ndarray:
    p: CauchyParams = spec.params
    if spec.mode == "di":
        q, k = p.q, p.k
    else:
        x_seq = _single_sequence(_require_x(spec, x))
        q, k = _qk_dd(x_seq, p.w_q, p.w_k, spec.config.n_heads, spec.config.qk_dim)
    if p.form == "difference":
        denom = q[:, None] - k[None, :] + p.bias
        if np.any(np.abs(denom) <= p.tol):
            raise ValueError("cauchy difference denominator too close to zero")
    elif p.form == "sum_exp":
        denom = (np.exp(q)[:, None] + np.exp(k)[None, :]) + (2.0 * p.bias + p.tol)
        if np.any(denom <= 0.0):
            raise ValueError("cauchy denominator is not strictly positive")
    else:
        raise ValueError(f"unknown cauchy form {p.form!r}")
    return p.scale * np.sum(1.0 / denom, axis=-1).transpose(2, 0, 1)  # (H, L, L)


def _vandermonde_matrix(spec: MixerSpec, x, seq_len: int | None = None) -> np.ndarray:
    p: VandermondeParams = spec.params
    h = spec.config.n_heads
    if spec.mode == "dft":
        length = p.dft_len
        idx = np.arange(length)
        m = np.cos(2.0 * np.pi * np.outer(idx, idx) / length)
        return p.scale * np.broadcast_to(m, (h, length, length)).copy()
    if spec.mode == "di":
        q, k = p.q_bias, p.k_bias  # (H, d, L)
        length = q.shape[2]
        j = np.arange(length)
        qm = np.cos(2.0 * np.pi * q[..., None] * j)          # (H, d, L_i, L_j)
        km = np.cos(2.0 * np.pi * k[..., None] * j)          # angle indexed by column
        return p.scale * (qm + km.transpose(0, 1, 3, 2)).sum(axis=1)
    x_seq = _single_sequence(_require_x(spec, x))
    length = x_seq.shape[0]
    q, k = _qk_dd(x_seq, p.w_q, p.w_k, h, spec.config.qk_dim)  # (L, H, d)
    j = np.arange(length)
    qm = np.cos(2.0 * np.pi * p.eps * q[..., None] * j)       # (L_i, H, d, L_j)
    km = np.cos(2.0 * np.pi * p.eps * k[..., None] * j)
    m = qm.transpose(1, 0, 3, 2).sum(axis=-1) - km.transpose(1, 3, 0, 2).sum(axis=-1)
    return p.scale * m


def _toeplitz_taps_dd(spec: MixerSpec, x_seq: np.ndarray):
    p: ToeplitzParams = spec.params
    fwd = x_seq @ p.w_fwd  # (L, H): token i -> forward tap at offset i
    rev = x_seq @ p.w_rev  # (L, H): token i -> reverse tap at offset i (rev_0 unused)
    check_finite(fwd, "forward taps")
    check_finite(rev, "reverse taps")
    return fwd, rev


# ---------------------------------------------------------------------------
# Materialization
# ---------------------------------------------------------------------------

def materialize_family(spec: MixerSpec, x=None) -> MaterializedMixer:
    """Dense per-head matrices for any family/mode; dd families need x
    (a single sequence)."""
    family = spec.family
    if family == "dense":
        p: DenseParams = spec.params
        return MaterializedMixer(per_head=p.scale * p.m)
    if family == "toeplitz":
        p = spec.params
        if spec.mode == "di":
            h, ks = p.kernel.shape
            length = (ks + 1) // 2
            offsets = np.arange(length)[None, :] - np.arange(length)[:, None]  # j - i
            return MaterializedMixer(per_head=p.scale * p.kernel[:, offsets + length - 1])
        x_seq = _single_sequence(_require_x(spec, x))
        fwd, rev = _toeplitz_taps_dd(spec, x_seq)
        length = x_seq.shape[0]
        li = np.arange(length)[:, None]
        lj = np.arange(length)[None, :]
        lower = li >= lj
        per_head = np.where(lower[None], fwd.T[:, np.abs(li - lj)],
                            rev.T[:, np.abs(li - lj)])
        return MaterializedMixer(per_head=p.scale * per_head)
    if family == "vandermonde":
        return MaterializedMixer(per_head=_vandermonde_matrix(spec, x))
    if family == "cauchy":
        return MaterializedMixer(per_head=_cauchy_matrix(spec, x))
    if family == "lowrank":
        q, k = _lowrank_qk(spec, x)
        m = spec.params.scale * np.einsum("ihd,jhd->hij", q, k)
        return MaterializedMixer(per_head=m)
    if family == "attention":
        return MaterializedMixer(per_head=softmax_rows(_attention_logits(spec, x)))
    if family == "quasiseparable":
        x_seq = _single_sequence(_require_x(spec, x))
        return ssm.qs_materialize(spec.params, x_seq[None])
    raise UnsupportedFamilyError(f"unknown family {family!r}")


def materialize_attention_logits(spec: MixerSpec, x=None) -> MaterializedMixer:
    """Pre-normalization attention logits q_i . k_j / sqrt(d); the row
    softmax couples every entry to the whole sequence, so the alignment
    checks run at this level."""
    if spec.family != "attention":
        raise UnsupportedFamilyError("logit materialization is attention-only")
    return MaterializedMixer(per_head=_attention_logits(spec, x))


# ---------------------------------------------------------------------------
# Apply paths
# ---------------------------------------------------------------------------

def _naive_apply(m: MaterializedMixer, v: np.ndarray) -> np.ndarray:
    vh = split_heads(v, m.n_heads)  # (B, L, H, P)
    return merge_heads(np.einsum("hts,bshp->bthp", m.per_head, vh))


def _toeplitz_apply_fft(spec: MixerSpec, v: np.ndarray, x) -> np.ndarray:
    """FFT fast path; O(L log L) per channel.

    A full Toeplitz matrix with taps on offsets -(L-1)..L-1 acts exactly
    as a circular convolution of size 2L: the values sit in the first L
    slots (rest zero) and the kernel wraps the anticausal taps into the
    upper half, so the first L outputs are alias-free. Matches the
    materialized matrix entrywise: di reads tap j - i, dd reads forward
    tap i - j below the diagonal and reverse tap j - i above it.
    """
    p: ToeplitzParams = spec.params
    b, length, _ = v.shape
    vh = split_heads(v, spec.config.n_heads).transpose(0, 2, 3, 1)  # (B, H, P, L)
    padded = np.zeros(vh.shape[:-1] + (2 * length,))
    padded[..., :length] = vh
    if spec.mode == "di":
        kern = p.kernel                                # (H, 2L-1), offset u - (L-1)
        wrapped = np.zeros((kern.shape[0], 1, 2 * length))
        wrapped[..., 0, :length] = kern[:, length - 1::-1]       # taps 0..-(L-1)
        if length > 1:
            wrapped[..., 0, length + 1:] = kern[:, :length - 1:-1]  # taps L-1..1
    else:
        x_arr = _require_x(spec, x)
        if x_arr.ndim == 2:
            x_arr = x_arr[None]
        fwd = np.einsum("blc,ch->bhl", x_arr, p.w_fwd)  # (B, H, L)
        rev = np.einsum("blc,ch->bhl", x_arr, p.w_rev)
        check_finite(fwd, "forward taps")
        check_finite(rev, "reverse taps")
        wrapped = np.zeros((fwd.shape[0], fwd.shape[1], 1, 2 * length))
        wrapped[..., 0, :length] = fwd                           # taps 0..L-1
        if length > 1:
            wrapped[..., 0, length + 1:] = rev[..., :0:-1]       # taps -(L-1)..-1
    y = circular_conv_fft(padded, wrapped)[..., :length]
    return p.scale * y.transpose(0, 3, 1, 2).reshape(b, length, -1)


def _lowrank_qk_batched(spec: MixerSpec, x) -> tuple[np.ndarray, np.ndarray]:
    """Queries/keys as (B, L, H, d); di parameters broadcast over the batch."""
    p: LowRankParams = spec.params
    if spec.mode == "di":
        q, k = p.q[None], p.k[None]
    else:
        x_arr = _require_x(spec, x)
        if x_arr.ndim == 2:
            x_arr = x_arr[None]
        b, length, _ = x_arr.shape
        h, d = spec.config.n_heads, spec.config.qk_dim
        q = (x_arr @ p.w_q).reshape(b, length, h, d)
        k = (x_arr @ p.w_k).reshape(b, length, h, d)
        check_finite(q, "query projection")
        check_finite(k, "key projection")
    if p.feature_map == "elu1":
        q, k = _elu1(q), _elu1(k)
    return q, k


def _lowrank_apply_factored(spec: MixerSpec, v: np.ndarray, x) -> np.ndarray:
    """k^T v first, then q: O(L * d * P) instead of forming the L x L matrix."""
    q, k = _lowrank_qk_batched(spec, x)
    vh = split_heads(v, spec.config.n_heads)          # (B, L, H, P)
    if q.shape[0] == 1 and vh.shape[0] > 1:
        q = np.broadcast_to(q, (vh.shape[0],) + q.shape[1:])
        k = np.broadcast_to(k, (vh.shape[0],) + k.shape[1:])
    kv = np.einsum("blhd,blhp->bhdp", k, vh)
    y = np.einsum("blhd,bhdp->blhp", q, kv)
    return spec.params.scale * merge_heads(y)


def apply_family(spec: MixerSpec, v: np.ndarray, x=None) -> np.ndarray:
    """Mix the value stream v (B, L, D) and add it back as the residual.

    Batched x is accepted for the fast paths; the dense-materialization
    families fall back to a per-sequence loop when x varies over the
    batch.
    """
    v = as_tensor(v)
    if v.ndim != 3:
        raise ValueError(f"expected values (B, L, D), got {v.shape}")
    if v.shape[1] != spec.config.seq_len:
        raise ValueError(f"length mismatch: values L={v.shape[1]}, "
                         f"mixer L={spec.config.seq_len}")
    family = spec.family
    if family == "toeplitz":
        if spec.mode == "dd":
            _require_x(spec, x)
        return _toeplitz_apply_fft(spec, v, x) + v
    if family == "lowrank":
        return _lowrank_apply_factored(spec, v, x) + v
    if family == "quasiseparable":
        x_arr = _require_x(spec, x)
        if x_arr.ndim == 2:
            x_arr = x_arr[None]
        return ssm.qs_apply(spec.params, x_arr, v) + v
    # Naive O(L^2) path: materialize per sequence and multiply.
    if spec.mode in ("di", "dft"):
        return _naive_apply(materialize_family(spec), v) + v
    x_arr = _require_x(spec, x)
    if x_arr.ndim == 2 or x_arr.shape[0] == 1:
        return _naive_apply(materialize_family(spec, x_arr), v) + v
    out = np.stack([_naive_apply(materialize_family(spec, x_arr[i]), v[i:i + 1])[0]
                    for i in range(v.shape[0])])
    return out + v


# ---------------------------------------------------------------------------
# Rank reporting
# ---------------------------------------------------------------------------

def family_rank_report(m: MaterializedMixer, expected_bound: int,
                       rel_tol: float = 1e-8) -> VerificationReport:
    """Numerical rank of each head's full matrix against a bound."""
    if m.seq_len > 64:
        raise ValueError("rank report capped at L = 64 (SVD cost)")
    report = VerificationReport(suite="family-rank")
    for head in range(m.n_heads):
        r = numerical_rank(m.per_head[head], rel_tol)
        report.add(f"head{head}/rank", measured=r, threshold=expected_bound)
    return report
